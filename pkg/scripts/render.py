"""
Grayscale rendering of brightness-temperature maps (PGM or PNG) and the
side-by-side method comparison panel.
"""
import logging
from pathlib import Path

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from scripts.errors import DatasetIOError, DomainError

logger = logging.getLogger(__name__)


def to_gray(values, vrange=None):
    """Linear map of [lo, hi] onto 0..255; a constant field maps to 0"""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DomainError("Cannot render non-finite values")
    lo, hi = (float(values.min()), float(values.max())) if vrange is None else map(float, vrange)
    if hi < lo:
        raise DomainError(f"Render range must satisfy lo <= hi, got ({lo}, {hi})")
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8), (lo, hi)
    gray = np.rint(255.0 * (values - lo) / (hi - lo))
    return np.clip(gray, 0, 255).astype(np.uint8), (lo, hi)


def write_pgm(path, gray):
    rows, cols = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise DatasetIOError(f"{path} is not a binary PGM")
    cols, rows = int(parts[1]), int(parts[2])
    return np.frombuffer(data[-rows * cols:], dtype=np.uint8).reshape(rows, cols)


def render(values, out_path, vrange=None):
    """Write an 8-bit grayscale image (.pgm or .png) plus a '<out>.limits.txt' sidecar"""
    out_path = Path(out_path)
    gray, (lo, hi) = to_gray(values, vrange)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_path.suffix.lower() == ".pgm":
        write_pgm(out_path, gray)
    elif out_path.suffix.lower() == ".png":
        plt.imsave(out_path, gray, cmap="gray", vmin=0, vmax=255)
    else:
        raise DomainError(f"Unsupported image format: {out_path.suffix} (use .pgm or .png)")
    limits = Path(str(out_path) + ".limits.txt")
    limits.write_text(f"{lo!r} {hi!r}\n")
    logger.debug("rendered %s over [%g, %g]", out_path, lo, hi)
    return out_path, limits


def render_panel(images, out_path, vrange=None, title=None):
    """Side-by-side PNG of named BT maps sharing one color scale"""
    names = list(images)
    if vrange is None:
        stacked = np.concatenate([np.asarray(images[k], dtype=np.float64).ravel() for k in names])
        vrange = (float(stacked.min()), float(stacked.max()))
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.4), squeeze=False)
    for ax, name in zip(axes[0], names):
        shown = ax.imshow(np.asarray(images[name]).T, origin="lower", cmap="gray",
                          vmin=vrange[0], vmax=vrange[1], extent=(-1, 1, -1, 1))
        ax.set_title(name)
        ax.set_xlabel("xi")
        ax.set_ylabel("eta")
    fig.colorbar(shown, ax=axes[0].tolist(), label="BT [K]", shrink=0.8)
    if title:
        fig.suptitle(title)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
