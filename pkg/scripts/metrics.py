"""
Image-domain evaluation: RMSE and SSIM over the evaluation disk, the
reference-free TRE, and per-method evaluation over a dataset split.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import ndimage
from tqdm import tqdm

from config.config import EVAL_METHODS, RFI_MODES
from scripts.baselines import (
    CleanConfig, RpcaConfig, clean_config_from, clean_mitigate, rpca_config_from, rpca_mitigate,
)
from scripts.errors import ConfigError, DomainError
from scripts.signal_model import AntennaPattern, reconstruct_scene
from scripts.vfdm_diffusion import mitigate

logger = logging.getLogger(__name__)

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
REPORT_COLUMNS = ["id", "mode", "source_count", "method", "rmse_K", "ssim", "tre_K"]


@dataclass(frozen=True)
class EvalRegion:
    """Evaluation disk of radius `radius` inside the scene support"""
    grid: object
    radius: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.radius <= self.grid.support_radius:
            raise DomainError(f"Evaluation radius {self.radius} must be in (0, {self.grid.support_radius}]")
        if not self.mask.any():
            raise DomainError("Evaluation region is empty")

    @property
    def mask(self):
        return self.grid.disk_mask(self.radius) & self.grid.support_mask()


def _values(image):
    return np.asarray(image.values if hasattr(image, "values") else image, dtype=np.float64)


def _region_mask(region, shape):
    if region is None:
        mask = np.ones(shape, dtype=bool)
    elif isinstance(region, EvalRegion):
        mask = region.mask
    else:
        mask = np.asarray(region, dtype=bool)
    if mask.shape != shape:
        raise DomainError(f"Region shape {mask.shape} does not match image shape {shape}")
    if not mask.any():
        raise DomainError("Evaluation region is empty")
    return mask


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DomainError(f"Image shapes differ: {a.shape} vs {b.shape}")


def rmse(pred, ref, region=None):
    """Root mean square difference over the region, in Kelvin"""
    p, r = _values(pred), _values(ref)
    _same_shape(p, r)
    mask = _region_mask(region, p.shape)
    return float(np.sqrt(np.mean((p[mask] - r[mask]) ** 2)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim_map(pred, ref, data_range, window):
    """Local SSIM at every pixel (meaningful where the full window lies inside the image)"""
    def local(x):
        return ndimage.correlate(x, window, mode="constant")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_p, mu_r = local(pred), local(ref)
    var_p = local(pred * pred) - mu_p ** 2
    var_r = local(ref * ref) - mu_r ** 2
    cov = local(pred * ref) - mu_p * mu_r
    return ((2 * mu_p * mu_r + c1) * (2 * cov + c2)) / ((mu_p ** 2 + mu_r ** 2 + c1) * (var_p + var_r + c2))


def ssim(pred, ref, region=None, window_size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Mean local SSIM over region pixels whose whole window lies in the region

    The dynamic range is the larger of the two images' ranges over the region,
    which equals the reference range whenever the ranges agree.
    """
    p, r = _values(pred), _values(ref)
    _same_shape(p, r)
    mask = _region_mask(region, p.shape)

    data_range = float(max(np.ptp(r[mask]), np.ptp(p[mask])))
    if data_range == 0:
        if np.array_equal(p[mask], r[mask]):
            return 1.0
        logger.warning("constant images over the region; SSIM uses data range 1")
        data_range = 1.0

    centers = ndimage.binary_erosion(mask, structure=np.ones((window_size, window_size), dtype=bool),
                                     border_value=0)
    if not centers.any():
        raise DomainError(f"No {window_size}x{window_size} window fits inside the region")
    local = ssim_map(p, r, data_range, gaussian_window(window_size, sigma))
    return float(np.mean(local[centers]))


def gradient_magnitude(image):
    """sqrt(Dx^2 + Dy^2) with forward differences and replicate boundary"""
    padded = np.pad(image, ((0, 1), (0, 1)), mode="edge")
    dx = padded[1:, :-1] - padded[:-1, :-1]
    dy = padded[:-1, 1:] - padded[:-1, :-1]
    return np.sqrt(dx ** 2 + dy ** 2)


def tre(pred, dirty, mask):
    """RMS of (dirty - pred) on mask-1 pixels + mean gradient magnitude of pred on mask-0 pixels / 2"""
    p, d = _values(pred), _values(dirty)
    _same_shape(p, d)
    m = np.asarray(mask.values if hasattr(mask, "values") else mask) == 1
    ones, zeros = int(m.sum()), int((~m).sum())
    if ones == 0 or zeros == 0:
        raise DomainError("TRE needs a mask with both uncontaminated (1) and RFI (0) pixels")
    fidelity = np.sqrt(np.sum((d - p)[m] ** 2) / ones)
    smoothness = np.sum(gradient_magnitude(p)[~m]) / (2.0 * zeros)
    return float(fidelity + smoothness)


# ============================================================================
# Dataset Evaluation
# ============================================================================
def _safe_tre(pred, dirty, mask, pair_id):
    try:
        return tre(pred, dirty, mask)
    except DomainError as e:
        logger.warning("pair %d: TRE undefined (%s)", pair_id, e)
        return float("nan")


def method_estimator(method, cfg=None, model=None, sched=None, scale=None, eta=0.0, seed=0):
    """Callable pair -> estimated visibility grid for one evaluation method"""
    if method == "none":
        return lambda pair: pair.dirty
    if method == "clean":
        clean_cfg = clean_config_from(cfg) if cfg is not None else CleanConfig()
        return lambda pair: clean_mitigate(pair.dirty, clean_cfg).estimate
    if method == "rpca":
        rpca_cfg = rpca_config_from(cfg) if cfg is not None else RpcaConfig()
        return lambda pair: rpca_mitigate(pair.dirty, rpca_cfg).estimate
    if method == "vfdm":
        if model is None or sched is None or scale is None:
            raise ConfigError("Method vfdm needs a trained checkpoint")
        d = cfg.diffusion if cfg is not None else None
        sampler = d.sampler if d is not None else "generalized"
        sample_steps = d.sample_steps if d is not None else None
        return lambda pair: mitigate(pair.dirty, model, sched, scale, eta, seed + pair.id, sampler, sample_steps)
    raise ConfigError(f"Unknown evaluation method: {method} (expected one of {list(EVAL_METHODS)})")


def evaluate_method(method, pairs, pattern, region, estimator=None, reference_free=False, progress=False):
    """Per-sample DataFrame of rmse_K, ssim, tre_K for one method"""
    estimator = estimator or method_estimator(method)
    rows = []
    for pair in tqdm(pairs, desc=f"Evaluating {method}", disable=not progress):
        dirty_bt = reconstruct_scene(pair.dirty, pattern)
        estimate_bt = reconstruct_scene(estimator(pair), pattern)
        row = {"id": pair.id, "mode": pair.mode, "source_count": pair.source_count, "method": method,
               "rmse_K": float("nan"), "ssim": float("nan")}
        if not reference_free:
            clean_bt = reconstruct_scene(pair.clean, pattern)
            row["rmse_K"] = rmse(estimate_bt, clean_bt, region)
            row["ssim"] = ssim(estimate_bt, clean_bt, region)
        row["tre_K"] = _safe_tre(estimate_bt, dirty_bt, pair.mask, pair.id)
        rows.append(row)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def aggregate_report(per_sample):
    """Mean metrics keyed by (method, mode), modes in regime order"""
    grouped = per_sample.groupby(["method", "mode"], sort=False)[["rmse_K", "ssim", "tre_K"]].mean()
    summary = grouped.reset_index()
    summary["count"] = per_sample.groupby(["method", "mode"], sort=False).size().values
    order = {mode: i for i, mode in enumerate(RFI_MODES)}
    summary["_order"] = summary["mode"].map(order)
    return summary.sort_values(["method", "_order"], kind="stable").drop(columns="_order").reset_index(drop=True)


def evaluate(methods, pairs, cfg, pattern=None, model=None, sched=None, scale=None, eta=0.0, seed=0,
             reference_free=False, progress=True):
    """(per_sample, aggregate) DataFrames over several methods"""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("Evaluation split is empty")
    grid = pairs[0].clean.grid
    pattern = pattern or AntennaPattern(grid, cfg.simulate.pattern, cfg.simulate.pattern_sigma)
    region = EvalRegion(grid, cfg.eval.radius)
    frames = []
    for method in methods:
        estimator = method_estimator(method, cfg, model, sched, scale, eta, seed)
        frames.append(evaluate_method(method, pairs, pattern, region, estimator, reference_free, progress))
    per_sample = pd.concat(frames, ignore_index=True)
    return per_sample, aggregate_report(per_sample)


def write_reports(per_sample, aggregate, out_dir):
    """per_sample.csv and aggregate.csv in out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_sample.to_csv(out_dir / "per_sample.csv", index=False)
    aggregate.to_csv(out_dir / "aggregate.csv", index=False)
    return out_dir / "per_sample.csv", out_dir / "aggregate.csv"
