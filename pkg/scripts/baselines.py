"""
Classical RFI mitigation baselines on the dirty visibility grid:
CLEAN-style point-source cancellation and RPCA (principal component pursuit).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from config.config import (
    CLEAN_LOOP_GAIN, CLEAN_MAX_ITERS, CLEAN_THRESHOLD_K, REGIME_RANGES,
    RPCA_MAX_ITERS, RPCA_TOLERANCE,
)
from scripts.errors import ConfigError
from scripts.rfi_simulator import RfiSource, classify_regime
from scripts.signal_model import (
    VisibilityGrid, as_covariance_matrix, from_covariance_matrix,
    hermitian_symmetrize, inverse_bt, point_source_visibility,
)

logger = logging.getLogger(__name__)

MAD_TO_SIGMA = 1.4826
MERGE_RADIUS_PX = 1.0
BACKGROUND_WINDOW = 5


@dataclass(frozen=True)
class CleanConfig:
    loop_gain: float = CLEAN_LOOP_GAIN
    max_iters: int = CLEAN_MAX_ITERS
    threshold_k: float = CLEAN_THRESHOLD_K
    refine: bool = True

    def __post_init__(self):
        if not 0.0 < self.loop_gain <= 1.0:
            raise ConfigError(f"CLEAN loop gain must be in (0, 1], got {self.loop_gain}")
        if self.threshold_k <= 0:
            raise ConfigError(f"CLEAN threshold k must be positive, got {self.threshold_k}")
        if self.max_iters < 1:
            raise ConfigError("CLEAN needs max_iters >= 1")


@dataclass(frozen=True)
class RpcaConfig:
    lam: float = None
    tolerance: float = RPCA_TOLERANCE
    max_iters: int = RPCA_MAX_ITERS

    def __post_init__(self):
        if self.lam is not None and self.lam <= 0:
            raise ConfigError(f"RPCA lambda must be positive, got {self.lam}")
        if self.tolerance <= 0:
            raise ConfigError(f"RPCA tolerance must be positive, got {self.tolerance}")


def clean_config_from(cfg):
    c = cfg.eval.clean
    return CleanConfig(c.loop_gain, c.max_iters, c.threshold_k, c.refine)


def rpca_config_from(cfg):
    r = cfg.eval.rpca
    return RpcaConfig(r.lam, r.tolerance, r.max_iters)


@dataclass
class CleanResult:
    estimate: VisibilityGrid
    detections: list
    components: np.ndarray
    iterations: int
    converged: bool
    peaks: list = field(default_factory=list)

    @property
    def unconverged(self):
        return not self.converged


@dataclass
class RpcaResult:
    estimate: VisibilityGrid
    lowrank: np.ndarray
    sparse: np.ndarray
    iterations: int
    residual: float
    converged: bool

    @property
    def unconverged(self):
        return not self.converged


# ============================================================================
# CLEAN
# ============================================================================
def robust_threshold(values, k):
    """k robust standard deviations, k * 1.4826 * MAD"""
    median = float(np.median(values))
    return k * MAD_TO_SIGMA * float(np.median(np.abs(values - median)))


def nearest_support_index(support):
    """Index arrays mapping every pixel to its nearest support pixel"""
    return tuple(ndimage.distance_transform_edt(~support, return_distances=False, return_indices=True))


def local_background(image, nearest, size=BACKGROUND_WINDOW):
    """Running median, with pixels outside the support taken from the nearest support pixel"""
    return ndimage.median_filter(image[nearest], size=size, mode="nearest")


def _parabolic_offset(left, center, right):
    curvature = left - 2.0 * center + right
    if curvature >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / curvature, -0.5, 0.5))


def refine_peak(image, k, l):
    """Sub-pixel peak position by a parabola through the peak and its axis neighbours"""
    n = image.shape[0]
    dk = _parabolic_offset(image[k - 1, l], image[k, l], image[k + 1, l]) if 0 < k < n - 1 else 0.0
    dl = _parabolic_offset(image[k, l - 1], image[k, l], image[k, l + 1]) if 0 < l < n - 1 else 0.0
    return k + dk, l + dl


def _merge_detections(found, grid):
    """Cluster component positions within one pixel; amplitudes add, positions average by weight"""
    clusters = []
    for k, l, amplitude in found:
        for cluster in clusters:
            if max(abs(cluster["k"] - k), abs(cluster["l"] - l)) <= MERGE_RADIUS_PX:
                total = cluster["amp"] + amplitude
                cluster["k"] = (cluster["k"] * cluster["amp"] + k * amplitude) / total
                cluster["l"] = (cluster["l"] * cluster["amp"] + l * amplitude) / total
                cluster["amp"] = total
                break
        else:
            clusters.append({"k": k, "l": l, "amp": amplitude})
    return [
        RfiSource(grid.pixel_position(c["k"]), grid.pixel_position(c["l"]), float(c["amp"]),
                  classify_regime(c["amp"], REGIME_RANGES))
        for c in clusters
    ]


def clean_mitigate(dirty, cfg=None):
    """Detect and subtract point sources until no pixel stands out of its local background.

    The peak is the largest excess of the residual image over its running median. It is
    accepted while above k robust standard deviations of the residual image over the support.
    """
    cfg = cfg or CleanConfig()
    grid = dirty.grid
    support = grid.support_mask()
    nearest = nearest_support_index(support)
    residual = np.array(dirty.values, copy=True)
    components = np.zeros_like(residual)
    found, peaks = [], []
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iters + 1):
        image = inverse_bt(VisibilityGrid(grid, residual, "dirty")).values
        excess = image - local_background(image, nearest)
        k, l = np.unravel_index(int(np.argmax(np.where(support, excess, -np.inf))), image.shape)
        peak = float(excess[k, l])
        if peak <= robust_threshold(image[support], cfg.threshold_k):
            converged = True
            iterations -= 1
            break
        peaks.append(peak)

        kk, ll = refine_peak(excess, k, l) if cfg.refine else (float(k), float(l))
        amplitude = cfg.loop_gain * peak
        source = RfiSource(grid.pixel_position(kk), grid.pixel_position(ll), amplitude)
        component = hermitian_symmetrize(point_source_visibility(source, grid).values)
        residual = residual - component
        components += component
        found.append((kk, ll, amplitude))

    if not converged:
        logger.warning("CLEAN stopped after %d iterations with the peak above threshold", cfg.max_iters)
    estimate = VisibilityGrid(grid, dirty.values - components, "estimate")
    return CleanResult(estimate, _merge_detections(found, grid), components, iterations, converged, peaks)


# ============================================================================
# RPCA
# ============================================================================
def complex_soft_threshold(x, tau):
    """Shrink the modulus by tau, keep the phase"""
    modulus = np.abs(x)
    scale = np.maximum(modulus - tau, 0.0) / np.where(modulus > 0, modulus, 1.0)
    return x * scale


def singular_value_threshold(x, tau):
    u, s, vh = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vh[keep, :]


def principal_component_pursuit(m, lam=None, tolerance=RPCA_TOLERANCE, max_iters=RPCA_MAX_ITERS):
    """min ||L||_* + lam ||S||_1 s.t. L + S = M by inexact augmented Lagrangian; (L, S, iters, residual)"""
    m = np.asarray(m, dtype=np.complex128)
    lam = 1.0 / np.sqrt(max(m.shape)) if lam is None else lam
    norm_fro = np.linalg.norm(m)
    if norm_fro == 0:
        return np.zeros_like(m), np.zeros_like(m), 0, 0.0

    norm_two = np.linalg.norm(m, 2)
    y = m / max(norm_two, np.max(np.abs(m)) / lam)
    mu = 1.25 / norm_two
    mu_max = mu * 1e7
    rho = 1.5
    low = np.zeros_like(m)
    sparse = np.zeros_like(m)
    residual = np.inf

    for iteration in range(1, max_iters + 1):
        low = singular_value_threshold(m - sparse + y / mu, 1.0 / mu)
        sparse = complex_soft_threshold(m - low + y / mu, lam / mu)
        gap = m - low - sparse
        y = y + mu * gap
        mu = min(mu * rho, mu_max)
        residual = float(np.linalg.norm(gap) / norm_fro)
        if residual < tolerance:
            return low, sparse, iteration, residual
    return low, sparse, max_iters, residual


def rpca_mitigate(dirty, cfg=None):
    """estimate = dirty - L, with the rank-one RFI terms absorbed by the low-rank part"""
    cfg = cfg or RpcaConfig()
    m = as_covariance_matrix(dirty)
    low, sparse, iterations, residual = principal_component_pursuit(m, cfg.lam, cfg.tolerance, cfg.max_iters)
    converged = residual < cfg.tolerance
    if not converged:
        logger.warning("RPCA did not converge in %d iterations (residual %.3e)", iterations, residual)
    estimate = from_covariance_matrix(m - low, dirty.grid)
    return RpcaResult(estimate, low, sparse, iterations, residual, converged)
