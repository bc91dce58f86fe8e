"""
Randomized RFI simulator.
Synthetic natural scenes, RFI scenarios drawn per intensity regime,
injection into clean visibilities and ground-truth masks.
"""
import logging
from dataclasses import dataclass

import numpy as np

from config.config import RFI_MODES, RFI_REGIMES, SCENE_KINDS
from scripts.errors import ConfigError, DomainError
from scripts.signal_model import (
    AntennaPattern, SceneImage, VisibilityGrid,
    forward_visibility, hermitian_symmetrize, modify_bt, point_source_visibility,
)

logger = logging.getLogger(__name__)

SCENE_MIN_K = 80.0
SCENE_MAX_K = 320.0
SMOOTH_FIELD_EXPONENT = -2.5
SEA_K = 100.0
LAND_K = 270.0
BLOB_BASE_K = 150.0

STRONG_CLASS = ("strong", "very_strong")
WEAK_CLASS = ("weak", "medium")


@dataclass(frozen=True)
class RfiSource:
    xi0: float
    eta0: float
    peak_bt: float
    regime: str = "weak"

    def __post_init__(self):
        if not self.peak_bt >= 0 or not np.isfinite(self.peak_bt):
            raise DomainError(f"RFI peak BT must be finite and >= 0, got {self.peak_bt}")
        if self.regime not in RFI_REGIMES:
            raise DomainError(f"Unknown RFI regime: {self.regime}")


@dataclass(frozen=True)
class RfiScenario:
    sources: tuple
    mode: str
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.mode not in RFI_MODES:
            raise DomainError(f"Unknown RFI mode: {self.mode}")
        if len(self.sources) > 8:
            raise DomainError(f"At most 8 RFI sources per scenario, got {len(self.sources)}")
        if self.noise_std < 0:
            raise DomainError("Noise std must be >= 0")

    @property
    def source_count(self):
        return len(self.sources)


@dataclass(frozen=True)
class Mask:
    """1 = uncontaminated natural region, 0 = RFI-affected"""
    grid: object
    values: np.ndarray


def derive_seed(master_seed, index):
    """Independent 64-bit seed for item `index` of a master seed"""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


# ============================================================================
# Natural Scenes
# ============================================================================
def gaussian_random_field(rng, n, exponent=SMOOTH_FIELD_EXPONENT):
    """Zero-mean, unit-variance field with power spectrum ~ k^exponent"""
    white = np.fft.fft2(rng.standard_normal((n, n)))
    f = np.fft.fftfreq(n)
    k = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    amplitude = np.zeros_like(k)
    amplitude[k > 0] = k[k > 0] ** (exponent / 2.0)
    field = np.fft.ifft2(white * amplitude).real
    field -= field.mean()
    std = field.std()
    return field / std if std > 0 else field


def _smooth_field(rng, grid):
    return 200.0 + 40.0 * gaussian_random_field(rng, grid.n)


def _coastline(rng, grid):
    xi, eta = grid.direction_cosines()
    theta = rng.uniform(0, 2 * np.pi)
    s = xi * np.cos(theta) + eta * np.sin(theta)
    t = -xi * np.sin(theta) + eta * np.cos(theta)
    boundary = np.full_like(s, rng.uniform(-0.3, 0.3))
    for m in range(1, 4):
        boundary += (0.15 / m) * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * m * s + rng.uniform(0, 2 * np.pi))
    land = 0.5 * (1.0 + np.tanh((t - boundary) / 0.03))
    texture = 4.0 * gaussian_random_field(rng, grid.n)
    return SEA_K + (LAND_K - SEA_K) * land + texture


def _blobs(rng, grid):
    xi, eta = grid.direction_cosines()
    values = np.full((grid.n, grid.n), BLOB_BASE_K)
    for _ in range(rng.integers(3, 7)):
        r = 0.8 * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        width = rng.uniform(0.08, 0.25)
        amplitude = rng.uniform(40.0, 150.0)
        d2 = (xi - r * np.cos(phi)) ** 2 + (eta - r * np.sin(phi)) ** 2
        values += amplitude * np.exp(-d2 / (2 * width ** 2))
    return values


SCENE_BUILDERS = {
    "smooth_field": _smooth_field,
    "coastline": _coastline,
    "blobs": _blobs,
}


def synth_scene(kind, seed, grid):
    """Deterministic synthetic BT scene in [80, 320] K, zero outside support"""
    if kind not in SCENE_BUILDERS:
        raise ConfigError(f"Unknown scene kind: {kind} (expected one of {list(SCENE_KINDS)})")
    rng = np.random.default_rng(seed)
    values = np.clip(SCENE_BUILDERS[kind](rng, grid), SCENE_MIN_K, SCENE_MAX_K)
    return SceneImage(grid, np.where(grid.support_mask(), values, 0.0))


# ============================================================================
# RFI Scenarios
# ============================================================================
def classify_regime(peak_bt, regime_ranges):
    """Regime whose range holds peak_bt; out-of-range values go to the nearest end"""
    for regime in RFI_REGIMES:
        lo, hi = regime_ranges[regime]
        if peak_bt <= hi:
            return regime
    return RFI_REGIMES[-1]


def _draw_source(rng, regime, regime_ranges, support_radius):
    lo, hi = regime_ranges[regime]
    r = support_radius * np.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * np.pi)
    peak = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return RfiSource(float(r * np.cos(phi)), float(r * np.sin(phi)), peak, regime)


def sample_rfi_scenario(mode, seed, cfg):
    """Random scenario: 1-8 sources, uniform on the support disk, log-uniform strength"""
    if mode not in RFI_MODES:
        raise ConfigError(f"Unknown RFI mode: {mode}")
    sim = cfg.simulate
    rng = np.random.default_rng(seed)
    ranges = sim.regime_ranges
    radius = cfg.grid.support_radius

    if mode == "hybrid":
        count = int(rng.integers(max(2, sim.min_sources), sim.max_sources + 1))
        regimes = [STRONG_CLASS[rng.integers(2)], WEAK_CLASS[rng.integers(2)]]
        regimes += [RFI_REGIMES[rng.integers(len(RFI_REGIMES))] for _ in range(count - 2)]
        regimes = [regimes[i] for i in rng.permutation(count)]
    else:
        count = int(rng.integers(sim.min_sources, sim.max_sources + 1))
        regimes = [mode] * count

    sources = tuple(_draw_source(rng, regime, ranges, radius) for regime in regimes)
    return RfiScenario(sources, mode, noise_std=sim.noise_std, seed=int(seed))


def _noise_seed(seed):
    return derive_seed(seed, 1)


def rfi_contribution(scen, grid):
    """Hermitian-symmetrized sum of source visibilities plus receiver noise of complex std noise_std * dxi^2"""
    n = grid.n
    sources = np.zeros((n, n), dtype=np.complex128)
    for src in scen.sources:
        sources += point_source_visibility(src, grid).values
    contribution = hermitian_symmetrize(sources)
    if scen.noise_std > 0:
        rng = np.random.default_rng(_noise_seed(scen.seed))
        sigma = scen.noise_std * grid.dxi ** 2 / np.sqrt(2.0)
        noise = sigma * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
        # mirror averaging halves the variance
        contribution += np.sqrt(2.0) * hermitian_symmetrize(noise)
    return contribution


def inject(clean, scen):
    """dirty = clean + sum_i point_source_visibility(src_i) + noise"""
    if clean.role != "clean":
        raise DomainError(f"inject expects a clean visibility grid, got role={clean.role}")
    if not scen.sources and scen.noise_std == 0:
        return VisibilityGrid(clean.grid, clean.values, "dirty")
    return VisibilityGrid(clean.grid, clean.values + rfi_contribution(scen, clean.grid), "dirty")


def rfi_mask(scen, grid, radius_px=2):
    """Zero within Chebyshev distance radius_px of each source's nearest pixel"""
    if radius_px < 1:
        raise DomainError(f"Mask radius must be >= 1 pixel, got {radius_px}")
    values = np.ones((grid.n, grid.n), dtype=np.uint8)
    for src in scen.sources:
        k = grid.pixel_index(src.xi0)
        l = grid.pixel_index(src.eta0)
        values[max(k - radius_px, 0):k + radius_px + 1, max(l - radius_px, 0):l + radius_px + 1] = 0
    return Mask(grid, values)


# ============================================================================
# Paired Samples
# ============================================================================
def draw_mode(rng, mixture):
    modes = [m for m in RFI_MODES if mixture.get(m, 0) > 0]
    weights = np.array([mixture[m] for m in modes], dtype=float)
    return modes[rng.choice(len(modes), p=weights / weights.sum())]


def generate_sample(index, master_seed, cfg, grid, pattern=None):
    """One clean/dirty pair for dataset slot `index`, fully determined by the seeds"""
    pattern = pattern or AntennaPattern(grid, cfg.simulate.pattern, cfg.simulate.pattern_sigma)
    sample_seed = derive_seed(master_seed, index)
    picker = np.random.default_rng(derive_seed(sample_seed, 2))
    mode = draw_mode(picker, cfg.dataset.mode_mixture)
    kind = cfg.dataset.scene_kinds[picker.integers(len(cfg.dataset.scene_kinds))]

    scene = synth_scene(kind, derive_seed(sample_seed, 0), grid)
    clean = forward_visibility(modify_bt(scene, pattern))
    scenario = sample_rfi_scenario(mode, derive_seed(sample_seed, 1), cfg)
    dirty = inject(clean, scenario)
    mask = rfi_mask(scenario, grid, cfg.simulate.mask_radius_px)
    return {
        "id": index,
        "scene_kind": kind,
        "clean": clean,
        "dirty": dirty,
        "mask": mask,
        "scenario": scenario,
    }
