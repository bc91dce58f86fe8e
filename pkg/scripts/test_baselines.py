#!/usr/bin/env python3
"""
Test the CLEAN and RPCA baselines
Run: python scripts/test_baselines.py  (or pytest scripts/test_baselines.py)
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from scripts.baselines import (
    CleanConfig, RpcaConfig, clean_mitigate, complex_soft_threshold, principal_component_pursuit,
    rpca_mitigate, singular_value_threshold,
)
from scripts.errors import ConfigError
from scripts.rfi_simulator import RfiScenario, RfiSource, inject, synth_scene
from scripts.signal_model import (
    AntennaPattern, GridSpec, SceneImage, VisibilityGrid, forward_visibility, inverse_bt,
    modify_bt, point_source_visibility,
)

GRID = GridSpec(32)


def _flat_clean(grid=GRID, level=200.0):
    scene = SceneImage(grid, np.where(grid.support_mask(), level, 0.0))
    return forward_visibility(modify_bt(scene, AntennaPattern(grid)))


def test_clean_finds_single_strong_source():
    clean = _flat_clean()
    k, l, p = 20, 12, 1e5
    dirty = inject(clean, RfiScenario((RfiSource(GRID.xi[k], GRID.xi[l], p, "strong"),), "strong", noise_std=0.0))
    result = clean_mitigate(dirty)
    assert result.converged
    assert len(result.detections) == 1
    det = result.detections[0]
    assert abs(GRID.pixel_index(det.xi0) - k) <= 1 and abs(GRID.pixel_index(det.eta0) - l) <= 1
    residual = inverse_bt(result.estimate).values - inverse_bt(clean).values
    assert np.max(np.abs(residual)) < 0.01 * p


def test_clean_off_grid_source_is_localized():
    clean = _flat_clean()
    src = RfiSource(0.2731, -0.1862, 2e5, "very_strong")
    dirty = inject(clean, RfiScenario((src,), "very_strong", noise_std=0.0))
    result = clean_mitigate(dirty)
    strongest = max(result.detections, key=lambda d: d.peak_bt)
    assert abs(strongest.xi0 - src.xi0) <= GRID.dxi
    assert abs(strongest.eta0 - src.eta0) <= GRID.dxi


def test_clean_has_no_false_positives_on_smooth_scenes():
    pattern = AntennaPattern(GRID)
    for seed in range(50):
        clean = forward_visibility(modify_bt(synth_scene("smooth_field", seed, GRID), pattern))
        result = clean_mitigate(clean.with_role("dirty"))
        assert result.detections == [], f"seed {seed}: {len(result.detections)} detections"
        assert np.array_equal(result.estimate.values, clean.values)


def test_clean_bookkeeping():
    clean = _flat_clean()
    sources = (RfiSource(GRID.xi[20], GRID.xi[12], 5e4, "strong"),
               RfiSource(GRID.xi[10], GRID.xi[18], 3e3, "medium"))
    dirty = inject(clean, RfiScenario(sources, "hybrid", noise_std=0.0))
    result = clean_mitigate(dirty)
    assert np.max(np.abs(dirty.values - result.estimate.values - result.components)) < 1e-12 * np.max(np.abs(dirty.values))
    assert len(result.peaks) == result.iterations
    assert result.estimate.role == "estimate"


def test_clean_peaks_decrease_for_isolated_source():
    clean = _flat_clean()
    dirty = inject(clean, RfiScenario((RfiSource(GRID.xi[16], GRID.xi[16], 1e4, "strong"),), "strong", noise_std=0.0))
    peaks = clean_mitigate(dirty, CleanConfig(loop_gain=0.3)).peaks
    assert len(peaks) > 1
    assert all(b < a for a, b in zip(peaks, peaks[1:]))


def test_clean_iteration_cap_reports_unconverged():
    clean = _flat_clean()
    dirty = inject(clean, RfiScenario((RfiSource(GRID.xi[16], GRID.xi[16], 1e6, "very_strong"),), "very_strong", noise_std=0.0))
    result = clean_mitigate(dirty, CleanConfig(loop_gain=0.05, max_iters=3))
    assert result.unconverged
    assert result.iterations == 3


def test_clean_config_validation():
    for kwargs in ({"loop_gain": 0.0}, {"loop_gain": 1.5}, {"threshold_k": -1.0}, {"max_iters": 0}):
        try:
            CleanConfig(**kwargs)
        except ConfigError:
            continue
        assert False, f"expected ConfigError for {kwargs}"


def test_complex_soft_threshold_keeps_phase():
    x = np.array([3 + 4j, 0.1j, 0.0, -2.0])
    y = complex_soft_threshold(x, 1.0)
    assert np.isclose(y[0], (3 + 4j) * 4 / 5)
    assert y[1] == 0 and y[2] == 0
    assert np.isclose(y[3], -1.0)


def test_singular_value_threshold_drops_small_components():
    rng = np.random.default_rng(0)
    u, _ = np.linalg.qr(rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16)))
    v, _ = np.linalg.qr(rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16)))
    s = np.array([10.0, 5.0, 2.0] + [0.5] * 13)
    x = (u * s) @ v.conj().T
    low = singular_value_threshold(x, 1.0)
    assert np.linalg.matrix_rank(low) == 3
    assert np.allclose(np.linalg.svd(low, compute_uv=False)[:3], [9.0, 4.0, 1.0])


def test_rpca_zero_input():
    low, sparse, iterations, residual = principal_component_pursuit(np.zeros((16, 16), dtype=complex))
    assert not low.any() and not sparse.any()
    assert iterations == 0 and residual == 0.0


def test_rpca_recovers_low_rank_plus_sparse():
    n = 64
    rng = np.random.default_rng(1)
    x = (rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))) / np.sqrt(2 * n)
    y = (rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))) / np.sqrt(2 * n)
    l0 = x @ y.conj().T
    s0 = np.zeros((n, n), dtype=complex)
    support = rng.random((n, n)) < 0.05
    s0[support] = np.exp(2j * np.pi * rng.random(support.sum()))
    low, sparse, _, residual = principal_component_pursuit(l0 + s0, tolerance=1e-9, max_iters=1000)
    assert residual < 1e-9
    assert np.linalg.norm(low - l0) / np.linalg.norm(l0) < 1e-5
    assert np.linalg.norm(sparse - s0) / np.linalg.norm(s0) < 1e-5


def test_rpca_absorbs_a_point_source():
    clean = _flat_clean()
    src = RfiSource(GRID.xi[20], GRID.xi[12], 1e5, "very_strong")
    dirty = inject(clean, RfiScenario((src,), "very_strong", noise_std=0.0))
    result = rpca_mitigate(dirty, RpcaConfig(tolerance=1e-8, max_iters=1000))
    assert result.converged
    rfi = point_source_visibility(src, GRID).values
    s = np.linalg.svd(result.lowrank, compute_uv=False)
    assert s[0] > 0.5 * np.linalg.norm(rfi, 2)
    image = inverse_bt(result.estimate).values
    assert image[20, 12] < 0.1 * src.peak_bt


def test_rpca_absorbs_a_pure_point_source():
    rfi = point_source_visibility(RfiSource(0.2731, -0.1862, 1e4), GRID).values
    low, sparse, _, _ = principal_component_pursuit(rfi, tolerance=1e-9, max_iters=1000)
    assert np.linalg.norm(low - rfi) / np.linalg.norm(rfi) < 1e-4


def test_rpca_is_deterministic():
    dirty = inject(_flat_clean(), RfiScenario((RfiSource(0.1, 0.2, 1e4, "strong"),), "strong", seed=3))
    a = rpca_mitigate(dirty)
    b = rpca_mitigate(dirty)
    assert np.array_equal(a.estimate.values, b.estimate.values)
    assert a.iterations == b.iterations


def test_baselines_keep_the_grid():
    dirty = VisibilityGrid(GRID, _flat_clean().values, "dirty")
    for result in (clean_mitigate(dirty), rpca_mitigate(dirty)):
        assert result.estimate.grid == GRID
        assert result.estimate.role == "estimate"


def main():
    print("🧪 Testing baselines")
    print("=" * 80)
    tests = [(name, fn) for name, fn in globals().items() if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        try:
            fn()
            print(f"✅ {name}")
        except Exception as e:
            failed += 1
            print(f"❌ {name}: {e}")
    print("=" * 80)
    print(f"{len(tests) - failed}/{len(tests)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
