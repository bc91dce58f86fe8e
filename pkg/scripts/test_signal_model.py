#!/usr/bin/env python3
"""
Test the visibility/BT Fourier pair, point sources and modified BT
Run: python scripts/test_signal_model.py  (or pytest scripts/test_signal_model.py)
"""
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from scripts.errors import ConfigError, DomainError
from scripts.rfi_simulator import RfiSource
from scripts.signal_model import (
    AntennaPattern, GridSpec, ModifiedBT, SceneImage, VisibilityGrid,
    demodify_bt, forward_visibility, hermitian_error, impulse_image, inverse_bt,
    modify_bt, point_source_visibility, reflect,
)

SLOW = os.getenv("VFDM_SLOW_TESTS") == "1"


def _random_tm(grid, rng):
    return ModifiedBT(grid, np.where(grid.support_mask(), rng.uniform(0, 300, (grid.n, grid.n)), 0.0))


def test_fourier_pair_is_exact():
    rng = np.random.default_rng(0)
    for n in (16, 32, 64):
        grid = GridSpec(n)
        for _ in range(100 if SLOW else 10):
            tm = _random_tm(grid, rng)
            back = inverse_bt(forward_visibility(tm))
            err = np.linalg.norm(back.values - tm.values) / np.linalg.norm(tm.values)
            assert err < 1e-9, f"n={n}: relative error {err:.3e}"


def test_fft_matches_direct_sum():
    rng = np.random.default_rng(1)
    for n in (16, 32):
        grid = GridSpec(n)
        tm = _random_tm(grid, rng)
        fast = forward_visibility(tm, "fft").values
        slow = forward_visibility(tm, "direct").values
        assert np.max(np.abs(fast - slow)) / np.max(np.abs(slow)) < 1e-10
        vis = forward_visibility(tm)
        assert np.allclose(inverse_bt(vis, "fft").values, inverse_bt(vis, "direct").values, rtol=0, atol=1e-9)


def test_forward_of_real_scene_is_hermitian():
    grid = GridSpec(32)
    vis = forward_visibility(_random_tm(grid, np.random.default_rng(2)))
    assert hermitian_error(vis.values) < 1e-12
    assert inverse_bt(vis).imag_residual < 1e-12
    assert not inverse_bt(vis).non_hermitian


def test_parseval_energy_balance():
    rng = np.random.default_rng(5)
    for n in (16, 32, 64):
        grid = GridSpec(n)
        tm = _random_tm(grid, rng)
        vis = forward_visibility(tm).values
        image_energy = np.sum(tm.values ** 2) * grid.dxi ** 2
        vis_energy = np.sum(np.abs(vis) ** 2) * grid.ds
        assert abs(image_energy - vis_energy) < 1e-8 * image_energy, f"n={n}"


def test_forward_model_is_linear():
    rng = np.random.default_rng(6)
    grid = GridSpec(32)
    a, b = _random_tm(grid, rng), _random_tm(grid, rng)
    alpha, beta = 0.7, -2.3
    combined = forward_visibility(ModifiedBT(grid, alpha * a.values + beta * b.values)).values
    separate = alpha * forward_visibility(a).values + beta * forward_visibility(b).values
    assert np.max(np.abs(combined - separate)) < 1e-12 * np.max(np.abs(separate))


def test_reflection_index():
    values = np.arange(16).reshape(4, 4)
    r = reflect(values)
    assert r[1, 1] == values[3, 3]
    assert r[0, 0] == values[0, 0]
    assert r[2, 0] == values[2, 0]


def test_non_hermitian_input_is_flagged():
    grid = GridSpec(16)
    values = np.zeros((16, 16), dtype=complex)
    values[9, 8] = 1j
    result = inverse_bt(VisibilityGrid(grid, values))
    assert result.non_hermitian
    assert result.imag_residual > 1e-6


def test_on_grid_point_source_matches_impulse():
    grid = GridSpec(32)
    k, l, p = 20, 12, 5e4
    src = RfiSource(grid.xi[k], grid.xi[l], p, "strong")
    vis = point_source_visibility(src, grid).values
    impulse = forward_visibility(impulse_image(grid, k, l, p)).values
    assert np.max(np.abs(vis - impulse)) / np.max(np.abs(impulse)) < 1e-12
    image = inverse_bt(VisibilityGrid(grid, vis)).values
    assert abs(image[k, l] - p) < 1e-6 * p


def test_point_source_is_rank_one():
    grid = GridSpec(32)
    src = RfiSource(0.3172, -0.2419, 1e4, "strong")
    s = np.linalg.svd(point_source_visibility(src, grid).values, compute_uv=False)
    assert s[1] / s[0] < 1e-12


def test_point_source_outside_unit_disk():
    grid = GridSpec(16)
    try:
        point_source_visibility(RfiSource(0.9, 0.9, 1e3, "weak"), grid)
    except DomainError:
        return
    assert False, "expected DomainError"


def test_modify_demodify_round_trip():
    grid = GridSpec(32)
    rng = np.random.default_rng(3)
    scene = SceneImage(grid, np.where(grid.support_mask(), rng.uniform(80, 320, (32, 32)), 0.0))
    for kind in ("uniform", "gaussian"):
        pattern = AntennaPattern(grid, kind)
        tm = modify_bt(scene, pattern)
        assert np.all(tm.values[~grid.support_mask()] == 0)
        back = demodify_bt(tm, pattern)
        assert back.clamped == 0
        assert np.max(np.abs(back.values - scene.values)) < 1e-12 * 320


def test_uniform_pattern_boresight_is_c0_times_tb():
    grid = GridSpec(16, c0=2.0)
    scene = SceneImage(grid, np.where(grid.support_mask(), 150.0, 0.0))
    tm = modify_bt(scene, AntennaPattern(grid, "uniform"))
    assert tm.values[8, 8] == 300.0


def test_demodify_clamps_negative_temperatures():
    grid = GridSpec(16)
    values = np.where(grid.support_mask(), 100.0, 0.0)
    values[8, 8] = -5.0
    values[7, 8] = -1.0
    result = demodify_bt(ModifiedBT(grid, values), AntennaPattern(grid, "uniform"))
    assert result.clamped == 2
    assert result.values.min() == 0.0


def test_scene_validation():
    grid = GridSpec(16)
    bad = np.where(grid.support_mask(), 100.0, 0.0)
    bad[4, 8] = -1.0
    for values in (bad, np.full((16, 16), 100.0), np.zeros((8, 8))):
        try:
            SceneImage(grid, values)
        except DomainError:
            continue
        assert False, "expected DomainError"


def test_grid_validation():
    for kwargs in ({"n": 7}, {"n": 4}, {"n": 32, "du": 0.25}, {"n": 32, "support_radius": 1.0}):
        try:
            GridSpec(**kwargs)
        except ConfigError:
            continue
        assert False, f"expected ConfigError for {kwargs}"


def test_values_are_immutable():
    grid = GridSpec(16)
    vis = forward_visibility(impulse_image(grid, 8, 8, 1.0))
    try:
        vis.values[0, 0] = 1.0
    except ValueError:
        return
    assert False, "visibility values should be read-only"


def main():
    print("🧪 Testing signal model")
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
