#!/usr/bin/env python3
"""
Test RMSE, SSIM, TRE and per-method evaluation
Run: python scripts/test_metrics.py  (or pytest scripts/test_metrics.py)
"""
import os
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd

from config.config import load_run_config
from scripts.dataset_io import SamplePair, generate_dataset, load_manifest, read_pairs
from scripts.errors import ConfigError, DomainError
from scripts.metrics import (
    REPORT_COLUMNS, EvalRegion, aggregate_report, evaluate, evaluate_method, gaussian_window,
    method_estimator, rmse, ssim, tre,
)
from scripts.rfi_simulator import RfiScenario, RfiSource, rfi_mask, synth_scene
from scripts.signal_model import AntennaPattern, GridSpec, forward_visibility, modify_bt

SLOW = os.getenv("VFDM_SLOW_TESTS") == "1"
GRID = GridSpec(32)


def _expect(error, call):
    try:
        call()
    except error:
        return
    assert False, f"expected {error.__name__}"


def test_rmse():
    rng = np.random.default_rng(0)
    a = rng.normal(200.0, 20.0, size=(16, 16))
    assert rmse(a, a) == 0.0
    assert abs(rmse(a + 5.0, a) - 5.0) < 1e-12
    assert rmse(a, a * 1.1) == rmse(a * 1.1, a)
    region = np.zeros((16, 16), dtype=bool)
    region[:4, :4] = True
    b = a.copy()
    b[~region] += 1000.0
    assert rmse(b, a, region) == 0.0


def test_rmse_rejects_bad_inputs():
    a = np.ones((8, 8))
    _expect(DomainError, lambda: rmse(a, np.ones((8, 9))))
    _expect(DomainError, lambda: rmse(a, a, np.zeros((8, 8), dtype=bool)))


def test_gaussian_window_is_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.allclose(w, w.T)


def test_ssim_identity_and_symmetry():
    rng = np.random.default_rng(1)
    a = rng.normal(200.0, 20.0, size=(32, 32))
    b = a + rng.normal(0.0, 5.0, size=(32, 32))
    assert abs(ssim(a, a) - 1.0) < 1e-12
    s = ssim(a, b)
    assert 0.0 < s < 1.0
    # same value set, so both orders share one data range
    flipped = a[::-1, :]
    assert abs(ssim(a, flipped) - ssim(flipped, a)) < 1e-12


def test_ssim_is_symmetric_across_value_ranges():
    rng = np.random.default_rng(4)
    a = rng.normal(200.0, 20.0, size=(32, 32))
    for b in (0.3 * a + rng.normal(0.0, 2.0, size=(32, 32)),
              150.0 + 4.0 * (a - 200.0),
              rng.uniform(90.0, 110.0, size=(32, 32))):
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    region = EvalRegion(GRID).mask
    wide = 3.0 * a
    assert abs(ssim(a, wide, region) - ssim(wide, a, region)) < 1e-9


def test_ssim_anti_correlated_is_low():
    rng = np.random.default_rng(2)
    ref = rng.normal(100.0, 10.0, size=(8, 8))
    pred = 2.0 * ref.mean() - ref
    assert ssim(pred, ref, window_size=7) < 0.5


def test_ssim_luminance_shift_on_ramp():
    k, l = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    ref = 100.0 + 2.0 * k + 3.0 * l
    data_range = ref.max() - ref.min()
    c = 0.05 * data_range
    c1 = (0.01 * data_range) ** 2
    centers = ref[5:27, 5:27]
    expected = np.mean((2 * centers * (centers + c) + c1) / (centers ** 2 + (centers + c) ** 2 + c1))
    assert abs(ssim(ref + c, ref) - expected) < 1e-6


def test_ssim_edge_cases():
    small = np.random.default_rng(3).normal(size=(8, 8))
    _expect(DomainError, lambda: ssim(small, small))
    constant = np.full((16, 16), 250.0)
    assert ssim(constant, constant) == 1.0
    assert ssim(constant + 1.0, constant) < 1.0


def test_tre_hand_oracle():
    pred = np.tile(np.arange(4.0), (4, 1))
    dirty = pred + 2.0
    mask = np.ones((4, 4), dtype=np.uint8)
    mask[1:3, 1:3] = 0
    # fidelity sqrt(12 * 4 / 12) = 2, smoothness 4 * 1 / (2 * 4) = 0.5
    assert abs(tre(pred, dirty, mask) - 2.5) < 1e-12


def test_tre_zero_cases():
    flat = np.full((8, 8), 200.0)
    mask = np.ones((8, 8), dtype=np.uint8)
    mask[3, 3] = 0
    assert tre(flat, flat, mask) == 0.0


def test_tre_degenerate_masks():
    flat = np.full((8, 8), 200.0)
    for value in (0, 1):
        mask = np.full((8, 8), value, dtype=np.uint8)
        _expect(DomainError, lambda: tre(flat, flat, mask))


def test_eval_region():
    region = EvalRegion(GRID)
    assert region.mask.sum() > 0
    assert not (region.mask & ~GRID.support_mask()).any()
    for radius in (0.0, -0.3, 0.95):
        _expect(DomainError, lambda: EvalRegion(GRID, radius))


def _pair(pair_id=0, mode="strong"):
    clean = forward_visibility(modify_bt(synth_scene("smooth_field", pair_id, GRID), AntennaPattern(GRID)))
    src = RfiSource(GRID.xi[20], GRID.xi[12], 1e4, "strong")
    mask = rfi_mask(RfiScenario((src,), "strong"), GRID)
    return SamplePair(pair_id, clean, clean.with_role("dirty"), mask, mode, 1, 0)


def test_evaluate_method_none_on_clean_input():
    pairs = [_pair(0), _pair(1, "weak")]
    frame = evaluate_method("none", pairs, AntennaPattern(GRID), EvalRegion(GRID))
    assert list(frame.columns) == REPORT_COLUMNS
    assert len(frame) == 2
    assert (frame["rmse_K"] == 0.0).all()
    assert np.allclose(frame["ssim"], 1.0, atol=1e-12)
    assert (frame["tre_K"] >= 0.0).all()
    assert list(frame["mode"]) == ["strong", "weak"]


def test_reference_free_evaluation_skips_rmse_and_ssim():
    frame = evaluate_method("none", [_pair()], AntennaPattern(GRID), EvalRegion(GRID), reference_free=True)
    assert frame["rmse_K"].isna().all() and frame["ssim"].isna().all()
    assert frame["tre_K"].notna().all()


def test_method_estimator_validation():
    _expect(ConfigError, lambda: method_estimator("rnn"))
    _expect(ConfigError, lambda: method_estimator("vfdm"))


def test_aggregate_report():
    per_sample = pd.DataFrame([
        {"id": 0, "mode": "strong", "source_count": 1, "method": "none", "rmse_K": 2.0, "ssim": 0.5, "tre_K": 1.0},
        {"id": 1, "mode": "weak", "source_count": 1, "method": "none", "rmse_K": 1.0, "ssim": 0.9, "tre_K": 3.0},
        {"id": 2, "mode": "strong", "source_count": 2, "method": "none", "rmse_K": 4.0, "ssim": 0.7, "tre_K": 2.0},
    ], columns=REPORT_COLUMNS)
    summary = aggregate_report(per_sample)
    assert list(summary["mode"]) == ["weak", "strong"]
    strong = summary[summary["mode"] == "strong"].iloc[0]
    assert strong["rmse_K"] == 3.0 and abs(strong["ssim"] - 0.6) < 1e-12 and strong["count"] == 2
    assert summary[summary["mode"] == "weak"].iloc[0]["count"] == 1


def test_dirty_rmse_grows_with_regime():
    """Mean dirty-image RMSE over a simulated dataset orders weak < medium < strong < very_strong"""
    pairs = 250 if SLOW else 100
    cfg = load_run_config(None, {"grid.n": 32, "dataset.pairs": pairs, "dataset.shard_size": pairs,
                                 "dataset.seed": 1})
    with tempfile.TemporaryDirectory() as root:
        generate_dataset(cfg, Path(root), progress=False)
        manifest = load_manifest(root)
        _, aggregate = evaluate(["none"], read_pairs(manifest, manifest.ids()), cfg, progress=False)
    means = aggregate.set_index("mode")["rmse_K"]
    assert means["weak"] < means["medium"] < means["strong"] < means["very_strong"]


def main():
    print("🧪 Testing metrics")
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
