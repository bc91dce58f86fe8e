#!/usr/bin/env python3
"""
Test dataset generation, shards, the manifest and the train/test split
Run: python scripts/test_dataset_io.py  (or pytest scripts/test_dataset_io.py)
"""
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from config.config import file_hash, load_run_config
from scripts.errors import ConfigError, DatasetIOError, IntegrityError
from scripts.dataset_io import (
    HEADER, MANIFEST_FILE, DatasetManifest, dataset_inputs, denormalize, generate_dataset, load_manifest,
    normalize, read_pair_file, read_pairs, read_single_pair, split, split_counts, train_test_arrays,
    verify_pairs, write_single_pair,
)
from scripts.rfi_simulator import generate_sample
from scripts.signal_model import GridSpec, VisibilityGrid

SMALL = {"grid.n": 16, "dataset.pairs": 24, "dataset.shard_size": 10, "dataset.seed": 5}


def _small_dataset(root, **extra):
    cfg = load_run_config(None, {**SMALL, **extra})
    return cfg, generate_dataset(cfg, Path(root), workers=2, progress=False)


def test_split_counts():
    assert split_counts(13007, 0.1007) == (11697, 1310)
    assert split_counts(111, 0.1, "relative_to_train") == (101, 10)
    assert split_counts(2, 0.01) == (1, 1)
    try:
        split_counts(100, 0.1, "by_hand")
    except ConfigError:
        return
    assert False, "expected ConfigError"


def test_split_is_disjoint_exhaustive_and_deterministic():
    manifest = DatasetManifest(1, GridSpec(16).as_dict(), 500, {}, 1.0, 42, [])
    split(manifest, 0.1007)
    train, test = manifest.split["train"], manifest.split["test"]
    assert len(test) == 50
    assert not set(train) & set(test)
    assert sorted(train + test) == list(range(500))
    again = DatasetManifest(1, GridSpec(16).as_dict(), 500, {}, 1.0, 42, [])
    assert split(again, 0.1007).split == manifest.split


def test_normalize_round_trip_and_clip():
    grid = GridSpec(16)
    rng = np.random.default_rng(0)
    values = 0.5 * (rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16)))
    channels, clipped = normalize(VisibilityGrid(grid, values), 10.0)
    assert clipped == 0
    back = denormalize(channels, 10.0, grid)
    assert np.max(np.abs(back.values - values)) < 1e-12

    zero, clipped = normalize(np.zeros((16, 16), dtype=complex), 1.0)
    assert clipped == 0 and not zero.any()

    values[3, 4] = 50.0 - 40j
    channels, clipped = normalize(values, 1.0)
    assert clipped == 2
    assert channels[0, 3, 4] == 3.0 and channels[1, 3, 4] == -3.0


def test_normalize_rejects_bad_scale():
    for s in (0.0, -1.0):
        try:
            normalize(np.zeros((16, 16), dtype=complex), s)
        except ConfigError:
            continue
        assert False, "expected ConfigError"


def test_generation_is_byte_identical():
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        _, first = _small_dataset(a)
        _, second = _small_dataset(b)
        assert [s["file"] for s in first.shards] == ["shard_00000.bin", "shard_00001.bin", "shard_00002.bin"]
        for name in [s["file"] for s in first.shards] + [MANIFEST_FILE]:
            assert file_hash(Path(a) / name) == file_hash(Path(b) / name), name
        assert first.pair_count == 24 and sum(first.mode_counts.values()) == 24
        assert first.scale > 0


def test_read_pairs_returns_stored_pairs_in_order():
    with tempfile.TemporaryDirectory() as root:
        cfg, _ = _small_dataset(root)
        manifest = load_manifest(root)
        ids = [19, 3, 10, 3]
        pairs = list(read_pairs(manifest, ids))
        assert [p.id for p in pairs] == ids
        for pair in pairs:
            expected = generate_sample(pair.id, cfg.dataset.seed, cfg, manifest.grid_spec)
            for stored, original in ((pair.clean, expected["clean"]), (pair.dirty, expected["dirty"])):
                assert np.array_equal(stored.values.real, original.values.real.astype(np.float32))
                assert np.array_equal(stored.values.imag, original.values.imag.astype(np.float32))
            assert np.array_equal(pair.mask.values, expected["mask"].values)
            assert pair.mode == expected["scenario"].mode
            assert pair.source_count == expected["scenario"].source_count
        assert list(read_pairs(manifest, [])) == []


def test_verify_pairs_accepts_generated_data():
    with tempfile.TemporaryDirectory() as root:
        _small_dataset(root)
        manifest = load_manifest(root)
        assert verify_pairs(manifest, manifest.ids()) == []


def test_corrupted_shard_raises_integrity_error():
    with tempfile.TemporaryDirectory() as root:
        _small_dataset(root)
        path = Path(root) / "shard_00001.bin"
        data = bytearray(path.read_bytes())
        data[HEADER.size + 40] ^= 0xFF
        path.write_bytes(bytes(data))
        manifest = load_manifest(root)
        try:
            list(read_pairs(manifest, [10]))
        except IntegrityError as e:
            assert "shard_00001.bin" in str(e)
            return
        assert False, "expected IntegrityError"


def test_truncated_shard_raises_integrity_error():
    with tempfile.TemporaryDirectory() as root:
        _small_dataset(root)
        path = Path(root) / "shard_00002.bin"
        path.write_bytes(path.read_bytes()[:-7])
        try:
            list(read_pairs(load_manifest(root), [21]))
        except IntegrityError:
            return
        assert False, "expected IntegrityError"


def test_existing_dataset_needs_force():
    with tempfile.TemporaryDirectory() as root:
        cfg, _ = _small_dataset(root)
        try:
            generate_dataset(cfg, Path(root), progress=False)
        except DatasetIOError:
            pass
        else:
            assert False, "expected DatasetIOError"
        again = generate_dataset(cfg, Path(root), force=True, workers=1, progress=False)
        assert again.pair_count == 24


def test_zero_pairs_writes_nothing():
    with tempfile.TemporaryDirectory() as root:
        target = Path(root) / "empty"
        try:
            _small_dataset(target, **{"dataset.pairs": 0})
        except ConfigError:
            assert not target.exists()
            return
        assert False, "expected ConfigError"


def test_train_test_arrays_shapes():
    with tempfile.TemporaryDirectory() as root:
        _small_dataset(root)
        manifest = load_manifest(root)
        clean, dirty = train_test_arrays(manifest, "train")
        assert clean.shape == (len(manifest.split["train"]), 2, 16, 16)
        assert clean.dtype == np.float32 and dirty.dtype == np.float32
        assert np.abs(clean).max() <= 3.0


def test_single_pair_file_round_trip():
    with tempfile.TemporaryDirectory() as root:
        _small_dataset(root)
        manifest = load_manifest(root)
        pair = next(read_pairs(manifest, [7]))
        path = write_single_pair(Path(root) / "pair_7.bin", pair)
        back = read_single_pair(path, manifest.grid_spec)
        assert back.id == 7 and back.mode == pair.mode
        assert np.array_equal(back.dirty.values, pair.dirty.values)
        try:
            read_single_pair(path, GridSpec(32))
        except ConfigError:
            return
        assert False, "expected ConfigError on grid mismatch"


def test_multi_pair_shard_file_reads_every_record():
    with tempfile.TemporaryDirectory() as root:
        _small_dataset(root)
        manifest = load_manifest(root)
        shard = manifest.shards[1]
        pairs = read_pair_file(Path(root) / shard["file"], manifest.grid_spec)
        assert [p.id for p in pairs] == list(range(shard["start"], shard["stop"]))
        for stored, pair in zip(read_pairs(manifest, [p.id for p in pairs]), pairs):
            assert np.array_equal(stored.dirty.values, pair.dirty.values)
            assert np.array_equal(stored.mask.values, pair.mask.values)
        try:
            read_single_pair(Path(root) / shard["file"], manifest.grid_spec)
        except IntegrityError:
            pass
        else:
            assert False, "expected IntegrityError for a multi-pair shard"
        expected = [Path(root) / MANIFEST_FILE] + [Path(root) / s["file"] for s in manifest.shards]
        assert dataset_inputs(manifest) == expected


def test_missing_manifest():
    with tempfile.TemporaryDirectory() as root:
        try:
            load_manifest(root)
        except DatasetIOError:
            return
        assert False, "expected DatasetIOError"


def main():
    print("🧪 Testing dataset I/O")
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
