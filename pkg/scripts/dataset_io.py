"""
Paired dataset of clean/dirty visibilities.
Builds, normalizes, persists (binary shards + manifest.json), splits and streams
the sample pairs used for training and evaluation.
"""
import os
import json
import struct
import zlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from tqdm import tqdm

from config.config import (
    CLIP_BOUND, DATASET_FORMAT_VERSION, RFI_MODES, SCALE_PERCENTILE,
    get_worker_count, resolved_config_dict, run_config_from_dict,
)
from scripts.errors import ConfigError, DatasetIOError, DomainError, IntegrityError
from scripts.rfi_simulator import Mask, derive_seed, generate_sample, rfi_contribution, sample_rfi_scenario
from scripts.signal_model import GridSpec, VisibilityGrid, grid_from_config

logger = logging.getLogger(__name__)

MAGIC = b"VFDM"
MANIFEST_FILE = "manifest.json"
HEADER = struct.Struct("<4sIII")
PAIR_HEADER = struct.Struct("<QBBQ")
CRC = struct.Struct("<I")
MODE_CODES = {mode: code for code, mode in enumerate(RFI_MODES)}
SPLIT_STREAM = 0x5B117


@dataclass(frozen=True)
class SamplePair:
    id: int
    clean: VisibilityGrid
    dirty: VisibilityGrid
    mask: Mask
    mode: str
    source_count: int
    scenario_seed: int


@dataclass
class DatasetManifest:
    version: int
    grid: dict
    pair_count: int
    mode_counts: dict
    scale: float
    master_seed: int
    shards: list
    split: dict = field(default_factory=lambda: {"train": [], "test": []})
    settings: dict = field(default_factory=dict)
    root: str = None

    @property
    def grid_spec(self):
        return GridSpec(**self.grid)

    def ids(self):
        return list(range(self.pair_count))

    def to_json(self):
        record = asdict(self)
        record.pop("root")
        return json.dumps(record, indent=2, sort_keys=True)


def record_size(n):
    return PAIR_HEADER.size + 4 * 4 * n * n + n * n + CRC.size


# ============================================================================
# Normalization
# ============================================================================
def normalize(vis, s, clip=CLIP_BOUND):
    """(real/s, imag/s) as a 2 x n x n array clipped to [-clip, clip]; returns (channels, clip_count)"""
    if not s > 0:
        raise ConfigError(f"Normalization scale must be positive, got {s}")
    values = vis.values if isinstance(vis, VisibilityGrid) else np.asarray(vis)
    channels = np.stack([values.real / s, values.imag / s])
    clip_count = int(np.count_nonzero(np.abs(channels) > clip))
    if clip_count:
        logger.debug("normalize clipped %d entries at +/-%.1f", clip_count, clip)
    return np.clip(channels, -clip, clip), clip_count


def denormalize(channels, s, grid, role="estimate"):
    if not s > 0:
        raise ConfigError(f"Normalization scale must be positive, got {s}")
    channels = np.asarray(channels, dtype=np.float64)
    return VisibilityGrid(grid, s * (channels[0] + 1j * channels[1]), role)


def dataset_scale(clean_grids, percentile=SCALE_PERCENTILE):
    """99.5th percentile of |real| and |imag| over every clean entry"""
    entries = np.concatenate([np.abs(np.concatenate([v.real.ravel(), v.imag.ravel()])) for v in clean_grids])
    scale = float(np.percentile(entries, percentile))
    if not np.isfinite(scale) or scale <= 0:
        raise DomainError(f"Dataset scale must be finite and positive, got {scale}")
    return scale


# ============================================================================
# Shard Encoding
# ============================================================================
def _f32(values):
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def encode_record(pair_id, mode, source_count, scenario_seed, clean, dirty, mask):
    record = PAIR_HEADER.pack(pair_id, MODE_CODES[mode], source_count, scenario_seed)
    record += _f32(clean.real) + _f32(clean.imag) + _f32(dirty.real) + _f32(dirty.imag)
    record += np.ascontiguousarray(mask, dtype=np.uint8).tobytes()
    return record + CRC.pack(zlib.crc32(record))


def encode_pair(sample):
    scenario = sample["scenario"]
    return encode_record(sample["id"], scenario.mode, scenario.source_count, scenario.seed,
                         sample["clean"].values, sample["dirty"].values, sample["mask"].values)


def decode_pair(buffer, grid, shard_name):
    n = grid.n
    body, (crc,) = buffer[:-CRC.size], CRC.unpack(buffer[-CRC.size:])
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"Checksum mismatch in shard {shard_name}")
    pair_id, mode_code, source_count, scenario_seed = PAIR_HEADER.unpack_from(body)
    offset = PAIR_HEADER.size
    arrays = []
    for _ in range(4):
        arrays.append(np.frombuffer(body, dtype="<f4", count=n * n, offset=offset).reshape(n, n))
        offset += 4 * n * n
    mask = np.frombuffer(body, dtype=np.uint8, count=n * n, offset=offset).reshape(n, n).copy()
    clean = VisibilityGrid(grid, arrays[0].astype(np.float64) + 1j * arrays[1].astype(np.float64), "clean")
    dirty = VisibilityGrid(grid, arrays[2].astype(np.float64) + 1j * arrays[3].astype(np.float64), "dirty")
    return SamplePair(pair_id, clean, dirty, Mask(grid, mask), RFI_MODES[mode_code], source_count, scenario_seed)


def _write_atomic(path, data):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_shard(path, samples, grid):
    payload = HEADER.pack(MAGIC, DATASET_FORMAT_VERSION, grid.n, len(samples))
    payload += b"".join(encode_pair(s) for s in samples)
    _write_atomic(path, payload)


# ============================================================================
# Generation and Split
# ============================================================================
def split_counts(n_pairs, test_frac, convention="fraction_of_total"):
    """(train, test) sizes; 'relative_to_train' reads test_frac as test/train"""
    if not 0.0 < test_frac < 1.0:
        raise ConfigError(f"test_frac must be in (0, 1), got {test_frac}")
    if convention == "fraction_of_total":
        n_test = int(round(test_frac * n_pairs))
    elif convention == "relative_to_train":
        n_test = int(round(test_frac / (1.0 + test_frac) * n_pairs))
    else:
        raise ConfigError(f"Unknown split convention: {convention}")
    if n_pairs >= 2:
        n_test = min(max(n_test, 1), n_pairs - 1)
    return n_pairs - n_test, n_test


def split(manifest, test_frac=0.1007, convention="fraction_of_total"):
    """Deterministic shuffle by the master seed into disjoint train/test id lists"""
    _, n_test = split_counts(manifest.pair_count, test_frac, convention)
    rng = np.random.default_rng(derive_seed(manifest.master_seed, SPLIT_STREAM))
    order = rng.permutation(manifest.pair_count)
    manifest.split = {
        "train": sorted(int(i) for i in order[n_test:]),
        "test": sorted(int(i) for i in order[:n_test]),
    }
    return manifest


def generate_dataset(cfg, out_dir=None, force=False, workers=None, progress=True):
    """Simulate cfg.dataset.pairs pairs, write shards, then commit manifest.json"""
    ds = cfg.dataset
    if ds.pairs <= 0:
        raise ConfigError(f"dataset.pairs must be positive, got {ds.pairs}")
    out_dir = Path(out_dir or ds.output_dir)
    manifest_path = out_dir / MANIFEST_FILE
    if manifest_path.exists() and not force:
        raise DatasetIOError(f"{manifest_path} already exists; pass --force to overwrite")

    grid = grid_from_config(cfg)
    workers = workers or get_worker_count()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if manifest_path.exists():
            manifest_path.unlink()

        def build(index):
            return generate_sample(index, ds.seed, cfg, grid)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(tqdm(pool.map(build, range(ds.pairs)), total=ds.pairs,
                                desc="Simulating pairs", disable=not progress))

        scale = dataset_scale([s["clean"].values for s in samples])
        shards = []
        for start in range(0, ds.pairs, ds.shard_size):
            stop = min(start + ds.shard_size, ds.pairs)
            name = f"shard_{len(shards):05d}.bin"
            write_shard(out_dir / name, samples[start:stop], grid)
            shards.append({"file": name, "start": start, "stop": stop})

        mode_counts = {mode: 0 for mode in RFI_MODES}
        for s in samples:
            mode_counts[s["scenario"].mode] += 1

        settings = resolved_config_dict(cfg)
        settings["dataset"].pop("output_dir")
        manifest = DatasetManifest(
            version=DATASET_FORMAT_VERSION,
            grid=grid.as_dict(),
            pair_count=ds.pairs,
            mode_counts=mode_counts,
            scale=scale,
            master_seed=int(ds.seed),
            shards=shards,
            settings={key: settings[key] for key in ("grid", "simulate", "dataset")},
            root=str(out_dir),
        )
        split(manifest, ds.test_frac, ds.split_convention)
        _write_atomic(manifest_path, manifest.to_json().encode())
    except OSError as e:
        raise DatasetIOError(f"Dataset generation failed writing {out_dir}: {e}")
    return manifest


# ============================================================================
# Reading
# ============================================================================
def load_manifest(data_dir):
    path = Path(data_dir) / MANIFEST_FILE
    if not path.exists():
        raise DatasetIOError(f"No dataset manifest at {path}")
    try:
        record = json.loads(path.read_text())
        manifest = DatasetManifest(**record, root=str(Path(data_dir)))
    except (json.JSONDecodeError, TypeError) as e:
        raise IntegrityError(f"Malformed manifest {path}: {e}")
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest):
    covered = []
    for shard in manifest.shards:
        covered.extend(range(shard["start"], shard["stop"]))
    if covered != manifest.ids():
        raise IntegrityError("Manifest shard ranges are not disjoint and covering")
    train, test = set(manifest.split.get("train", [])), set(manifest.split.get("test", []))
    if train & test:
        raise IntegrityError("Manifest train and test splits overlap")
    if not (np.isfinite(manifest.scale) and manifest.scale > 0):
        raise IntegrityError(f"Manifest scale must be finite and positive, got {manifest.scale}")


def _read_shard(manifest, shard):
    path = Path(manifest.root) / shard["file"]
    if not path.exists():
        raise IntegrityError(f"Missing shard {shard['file']}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise IntegrityError(f"Truncated shard {shard['file']}")
    magic, version, n, count = HEADER.unpack_from(data)
    expected = HEADER.size + count * record_size(n)
    if magic != MAGIC or version != manifest.version or n != manifest.grid["n"] \
            or count != shard["stop"] - shard["start"] or len(data) != expected:
        raise IntegrityError(f"Header or size mismatch in shard {shard['file']}")
    return data


def read_pairs(manifest, ids):
    """Yield SamplePairs for `ids` in the requested order, bit-exactly as written"""
    grid = manifest.grid_spec
    size = record_size(grid.n)
    cache = {}
    for pair_id in ids:
        shard = next((s for s in manifest.shards if s["start"] <= pair_id < s["stop"]), None)
        if shard is None:
            raise DomainError(f"Pair id {pair_id} is not in the manifest")
        if shard["file"] not in cache:
            cache = {shard["file"]: _read_shard(manifest, shard)}
        offset = HEADER.size + (pair_id - shard["start"]) * size
        pair = decode_pair(cache[shard["file"]][offset:offset + size], grid, shard["file"])
        if pair.id != pair_id:
            raise IntegrityError(f"Shard {shard['file']} holds id {pair.id} where {pair_id} was expected")
        yield pair


def verify_pairs(manifest, ids):
    """Ids whose stored dirty grid is not clean + regenerated RFI + noise"""
    cfg = run_config_from_dict(manifest.settings)
    failures = []
    for pair in read_pairs(manifest, ids):
        scenario = sample_rfi_scenario(pair.mode, pair.scenario_seed, cfg)
        expected = pair.clean.values + rfi_contribution(scenario, pair.clean.grid)
        tolerance = 4 * np.finfo(np.float32).eps * (np.abs(pair.dirty.values) + np.abs(pair.clean.values) + 1e-30)
        diff = pair.dirty.values - expected
        if scenario.source_count != pair.source_count or \
                np.any(np.abs(diff.real) > tolerance) or np.any(np.abs(diff.imag) > tolerance):
            failures.append(pair.id)
    return failures


def train_test_arrays(manifest, which="train"):
    """Normalized (clean, dirty) float32 stacks of one split: each (N, 2, n, n)"""
    ids = manifest.split[which]
    cleans, dirties, clipped = [], [], 0
    for pair in read_pairs(manifest, ids):
        c, k1 = normalize(pair.clean, manifest.scale)
        d, k2 = normalize(pair.dirty, manifest.scale)
        cleans.append(c)
        dirties.append(d)
        clipped += k1
    if clipped:
        logger.info("%d clean entries clipped while normalizing the %s split", clipped, which)
    return np.asarray(cleans, dtype=np.float32), np.asarray(dirties, dtype=np.float32)


# ============================================================================
# Single-Pair Files
# ============================================================================
def write_single_pair(path, pair, first=None, second=None):
    """One-record shard; `first`/`second` replace the clean/dirty slots (e.g. an estimate)"""
    first = pair.clean if first is None else first
    second = pair.dirty if second is None else second
    payload = HEADER.pack(MAGIC, DATASET_FORMAT_VERSION, pair.clean.grid.n, 1)
    payload += encode_record(pair.id, pair.mode, pair.source_count, pair.scenario_seed,
                             first.values, second.values, pair.mask.values)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        _write_atomic(Path(path), payload)
    except OSError as e:
        raise DatasetIOError(f"Could not write {path}: {e}")
    return Path(path)


def read_pair_file(path, grid):
    """SamplePairs stored in a standalone shard of one or more records"""
    path = Path(path)
    if not path.exists():
        raise DatasetIOError(f"No such pair file: {path}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise IntegrityError(f"Truncated pair file {path.name}")
    magic, version, n, count = HEADER.unpack_from(data)
    if magic != MAGIC or version != DATASET_FORMAT_VERSION or count < 1:
        raise IntegrityError(f"{path.name} is not a pair shard")
    if n != grid.n:
        raise ConfigError(f"Pair file grid n={n} does not match configured n={grid.n}")
    size = record_size(n)
    if len(data) != HEADER.size + count * size:
        raise IntegrityError(f"Size mismatch in pair file {path.name}")
    return [decode_pair(data[HEADER.size + i * size:HEADER.size + (i + 1) * size], grid, path.name)
            for i in range(count)]


def read_single_pair(path, grid):
    """SamplePair stored in a one-record shard"""
    pairs = read_pair_file(path, grid)
    if len(pairs) != 1:
        raise IntegrityError(f"{Path(path).name} is not a single-pair shard")
    return pairs[0]


def dataset_inputs(manifest):
    """Manifest and shard files a run reads from a dataset"""
    if manifest.root is None:
        return []
    root = Path(manifest.root)
    return [root / MANIFEST_FILE] + [root / shard["file"] for shard in manifest.shards]
