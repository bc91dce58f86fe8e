"""
Configuration settings for the VFDM RFI mitigation project.
Module constants are the defaults; a run config file (pipeline_config.json)
overrides them and the fully resolved config is archived with every run.
"""
import os
import json
import hashlib
from dataclasses import dataclass, field, asdict, fields, is_dataclass
from pathlib import Path

import yaml
from dotenv import load_dotenv

from scripts.errors import ConfigError

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent

# ============================================================================
# Grid Configuration
# ============================================================================
GRID_N = 32
GRID_DU = 0.5                   # u-v spacing in wavelengths
RADIOMETRIC_C0 = 1.0            # kZ/lambda_c^2 in normalized Kelvin units
SUPPORT_RADIUS = 0.9            # direction-cosine radius of nonzero scene support

# ============================================================================
# Simulator Configuration
# ============================================================================
ANTENNA_PATTERN = "gaussian"
ANTENNA_SIGMA = 0.8
RFI_REGIMES = ("weak", "medium", "strong", "very_strong")
RFI_MODES = RFI_REGIMES + ("hybrid",)
REGIME_RANGES = {
    "weak": (5e2, 2e3),
    "medium": (2e3, 1e4),
    "strong": (1e4, 1e5),
    "very_strong": (1e5, 1e6),
}
MIN_SOURCES = 1
MAX_SOURCES = 8
NOISE_STD = 0.05
MASK_RADIUS_PX = 2
SCENE_KINDS = ("smooth_field", "coastline", "blobs")

# ============================================================================
# Dataset Configuration
# ============================================================================
DATASET_PAIRS = 2000
MASTER_SEED = 1234
TEST_FRAC = 0.1007
SPLIT_CONVENTION = "fraction_of_total"
SHARD_SIZE = 1000
SCALE_PERCENTILE = 99.5
CLIP_BOUND = 3.0
DATASET_FORMAT_VERSION = 1

# ============================================================================
# Model Configuration
# ============================================================================
UNET_IN_CHANNELS = 4
UNET_OUT_CHANNELS = 2
UNET_BASE_WIDTH = 16
UNET_CHANNEL_MULT = (1, 2, 4)
UNET_BLOCKS_PER_LEVEL = 2
UNET_NORM_GROUPS = 4
UNET_TIME_EMBED_DIM = 64
UNET_PRECISION = "f32"

# ============================================================================
# Diffusion Configuration
# ============================================================================
DIFFUSION_STEPS = 100
BSQ_MIN_AT_1000 = 1e-4
BSQ_MAX_AT_1000 = 0.02
SAMPLER_ETA = 0.0
SAMPLERS = ("generalized", "ancestral")

# ============================================================================
# Training Configuration
# ============================================================================
TRAIN_STEPS = 20000
BATCH_SIZE = 16
LEARNING_RATE = 6e-4
LR_DECAY_FACTOR = 0.5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CHECKPOINT_EVERY = 1000

# ============================================================================
# Evaluation Configuration
# ============================================================================
EVAL_RADIUS = 0.7
EVAL_METHODS = ("none", "clean", "rpca", "vfdm")
CLEAN_LOOP_GAIN = 0.2
CLEAN_MAX_ITERS = 200
CLEAN_THRESHOLD_K = 6.0
RPCA_TOLERANCE = 1e-6
RPCA_MAX_ITERS = 500

# ============================================================================
# Paths and Environment
# ============================================================================
DATA_DIR_ENV = "VFDM_DATA_DIR"
THREADS_ENV = "VFDM_THREADS"
DEFAULT_DATA_DIR = "data/desk"
DEFAULT_RUNS_DIR = "runs"
RESOLVED_CONFIG_FILE = "resolved_config.json"


def get_worker_count():
    """Worker cap from VFDM_THREADS (defaults to the CPU count)"""
    raw = os.getenv(THREADS_ENV)
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")


def get_data_dir():
    """Default dataset directory, overridable from the environment"""
    return os.getenv(DATA_DIR_ENV, DEFAULT_DATA_DIR)


# ============================================================================
# Run Config Schema
# ============================================================================
@dataclass
class GridSection:
    n: int = GRID_N
    du: float = GRID_DU
    c0: float = RADIOMETRIC_C0
    support_radius: float = SUPPORT_RADIUS


@dataclass
class SimulateSection:
    pattern: str = ANTENNA_PATTERN
    pattern_sigma: float = ANTENNA_SIGMA
    regime_ranges: dict = field(default_factory=lambda: {k: tuple(v) for k, v in REGIME_RANGES.items()})
    min_sources: int = MIN_SOURCES
    max_sources: int = MAX_SOURCES
    noise_std: float = NOISE_STD
    mask_radius_px: int = MASK_RADIUS_PX


@dataclass
class DatasetSection:
    pairs: int = DATASET_PAIRS
    mode_mixture: dict = field(default_factory=lambda: {mode: 1.0 for mode in RFI_MODES})
    scene_kinds: tuple = SCENE_KINDS
    seed: int = MASTER_SEED
    test_frac: float = TEST_FRAC
    split_convention: str = SPLIT_CONVENTION
    shard_size: int = SHARD_SIZE
    output_dir: str = field(default_factory=get_data_dir)


@dataclass
class ModelSection:
    in_channels: int = UNET_IN_CHANNELS
    out_channels: int = UNET_OUT_CHANNELS
    base_width: int = UNET_BASE_WIDTH
    channel_mult: tuple = UNET_CHANNEL_MULT
    levels: int = len(UNET_CHANNEL_MULT)
    blocks_per_level: int = UNET_BLOCKS_PER_LEVEL
    norm_groups: int = UNET_NORM_GROUPS
    time_embed_dim: int = UNET_TIME_EMBED_DIM
    use_attention: bool = False
    precision: str = UNET_PRECISION


@dataclass
class DiffusionSection:
    steps: int = DIFFUSION_STEPS
    bsq_min: float = None       # None -> 1e-4 * 1000 / steps
    bsq_max: float = None       # None -> 0.02 * 1000 / steps
    eta: float = SAMPLER_ETA
    sampler: str = "generalized"
    sample_steps: int = None    # None -> every step


@dataclass
class TrainSection:
    steps: int = TRAIN_STEPS
    batch_size: int = BATCH_SIZE
    lr0: float = LEARNING_RATE
    checkpoint_every: int = CHECKPOINT_EVERY
    seed: int = MASTER_SEED


@dataclass
class CleanSection:
    loop_gain: float = CLEAN_LOOP_GAIN
    max_iters: int = CLEAN_MAX_ITERS
    threshold_k: float = CLEAN_THRESHOLD_K
    refine: bool = True


@dataclass
class RpcaSection:
    lam: float = None           # None -> 1/sqrt(n)
    tolerance: float = RPCA_TOLERANCE
    max_iters: int = RPCA_MAX_ITERS


@dataclass
class EvalSection:
    radius: float = EVAL_RADIUS
    methods: tuple = EVAL_METHODS
    clean: CleanSection = field(default_factory=CleanSection)
    rpca: RpcaSection = field(default_factory=RpcaSection)


@dataclass
class PathsSection:
    data_dir: str = field(default_factory=get_data_dir)
    runs_dir: str = DEFAULT_RUNS_DIR
    checkpoint: str = None


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)


def _build_section(cls, data, prefix):
    """Build one dataclass section from a mapping, rejecting unknown keys"""
    if not isinstance(data, dict):
        raise ConfigError(f"Config section '{prefix.rstrip('.') or 'root'}' must be a mapping")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown config key: {prefix}{unknown[0]}")

    kwargs = {}
    for name in known:
        if name not in data:
            continue
        value = data[name]
        default = getattr(defaults, name)
        if is_dataclass(default):
            value = _build_section(type(default), value, f"{prefix}{name}.")
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Config key {prefix}{name} must be a mapping")
            value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
        kwargs[name] = value
    return cls(**kwargs)


def _apply_overrides(data, overrides):
    """Apply dotted-key overrides such as {'train.steps': 2000}"""
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Cannot override {dotted}: '{part}' is not a section")
        node[parts[-1]] = value
    return data


def read_config_document(path):
    """Read a JSON or YAML config document into a dict"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not parse config {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a mapping at the top level")
    return data


def load_run_config(path=None, overrides=None):
    """Load, validate and fully resolve a run config"""
    data = read_config_document(path) if path else {}
    data = _apply_overrides(data, overrides)
    cfg = _build_section(RunConfig, data, "")
    return validate_run_config(resolve_defaults(cfg))


def resolve_defaults(cfg):
    """Materialize the defaults that depend on other fields"""
    d = cfg.diffusion
    if d.bsq_min is None:
        d.bsq_min = BSQ_MIN_AT_1000 * 1000.0 / d.steps
    if d.bsq_max is None:
        d.bsq_max = BSQ_MAX_AT_1000 * 1000.0 / d.steps
    if d.sample_steps is None:
        d.sample_steps = d.steps
    if cfg.eval.rpca.lam is None:
        cfg.eval.rpca.lam = 1.0 / cfg.grid.n ** 0.5
    return cfg


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def validate_run_config(cfg):
    """Check every range constraint; raises ConfigError naming the failed field"""
    g = cfg.grid
    _require(isinstance(g.n, int) and g.n >= 8 and g.n % 2 == 0, f"grid.n must be an even integer >= 8, got {g.n}")
    _require(abs(g.du * (2.0 / g.n) * g.n - 1.0) < 1e-12, f"grid.du must satisfy du*dxi*n = 1 (du = 0.5), got {g.du}")
    _require(0.0 < g.support_radius < 1.0, f"grid.support_radius must be in (0, 1), got {g.support_radius}")
    _require(g.c0 > 0, "grid.c0 must be positive")

    s = cfg.simulate
    _require(s.pattern in ("uniform", "gaussian"), f"simulate.pattern must be uniform or gaussian, got {s.pattern}")
    _require(s.pattern_sigma > 0, "simulate.pattern_sigma must be positive")
    _require(set(s.regime_ranges) == set(RFI_REGIMES), f"simulate.regime_ranges must define {list(RFI_REGIMES)}")
    previous_hi = None
    for regime in RFI_REGIMES:
        lo, hi = s.regime_ranges[regime]
        _require(0 < lo < hi, f"simulate.regime_ranges.{regime} must satisfy 0 < lo < hi")
        if previous_hi is not None:
            _require(lo == previous_hi, f"simulate.regime_ranges.{regime} must start where the previous regime ends")
        previous_hi = hi
    _require(1 <= s.min_sources <= s.max_sources, "simulate source counts must satisfy 1 <= min <= max")
    _require(s.noise_std >= 0, "simulate.noise_std must be >= 0")
    _require(s.mask_radius_px >= 1, "simulate.mask_radius_px must be >= 1")

    ds = cfg.dataset
    _require(ds.pairs > 0, f"dataset.pairs must be positive, got {ds.pairs}")
    _require(set(ds.mode_mixture) <= set(RFI_MODES), f"dataset.mode_mixture keys must be among {list(RFI_MODES)}")
    _require(sum(ds.mode_mixture.values()) > 0 and min(ds.mode_mixture.values()) >= 0,
             "dataset.mode_mixture weights must be non-negative with a positive sum")
    _require(set(ds.scene_kinds) <= set(SCENE_KINDS) and len(ds.scene_kinds) > 0,
             f"dataset.scene_kinds must be a non-empty subset of {list(SCENE_KINDS)}")
    _require(0.0 < ds.test_frac < 1.0, "dataset.test_frac must be in (0, 1)")
    _require(ds.split_convention in ("fraction_of_total", "relative_to_train"),
             f"dataset.split_convention unknown: {ds.split_convention}")
    _require(ds.shard_size > 0, "dataset.shard_size must be positive")

    m = cfg.model
    _require(m.levels == len(m.channel_mult), "model.levels must equal len(model.channel_mult)")
    _require(g.n % (2 ** (m.levels - 1)) == 0, f"grid.n must be divisible by 2^(levels-1) = {2 ** (m.levels - 1)}")
    _require(m.in_channels == 4 and m.out_channels == 2, "model channels are fixed at 4 in / 2 out")
    _require(m.precision in ("f32", "f64"), f"model.precision must be f32 or f64, got {m.precision}")
    _require(not m.use_attention, "model.use_attention is reserved and not supported")
    _require(all(m.base_width * k % m.norm_groups == 0 for k in m.channel_mult),
             "model widths must be divisible by model.norm_groups")
    _require(m.time_embed_dim % 2 == 0, "model.time_embed_dim must be even")

    d = cfg.diffusion
    _require(d.steps >= 2, "diffusion.steps must be >= 2")
    _require(0.0 < d.bsq_min < d.bsq_max < 1.0, "diffusion bounds must satisfy 0 < bsq_min < bsq_max < 1")
    _require(0.0 <= d.eta <= 1.0, "diffusion.eta must be in [0, 1]")
    _require(d.sampler in SAMPLERS, f"diffusion.sampler must be one of {list(SAMPLERS)}")
    _require(1 <= d.sample_steps <= d.steps, "diffusion.sample_steps must be in [1, steps]")
    _require(d.sampler == "generalized" or d.sample_steps == d.steps,
             "diffusion.sample_steps < steps requires the generalized sampler")

    t = cfg.train
    _require(t.steps > 0 and t.batch_size > 0, "train.steps and train.batch_size must be positive")
    _require(t.lr0 > 0, "train.lr0 must be positive")
    _require(t.checkpoint_every > 0, "train.checkpoint_every must be positive")

    e = cfg.eval
    _require(0.0 < e.radius <= g.support_radius, "eval.radius must be in (0, grid.support_radius]")
    _require(set(e.methods) <= set(EVAL_METHODS), f"eval.methods must be among {list(EVAL_METHODS)}")
    _require(0.0 < e.clean.loop_gain <= 1.0, "eval.clean.loop_gain must be in (0, 1]")
    _require(e.clean.threshold_k > 0, "eval.clean.threshold_k must be positive")
    _require(e.rpca.lam > 0 and e.rpca.tolerance > 0, "eval.rpca lam and tolerance must be positive")
    return cfg


def resolved_config_dict(cfg):
    """Plain JSON-ready dict of a resolved config"""
    return json.loads(json.dumps(asdict(cfg)))


def config_hash(cfg):
    """SHA-256 of the canonical JSON of a resolved config"""
    canonical = json.dumps(resolved_config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def file_hash(path):
    """Content hash of one input file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def archive_resolved_config(cfg, out_dir, inputs=()):
    """Write resolved_config.json (config + hashes of its inputs) into out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "config": resolved_config_dict(cfg),
        "config_hash": config_hash(cfg),
        "inputs": {str(p): file_hash(p) for p in inputs if Path(p).is_file()},
    }
    path = out_dir / RESOLVED_CONFIG_FILE
    path.write_text(json.dumps(record, indent=2, sort_keys=True))
    return path


def run_config_from_dict(data):
    """Resolved RunConfig from a (possibly partial) plain dict, e.g. one archived in a manifest"""
    cfg = _build_section(RunConfig, json.loads(json.dumps(data)), "")
    return validate_run_config(resolve_defaults(cfg))
