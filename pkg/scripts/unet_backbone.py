"""
Conditional noise-prediction network.
Small circular-padded U-Net eps_theta(x_t, t, cond), its gradients, the Adam
optimizer, the cosine learning-rate schedule and the checkpoint file format.
"""
import os
import json
import math
import struct
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from config.config import ADAM_BETAS, ADAM_EPS, LEARNING_RATE, LR_DECAY_FACTOR
from scripts.errors import ConfigError, IntegrityError, NumericError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"VFDMCKPT"
CHECKPOINT_VERSION = 1
CHECKPOINT_PREAMBLE = struct.Struct("<8sII")
DTYPES = {"f32": torch.float32, "f64": torch.float64}


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 4
    out_channels: int = 2
    base_width: int = 16
    channel_mult: tuple = (1, 2, 4)
    levels: int = 3
    blocks_per_level: int = 2
    norm_groups: int = 4
    time_embed_dim: int = 64
    use_attention: bool = False
    precision: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "channel_mult", tuple(self.channel_mult))
        if self.levels != len(self.channel_mult):
            raise ConfigError("levels must equal len(channel_mult)")
        if self.in_channels != 4 or self.out_channels != 2:
            raise ConfigError("The network maps 4 input channels to 2 output channels")
        if self.precision not in DTYPES:
            raise ConfigError(f"Unknown precision: {self.precision}")
        if self.use_attention:
            raise ConfigError("Attention blocks are not supported")
        for width in self.widths:
            if width % self.norm_groups:
                raise ConfigError(f"Width {width} is not divisible by {self.norm_groups} norm groups")

    @property
    def widths(self):
        return [self.base_width * m for m in self.channel_mult]

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def check_grid(self, n):
        factor = 2 ** (self.levels - 1)
        if n % factor:
            raise ConfigError(f"Grid size {n} is not divisible by 2^(levels-1) = {factor}")

    def as_dict(self):
        record = asdict(self)
        record["channel_mult"] = list(self.channel_mult)
        return record


def unet_config_from(cfg):
    """UNetConfig from the model section of a RunConfig"""
    m = cfg.model
    return UNetConfig(
        in_channels=m.in_channels, out_channels=m.out_channels, base_width=m.base_width,
        channel_mult=tuple(m.channel_mult), levels=m.levels, blocks_per_level=m.blocks_per_level,
        norm_groups=m.norm_groups, time_embed_dim=m.time_embed_dim,
        use_attention=m.use_attention, precision=m.precision,
    )


# ============================================================================
# Network
# ============================================================================
def timestep_embedding(t, dim):
    """Sinusoidal embedding of (possibly batched) step indices"""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _conv(c_in, c_out, stride=1):
    return nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, padding_mode="circular")


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out, embed_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = _conv(c_in, c_out)
        self.time_proj = nn.Linear(embed_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = _conv(c_out, c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Upsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = _conv(channels, channels)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class VfdmUNet(nn.Module):
    """eps_theta: noisy clean field (2 ch) + dirty condition (2 ch) + step -> noise estimate (2 ch)"""

    def __init__(self, config):
        super().__init__()
        self.config = config
        d = config.time_embed_dim
        widths = config.widths
        groups = config.norm_groups

        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.in_conv = _conv(config.in_channels, widths[0])

        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        ch = widths[0]
        for level, width in enumerate(widths):
            blocks = nn.ModuleList()
            for _ in range(config.blocks_per_level):
                blocks.append(ResBlock(ch, width, d, groups))
                ch = width
            self.down.append(blocks)
            if level < config.levels - 1:
                self.downsample.append(_conv(ch, ch, stride=2))

        self.mid = ResBlock(ch, ch, d, groups)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for level in reversed(range(config.levels)):
            width = widths[level]
            blocks = nn.ModuleList([ResBlock(ch + width, width, d, groups)])
            for _ in range(config.blocks_per_level - 1):
                blocks.append(ResBlock(width, width, d, groups))
            ch = width
            self.up.append(blocks)
            if level > 0:
                self.upsample.append(Upsample(ch))

        self.out_norm = nn.GroupNorm(groups, ch)
        self.out_conv = _conv(ch, config.out_channels)

    def forward(self, x_t, t, cond):
        if not torch.is_tensor(t):
            t = torch.tensor(t)
        t = t.reshape(-1).expand(x_t.shape[0]) if t.numel() == 1 else t
        temb = self.time_mlp(timestep_embedding(t, self.config.time_embed_dim).to(x_t.dtype))

        h = self.in_conv(torch.cat([x_t, cond], dim=1))
        skips = []
        for level, blocks in enumerate(self.down):
            for block in blocks:
                h = block(h, temb)
            skips.append(h)
            if level < len(self.downsample):
                h = self.downsample[level](h)

        h = self.mid(h, temb)

        for i, blocks in enumerate(self.up):
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, temb)
            if i < len(self.upsample):
                h = self.upsample[i](h)

        return self.out_conv(F.silu(self.out_norm(h)))


def init(config, seed):
    """Deterministic weights per seed: fan-in-scaled uniform, zero biases, zero output conv"""
    generator = torch.Generator().manual_seed(int(seed))
    model = VfdmUNet(config).to(config.dtype)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.startswith("out_conv."):
                param.zero_()
            elif name.endswith(".bias"):
                param.zero_()
            elif param.dim() > 1:
                bound = 1.0 / math.sqrt(param[0].numel())
                param.uniform_(-bound, bound, generator=generator)
            # GroupNorm weights stay at 1
    return model


def param_count(model):
    return sum(p.numel() for p in model.parameters())


def param_count_formula(config):
    """Closed-form parameter count of VfdmUNet(config)"""
    d = config.time_embed_dim
    widths = config.widths

    def conv3(a, b):
        return 9 * a * b + b

    def linear(a, b):
        return a * b + b

    def res(a, b):
        skip = a * b + b if a != b else 0
        return 2 * a + conv3(a, b) + linear(d, b) + 2 * b + conv3(b, b) + skip

    total = 2 * linear(d, d) + conv3(config.in_channels, widths[0])
    ch = widths[0]
    for level, width in enumerate(widths):
        for _ in range(config.blocks_per_level):
            total += res(ch, width)
            ch = width
        if level < config.levels - 1:
            total += conv3(ch, ch)
    total += res(ch, ch)
    for level in reversed(range(config.levels)):
        width = widths[level]
        total += res(ch + width, width) + (config.blocks_per_level - 1) * res(width, width)
        ch = width
        if level > 0:
            total += conv3(ch, ch)
    return total + 2 * ch + conv3(ch, config.out_channels)


def _check_finite(name, tensor):
    if not torch.isfinite(tensor).all():
        raise NumericError(f"Non-finite values in {name}")


def eps_theta(x_t, t, cond, model):
    """Noise estimate for a batch of (x_t, cond) fields at step t"""
    _check_finite("x_t", x_t)
    _check_finite("cond", cond)
    return model(x_t, t, cond)


# ============================================================================
# Gradients and Optimizer
# ============================================================================
def grad(loss_fn, model):
    """Reverse-mode gradients of loss_fn(model) as {name: tensor}"""
    names, params = zip(*model.named_parameters())
    loss = loss_fn(model)
    if not torch.isfinite(loss):
        raise NumericError(f"Non-finite loss: {loss.item()}")
    if not loss.requires_grad:
        return loss, {name: torch.zeros_like(p) for name, p in zip(names, params)}
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return loss, {
        name: torch.zeros_like(p) if g is None else g
        for name, p, g in zip(names, params, grads)
    }


def new_adam_state(model, lr0=LEARNING_RATE):
    return torch.optim.Adam(model.parameters(), lr=lr0, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(model, grads, optimizer, lr):
    """One bias-corrected Adam update with learning rate lr"""
    for group in optimizer.param_groups:
        group["lr"] = lr
    for name, param in model.named_parameters():
        param.grad = grads[name].detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def adam_step_count(optimizer):
    counts = [int(s["step"]) for s in optimizer.state.values() if "step" in s]
    return max(counts) if counts else 0


def lr_at(step, total_steps, lr0=LEARNING_RATE, decay=LR_DECAY_FACTOR):
    """Cosine from lr0 at step 0 down to decay*lr0 at total_steps"""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    floor = decay * lr0
    return floor + (lr0 - floor) * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ============================================================================
# Checkpoints
# ============================================================================
NP_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


def _named_arrays(model, optimizer):
    arrays = {f"model/{k}": v for k, v in model.state_dict().items()}
    for index, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            arrays[f"adam/{index}/{key}"] = torch.as_tensor(value)
    return arrays


def save_checkpoint(model, optimizer, meta, path):
    """Write params + Adam state + meta to one file, committed atomically"""
    arrays = _named_arrays(model, optimizer)
    entries, blobs = [], []
    for name in arrays:
        tensor = arrays[name].detach().cpu()
        if tensor.dtype not in NP_DTYPES:
            raise ConfigError(f"Unsupported checkpoint dtype {tensor.dtype} for {name}")
        data = np.ascontiguousarray(tensor.numpy(), dtype=NP_DTYPES[tensor.dtype]).tobytes()
        entries.append({"name": name, "dtype": NP_DTYPES[tensor.dtype],
                        "shape": list(tensor.shape), "nbytes": len(data)})
        blobs.append(data)

    groups = []
    for group in optimizer.state_dict()["param_groups"]:
        groups.append({k: list(v) if isinstance(v, tuple) else v for k, v in group.items()})
    header = json.dumps({
        "unet": model.config.as_dict(),
        "meta": meta,
        "param_groups": groups,
        "arrays": entries,
    }, sort_keys=True).encode()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)
    logger.debug("checkpoint written to %s (%d arrays)", path, len(entries))
    return path


def read_checkpoint_header(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < CHECKPOINT_PREAMBLE.size:
        raise IntegrityError(f"Truncated checkpoint {path}")
    magic, version, header_len = CHECKPOINT_PREAMBLE.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path} is not a VFDM checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"Checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    start = CHECKPOINT_PREAMBLE.size
    header = json.loads(data[start:start + header_len])
    return header, data, start + header_len


def load_checkpoint(path, expect_grid=None):
    """(model, optimizer, meta) exactly as saved"""
    header, data, offset = read_checkpoint_header(path)
    meta = header["meta"]
    if expect_grid is not None and meta.get("grid") != expect_grid:
        raise ConfigError(f"Checkpoint grid {meta.get('grid')} does not match {expect_grid}")

    config = UNetConfig(**header["unet"])
    model = VfdmUNet(config).to(config.dtype)
    arrays = {}
    for entry in header["arrays"]:
        end = offset + entry["nbytes"]
        if end > len(data):
            raise IntegrityError(f"Truncated checkpoint {path} at array {entry['name']}")
        values = np.frombuffer(data, dtype=entry["dtype"], count=entry["nbytes"] // np.dtype(entry["dtype"]).itemsize,
                               offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = torch.from_numpy(values.copy())
        offset = end

    state = {k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")}
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise ConfigError(f"Checkpoint parameters do not match its network config: {e}")

    optimizer = new_adam_state(model)
    adam = {}
    for name, value in arrays.items():
        if name.startswith("adam/"):
            _, index, key = name.split("/")
            adam.setdefault(int(index), {})[key] = value
    groups = [dict(g, betas=tuple(g["betas"])) for g in header["param_groups"]]
    optimizer.load_state_dict({"state": adam, "param_groups": groups})
    return model, optimizer, meta
