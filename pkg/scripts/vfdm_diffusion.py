"""
Conditional diffusion for RFI mitigation.
Noise schedule, forward process, posterior, the simplified training loss,
the eta-parameterized reverse sampler and the training loop.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from config.config import BSQ_MAX_AT_1000, BSQ_MIN_AT_1000, archive_resolved_config
from scripts.dataset_io import dataset_inputs, denormalize, normalize, train_test_arrays
from scripts.errors import ConfigError, InvariantViolation, NumericError
from scripts.rfi_simulator import derive_seed
from scripts.signal_model import VisibilityGrid, hermitian_symmetrize
from scripts.unet_backbone import (
    adam_step, eps_theta, grad, init, load_checkpoint, lr_at,
    new_adam_state, save_checkpoint, unet_config_from,
)

logger = logging.getLogger(__name__)

ABAR_T_LIMIT = 1e-2
LOSS_LOG = "loss_log.csv"
CHECKPOINT_DIR = "checkpoints"


@dataclass(frozen=True)
class NoiseSchedule:
    """Index 0 holds the t = 0 boundary: abar = 1, bbar = 0, beta = btilde = 0"""
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    abar: np.ndarray
    bbar: np.ndarray
    btilde: np.ndarray

    @property
    def beta_sq(self):
        return self.beta ** 2

    @property
    def bbar_sq(self):
        return self.bbar ** 2

    @property
    def btilde_sq(self):
        return self.btilde ** 2

    def as_dict(self):
        return {"steps": self.T, "bsq_min": float(self.beta_sq[1]), "bsq_max": float(self.beta_sq[-1])}

    def table(self):
        """Per-step coefficients as a DataFrame"""
        return pd.DataFrame({
            "t": np.arange(self.T + 1),
            "beta": self.beta,
            "alpha": self.alpha,
            "abar": self.abar,
            "bbar": self.bbar,
            "btilde": self.btilde,
        })


def build_schedule(T, bsq_min=None, bsq_max=None):
    """Linear beta_t^2 ramp from bsq_min to bsq_max with alpha_t = sqrt(1 - beta_t^2)"""
    if T < 2:
        raise ConfigError(f"Diffusion needs T >= 2 steps, got {T}")
    bsq_min = BSQ_MIN_AT_1000 * 1000.0 / T if bsq_min is None else bsq_min
    bsq_max = BSQ_MAX_AT_1000 * 1000.0 / T if bsq_max is None else bsq_max
    if not 0.0 < bsq_min < bsq_max < 1.0:
        raise ConfigError(f"Schedule bounds must satisfy 0 < bsq_min < bsq_max < 1, got ({bsq_min}, {bsq_max})")

    beta_sq = np.concatenate([[0.0], np.linspace(bsq_min, bsq_max, T)])
    alpha = np.sqrt(1.0 - beta_sq)
    abar = np.cumprod(alpha)
    bbar_sq = np.zeros(T + 1)
    for t in range(1, T + 1):
        bbar_sq[t] = alpha[t] ** 2 * bbar_sq[t - 1] + beta_sq[t]
    btilde_sq = np.zeros(T + 1)
    btilde_sq[1:] = beta_sq[1:] * bbar_sq[:-1] / bbar_sq[1:]

    if abar[T] >= ABAR_T_LIMIT:
        raise ConfigError(f"Schedule leaves abar_T = {abar[T]:.3e} >= {ABAR_T_LIMIT}; raise bsq_max or T")
    return NoiseSchedule(T, np.sqrt(beta_sq), alpha, abar, np.sqrt(bbar_sq), np.sqrt(btilde_sq))


def schedule_from_config(cfg):
    d = cfg.diffusion
    return build_schedule(d.steps, d.bsq_min, d.bsq_max)


def _coef(values, t, like):
    """Schedule entries at step(s) t, broadcastable against a batch like `like`"""
    coef = torch.as_tensor(values, dtype=like.dtype)[torch.as_tensor(t)]
    if coef.dim() > 0:
        coef = coef.reshape(-1, *([1] * (like.dim() - 1)))
    return coef


# ============================================================================
# Forward Process and Posterior
# ============================================================================
def q_sample(x0, t, eps, sched):
    """x_t = abar_t * x0 + bbar_t * eps"""
    return _coef(sched.abar, t, x0) * x0 + _coef(sched.bbar, t, x0) * eps


def posterior_mean_var(x_t, x0, t, sched):
    """(mu_tilde, btilde_t^2) of q(x_{t-1} | x_t, x0)"""
    c_t = _coef(sched.alpha[1:] * sched.bbar_sq[:-1] / sched.bbar_sq[1:], np.asarray(t) - 1, x_t)
    c_0 = _coef(sched.abar[:-1] * sched.beta_sq[1:] / sched.bbar_sq[1:], np.asarray(t) - 1, x_t)
    return c_t * x_t + c_0 * x0, _coef(sched.btilde_sq, t, x_t)


def training_loss(predictor, clean, dirty, sched, generator):
    """Mean squared error between drawn noise and predictor(x_t, t, dirty)"""
    if clean.shape[0] == 0:
        raise ConfigError("training_loss needs a non-empty batch")
    t = torch.randint(1, sched.T + 1, (clean.shape[0],), generator=generator)
    eps = torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
    x_t = q_sample(clean, t, eps, sched)
    loss = torch.mean((eps - predictor(x_t, t, dirty)) ** 2)
    if not torch.isfinite(loss):
        raise NumericError(f"Non-finite training loss: {loss.item()}")
    return loss


# ============================================================================
# Reverse Process
# ============================================================================
def x0_from_eps(x_t, t, eps, sched):
    return (x_t - _coef(sched.bbar, t, x_t) * eps) / _coef(sched.abar, t, x_t)


def predict_x0(x_t, t, cond, predictor, sched):
    """x0_hat = (x_t - bbar_t * eps_theta) / abar_t"""
    return x0_from_eps(x_t, t, predictor(x_t, t, cond), sched)


def strided_sigma(sched, t, t_prev, eta):
    """Noise std of a generalized step t -> t_prev; equals eta * btilde_t when t_prev = t - 1"""
    ratio = (sched.abar[t] / sched.abar[t_prev]) ** 2
    return eta * np.sqrt(sched.bbar_sq[t_prev] / sched.bbar_sq[t] * (1.0 - ratio))


def step_mean(x_t, t, cond, predictor, sched, eta=0.0, t_prev=None, sampler="generalized"):
    """(noise-free part of x_{t_prev}, sigma, x0_hat) for one reverse step"""
    t_prev = t - 1 if t_prev is None else t_prev
    eps = predictor(x_t, t, cond)
    x0 = x0_from_eps(x_t, t, eps, sched)
    if t_prev == 0:
        return x0, 0.0, x0

    if sampler == "ancestral":
        if t_prev != t - 1:
            raise ConfigError("The ancestral sampler cannot skip steps")
        mean = (x_t - (sched.beta_sq[t] / sched.bbar[t]) * eps) / sched.alpha[t]
        return mean, float(sched.btilde[t]), x0
    if sampler != "generalized":
        raise ConfigError(f"Unknown sampler: {sampler}")

    sigma = float(strided_sigma(sched, t, t_prev, eta))
    room = sched.bbar_sq[t_prev] - sigma ** 2
    if room < -1e-12 * max(sched.bbar_sq[t_prev], 1e-300):
        raise InvariantViolation(f"sigma_t^2 = {sigma ** 2:.6e} exceeds bbar_(t-1)^2 = {sched.bbar_sq[t_prev]:.6e}")
    mean = sched.abar[t_prev] * x0 + np.sqrt(max(room, 0.0)) * eps
    return mean, sigma, x0


def sample_step(x_t, t, cond, predictor, sched, eta=0.0, generator=None, t_prev=None, sampler="generalized"):
    """x_{t-1} = abar_{t-1} x0_hat + sqrt(bbar_{t-1}^2 - sigma_t^2) eps_theta + sigma_t z"""
    mean, sigma, _ = step_mean(x_t, t, cond, predictor, sched, eta, t_prev, sampler)
    if sigma > 0:
        z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
        return mean + sigma * z
    return mean


def timestep_sequence(T, sample_steps=None):
    """Descending visited steps ending at 0, evenly spaced when sample_steps < T"""
    sample_steps = T if sample_steps is None else sample_steps
    if not 1 <= sample_steps <= T:
        raise ConfigError(f"sample_steps must be in [1, {T}], got {sample_steps}")
    steps = np.unique(np.rint(np.linspace(0, T, sample_steps + 1)).astype(int))
    return [int(s) for s in steps[::-1]]


def initial_noise(shape, seed, dtype=torch.float32):
    """x_T ~ N(0, I) for a given seed"""
    generator = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=generator, dtype=dtype), generator


@torch.no_grad()
def sample_chain(cond, predictor, sched, eta=0.0, seed=0, sampler="generalized", sample_steps=None):
    """Run the reverse chain from x_T to x0_hat for a batch of conditions"""
    x, generator = initial_noise(cond.shape, seed, cond.dtype)
    visited = timestep_sequence(sched.T, sample_steps)
    for t, t_prev in zip(visited[:-1], visited[1:]):
        x = sample_step(x, t, cond, predictor, sched, eta, generator, t_prev, sampler)
    return x


def model_predictor(model):
    """eps_theta bound to a model, with finiteness checks"""
    def predictor(x_t, t, cond):
        return eps_theta(x_t, t, cond, model)
    return predictor


def mitigate(dirty, model, sched, scale, eta=0.0, seed=0, sampler="generalized",
             sample_steps=None, expected_scale=None):
    """Estimate the RFI-free visibility grid of one dirty grid"""
    return mitigate_batch([dirty], model, sched, scale, eta, [seed], sampler, sample_steps, expected_scale)[0]


def mitigate_batch(dirty_grids, model, sched, scale, eta=0.0, seeds=None, sampler="generalized",
                   sample_steps=None, expected_scale=None):
    """Mitigate several dirty grids; each one's x_T is drawn from its own seed"""
    if expected_scale is not None and not np.isclose(scale, expected_scale, rtol=1e-12, atol=0.0):
        raise ConfigError(f"Checkpoint scale {scale} does not match dataset scale {expected_scale}")
    seeds = seeds if seeds is not None else list(range(len(dirty_grids)))
    dtype = next(model.parameters()).dtype
    predictor = model_predictor(model)

    estimates = []
    for grid_vis, seed in zip(dirty_grids, seeds):
        channels, _ = normalize(grid_vis, scale)
        cond = torch.as_tensor(channels, dtype=dtype)[None]
        x0 = sample_chain(cond, predictor, sched, eta, seed, sampler, sample_steps)[0]
        estimate = denormalize(x0.detach().cpu().numpy(), scale, grid_vis.grid)
        estimates.append(VisibilityGrid(grid_vis.grid, hermitian_symmetrize(estimate.values), "estimate"))
    return estimates


# ============================================================================
# Training
# ============================================================================
def latest_checkpoint(run_dir):
    found = sorted(Path(run_dir, CHECKPOINT_DIR).glob("step_*.ckpt"))
    return found[-1] if found else None


def _checkpoint_meta(cfg, manifest, sched, step):
    return {
        "step": int(step),
        "scale": float(manifest.scale),
        "grid": dict(manifest.grid),
        "schedule": sched.as_dict(),
        "train": {"steps": cfg.train.steps, "batch_size": cfg.train.batch_size,
                  "lr0": cfg.train.lr0, "seed": cfg.train.seed},
    }


def _flush_losses(path, rows):
    if rows:
        pd.DataFrame(rows, columns=["step", "loss", "lr"]).to_csv(
            path, mode="a", header=not path.exists(), index=False)
        rows.clear()


def _truncate_losses(path, start_step):
    if path.exists():
        log = pd.read_csv(path, float_precision="round_trip")
        log[log["step"] < start_step].to_csv(path, index=False)


def train(cfg, manifest, run_dir, steps=None, resume=True, progress=True, until=None, inputs=()):
    """Minimize the noise-prediction loss; resumes bit-exactly from the latest checkpoint.

    `steps` is the schedule length (learning-rate horizon); `until` stops early at that step.
    The dataset files and `inputs` are hashed into the archived run config.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    total = steps or cfg.train.steps
    sched = schedule_from_config(cfg)
    unet = unet_config_from(cfg)
    unet.check_grid(manifest.grid["n"])

    ckpt = latest_checkpoint(run_dir) if resume else None
    if ckpt is not None:
        model, optimizer, meta = load_checkpoint(ckpt, expect_grid=dict(manifest.grid))
        if not np.isclose(meta["scale"], manifest.scale, rtol=1e-12, atol=0.0):
            raise ConfigError(f"Checkpoint scale {meta['scale']} does not match dataset scale {manifest.scale}")
        start = meta["step"]
        logger.info("resuming from %s at step %d", ckpt, start)
    else:
        model = init(unet, cfg.train.seed)
        optimizer = new_adam_state(model, cfg.train.lr0)
        start = 0

    clean, dirty = train_test_arrays(manifest, "train")
    clean = torch.as_tensor(clean, dtype=unet.dtype)
    dirty = torch.as_tensor(dirty, dtype=unet.dtype)
    predictor = model_predictor(model)

    log_path = run_dir / LOSS_LOG
    _truncate_losses(log_path, start)
    archive_resolved_config(cfg, run_dir, inputs=list(inputs) + dataset_inputs(manifest))
    rows = []
    loss_value = None

    stop = total if until is None else min(until, total)
    for step in tqdm(range(start, stop), initial=start, total=total, desc="Training", disable=not progress):
        step_seed = derive_seed(cfg.train.seed, step)
        batch = np.random.default_rng(step_seed).choice(clean.shape[0], size=cfg.train.batch_size,
                                                        replace=clean.shape[0] < cfg.train.batch_size)
        generator = torch.Generator().manual_seed(step_seed)
        index = torch.as_tensor(batch)
        lr = lr_at(step, total, cfg.train.lr0)
        try:
            loss, grads = grad(
                lambda m: training_loss(predictor, clean[index], dirty[index], sched, generator), model)
        except NumericError:
            _flush_losses(log_path, rows)
            logger.error("non-finite loss at step %d; last good checkpoint kept", step)
            raise
        adam_step(model, grads, optimizer, lr)
        loss_value = loss.item()
        rows.append({"step": step, "loss": loss_value, "lr": lr})

        done = step + 1
        if done % cfg.train.checkpoint_every == 0 or done == stop:
            _flush_losses(log_path, rows)
            save_checkpoint(model, optimizer, _checkpoint_meta(cfg, manifest, sched, done),
                            run_dir / CHECKPOINT_DIR / f"step_{done:07d}.ckpt")

    _flush_losses(log_path, rows)
    return model, optimizer, loss_value
