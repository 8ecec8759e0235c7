"""Training loop: warmup + cosine schedule, AdamW, global-norm clipping, EMA."""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import rng as rngmod
from .codec import ChunkLayout, QuantileCodec, normalize, one_hot_smooth, tokenize
from .data import Episode, make_chunks
from .denoiser import (
    DEFAULT_HIDDEN,
    backward,
    batch_cache,
    init_denoiser,
    init_mse_baseline,
    load_params,
    mse_backward,
    save_params,
)
from .diffusion import NoisyActionTensor, TauSchedule, forward_noise, sample_tau
from .errors import ConfigError, DivergedError

ModelKind = Literal["discrete", "mse_baseline"]


@dataclass
class TrainConfig:
    """Optimization hyperparameters. Defaults are the desk-scale toy settings."""

    total_steps: int = 5000
    batch_size: int = 64
    peak_lr: float = 1e-3
    final_lr: float = 1e-4
    warmup_steps: int = 250
    clip_norm: float = 1.0
    ema_decay: float = 0.999
    seed: int = 0
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    alpha: float = 0.1
    tau_kind: str = "beta"
    tau_a: float = 1.0
    tau_b: float = 1.5
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"need 0 <= warmup_steps <= total_steps, got {self.warmup_steps}/{self.total_steps}")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")

    @classmethod
    def published(cls, **overrides) -> "TrainConfig":
        """The published optimization settings (30k steps, batch 32, lr 5e-5 flat cosine)."""
        base = dict(total_steps=30_000, batch_size=32, peak_lr=5e-5, final_lr=5e-5,
                    warmup_steps=10_000, clip_norm=1.0, ema_decay=0.999)
        return cls(**{**base, **overrides})

    @property
    def tau_schedule(self) -> TauSchedule:
        if self.tau_kind == "uniform":
            return TauSchedule.uniform()
        return TauSchedule.beta(self.tau_a, self.tau_b)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        d["hidden"] = list(self.hidden)
        return d


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine decay to ``final_lr``."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return cfg.peak_lr
    u = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * u)) / 2.0


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))


def clip_gradients(grads: Sequence[np.ndarray], clip_norm: float):
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return [g * scale for g in grads]
    return list(grads)


@dataclass
class TrainState:
    step: int
    params: object
    m: list
    v: list
    ema: object
    log: list = field(default_factory=list)
    scratch: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.scratch:
            self.scratch = [np.empty_like(t) for t in self.params.tensors()]

    @classmethod
    def fresh(cls, params) -> "TrainState":
        """Start from ``params`` (copied, so the caller's arrays stay untouched)."""
        params = params.copy()
        zeros = [np.zeros_like(t) for t in params.tensors()]
        return cls(0, params, zeros, [z.copy() for z in zeros], params.copy())


def optimizer_step(state: TrainState, grads: Sequence[np.ndarray], cfg: TrainConfig) -> TrainState:
    """One AdamW update with bias correction and decoupled weight decay.

    Parameters and moment buffers are updated in place; the same state
    object is returned with its step counter advanced.
    """
    if not math.isfinite(global_norm(grads)):
        raise DivergedError(state.step, f"non-finite gradient at step {state.step}")
    t = state.step + 1
    lr = lr_at(min(t, cfg.total_steps), cfg)
    b1, b2 = cfg.betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v, tmp in zip(state.params.tensors(), grads, state.m, state.v, state.scratch):
        np.multiply(g, 1.0 - b1, out=tmp)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += cfg.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        p *= 1.0 - lr * cfg.weight_decay
        p -= tmp
    state.step = t
    return state


def ema_update(ema, params, decay: float, scratch=None):
    """``ema <- decay * ema + (1 - decay) * params``, in place.

    Accepts tensor lists or parameter objects and returns ``ema``.
    """
    tensors = ema if isinstance(ema, (list, tuple)) else ema.tensors()
    sources = params if isinstance(params, (list, tuple)) else params.tensors()
    scratch = scratch or [None] * len(tensors)
    for e, p, tmp in zip(tensors, sources, scratch):
        e *= decay
        e += np.multiply(p, 1.0 - decay, out=tmp)
    return ema


# ---------------------------------------------------------------------------


@dataclass
class TrainingSet:
    """Episodes flattened into conditioning features and normalized targets."""

    features: np.ndarray  # (N, E) base features, embedding excluded
    tokens: np.ndarray  # (N, H, D)
    normalized: np.ndarray  # (N, H, D) clamped quantile-normalized actions
    state_dim: int
    n_tasks: int


def build_training_set(episodes: Sequence[Episode], codec: QuantileCodec, layout: ChunkLayout,
                       n_tasks: int | None = None) -> TrainingSet:
    if not episodes:
        raise ConfigError("cannot train on an empty dataset")
    states, tasks, chunks = make_chunks(episodes, layout.horizon)
    if chunks.shape[-1] != layout.action_dim:
        raise ConfigError(f"dataset action_dim {chunks.shape[-1]} != layout {layout.action_dim}")
    n_tasks = n_tasks or int(tasks.max()) + 1
    feats = np.concatenate([states, np.eye(n_tasks)[tasks]], axis=1)
    tokens = tokenize(chunks, codec)
    normed = np.clip(normalize(chunks, codec, "quantile"), -1.0, 1.0)
    return TrainingSet(feats, tokens, normed, states.shape[1], n_tasks)


def init_model(kind: ModelKind, layout: ChunkLayout, codec: QuantileCodec, state_dim: int,
               n_tasks: int, cfg: TrainConfig):
    init_rng = rngmod.derive(cfg.seed, "init")
    if kind == "discrete":
        return init_denoiser(layout, codec.bins, state_dim, init_rng, n_tasks, cfg.hidden)
    if kind == "mse_baseline":
        return init_mse_baseline(layout, state_dim, init_rng, n_tasks, cfg.hidden)
    raise ConfigError(f"unknown model kind {kind!r}")


def _step_loss_and_grads(kind, params, ts: TrainingSet, idx, cfg, rng):
    B = len(idx)
    taus = sample_tau(rng, cfg.tau_schedule, size=B)
    cache = batch_cache(params, ts.features[idx])
    if kind == "discrete":
        target = one_hot_smooth(ts.tokens[idx], params.bins, cfg.alpha)
        noisy = forward_noise(target, taus, rng)
        return backward(params, noisy, cache, ts.tokens[idx])
    clean = ts.normalized[idx]
    noisy = forward_noise(clean, taus, rng)
    return mse_backward(params, noisy.data, cache, taus, clean)


def train(episodes: Sequence[Episode], codec: QuantileCodec, layout: ChunkLayout, cfg: TrainConfig,
          model_kind: ModelKind = "discrete", progress=None):
    """Fit a denoiser (or the regression baseline) and return ``(state, metrics_csv)``.

    Each step draws its batch indices, noise levels and Gaussian noise from
    the stream ``derive(seed, "batch", step)``, so runs are bit-reproducible.
    ``state.ema`` holds the evaluation weights.
    """
    ts = build_training_set(episodes, codec, layout)
    params = init_model(model_kind, layout, codec, ts.state_dim, ts.n_tasks, cfg)
    state = TrainState.fresh(params)
    n = len(ts.tokens)
    for step in range(cfg.total_steps):
        rng = rngmod.derive(cfg.seed, "batch", step)
        idx = rng.integers(0, n, size=cfg.batch_size)
        loss, grads = _step_loss_and_grads(model_kind, state.params, ts, idx, cfg, rng)
        if not math.isfinite(loss):
            raise DivergedError(step, f"non-finite loss at step {step}")
        gnorm = global_norm(grads)
        if not math.isfinite(gnorm):
            raise DivergedError(step, f"non-finite gradient at step {step}")
        grads = clip_gradients(grads, cfg.clip_norm)
        state = optimizer_step(state, grads, cfg)
        ema_update(state.ema, state.params, cfg.ema_decay, state.scratch)
        state.log.append((state.step, loss, lr_at(min(state.step, cfg.total_steps), cfg), gnorm, 1))
        if progress is not None:
            progress(state)
    return state, metrics_csv(state.log)


def metrics_csv(log) -> str:
    buf = io.StringIO()
    buf.write("step,loss,lr,grad_norm,ema_applied\n")
    for step, loss, lr, gnorm, ema in log:
        buf.write(f"{step},{loss!r},{lr!r},{gnorm!r},{ema}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(out_dir: str | Path, state: TrainState, cfg: TrainConfig, codec: QuantileCodec,
                    metrics: str | None = None) -> Path:
    """Write ``params.bin`` (EMA weights), ``raw.bin`` and a ``checkpoint.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "params.bin", state.ema)
    save_params(out / "raw.bin", state.params)
    sidecar = {
        "step": state.step,
        "config": cfg.to_dict(),
        "model": state.ema.meta(),
        "codec": codec.to_dict(),
    }
    (out / "checkpoint.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    if metrics is not None:
        (out / "metrics.csv").write_text(metrics)
    return out


@dataclass
class Checkpoint:
    params: object
    config: TrainConfig
    codec: QuantileCodec
    step: int


def load_checkpoint(ckpt_dir: str | Path, which: str = "params.bin") -> Checkpoint:
    d = Path(ckpt_dir)
    try:
        side = json.loads((d / "checkpoint.json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"{d}: no checkpoint.json") from None
    cfg = TrainConfig(**side["config"])
    params = load_params(d / which, side["model"])
    return Checkpoint(params, cfg, QuantileCodec.from_dict(side["codec"]), int(side["step"]))
