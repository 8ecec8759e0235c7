"""Continuized discrete diffusion over scaled one-hot action tokens.

Training corrupts a clean target ``x`` (scaled one-hot, ``alpha`` at the
token) by linear interpolation with Gaussian noise::

    x_tau = tau * x + (1 - tau) * eps,    eps ~ N(0, I)

Low ``tau`` means heavy noise. Inference starts from pure noise and repeats
*predict logits -> argmax -> re-encode one-hot -> renoise at the next tau*,
so every intermediate and final state is a valid token grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .codec import ChunkLayout, one_hot_smooth
from .denoiser import (
    ConditioningCache,
    DenoiserParams,
    MSEBaselineParams,
    add_embed,
    base_features,
    forward_logits,
    mse_forward,
    rel_embed,
)
from .errors import ConfigError, ShapeMismatchError

DEFAULT_BETA = (1.0, 1.5)
DEFAULT_STEPS = 10


@dataclass(frozen=True)
class TauSchedule:
    """Either a Beta(a, b) training law or an ascending inference grid ending at 1."""

    kind: str
    a: float = DEFAULT_BETA[0]
    b: float = DEFAULT_BETA[1]
    taus: tuple = ()

    def __post_init__(self):
        if self.kind == "beta":
            if not (self.a > 0 and self.b > 0):
                raise ConfigError(f"beta parameters must be positive, got ({self.a}, {self.b})")
        elif self.kind == "uniform":
            pass
        elif self.kind == "grid":
            t = np.asarray(self.taus, dtype=np.float64)
            if t.size == 0 or np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] != 1.0:
                raise ConfigError(f"grid must be strictly ascending in [0, 1] and end at 1, got {self.taus}")
        else:
            raise ConfigError(f"unknown tau schedule kind {self.kind!r}")

    @classmethod
    def beta(cls, a: float = DEFAULT_BETA[0], b: float = DEFAULT_BETA[1]) -> "TauSchedule":
        return cls("beta", a=a, b=b)

    @classmethod
    def uniform(cls) -> "TauSchedule":
        return cls("uniform")

    @classmethod
    def grid(cls, taus) -> "TauSchedule":
        return cls("grid", taus=tuple(float(t) for t in taus))

    @classmethod
    def uniform_grid(cls, steps: int = DEFAULT_STEPS) -> "TauSchedule":
        """``tau_i = i / N`` for ``i = 1..N``."""
        if steps < 1:
            raise ConfigError(f"need at least one inference step, got {steps}")
        return cls.grid([i / steps for i in range(1, steps + 1)])

    def __len__(self) -> int:
        return len(self.taus)


def sample_tau(rng: np.random.Generator, sched: TauSchedule, size=None):
    """Training noise levels. The Beta law with ``a < b`` favours small tau (heavy noise)."""
    if sched.kind == "beta":
        return rng.beta(sched.a, sched.b, size=size)
    if sched.kind == "uniform":
        return rng.uniform(0.0, 1.0, size=size)
    raise ConfigError("sample_tau needs a beta or uniform schedule")


@dataclass
class NoisyActionTensor:
    data: np.ndarray  # (H, D, K) or batched (B, H, D, K)
    tau: np.ndarray | float


def forward_noise(target: np.ndarray, tau, rng: Optional[np.random.Generator] = None, eps=None):
    """Interpolate ``target`` toward Gaussian noise; ``eps`` may be injected for tests.

    ``tau`` may be a scalar or, for batched targets, one value per leading row.
    """
    target = np.asarray(target, dtype=np.float64)
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0) or np.any(tau_arr > 1):
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    if eps is None:
        eps = rng.standard_normal(target.shape)
    t = tau_arr.reshape(tau_arr.shape + (1,) * (target.ndim - tau_arr.ndim))
    return NoisyActionTensor(t * target + (1.0 - t) * eps, tau)


@dataclass
class Observation:
    """Toy observation: proprioceptive state, task id, optional image and view offset."""

    state: np.ndarray
    task_id: int = 0
    image: Optional[np.ndarray] = None
    view_offset: Optional[tuple] = None

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.state)):
            raise ShapeMismatchError("observation state must be finite")
        if self.task_id < 0:
            raise ShapeMismatchError(f"task_id must be non-negative, got {self.task_id}")


def condition_encode(obs: Observation, params) -> ConditioningCache:
    feats = base_features(params, obs.state, obs.task_id, obs.image)
    if obs.view_offset is None:
        return ConditioningCache(feats, np.zeros(3), np.asarray(False))
    offset = np.asarray(obs.view_offset, dtype=np.float64)
    return ConditioningCache(add_embed(feats, rel_embed(offset, params.rel)), offset, np.asarray(True))


@dataclass
class InferenceTrace:
    """Per-iteration record of the input noise level and decoded tokens."""

    input_taus: list = field(default_factory=list)
    tokens: list = field(default_factory=list)


def inference_loop(
    params: DenoiserParams,
    cache: ConditioningCache,
    layout: ChunkLayout,
    K: int,
    alpha: float,
    grid: TauSchedule,
    rng: np.random.Generator,
    trace: Optional[InferenceTrace] = None,
    denoise=None,
) -> np.ndarray:
    """Iterative argmax denoising; returns an ``(H, D)`` token grid.

    The first iteration sees pure noise (``tau = 0``). Iteration ``i``
    (counting from 0) sees the previous argmax re-encoded and renoised at
    ``grid[i]``; since the grid ends at 1, the final iteration sees the
    clean one-hot of the previous estimate and ``grid[0]`` only labels the
    pure-noise start. ``denoise`` overrides the
    network for testing: ``denoise(noisy, cache) -> logits``.
    """
    if grid.kind != "grid":
        raise ConfigError("inference needs a grid schedule")
    if denoise is None:
        if params.bins != K or params.layout != layout:
            raise ShapeMismatchError(
                f"model has layout {params.layout.shape} and K={params.bins}, asked for {layout.shape} and K={K}"
            )
        denoise = lambda noisy, c: forward_logits(params, noisy, c)  # noqa: E731
    taus = grid.taus
    shape = (*layout.shape, K)
    noisy = NoisyActionTensor(rng.standard_normal(shape), 0.0)
    tokens = None
    for i in range(len(taus)):
        if trace is not None:
            trace.input_taus.append(float(noisy.tau))
        logits = np.asarray(denoise(noisy, cache))
        if logits.shape != shape:
            raise ShapeMismatchError(f"denoiser returned {logits.shape}, expected {shape}")
        tokens = np.argmax(logits, axis=-1)
        if trace is not None:
            trace.tokens.append(tokens.copy())
        if i + 1 < len(taus):
            noisy = forward_noise(one_hot_smooth(tokens, K, alpha), taus[i + 1], rng)
    return tokens


def mse_inference_loop(
    params: MSEBaselineParams,
    cache: ConditioningCache,
    grid: TauSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Same schedule as :func:`inference_loop` for the regression baseline.

    Each iteration predicts clean normalized actions and renoises the
    prediction; the last prediction is returned unrounded.
    """
    taus = grid.taus
    x = rng.standard_normal(params.layout.shape)
    tau = 0.0
    pred = None
    for i in range(len(taus)):
        pred = mse_forward(params, x, cache, tau)
        if i + 1 < len(taus):
            tau = taus[i + 1]
            x = tau * pred + (1.0 - tau) * rng.standard_normal(pred.shape)
    return pred
