"""Central finite-difference check of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import ChunkLayout, one_hot_smooth
from .denoiser import (
    DenoiserParams,
    backward,
    batch_cache,
    ce_loss,
    forward_logits,
    init_denoiser,
    init_mse_baseline,
    mse_backward,
    mse_forward,
    mse_loss,
)
from .diffusion import forward_noise


@dataclass
class GradcheckResult:
    max_rel_error: float
    coords_checked: int
    per_tensor: list  # max rel error per tensor

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_problem(rng: np.random.Generator, kind: str = "discrete", horizon: int = 2, action_dim: int = 2,
                   bins: int = 5, state_dim: int = 3, n_tasks: int = 2, hidden=(16, 16), batch: int = 4,
                   alpha: float = 0.1):
    """A small random model plus one batch whose cache carries camera offsets.

    The relative embedding is randomized too, so its gradient is non-trivial.
    """
    layout = ChunkLayout(horizon, action_dim)
    if kind == "discrete":
        params = init_denoiser(layout, bins, state_dim, rng, n_tasks, hidden)
    else:
        params = init_mse_baseline(layout, state_dim, rng, n_tasks, hidden)
    for b in params.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    params.rel.W[:] = rng.normal(0, 0.3, size=params.rel.W.shape)
    params.rel.b[:] = rng.normal(0, 0.1, size=params.rel.b.shape)
    feats = np.concatenate(
        [rng.normal(size=(batch, state_dim)), np.eye(n_tasks)[rng.integers(n_tasks, size=batch)]], axis=1
    )
    offsets = rng.normal(0, 0.5, size=(batch, 3))
    has = np.arange(batch) % 4 != 3  # one example in four without an offset
    taus = rng.uniform(0.05, 0.95, size=batch)
    tokens = rng.integers(bins, size=(batch, horizon, action_dim))
    if kind == "discrete":
        noisy = forward_noise(one_hot_smooth(tokens, bins, alpha), taus, rng)
        target = tokens
    else:
        target = rng.uniform(-1, 1, size=(batch, horizon, action_dim))
        noisy = forward_noise(target, taus, rng)
    return params, dict(feats=feats, offsets=offsets, has=has, noisy=noisy, target=target)


def _loss(params, problem) -> float:
    cache = batch_cache(params, problem["feats"], problem["offsets"], problem["has"])
    if isinstance(params, DenoiserParams):
        return ce_loss(forward_logits(params, problem["noisy"], cache), problem["target"])
    pred = mse_forward(params, problem["noisy"].data, cache, problem["noisy"].tau)
    return mse_loss(pred, problem["target"])


def analytic_grads(params, problem):
    cache = batch_cache(params, problem["feats"], problem["offsets"], problem["has"])
    if isinstance(params, DenoiserParams):
        return backward(params, problem["noisy"], cache, problem["target"])
    return mse_backward(params, problem["noisy"].data, cache, problem["noisy"].tau, problem["target"])


def _allocate(total: int, sizes) -> list[int]:
    alloc = [0] * len(sizes)
    left = min(total, sum(sizes))
    while left > 0:
        open_ = [i for i, s in enumerate(sizes) if alloc[i] < s]
        share = max(1, left // len(open_))
        for i in open_:
            take = min(share, sizes[i] - alloc[i], left)
            alloc[i] += take
            left -= take
            if left == 0:
                break
    return alloc


def check_gradients(params, problem, rng: np.random.Generator, n_coords: int = 120, h: float = 1e-6,
                    floor: float = 1e-8) -> GradcheckResult:
    """Compare analytic gradients with central differences on random coordinates.

    Every parameter tensor gets an equal share of the ``n_coords`` probes
    (all entries if it is smaller); the shares small tensors cannot use are
    handed to the larger ones.
    """
    _, grads = analytic_grads(params, problem)
    tensors = params.tensors()
    budget = _allocate(n_coords, [t.size for t in tensors])
    worst, count, per_tensor = 0.0, 0, []
    for t, g, n in zip(tensors, grads, budget):
        flat_t = t.reshape(-1)
        flat_g = g.reshape(-1)
        picks = rng.choice(flat_t.size, size=n, replace=False)
        tensor_worst = 0.0
        for i in picks:
            orig = flat_t[i]
            flat_t[i] = orig + h
            up = _loss(params, problem)
            flat_t[i] = orig - h
            down = _loss(params, problem)
            flat_t[i] = orig
            err = rel_error(flat_g[i], (up - down) / (2 * h), floor)
            tensor_worst = max(tensor_worst, err)
            count += 1
        per_tensor.append(tensor_worst)
        worst = max(worst, tensor_worst)
    return GradcheckResult(worst, count, per_tensor)
