"""Trained models wrapped as ``policy(observation, rng) -> action chunk``."""

from __future__ import annotations

import numpy as np

from .codec import QuantileCodec, denormalize, detokenize
from .diffusion import (
    DEFAULT_STEPS,
    Observation,
    TauSchedule,
    condition_encode,
    inference_loop,
    mse_inference_loop,
)


class DiscreteDiffusionPolicy:
    def __init__(self, params, codec: QuantileCodec, alpha: float = 0.1, steps: int = DEFAULT_STEPS):
        self.params = params
        self.codec = codec
        self.alpha = alpha
        self.grid = TauSchedule.uniform_grid(steps)

    def tokens(self, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        cache = condition_encode(obs, self.params)
        return inference_loop(self.params, cache, self.params.layout, self.codec.bins,
                              self.alpha, self.grid, rng)

    def __call__(self, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        return detokenize(self.tokens(obs, rng), self.codec)


class MSEBaselinePolicy:
    """Continuous regression baseline; its outputs are not snapped to bins."""

    def __init__(self, params, codec: QuantileCodec, steps: int = DEFAULT_STEPS):
        self.params = params
        self.codec = codec
        self.grid = TauSchedule.uniform_grid(steps)

    def __call__(self, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        cache = condition_encode(obs, self.params)
        return denormalize(mse_inference_loop(self.params, cache, self.grid, rng), self.codec)


def policy_from_checkpoint(ckpt, steps: int = DEFAULT_STEPS):
    if ckpt.params.kind == "discrete":
        return DiscreteDiffusionPolicy(ckpt.params, ckpt.codec, ckpt.config.alpha, steps)
    return MSEBaselinePolicy(ckpt.params, ckpt.codec, steps)
