"""Quantized discrete-diffusion action generation at desk scale.

Actions are tokenized by per-dimension quantile binning, tokens are encoded as
scaled one-hot vectors, noised by linear interpolation toward Gaussian noise,
and a small MLP denoiser is trained with cross-entropy. Inference alternates
argmax decoding with renoising, so every emitted action is a bin center.
"""

from .codec import ChunkLayout, QuantileCodec, detokenize, fit_stats, one_hot_smooth, tokenize
from .diffusion import Observation, TauSchedule, forward_noise, inference_loop, mse_inference_loop
from .errors import QuantdiffError
from .trainer import TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ChunkLayout", "QuantileCodec", "detokenize", "fit_stats", "one_hot_smooth", "tokenize",
    "Observation", "TauSchedule", "forward_noise", "inference_loop", "mse_inference_loop",
    "QuantdiffError", "TrainConfig", "load_checkpoint", "train",
]
