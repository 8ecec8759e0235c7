"""Quantile action codec.

Continuous action chunks (``H x D`` arrays) are scaled per dimension into
``[-1, 1]`` using robust percentile bounds, then cut into ``K`` uniform bins.
Detokenization returns bin centers, so decoded actions always live on a
finite per-dimension lattice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import (
    DatasetError,
    DegenerateDimensionError,
    InvalidActionError,
    InvalidSmoothingError,
    InvalidTokenError,
    ShapeMismatchError,
)

#: Guard added to every normalizing denominator.
GUARD = 1e-6

DEFAULT_BINS = 2048
DEFAULT_PERCENTILES = (0.01, 0.99)
DEFAULT_ALPHA = 0.1


@dataclass(frozen=True)
class ChunkLayout:
    """Positions of an action chunk: ``horizon`` timesteps by ``action_dim`` channels."""

    horizon: int
    action_dim: int

    def __post_init__(self):
        if self.horizon < 1 or self.action_dim < 1:
            raise ShapeMismatchError(
                f"layout needs horizon >= 1 and action_dim >= 1, got "
                f"({self.horizon}, {self.action_dim})"
            )

    @property
    def total_positions(self) -> int:
        return self.horizon * self.action_dim

    @property
    def shape(self) -> tuple[int, int]:
        return (self.horizon, self.action_dim)


@dataclass(frozen=True)
class QuantileCodec:
    """Per-dimension statistics plus the bin count.

    Attributes
    ----------
    bins : int
        Number of uniform bins ``K`` over the normalized range ``[-1, 1]``.
    q_lo, q_hi : np.ndarray
        Lower/upper percentile bounds per dimension, in action units.
    mean, std : np.ndarray
        Per-dimension moments, used only by ``mean_std`` normalization.
    """

    bins: int
    q_lo: np.ndarray
    q_hi: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        for name in ("q_lo", "q_hi", "mean", "std"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.bins < 2:
            raise InvalidTokenError(f"need at least 2 bins, got {self.bins}")
        shapes = {a.shape for a in (self.q_lo, self.q_hi, self.mean, self.std)}
        if len(shapes) != 1 or self.q_lo.ndim != 1:
            raise ShapeMismatchError(f"codec statistics have inconsistent shapes {shapes}")
        for d in range(self.dims):
            if not self.q_lo[d] < self.q_hi[d]:
                raise DegenerateDimensionError(d)
        if np.any(self.std <= 0):
            raise DegenerateDimensionError(int(np.argmin(self.std)), "zero standard deviation")

    @property
    def dims(self) -> int:
        return self.q_lo.shape[0]

    @property
    def bin_width(self) -> float:
        """Width of one bin in normalized units."""
        return 2.0 / self.bins

    def with_bins(self, bins: int) -> "QuantileCodec":
        return QuantileCodec(bins, self.q_lo, self.q_hi, self.mean, self.std)

    def bin_centers(self) -> np.ndarray:
        """Decoded action value of every bin, shape ``(K, D)``."""
        k = np.arange(self.bins)[:, None]
        return detokenize(np.broadcast_to(k, (self.bins, self.dims)), self)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "bins": self.bins,
            "q_lo": self.q_lo.tolist(),
            "q_hi": self.q_hi.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuantileCodec":
        try:
            codec = cls(int(doc["bins"]), doc["q_lo"], doc["q_hi"], doc["mean"], doc["std"])
        except KeyError as exc:
            raise DatasetError(f"codec document is missing key {exc.args[0]!r}") from None
        if "dims" in doc and int(doc["dims"]) != codec.dims:
            raise ShapeMismatchError(f"codec declares dims={doc['dims']} but has {codec.dims}")
        return codec

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "QuantileCodec":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)


def _stack_rows(dataset: Iterable[np.ndarray]) -> np.ndarray:
    chunks = [np.asarray(c, dtype=np.float64) for c in dataset]
    if not chunks:
        raise DatasetError("cannot fit statistics on an empty dataset")
    chunks = [c[None, :] if c.ndim == 1 else c for c in chunks]
    dims = {c.shape[-1] for c in chunks}
    if len(dims) != 1:
        raise ShapeMismatchError(f"chunks disagree on action_dim: {sorted(dims)}")
    rows = np.concatenate([c.reshape(-1, c.shape[-1]) for c in chunks], axis=0)
    if not np.all(np.isfinite(rows)):
        raise InvalidActionError("dataset contains non-finite actions")
    return rows


def fit_stats(
    dataset: Sequence[np.ndarray],
    lo_pct: float = DEFAULT_PERCENTILES[0],
    hi_pct: float = DEFAULT_PERCENTILES[1],
    bins: int = DEFAULT_BINS,
) -> QuantileCodec:
    """Fit percentile bounds and moments over every action row of ``dataset``.

    Percentiles interpolate linearly between order statistics. A dimension
    whose two percentiles coincide raises :class:`DegenerateDimensionError`.
    """
    if not 0.0 <= lo_pct < hi_pct <= 1.0:
        raise DatasetError(f"need 0 <= lo_pct < hi_pct <= 1, got ({lo_pct}, {hi_pct})")
    rows = _stack_rows(dataset)
    q = np.quantile(rows, [lo_pct, hi_pct], axis=0, method="linear")
    for d in range(rows.shape[1]):
        if not q[0, d] < q[1, d]:
            raise DegenerateDimensionError(d)
    return QuantileCodec(bins, q[0], q[1], rows.mean(axis=0), rows.std(axis=0))


Mode = Literal["mean_std", "quantile"]


def normalize(x: np.ndarray, codec: QuantileCodec, mode: Mode = "quantile") -> np.ndarray:
    """Map actions (last axis = dimension) to normalized units, without clamping."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "quantile":
        return (x - codec.q_lo) / ((codec.q_hi - codec.q_lo) + GUARD) * 2.0 - 1.0
    if mode == "mean_std":
        return (x - codec.mean) / (codec.std + GUARD)
    raise ValueError(f"unknown normalization mode {mode!r}")


def denormalize(z: np.ndarray, codec: QuantileCodec, mode: Mode = "quantile") -> np.ndarray:
    """Exact algebraic inverse of :func:`normalize`."""
    z = np.asarray(z, dtype=np.float64)
    if mode == "quantile":
        return (z + 1.0) / 2.0 * ((codec.q_hi - codec.q_lo) + GUARD) + codec.q_lo
    if mode == "mean_std":
        return z * (codec.std + GUARD) + codec.mean
    raise ValueError(f"unknown normalization mode {mode!r}")


def tokens_from_normalized(z: np.ndarray, bins: int) -> np.ndarray:
    """Bin normalized values; anything outside ``[-1, 1]`` is clamped first."""
    z = np.clip(z, -1.0, 1.0)
    idx = np.floor((z + 1.0) / 2.0 * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def normalized_centers(tokens: np.ndarray, bins: int) -> np.ndarray:
    return (np.asarray(tokens, dtype=np.float64) + 0.5) * (2.0 / bins) - 1.0


def tokenize(x: np.ndarray, codec: QuantileCodec) -> np.ndarray:
    """Continuous actions ``(..., D)`` to integer token indices of the same shape."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (codec.dims,):
        raise ShapeMismatchError(f"expected trailing dim {codec.dims}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidActionError("cannot tokenize non-finite actions")
    return tokens_from_normalized(normalize(x, codec, "quantile"), codec.bins)


def check_tokens(tokens: np.ndarray, bins: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        if not np.all(np.isfinite(tokens)) or np.any(tokens != np.round(tokens)):
            raise InvalidTokenError("token indices must be integers")
        tokens = tokens.astype(np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= bins):
        raise InvalidTokenError(
            f"token index out of range [0, {bins}): min={tokens.min()}, max={tokens.max()}"
        )
    return tokens


def detokenize(tokens: np.ndarray, codec: QuantileCodec) -> np.ndarray:
    """Token indices ``(..., D)`` to bin-center actions in action units."""
    tokens = check_tokens(tokens, codec.bins)
    if tokens.shape[-1:] != (codec.dims,):
        raise ShapeMismatchError(f"expected trailing dim {codec.dims}, got shape {tokens.shape}")
    return denormalize(normalized_centers(tokens, codec.bins), codec, "quantile")


def one_hot_smooth(tokens: np.ndarray, bins: int, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Scaled one-hot embedding: ``alpha`` at the token index, zero elsewhere.

    The peak is attenuated, not smoothed toward uniform; every slice sums to
    ``alpha``.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidSmoothingError(f"alpha must lie in (0, 1], got {alpha}")
    tokens = check_tokens(tokens, bins)
    out = np.zeros(tokens.shape + (bins,), dtype=np.float64)
    np.put_along_axis(out, tokens[..., None], alpha, axis=-1)
    return out


def decode_one_hot(onehot: np.ndarray) -> np.ndarray:
    return np.argmax(onehot, axis=-1)
