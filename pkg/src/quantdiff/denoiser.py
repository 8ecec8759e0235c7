"""Conditional feed-forward denoisers with hand-written reverse-mode gradients.

Two heads share one MLP body shape:

* :class:`DenoiserParams` reads a noisy scaled one-hot chunk and emits
  ``K`` logits per action position (the discrete model).
* :class:`MSEBaselineParams` reads noisy normalized actions and regresses
  the clean ones (the continuous baseline).

Both take the conditioning features and the noise level ``tau`` as extra
inputs. Observation features optionally receive an additive, learned
embedding of the camera offset ``(d, theta, phi)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import ChunkLayout, check_tokens
from .errors import DatasetError, ShapeMismatchError

IMAGE_PATCH = 8
DEFAULT_HIDDEN = (256, 256, 256)


@dataclass
class RelativeEmbeddingParams:
    """Linear map from a 3-vector camera offset to feature space: ``delta @ W + b``."""

    W: np.ndarray  # (3, E)
    b: np.ndarray  # (E,)

    @classmethod
    def zeros(cls, dim: int) -> "RelativeEmbeddingParams":
        return cls(np.zeros((3, dim)), np.zeros(dim))


def rel_embed(offset, params: RelativeEmbeddingParams) -> np.ndarray:
    delta = np.asarray(offset, dtype=np.float64)
    return delta @ params.W + params.b


def add_embed(features: np.ndarray, e_rel: np.ndarray) -> np.ndarray:
    return features + e_rel


@dataclass
class ConditioningCache:
    """Encoded observation, computed once and reused by every denoising step.

    ``features`` already include the relative embedding; ``offset`` and
    ``has_offset`` are kept so gradients can reach the embedding weights.
    Arrays may carry a leading batch axis.
    """

    features: np.ndarray  # (E,) or (B, E)
    offset: np.ndarray  # (3,) or (B, 3); zeros where absent
    has_offset: np.ndarray  # () or (B,) bool

    @property
    def batched(self) -> bool:
        return self.features.ndim == 2


@dataclass
class _ConditionalMLP:
    layout: ChunkLayout
    state_dim: int
    n_tasks: int
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    rel: RelativeEmbeddingParams | None = None
    use_image: bool = False

    kind = "base"

    @property
    def token_width(self) -> int:
        raise NotImplementedError

    @property
    def feature_dim(self) -> int:
        return self.state_dim + self.n_tasks + (IMAGE_PATCH * IMAGE_PATCH if self.use_image else 0)

    @property
    def action_width(self) -> int:
        return self.layout.total_positions * self.token_width

    @property
    def input_width(self) -> int:
        return self.action_width + self.feature_dim + 1

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (layers, then embedding)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.rel.W, self.rel.b]

    def with_tensors(self, tensors: Sequence[np.ndarray]):
        n = (len(tensors) - 2) // 2
        return replace(
            self,
            weights=list(tensors[0 : 2 * n : 2]),
            biases=list(tensors[1 : 2 * n : 2]),
            rel=RelativeEmbeddingParams(tensors[2 * n], tensors[2 * n + 1]),
        )

    def copy(self):
        return self.with_tensors([t.copy() for t in self.tensors()])

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "horizon": self.layout.horizon,
            "action_dim": self.layout.action_dim,
            "state_dim": self.state_dim,
            "n_tasks": self.n_tasks,
            "use_image": self.use_image,
            "hidden": self.dims[1:-1],
        }

    def check(self) -> None:
        dims = self.dims
        if dims[0] != self.input_width or dims[-1] != self.action_width:
            raise ShapeMismatchError(
                f"layer dims {dims} do not match input {self.input_width} / output {self.action_width}"
            )
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ShapeMismatchError(f"bias {b.shape} does not match weight {w.shape}")
        for w_in, w_out in zip(self.weights[:-1], self.weights[1:]):
            if w_in.shape[1] != w_out.shape[0]:
                raise ShapeMismatchError(f"layers do not chain: {w_in.shape} -> {w_out.shape}")
        if self.rel.W.shape != (3, self.feature_dim) or self.rel.b.shape != (self.feature_dim,):
            raise ShapeMismatchError("relative embedding does not match the feature width")


@dataclass
class DenoiserParams(_ConditionalMLP):
    bins: int = 2

    kind = "discrete"

    @property
    def token_width(self) -> int:
        return self.bins

    def meta(self) -> dict:
        return {**super().meta(), "bins": self.bins}


@dataclass
class MSEBaselineParams(_ConditionalMLP):
    kind = "mse_baseline"

    @property
    def token_width(self) -> int:
        return 1


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init(params: _ConditionalMLP, hidden: Sequence[int], rng: np.random.Generator):
    dims = [params.input_width, *hidden, params.action_width]
    params.weights = [_glorot(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    params.biases = [np.zeros(b) for b in dims[1:]]
    params.rel = RelativeEmbeddingParams.zeros(params.feature_dim)
    params.check()
    return params


def init_denoiser(
    layout: ChunkLayout,
    bins: int,
    state_dim: int,
    rng: np.random.Generator,
    n_tasks: int = 1,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    use_image: bool = False,
) -> DenoiserParams:
    """Glorot-uniform weights, zero biases, zero relative embedding."""
    p = DenoiserParams(layout, state_dim, n_tasks, use_image=use_image, bins=bins)
    return _init(p, hidden, rng)


def init_mse_baseline(
    layout: ChunkLayout,
    state_dim: int,
    rng: np.random.Generator,
    n_tasks: int = 1,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    use_image: bool = False,
) -> MSEBaselineParams:
    p = MSEBaselineParams(layout, state_dim, n_tasks, use_image=use_image)
    return _init(p, hidden, rng)


# ---------------------------------------------------------------------------
# observation encoding


def image_patch(image: np.ndarray) -> np.ndarray:
    """Downsample an image to an 8x8 grayscale patch in ``[0, 1]``, flattened."""
    img = np.asarray(image, dtype=np.float64)
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        img = img / 255.0
    if img.ndim == 3:
        img = img.mean(axis=2)
    h, w = img.shape
    rows = (np.arange(IMAGE_PATCH) * h) // IMAGE_PATCH
    cols = (np.arange(IMAGE_PATCH) * w) // IMAGE_PATCH
    # block means over the integer grid; exact for sizes divisible by 8
    out = np.empty((IMAGE_PATCH, IMAGE_PATCH))
    r_edges = list(rows) + [h]
    c_edges = list(cols) + [w]
    for i in range(IMAGE_PATCH):
        for j in range(IMAGE_PATCH):
            block = img[r_edges[i] : max(r_edges[i + 1], r_edges[i] + 1),
                        c_edges[j] : max(c_edges[j + 1], c_edges[j] + 1)]
            out[i, j] = block.mean()
    return out.ravel()


def base_features(params: _ConditionalMLP, state, task_id: int = 0, image=None) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64).ravel()
    if state.shape != (params.state_dim,):
        raise ShapeMismatchError(f"state has shape {state.shape}, model expects ({params.state_dim},)")
    if not 0 <= task_id < params.n_tasks:
        raise ShapeMismatchError(f"task_id {task_id} outside [0, {params.n_tasks})")
    parts = [state, np.eye(params.n_tasks)[task_id]]
    if params.use_image:
        if image is None:
            raise ShapeMismatchError("model expects an image but the observation has none")
        parts.append(image_patch(image))
    elif image is not None:
        raise ShapeMismatchError("observation carries an image but the model takes none")
    return np.concatenate(parts)


def batch_cache(params: _ConditionalMLP, base: np.ndarray, offsets=None, has_offset=None):
    """Build a batched :class:`ConditioningCache` from stacked base features."""
    base = np.atleast_2d(np.asarray(base, dtype=np.float64))
    B = base.shape[0]
    if base.shape[1] != params.feature_dim:
        raise ShapeMismatchError(f"features have width {base.shape[1]}, model expects {params.feature_dim}")
    if offsets is None:
        offsets = np.zeros((B, 3))
        has_offset = np.zeros(B, dtype=bool)
    else:
        offsets = np.asarray(offsets, dtype=np.float64).reshape(B, 3)
        has_offset = np.ones(B, dtype=bool) if has_offset is None else np.asarray(has_offset, bool)
    emb = rel_embed(offsets, params.rel) * has_offset[:, None]
    return ConditioningCache(add_embed(base, emb), offsets * has_offset[:, None], has_offset)


# ---------------------------------------------------------------------------
# forward / backward


def _as_batch(params, data, tau, cache):
    data = np.asarray(data, dtype=np.float64)
    single = data.ndim == (3 if params.kind == "discrete" else 2)
    if single:
        data = data[None]
    B = data.shape[0]
    expected = (B, *params.layout.shape) + ((params.bins,) if params.kind == "discrete" else ())
    if data.shape != expected:
        raise ShapeMismatchError(f"noisy input has shape {data.shape}, expected {expected}")
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (B,))
    feats = np.atleast_2d(cache.features)
    if feats.shape[0] == 1 and B > 1:
        feats = np.broadcast_to(feats, (B, feats.shape[1]))
    if feats.shape != (B, params.feature_dim):
        raise ShapeMismatchError(
            f"conditioning features have shape {feats.shape}, expected ({B}, {params.feature_dim})"
        )
    x = np.concatenate([data.reshape(B, -1), feats, tau[:, None]], axis=1)
    return x, single


def _mlp_forward(params, x):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def _mlp_backward(params, acts, grad_out, cache):
    """Backpropagate ``grad_out`` (d loss / d output); returns tensors-ordered grads."""
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    g = grad_out
    for i in range(n - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (1.0 - acts[i] ** 2)
    # g is now d loss / d input; slice out the feature block
    a = params.action_width
    gfeat = g[:, a : a + params.feature_dim]
    mask = np.atleast_1d(cache.has_offset).astype(np.float64)
    offsets = np.atleast_2d(cache.offset)
    if gfeat.shape[0] != offsets.shape[0]:
        # a single cache broadcast over the batch
        gfeat = gfeat.sum(axis=0, keepdims=True)
    g_relW = (offsets * mask[:, None]).T @ gfeat
    g_relb = (gfeat * mask[:, None]).sum(axis=0)
    out = []
    for w, b in zip(gw, gb):
        out += [w, b]
    return out + [g_relW, g_relb]


def forward_logits(params: DenoiserParams, noisy, cache: ConditioningCache) -> np.ndarray:
    """Per-position logits ``(H, D, K)`` (or ``(B, H, D, K)`` for batched input)."""
    x, single = _as_batch(params, noisy.data, noisy.tau, cache)
    out = _mlp_forward(params, x)[-1].reshape((x.shape[0], *params.layout.shape, params.bins))
    return out[0] if single else out


def softmax_per_position(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ce_loss(logits: np.ndarray, target: np.ndarray) -> float:
    """Mean over positions (and batch) of ``-log softmax(logits)[target]``."""
    logits = np.asarray(logits, dtype=np.float64)
    target = check_tokens(target, logits.shape[-1])
    if target.shape != logits.shape[:-1]:
        raise ShapeMismatchError(f"target {target.shape} does not match logits {logits.shape}")
    lp = np.take_along_axis(log_softmax(logits), target[..., None], axis=-1)
    return float(-lp.mean())


def backward(params: DenoiserParams, noisy, cache: ConditioningCache, target: np.ndarray):
    """Cross-entropy loss and its gradient w.r.t. ``params.tensors()``.

    The batch is given in stacked form: ``noisy.data`` is ``(B, H, D, K)``,
    ``noisy.tau`` is ``(B,)`` and ``target`` is ``(B, H, D)``.
    """
    x, single = _as_batch(params, noisy.data, noisy.tau, cache)
    target = check_tokens(target, params.bins).reshape(x.shape[0], -1)
    acts = _mlp_forward(params, x)
    B = x.shape[0]
    L = params.layout.total_positions
    logits = acts[-1].reshape(B, L, params.bins)
    lsm = log_softmax(logits)
    loss = -np.take_along_axis(lsm, target[..., None], axis=-1).mean()
    g = np.exp(lsm)
    np.put_along_axis(g, target[..., None], np.take_along_axis(g, target[..., None], -1) - 1.0, -1)
    g /= B * L
    return float(loss), _mlp_backward(params, acts, g.reshape(B, -1), cache)


def mse_forward(params: MSEBaselineParams, noisy_actions, cache: ConditioningCache, tau) -> np.ndarray:
    """Predict clean normalized actions ``(H, D)`` from noisy ones."""
    x, single = _as_batch(params, noisy_actions, tau, cache)
    out = _mlp_forward(params, x)[-1].reshape((x.shape[0], *params.layout.shape))
    return out[0] if single else out


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_backward(params: MSEBaselineParams, noisy_actions, cache, tau, target):
    x, _ = _as_batch(params, noisy_actions, tau, cache)
    acts = _mlp_forward(params, x)
    target = np.asarray(target, dtype=np.float64).reshape(acts[-1].shape)
    diff = acts[-1] - target
    loss = float(np.mean(diff**2))
    return loss, _mlp_backward(params, acts, 2.0 * diff / diff.size, cache)


# ---------------------------------------------------------------------------
# persistence

MAGIC = b"QDNN"
VERSION = 1


def save_params(path: str | Path, params: _ConditionalMLP) -> None:
    """Flat little-endian binary: header, then float64 tensors in layer order.

    Header: ``magic[4] version:u32 n_layers:u32 dims:u32[n_layers+1]
    feature_dim:u32``. Each layer stores ``W`` row-major ``(in, out)`` then
    ``b``; the relative embedding ``W (3, E)`` and ``b (E,)`` follow.
    """
    dims = params.dims
    header = MAGIC + struct.pack(
        f"<II{len(dims)}II", VERSION, len(params.weights), *dims, params.feature_dim
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_param_file(path: str | Path):
    """Parse a parameter file into ``(tensors, dims, feature_dim)``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise DatasetError(f"{path}: bad magic {buf[:4]!r}")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    off = 12
    dims = list(struct.unpack_from(f"<{n + 1}I", buf, off))
    off += 4 * (n + 1)
    (E,) = struct.unpack_from("<I", buf, off)
    off += 4
    shapes = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes += [(a, b), (b,)]
    shapes += [(3, E), (E,)]
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        if off + 8 * count > len(buf):
            raise DatasetError(f"{path}: truncated parameter file")
        tensors.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy())
        off += 8 * count
    if off != len(buf):
        raise DatasetError(f"{path}: {len(buf) - off} trailing bytes")
    return tensors, dims, E


def params_from_meta(meta: dict, tensors: Sequence[np.ndarray]):
    layout = ChunkLayout(int(meta["horizon"]), int(meta["action_dim"]))
    common = dict(state_dim=int(meta["state_dim"]), n_tasks=int(meta["n_tasks"]),
                  use_image=bool(meta.get("use_image", False)))
    if meta["kind"] == "discrete":
        p = DenoiserParams(layout, bins=int(meta["bins"]), **common)
    elif meta["kind"] == "mse_baseline":
        p = MSEBaselineParams(layout, **common)
    else:
        raise DatasetError(f"unknown model kind {meta['kind']!r}")
    p = p.with_tensors(list(tensors))
    p.check()
    return p


def load_params(path: str | Path, meta: dict):
    tensors, _, _ = read_param_file(path)
    return params_from_meta(meta, tensors)
