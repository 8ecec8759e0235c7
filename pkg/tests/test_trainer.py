import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from quantdiff.codec import ChunkLayout, fit_stats
from quantdiff.data import Episode
from quantdiff.errors import ConfigError, DivergedError
from quantdiff.trainer import (
    TrainConfig,
    TrainState,
    clip_gradients,
    ema_update,
    global_norm,
    load_checkpoint,
    lr_at,
    optimizer_step,
    save_checkpoint,
    train,
)


class Bowl:
    """Stand-in parameter object for optimizer tests: a list of tensors."""

    def __init__(self, arrays):
        self.arrays = arrays

    def tensors(self):
        return self.arrays

    def copy(self):
        return Bowl([a.copy() for a in self.arrays])


def adamw_reference(p0, grad_fn, steps, cfg):
    """Scalar AdamW with bias correction and decoupled decay."""
    p = list(p0)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    b1, b2 = cfg.betas
    for t in range(1, steps + 1):
        g = grad_fn(p)
        lr = lr_at(min(t, cfg.total_steps), cfg)
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mhat = m[i] / (1 - b1**t)
            vhat = v[i] / (1 - b2**t)
            p[i] = p[i] * (1 - lr * cfg.weight_decay)
            p[i] -= lr * mhat / (math.sqrt(vhat) + cfg.eps)
    return p


def tiny_episodes(n=12, seed=0):
    r = np.random.default_rng(seed)
    eps = []
    for _ in range(n):
        obs = r.normal(size=(5, 2))
        eps.append(Episode(obs, np.tanh(obs @ np.array([[1.0, 0.3], [-0.5, 1.0]]))))
    return eps


def tiny_cfg(**kw):
    base = dict(total_steps=30, batch_size=8, warmup_steps=5, hidden=(8,), seed=3)
    return TrainConfig(**{**base, **kw})


# ------------------------------------------------------------ lr schedule

def test_lr_peak_at_warmup_published_value():
    cfg = TrainConfig.published()
    assert lr_at(cfg.warmup_steps, cfg) == 5e-5
    assert lr_at(0, cfg) == 0.0
    assert lr_at(cfg.total_steps, cfg) == pytest.approx(cfg.final_lr)


def test_lr_endpoints_toy():
    cfg = TrainConfig()
    assert lr_at(cfg.warmup_steps, cfg) == cfg.peak_lr
    assert lr_at(cfg.warmup_steps // 2, cfg) == pytest.approx(cfg.peak_lr / 2)
    assert lr_at(cfg.total_steps, cfg) == pytest.approx(cfg.final_lr, abs=1e-15)


@given(st.integers(1, 5000), st.integers(0, 5000), st.floats(1e-6, 1e-2), st.floats(0, 1))
def test_lr_continuous_and_nonincreasing(total, warmup, peak, frac):
    assume(warmup <= total)
    cfg = TrainConfig(total_steps=total, warmup_steps=warmup, peak_lr=peak, final_lr=peak * frac)
    assert lr_at(warmup, cfg) == peak
    if warmup > 0:
        # the left neighbour sits one warmup increment below the peak
        assert lr_at(warmup - 1, cfg) == pytest.approx(peak - peak / warmup, rel=1e-12, abs=1e-18)
    steps = np.arange(warmup, total + 1)
    lrs = np.array([lr_at(int(s), cfg) for s in steps[:: max(1, len(steps) // 50)]])
    assert np.all(np.diff(lrs) <= 1e-18)


# ------------------------------------------------------------ clipping / EMA

@given(st.integers(0, 2**31), st.floats(1e-3, 1e6))
def test_clipped_norm_bounded(seed, scale):
    r = np.random.default_rng(seed)
    grads = [r.normal(size=(4, 3)) * scale, r.normal(size=5) * scale]
    assert global_norm(clip_gradients(grads, 1.0)) <= 1.0 + 1e-12


def test_clip_leaves_small_gradients_alone():
    g = [np.array([0.3, 0.4])]
    out = clip_gradients(g, 1.0)
    np.testing.assert_array_equal(out[0], g[0])


def test_ema_geometric_series_closed_form(rng):
    d = 0.9
    e0 = rng.normal(size=4)
    seq = [rng.normal(size=4) for _ in range(25)]
    ema = [e0.copy()]
    for p in seq:
        ema_update(ema, [p], d)
    n = len(seq)
    closed = d**n * e0 + (1 - d) * sum(d ** (n - 1 - t) * seq[t] for t in range(n))
    np.testing.assert_allclose(ema[0], closed, rtol=0, atol=1e-12)
    const = [np.zeros(3)]
    for _ in range(40):
        ema_update(const, [np.ones(3)], d)
    np.testing.assert_allclose(const[0], 1 - d**40, rtol=0, atol=1e-12)


# ------------------------------------------------------------ AdamW

def test_adamw_matches_scalar_reference():
    cfg = TrainConfig(total_steps=60, warmup_steps=10, peak_lr=0.05, final_lr=0.005, weight_decay=0.01)
    centre = np.array([1.5, -2.0, 0.25])
    scales = np.array([1.0, 10.0, 0.1])

    def grad(p):
        return list(2 * scales * (np.asarray(p) - centre))

    state = TrainState.fresh(Bowl([np.zeros(3)]))
    for _ in range(60):
        optimizer_step(state, [np.array(grad(state.params.arrays[0]))], cfg)
    ref = adamw_reference([0.0, 0.0, 0.0], grad, 60, cfg)
    np.testing.assert_allclose(state.params.arrays[0], ref, rtol=1e-12, atol=1e-15)
    assert state.step == 60


def test_adamw_descends_bowl():
    cfg = TrainConfig(total_steps=500, warmup_steps=0, peak_lr=0.05, final_lr=0.001, weight_decay=0.0)
    centre = np.array([0.7, -0.3])
    state = TrainState.fresh(Bowl([np.zeros(2)]))
    for _ in range(500):
        optimizer_step(state, [2 * (state.params.arrays[0] - centre)], cfg)
    np.testing.assert_allclose(state.params.arrays[0], centre, atol=1e-3)


def test_fresh_state_copies_params():
    src = Bowl([np.ones(2)])
    state = TrainState.fresh(src)
    optimizer_step(state, [np.ones(2)], TrainConfig(total_steps=1, warmup_steps=0))
    np.testing.assert_array_equal(src.arrays[0], 1.0)


def test_nonfinite_gradient_diverges():
    state = TrainState.fresh(Bowl([np.zeros(2)]))
    with pytest.raises(DivergedError) as exc:
        optimizer_step(state, [np.array([np.nan, 0.0])], TrainConfig())
    assert exc.value.numerical and exc.value.code == "diverged"


# ------------------------------------------------------------ config

@pytest.mark.parametrize("kw", [dict(warmup_steps=10, total_steps=5), dict(peak_lr=0.0),
                                dict(clip_norm=-1.0), dict(ema_decay=1.5), dict(batch_size=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


# ------------------------------------------------------------ train loop

@pytest.mark.parametrize("kind", ["discrete", "mse_baseline"])
def test_same_seed_byte_identical_metrics(kind):
    eps = tiny_episodes()
    codec = fit_stats([e.actions for e in eps], bins=8)
    _, a = train(eps, codec, ChunkLayout(3, 2), tiny_cfg(), kind)
    _, b = train(eps, codec, ChunkLayout(3, 2), tiny_cfg(), kind)
    assert a.encode() == b.encode()
    _, c = train(eps, codec, ChunkLayout(3, 2), tiny_cfg(seed=4), kind)
    assert c != a


def test_metrics_csv_columns():
    eps = tiny_episodes()
    codec = fit_stats([e.actions for e in eps], bins=8)
    state, csv = train(eps, codec, ChunkLayout(3, 2), tiny_cfg())
    lines = csv.strip().splitlines()
    assert lines[0] == "step,loss,lr,grad_norm,ema_applied"
    assert len(lines) == 31
    first = lines[1].split(",")
    assert first[0] == "1" and first[-1] == "1"
    assert float(first[2]) == lr_at(1, tiny_cfg())


def test_training_reduces_loss():
    eps = tiny_episodes(40)
    codec = fit_stats([e.actions for e in eps], bins=4)
    cfg = tiny_cfg(total_steps=300, warmup_steps=20, peak_lr=3e-3, hidden=(32,), batch_size=32)
    state, _ = train(eps, codec, ChunkLayout(2, 2), cfg)
    losses = [row[1] for row in state.log]
    assert np.mean(losses[-50:]) < 0.8 * np.mean(losses[:50])


def test_checkpoint_round_trip(tmp_path):
    eps = tiny_episodes()
    codec = fit_stats([e.actions for e in eps], bins=8)
    cfg = tiny_cfg()
    state, csv = train(eps, codec, ChunkLayout(3, 2), cfg)
    save_checkpoint(tmp_path / "ck", state, cfg, codec, csv)
    ck = load_checkpoint(tmp_path / "ck")
    for a, b in zip(ck.params.tensors(), state.ema.tensors()):
        assert a.tobytes() == b.tobytes()
    raw = load_checkpoint(tmp_path / "ck", "raw.bin")
    for a, b in zip(raw.params.tensors(), state.params.tensors()):
        assert a.tobytes() == b.tobytes()
    assert ck.step == 30 and ck.config == cfg
    side = json.loads((tmp_path / "ck" / "checkpoint.json").read_text())
    assert side["model"]["kind"] == "discrete"
    assert (tmp_path / "ck" / "metrics.csv").read_text() == csv
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing")
