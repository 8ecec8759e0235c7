"""The nine acceptance criteria, each at its stated tolerance.

Every test appends one PASS/FAIL line to the session log (printed in the
terminal summary) before asserting, so a failing criterion still reports
what was measured.
"""

import math

import numpy as np
import pytest

from quantdiff.codec import ChunkLayout, detokenize, fit_stats, normalize, tokenize
from quantdiff.diffusion import forward_noise
from quantdiff.experiments import evaluate, on_lattice
from quantdiff.gradcheck import check_gradients, random_problem
from quantdiff.oracle import CategoricalPrior, exact_posterior, run_support_experiment
from quantdiff.rng import derive
from quantdiff.spherical import (
    CameraIntrinsics,
    WarpSpec,
    project,
    psnr,
    rotation_matrix,
    unproject,
    warp_image,
)
from quantdiff.toybench import gen_demos, make_env
from quantdiff.trainer import TrainConfig, clip_gradients, ema_update, global_norm, lr_at, train
from quadrature import quadrature_posterior

pytestmark = pytest.mark.acceptance


def report(log, n, title, checks):
    """Record one line for criterion ``n`` and fail if any check failed.

    ``checks`` is a list of ``(name, ok, measured)`` triples.
    """
    ok = all(c[1] for c in checks)
    parts = [f"{name}={measured}" + ("" if good else " [FAIL]") for name, good, measured in checks]
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} | " + "; ".join(parts)
    log.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------------ 1

def test_criterion_1_codec_round_trip(acceptance_log):
    K = 2048
    data = derive(0, "acceptance", "codec").standard_normal((50_000, 7))
    codec = fit_stats([data], bins=K)
    tol = 1.0 / K

    # every bin center, every dimension
    tokens = np.broadcast_to(np.arange(K)[:, None], (K, codec.dims))
    centers = detokenize(tokens, codec)
    recovered = tokenize(centers, codec)
    center_err = np.abs(normalize(detokenize(recovered, codec), codec) - normalize(centers, codec)).max()
    exact_tokens = bool(np.array_equal(recovered, tokens))

    r = derive(0, "acceptance", "chunks")
    chunks = r.uniform(codec.q_lo, codec.q_hi, size=(10_000, 8, codec.dims))
    chunk_err = np.abs(normalize(detokenize(tokenize(chunks, codec), codec), codec)
                       - normalize(chunks, codec)).max()

    lo = normalize(codec.q_lo, codec)
    hi = normalize(codec.q_hi, codec)
    lo_dev = float(np.abs(lo + 1.0).max())
    hi_dev = float(np.abs(hi - 1.0).max())
    report(acceptance_log, 1, "codec round trip", [
        ("center tokens recovered", exact_tokens, exact_tokens),
        ("max center error", center_err <= tol, f"{center_err:.3g} <= {tol:.3g}"),
        ("max chunk error", chunk_err <= tol, f"{chunk_err:.3g} <= {tol:.3g}"),
        ("|z(q_lo)+1|", lo_dev <= 1e-6, f"{lo_dev:.3g}"),
        ("|z(q_hi)-1|", hi_dev <= 1e-6, f"{hi_dev:.3g}"),
    ])


# ------------------------------------------------------------------ 2

def test_criterion_2_forward_boundaries(acceptance_log):
    r = derive(0, "acceptance", "noise")
    target = r.normal(size=(16, 8, 64))
    clean = forward_noise(target, 1.0, r).data
    bitwise = clean.tobytes() == target.tobytes()

    n = 1_000_000
    noise = forward_noise(r.normal(3.0, 2.0, size=n), 0.0, r).data
    mean, var = float(noise.mean()), float(noise.var())
    mean_ok = abs(mean) <= 3.0 / math.sqrt(n)
    # the sample variance of n standard normals has sd sqrt(2/n)
    var_ok = abs(var - 1.0) <= 3.0 * math.sqrt(2.0 / n)

    taus = r.uniform(size=16)
    eps = r.standard_normal(target.shape)
    got = forward_noise(target, taus, eps=eps).data
    t = taus[:, None, None]
    linear = np.array_equal(got, t * target + (1.0 - t) * eps)
    report(acceptance_log, 2, "forward-process boundaries", [
        ("tau=1 bitwise", bitwise, bitwise),
        ("tau=0 mean", mean_ok, f"{mean:.2e} (3 sigma {3 / math.sqrt(n):.1e})"),
        ("tau=0 var", var_ok, f"{var:.5f} (3 sigma {3 * math.sqrt(2 / n):.1e})"),
        ("injected eps exact", linear, linear),
    ])


# ------------------------------------------------------------------ 3

def test_criterion_3_gradient_check(acceptance_log):
    checks = []
    for kind in ("discrete", "mse_baseline"):
        r = derive(0, "acceptance", "grad", kind)
        params, problem = random_problem(r, kind, horizon=3, action_dim=2, bins=6, hidden=(16, 16))
        n_tensors = len(params.tensors())
        assert any(t is params.rel.W for t in params.tensors())
        res = check_gradients(params, problem, r, n_coords=120, h=1e-6)
        checks += [
            (f"{kind} coords", res.coords_checked >= 100, res.coords_checked),
            (f"{kind} tensors covered", len(res.per_tensor) == n_tensors, f"{len(res.per_tensor)}/{n_tensors}"),
            (f"{kind} max rel err", res.max_rel_error < 1e-4, f"{res.max_rel_error:.2e}"),
        ]
    report(acceptance_log, 3, "gradient check", checks)


# ------------------------------------------------------------------ 4

@pytest.mark.parametrize("K", [2, 16])
def test_criterion_4_support_preservation(acceptance_log, K):
    tau, alpha, trials = 0.5, 0.1, 10_000
    prior = CategoricalPrior.uniform([-1.0, 1.0]) if K == 2 else CategoricalPrior.codec_bins(16)
    rep = run_support_experiment(prior, [tau], alpha, trials, entropy_floor=0.1, seed=0)
    frac = rep.off_support_fraction

    r = derive(0, "acceptance", "quadrature", K)
    worst = 0.0
    for _ in range(4):
        k = int(r.integers(K))
        z = tau * alpha * np.eye(K)[k] + (1 - tau) * r.standard_normal(K)
        ours = exact_posterior(z, prior, tau, alpha)
        oracle = np.array(quadrature_posterior(z, prior, tau, alpha))
        worst = max(worst, float(np.max(np.abs(ours - oracle) / oracle)))
    report(acceptance_log, 4, f"support preservation K={K}", [
        ("discrete on-support", rep.on_support_count == trials, f"{rep.on_support_count}/{trials}"),
        ("continuous off-support fraction", frac is not None and frac >= 0.99,
         f"{frac:.4f} of {rep.qualified} qualified" if frac is not None else "no qualified trials"),
        ("posterior vs quadrature", worst < 1e-10, f"{worst:.2e}"),
    ])


# ------------------------------------------------------------------ rollouts shared by 5, 6, 9

@pytest.fixture(scope="module")
def reach_eval(reach_discrete, reach_baseline):
    return {
        "discrete": evaluate(reach_discrete),
        "baseline": evaluate(reach_baseline),
        "baseline_single_step": evaluate(reach_baseline, steps=1),
    }


@pytest.fixture(scope="module")
def precision_eval(precision_fine, precision_coarse):
    return {256: evaluate(precision_fine), 8: evaluate(precision_coarse)}


# ------------------------------------------------------------------ 5

def test_criterion_5_mode_averaging(acceptance_log, reach_discrete, reach_eval):
    disc, _ = reach_eval["discrete"]
    base, base_rec = reach_eval["baseline"]
    single, _ = reach_eval["baseline_single_step"]
    modes = reach_discrete.env.mode_first_actions()
    midpoint = modes.mean(axis=0)
    gap = float(np.linalg.norm(modes[0] - modes[1]))
    mean_first = np.mean(base_rec.first_actions, axis=0)
    off_mid = float(np.linalg.norm(mean_first - midpoint))
    diff = disc.success_rate - base.success_rate
    report(acceptance_log, 5, "mode-averaging separation on two_goal_reach", [
        ("discrete success", disc.success_rate >= 0.9, f"{disc.success_rate:.3f}"),
        ("discrete - baseline", diff >= 0.5,
         f"{disc.success_rate:.3f} - {base.success_rate:.3f} = {diff:.3f} >= 0.5"),
        ("baseline mean first action to midpoint", off_mid <= 0.1 * gap,
         f"{off_mid:.4f} <= {0.1 * gap:.4f}"),
        ("diagnostic: single-step baseline success", True, f"{single.success_rate:.3f}"),
    ])


# ------------------------------------------------------------------ 6

def test_criterion_6_bin_resolution(acceptance_log, precision_eval):
    fine = precision_eval[256][0].success_rate
    coarse = precision_eval[8][0].success_rate
    report(acceptance_log, 6, "bin-resolution trend on precision_slot", [
        ("success(256) - success(8)", fine - coarse >= 0.2, f"{fine:.3f} - {coarse:.3f} = {fine - coarse:.3f}"),
    ])


# ------------------------------------------------------------------ 7

def _smooth_image(K):
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(float)
    r = 127.5 + 60 * np.sin(u / 9.0) + 50 * np.cos(v / 7.0)
    g = 2.0 * u + 1.5 * v
    b = 255 * (u + v) / (K.width + K.height)
    return np.clip(np.stack([r, g, b], -1), 0, 255).astype(np.uint8)


def _interior(a, frac=0.5):
    h, w = a.shape[:2]
    dh, dw = int(h * (1 - frac) / 2), int(w * (1 - frac) / 2)
    return a[dh : h - dh, dw : w - dw]


def test_criterion_7_spherical_warp(acceptance_log):
    K = CameraIntrinsics.centered(64, 48, fov_deg=60.0)
    img = _smooth_image(K)
    identity = warp_image(img, K, WarpSpec()).tobytes() == img.tobytes()

    worst_psnr = math.inf
    for yaw, pitch in [(5, 0), (0, 5), (-5, 5), (5, -5)]:
        spec = WarpSpec.degrees(yaw, pitch)
        back = warp_image(warp_image(img, K, spec), K, spec.inverse())
        worst_psnr = min(worst_psnr, psnr(_interior(back), _interior(img)))

    r = derive(0, "acceptance", "sphere")
    orth = 0.0
    for p, y in r.uniform(-1.5, 1.5, size=(200, 2)):
        R = rotation_matrix(p, y)
        orth = max(orth, float(np.abs(R.T @ R - np.eye(3)).max()))

    u = r.uniform(0, K.width, 1000)
    v = r.uniform(0, K.height, 1000)
    d = r.uniform(0.1, 50.0, 1000)
    pu, pv = project(*unproject(u, v, d, K), K)
    pix = float(max(np.abs(pu - u).max(), np.abs(pv - v).max()))

    fimg = img.astype(np.float64)
    a = warp_image(fimg, K, WarpSpec.degrees(4, -3, d_center=1.0))
    b = warp_image(fimg, K, WarpSpec.degrees(4, -3, d_center=7.3))
    depth = float(np.abs(a - b).max())
    report(acceptance_log, 7, "spherical warp", [
        ("zero warp byte-identical", identity, identity),
        ("round-trip interior PSNR at 5 deg", worst_psnr > 30.0, f"{worst_psnr:.1f} dB"),
        ("rotation orthogonality", orth <= 1e-12, f"{orth:.1e}"),
        ("project(unproject)", pix <= 1e-10, f"{pix:.1e}"),
        ("d_center invariance", depth <= 1e-9, f"{depth:.1e}"),
    ])


# ------------------------------------------------------------------ 8

def test_criterion_8_training_infrastructure(acceptance_log):
    published = TrainConfig.published()
    peak = lr_at(published.warmup_steps, published)

    r = derive(0, "acceptance", "ema")
    dec = 0.999
    e0 = r.normal(size=5)
    seq = [r.normal(size=5) for _ in range(50)]
    ema = [e0.copy()]
    for p in seq:
        ema_update(ema, [p], dec)
    n = len(seq)
    closed = dec**n * e0 + (1 - dec) * sum(dec ** (n - 1 - t) * seq[t] for t in range(n))
    ema_err = float(np.abs(ema[0] - closed).max())

    worst_norm = 0.0
    for i in range(200):
        g = [r.normal(size=s) * 10 ** r.uniform(-1, 4) for s in [(7, 5), (5,), (3, 3)]]
        worst_norm = max(worst_norm, global_norm(clip_gradients(g, published.clip_norm)))

    env = make_env("two_goal_reach")
    eps = gen_demos(env, 20, derive(0, "acceptance", "demos"))
    codec = fit_stats([e.actions for e in eps], bins=16)
    cfg = TrainConfig(total_steps=40, batch_size=16, warmup_steps=5, hidden=(16, 16), seed=3)
    _, csv_a = train(eps, codec, ChunkLayout(4, 2), cfg)
    _, csv_b = train(eps, codec, ChunkLayout(4, 2), cfg)
    same = csv_a.encode() == csv_b.encode()
    report(acceptance_log, 8, "training infrastructure", [
        ("lr_at(warmup)", peak == published.peak_lr == 5e-5, f"{peak:.3g}"),
        ("EMA closed form", ema_err <= 1e-12, f"{ema_err:.1e}"),
        ("clipped norm", worst_norm <= 1.0 + 1e-12, f"{worst_norm:.15f}"),
        ("same-seed CSV byte-identical", same, same),
    ])


# ------------------------------------------------------------------ 9

def test_criterion_9_inference_contract(acceptance_log, reach_discrete, reach_eval, precision_fine,
                                        precision_coarse, precision_eval):
    runs = [
        (reach_discrete, reach_eval["discrete"][1]),
        (reach_discrete, evaluate(reach_discrete, execute_h=1)[1]),
        (precision_fine, precision_eval[256][1]),
        (precision_coarse, precision_eval[8][1]),
    ]
    total, off = 0, 0
    for trained, rec in runs:
        rows = np.concatenate(rec.chunks)
        flags = on_lattice(rows, trained.codec)
        total += len(rows)
        off += int((~flags).sum())
    report(acceptance_log, 9, "inference contract", [
        ("emitted actions", total >= 10_000, total),
        ("off-lattice actions", off == 0, off),
    ])
