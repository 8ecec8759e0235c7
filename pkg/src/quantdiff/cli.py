"""``quantdiff`` command-line tool.

Subcommands: gen-demos, fit-stats, train, rollout, compare, verify-support,
gradcheck, warp. Settings resolve as built-in defaults < ``--config`` file <
flags, and the resolved settings are echoed to stderr as JSON. Exit codes:
0 success, 1 usage or validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .codec import ChunkLayout, QuantileCodec, fit_stats
from .config import SCHEMA, load_config, merge
from .data import read_episodes, write_episodes
from .errors import ConfigError, GradcheckError, QuantdiffError
from .trainer import TrainConfig

TRAIN_DEFAULTS = TrainConfig().to_dict()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Shows defaults, except for layered flags that carry their own."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _opt(p, flag, key, cast, default, help_text):
    """Flag whose unset state is ``None`` so config-file values can show through."""
    p.add_argument(flag, dest=key.replace(".", "__"), type=cast, default=None,
                   metavar=key.split(".")[1].upper(), help=f"{help_text} (default: {default})")


def _overrides(args, keys):
    return {k: getattr(args, k.replace(".", "__"), None) for k in keys}


def _resolve(args, defaults: dict) -> dict:
    """Merge defaults, the optional config file and flags into ``{section: {key: value}}``."""
    cfg = merge(load_config(getattr(args, "config", None)),
                _overrides(args, [k for k in defaults]))
    out: dict = {}
    for dotted, value in defaults.items():
        s, k = dotted.split(".", 1)
        out.setdefault(s, {})[k] = value
    for s, kv in cfg.items():
        out.setdefault(s, {}).update(kv)
    return {s: {k: v for k, v in kv.items() if v is not None} for s, kv in out.items()}


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, "config": resolved}, default=str), file=sys.stderr)


def _csv_floats(text: str):
    return [float(t) for t in text.replace(",", " ").split()]


def _csv_ints(text: str):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _env_from_section(section: dict):
    from .toybench import make_env

    params = {k: v for k, v in section.items() if k != "kind"}
    return make_env(section["kind"], **params)


ENV_KEYS = ["env.horizon", "env.success_radius", "env.max_step", "env.grid_step",
            "env.goal_range", "env.low", "env.high"]


def _add_env_opts(p):
    _opt(p, "--env", "env.kind", str, "two_goal_reach", "environment kind")
    for key in ENV_KEYS:
        flag = "--env-" + key.split(".")[1].replace("_", "-")
        _opt(p, flag, key, int if key == "env.horizon" else float, "env-specific", key)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_demos(args):
    from .toybench import gen_demos

    r = _resolve(args, {"env.kind": "two_goal_reach", **{k: None for k in ENV_KEYS}})
    _echo("gen-demos", {**r, "episodes": args.episodes, "seed": args.seed})
    env = _env_from_section(r["env"])
    write_episodes(args.out, gen_demos(env, args.episodes, rngmod.derive(args.seed, "demos")))
    return 0


def cmd_fit_stats(args):
    r = _resolve(args, {"codec.lo": 0.01, "codec.hi": 0.99, "codec.bins": 2048})
    _echo("fit-stats", r)
    episodes = read_episodes(args.dataset)
    c = r["codec"]
    fit_stats([e.actions for e in episodes], c["lo"], c["hi"], c["bins"]).save(args.out)
    return 0


TRAIN_KEYS = {f"train.{k}": v for k, v in TRAIN_DEFAULTS.items()
              if k not in ("tau_kind", "tau_a", "tau_b")}


def _train_config(resolved: dict) -> TrainConfig:
    t = dict(resolved["train"])
    tau = resolved["tau"]
    return TrainConfig(**t, tau_kind=tau["kind"], tau_a=tau["a"], tau_b=tau["b"])


def cmd_train(args):
    from .trainer import save_checkpoint, train

    defaults = {**TRAIN_KEYS, "tau.kind": "beta", "tau.a": 1.0, "tau.b": 1.5,
                "model.horizon": 8, "model.kind": "discrete"}
    r = _resolve(args, defaults)
    _echo("train", r)
    cfg = _train_config(r)
    codec = QuantileCodec.load(args.codec)
    episodes = read_episodes(args.dataset)
    layout = ChunkLayout(r["model"]["horizon"], codec.dims)
    state, metrics = train(episodes, codec, layout, cfg, r["model"]["kind"])
    save_checkpoint(args.out_dir, state, cfg, codec, metrics)
    return 0


ROLLOUT_DEFAULTS = {"rollout.episodes": 200, "rollout.execute_h": 4, "rollout.seed": 0, "tau.steps": 10}


def cmd_rollout(args):
    from .policies import policy_from_checkpoint
    from .toybench import rollout
    from .trainer import load_checkpoint

    r = _resolve(args, {"env.kind": "two_goal_reach", **{k: None for k in ENV_KEYS}, **ROLLOUT_DEFAULTS})
    _echo("rollout", r)
    ckpt = load_checkpoint(args.checkpoint)
    env = _env_from_section(r["env"])
    policy = policy_from_checkpoint(ckpt, r["tau"]["steps"])
    ro = r["rollout"]
    report = rollout(policy, env, ro["episodes"], ro["execute_h"], ro["seed"])
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_compare(spec: dict, base_dir: Path):
    """Turn a comparison spec document into ``compare`` arguments."""
    from .policies import policy_from_checkpoint
    from .toybench import ExpertPolicy, PolicySpec, RandomPolicy, env_from_dict
    from .trainer import load_checkpoint

    steps = int(spec.get("inference_steps", 10))
    policies = []
    for p in spec.get("policies", []):
        name = p["name"]
        if "checkpoint" in p:
            ckpt = load_checkpoint(base_dir / p["checkpoint"])
            pol = policy_from_checkpoint(ckpt, steps)
            policies.append(PolicySpec(name, lambda env, pol=pol: pol))
        elif p.get("kind") == "expert":
            policies.append(PolicySpec(name, lambda env, c=p.get("chunk", 8): ExpertPolicy(env, c)))
        elif p.get("kind") == "random":
            policies.append(PolicySpec(name, lambda env, c=p.get("chunk", 8): RandomPolicy(env, c)))
        else:
            raise ConfigError(f"policy {name!r} needs a checkpoint or kind expert/random")
    envs = []
    for e in spec.get("envs", []):
        e = dict(e)
        name = e.pop("name", e["kind"])
        envs.append((name, env_from_dict(e)))
    return policies, envs, [int(s) for s in spec.get("seeds", [0])], int(spec.get("episodes", 100)), \
        int(spec.get("execute_h", 4))


def cmd_compare(args):
    from .toybench import compare

    path = Path(args.spec)
    try:
        spec = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    _echo("compare", spec)
    try:
        policies, envs, seeds, episodes, execute_h = build_compare(spec, path.parent)
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc.args[0]!r}") from None
    text = compare(policies, envs, seeds, episodes, execute_h)
    Path(args.out).write_text(text)
    return 0


def cmd_verify_support(args):
    from .oracle import CategoricalPrior, run_support_experiment

    resolved = {"K": args.K, "taus": args.taus, "alpha": args.alpha, "trials": args.trials,
                "seed": args.seed, "entropy_floor": args.entropy_floor, "prior": args.prior}
    _echo("verify-support", resolved)
    if args.prior == "uniform":
        prior = CategoricalPrior.codec_bins(args.K)
    else:
        prior = CategoricalPrior.random(args.K, rngmod.derive(args.seed, "prior"))
    report = run_support_experiment(prior, args.taus, args.alpha, args.trials, args.entropy_floor, args.seed)
    if report.on_support_count != report.trials:
        raise GradcheckError("discrete decode left the support")
    text = json.dumps(report.to_dict(include_entropies=args.entropies), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(report.summary_table(), file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    from .gradcheck import check_gradients, random_problem

    resolved = {"kind": args.kind, "hidden": args.hidden, "bins": args.bins, "horizon": args.horizon,
                "action_dim": args.action_dim, "state_dim": args.state_dim, "coords": args.coords,
                "seed": args.seed, "tol": args.tol}
    _echo("gradcheck", resolved)
    rng = rngmod.derive(args.seed, "gradcheck")
    params, problem = random_problem(rng, args.kind, args.horizon, args.action_dim, args.bins,
                                     args.state_dim, hidden=args.hidden)
    res = check_gradients(params, problem, rng, args.coords)
    ok = bool(res.passed(args.tol))
    print(json.dumps({"passed": ok, "max_rel_error": res.max_rel_error,
                      "coords_checked": res.coords_checked}))
    if not ok:
        raise GradcheckError(f"max relative error {res.max_rel_error:.3g} >= {args.tol}")
    return 0


def cmd_warp(args):
    from .spherical import CameraIntrinsics, WarpSpec, read_ppm, warp_image, write_ppm

    r = _resolve(args, {"warp.yaw_deg": 0.0, "warp.pitch_deg": 0.0, "warp.depth": 1.0, "warp.fill": 0.0})
    _echo("warp", r)
    w = r["warp"]
    img = read_ppm(args.input)
    K = CameraIntrinsics.load(args.intrinsics)
    spec = WarpSpec.degrees(w["yaw_deg"], w["pitch_deg"], w["depth"], w["fill"])
    write_ppm(args.output, warp_image(img, K, spec))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    parser = _Parser(prog="quantdiff", description="Discrete-diffusion action policies on toy benchmarks.",
                     formatter_class=fmt)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap; all commands currently run single-threaded")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-demos", help="write scripted-expert demonstrations as JSONL", formatter_class=fmt)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    _add_env_opts(p)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("fit-stats", help="fit a quantile codec on a dataset", formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    _opt(p, "--lo", "codec.lo", float, 0.01, "lower percentile (fraction)")
    _opt(p, "--hi", "codec.hi", float, 0.99, "upper percentile (fraction)")
    _opt(p, "--bins", "codec.bins", int, 2048, "number of bins K")
    p.set_defaults(func=cmd_fit_stats)

    p = sub.add_parser("train", help="train a discrete denoiser or the MSE baseline", formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    _opt(p, "--model-kind", "model.kind", str, "discrete", "discrete or mse_baseline")
    _opt(p, "--horizon", "model.horizon", int, 8, "chunk horizon H")
    for k, default in TRAIN_DEFAULTS.items():
        if k in ("tau_kind", "tau_a", "tau_b"):
            continue
        _opt(p, "--" + k.replace("_", "-"), f"train.{k}", SCHEMA["train"][k], default, k)
    _opt(p, "--tau-kind", "tau.kind", str, "beta", "training tau law: beta or uniform")
    _opt(p, "--tau-a", "tau.a", float, 1.0, "beta a")
    _opt(p, "--tau-b", "tau.b", float, 1.5, "beta b")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="closed-loop evaluation of a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    _add_env_opts(p)
    _opt(p, "--episodes", "rollout.episodes", int, 200, "episodes")
    _opt(p, "--seed", "rollout.seed", int, 0, "seed")
    _opt(p, "--execute-h", "rollout.execute_h", int, 4, "actions executed per chunk")
    _opt(p, "--steps", "tau.steps", int, 10, "denoising iterations N")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("compare", help="policy x env x seed success table", formatter_class=fmt)
    p.add_argument("--spec", required=True, help="JSON comparison spec")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify-support", help="brute-force posterior support experiment", formatter_class=fmt)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--taus", type=_csv_floats, default=[0.5], help="comma-separated noise levels")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entropy-floor", type=float, default=0.1)
    p.add_argument("--prior", choices=("uniform", "random"), default="uniform")
    p.add_argument("--entropies", action="store_true", help="include per-trial entropies in the JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify_support)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients", formatter_class=fmt)
    p.add_argument("--kind", choices=("discrete", "mse_baseline"), default="discrete")
    p.add_argument("--hidden", type=_csv_ints, default=(16, 16))
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--action-dim", type=int, default=2)
    p.add_argument("--state-dim", type=int, default=3)
    p.add_argument("--coords", type=int, default=120)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("warp", help="spherical warp of a P6 image", formatter_class=fmt)
    p.add_argument("--input", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", default=None)
    _opt(p, "--yaw-deg", "warp.yaw_deg", float, 0.0, "yaw in degrees")
    _opt(p, "--pitch-deg", "warp.pitch_deg", float, 0.0, "pitch in degrees")
    _opt(p, "--depth", "warp.depth", float, 1.0, "unprojection depth")
    _opt(p, "--fill", "warp.fill", float, 0.0, "value for unobserved pixels")
    p.set_defaults(func=cmd_warp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QuantdiffError as exc:
        print(f"quantdiff {args.command}: {exc}", file=sys.stderr)
        return 2 if exc.numerical else 1
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"quantdiff {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
