"""Plain-text ``section.key = value`` configuration files.

Example::

    # toy training run
    train.total_steps = 3000
    train.peak_lr = 1e-3
    env.kind = two_goal_reach
    tau.a = 1.0

Values in a file are overridden by command-line flags. Unknown keys and
unparseable values are rejected with the file, line and key in the message.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _tuple_of(cast):
    def parse(text: str):
        text = text.strip().strip("()[]")
        return tuple(cast(p) for p in text.replace(",", " ").split())

    return parse


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "train": {
        "total_steps": int, "batch_size": int, "peak_lr": float, "final_lr": float,
        "warmup_steps": int, "clip_norm": float, "ema_decay": float, "seed": int,
        "weight_decay": float, "betas": _tuple_of(float), "eps": float, "alpha": float,
        "hidden": _tuple_of(int),
    },
    "model": {"horizon": int, "kind": str},
    "tau": {"kind": str, "a": float, "b": float, "steps": int},
    "env": {
        "kind": str, "horizon": int, "success_radius": float, "max_step": float,
        "grid_step": float, "goal_range": float, "low": float, "high": float,
    },
    "rollout": {"episodes": int, "execute_h": int, "seed": int},
    "warp": {"yaw_deg": float, "pitch_deg": float, "depth": float, "fill": float},
    "codec": {"lo": float, "hi": float, "bins": int},
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        lhs, value = (p.strip() for p in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"{source}:{lineno}: key {lhs!r} has no section")
        section, key = lhs.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {lhs!r}")
        try:
            out.setdefault(section, {})[key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {lhs!r}: {exc}") from None
    return out


def load_config(path: str | Path | None) -> dict[str, dict[str, Any]]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    return parse_config_text(text, str(path))


def merge(file_cfg: dict, overrides: dict) -> dict:
    """Overlay ``{"section.key": value}`` flag overrides (``None`` means unset) on a parsed file."""
    out = {s: dict(v) for s, v in file_cfg.items()}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {dotted!r}")
        out.setdefault(section, {})[key] = value
    return out
