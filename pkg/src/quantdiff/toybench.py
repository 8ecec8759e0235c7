"""Desk-scale control tasks with scripted experts and a closed-loop rollout harness.

``two_goal_reach``
    Planar point starts at the origin; reaching either goal counts. The
    expert commits to one goal per episode, so the first chunk of every
    demonstration is drawn from a two-mode mixture.
``precision_slot``
    The observation is a 1D target; the commanded placement must land within
    half a slot width of it. Success hinges on action resolution.
``quantized_actuator``
    Planar reach to an observed goal where the actuator snaps commands to a
    grid (or an explicit per-dimension lattice) before executing them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .data import Episode
from .diffusion import Observation
from .errors import ConfigError

Policy = Callable[[Observation, np.random.Generator], np.ndarray]


def _capped_step(delta: np.ndarray, max_step: float) -> np.ndarray:
    dist = float(np.linalg.norm(delta))
    if dist <= max_step:
        return delta.copy()
    return delta * (max_step / dist)


@dataclass
class ToyEnv:
    horizon: int
    success_radius: float

    kind = "base"
    state_dim = 0
    action_dim = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"episode horizon must be >= 1, got {self.horizon}")
        if self.success_radius <= 0:
            raise ConfigError(f"success tolerance must be positive, got {self.success_radius}")

    # subclasses implement reset / execute / advance / success / expert_action
    def observe(self, state) -> Observation:
        return Observation(self.obs_vector(state))

    def execute(self, action: np.ndarray) -> np.ndarray:
        """Action actually applied by the hardware for a commanded ``action``."""
        return np.asarray(action, dtype=np.float64)

    def action_low_high(self):
        return -np.ones(self.action_dim), np.ones(self.action_dim)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "horizon": self.horizon, "success_radius": self.success_radius}


@dataclass
class TwoGoalReach(ToyEnv):
    horizon: int = 9
    success_radius: float = 0.1
    goals: tuple = ((-1.0, 1.0), (1.0, 1.0))
    max_step: float = 0.2

    kind = "two_goal_reach"
    state_dim = 2
    action_dim = 2

    def reset(self, rng):
        return {"pos": np.zeros(2), "goal": int(rng.integers(len(self.goals)))}

    def obs_vector(self, state):
        return state["pos"].copy()

    def advance(self, state, executed):
        return {**state, "pos": state["pos"] + executed}

    def success(self, state) -> bool:
        g = np.asarray(self.goals)
        return bool(np.min(np.linalg.norm(g - state["pos"], axis=1)) <= self.success_radius)

    def expert_action(self, state) -> np.ndarray:
        goal = np.asarray(self.goals[state["goal"]], dtype=np.float64)
        return _capped_step(goal - state["pos"], self.max_step)

    def expert_infer_goal(self, pos, rng) -> int:
        """Nearest goal; ties (the symmetric start) broken at random."""
        d = np.linalg.norm(np.asarray(self.goals) - pos, axis=1)
        best = np.flatnonzero(np.isclose(d, d.min()))
        return int(best[0] if len(best) == 1 else rng.choice(best))

    def action_low_high(self):
        return -self.max_step * np.ones(2), self.max_step * np.ones(2)

    def mode_first_actions(self) -> np.ndarray:
        """First expert action toward each goal, shape ``(n_goals, 2)``."""
        return np.stack([_capped_step(np.asarray(g, float), self.max_step) for g in self.goals])

    def to_dict(self):
        return {**super().to_dict(), "goals": [list(g) for g in self.goals], "max_step": self.max_step}


@dataclass
class PrecisionSlot(ToyEnv):
    horizon: int = 3
    success_radius: float = 0.01  # half of the slot width
    low: float = -1.0
    high: float = 1.0

    kind = "precision_slot"
    state_dim = 1
    action_dim = 1

    @property
    def slot_width(self) -> float:
        return 2.0 * self.success_radius

    def reset(self, rng):
        return {"target": float(rng.uniform(self.low, self.high)), "placed": None}

    def obs_vector(self, state):
        return np.array([state["target"]])

    def advance(self, state, executed):
        return {**state, "placed": float(executed[0])}

    def success(self, state) -> bool:
        return state["placed"] is not None and abs(state["placed"] - state["target"]) <= self.success_radius

    def expert_action(self, state) -> np.ndarray:
        return np.array([state["target"]])

    def action_low_high(self):
        return np.array([self.low]), np.array([self.high])

    def to_dict(self):
        return {**super().to_dict(), "low": self.low, "high": self.high}


@dataclass
class QuantizedActuator(ToyEnv):
    horizon: int = 12
    success_radius: float = 0.1
    grid_step: float = 0.05
    max_step: float = 0.2
    goal_range: float = 1.0
    lattice: Optional[Sequence[Sequence[float]]] = None

    kind = "quantized_actuator"
    state_dim = 4
    action_dim = 2

    def __post_init__(self):
        super().__post_init__()
        if self.grid_step <= 0:
            raise ConfigError(f"grid_step must be positive, got {self.grid_step}")

    def reset(self, rng):
        goal = rng.uniform(-self.goal_range, self.goal_range, size=2)
        return {"pos": np.zeros(2), "goal": goal}

    def obs_vector(self, state):
        return np.concatenate([state["pos"], state["goal"]])

    def snap_to_grid(self, action):
        return np.round(np.asarray(action, dtype=np.float64) / self.grid_step) * self.grid_step

    def execute(self, action):
        action = np.asarray(action, dtype=np.float64)
        if self.lattice is None:
            return self.snap_to_grid(action)
        out = np.empty_like(action)
        for d, values in enumerate(self.lattice):
            values = np.asarray(values, dtype=np.float64)
            out[d] = values[np.argmin(np.abs(values - action[d]))]
        return out

    def advance(self, state, executed):
        return {**state, "pos": state["pos"] + executed}

    def success(self, state) -> bool:
        return bool(np.linalg.norm(state["goal"] - state["pos"]) <= self.success_radius)

    def expert_action(self, state) -> np.ndarray:
        return self.snap_to_grid(_capped_step(state["goal"] - state["pos"], self.max_step))

    def action_low_high(self):
        return -self.max_step * np.ones(2), self.max_step * np.ones(2)

    def to_dict(self):
        return {**super().to_dict(), "grid_step": self.grid_step, "max_step": self.max_step,
                "goal_range": self.goal_range}


ENVS = {cls.kind: cls for cls in (TwoGoalReach, PrecisionSlot, QuantizedActuator)}


def make_env(kind: str, **params) -> ToyEnv:
    try:
        cls = ENVS[kind]
    except KeyError:
        raise ConfigError(f"unknown env kind {kind!r}; choose from {sorted(ENVS)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc}") from None


def env_from_dict(doc: dict) -> ToyEnv:
    doc = dict(doc)
    kind = doc.pop("kind")
    if "goals" in doc:
        doc["goals"] = tuple(tuple(g) for g in doc["goals"])
    return make_env(kind, **doc)


# ---------------------------------------------------------------------------
# demonstrations


def gen_demos(env: ToyEnv, n_episodes: int, rng: np.random.Generator) -> list[Episode]:
    """Roll the scripted expert for ``env.horizon`` steps per episode.

    Episodes keep running after success (with the expert's zero or repeated
    actions), so every episode has exactly ``env.horizon`` steps.
    """
    if n_episodes < 1:
        raise ConfigError(f"need at least one episode, got {n_episodes}")
    episodes = []
    for _ in range(n_episodes):
        state = env.reset(rng)
        obs, acts = [], []
        for _ in range(env.horizon):
            a = env.expert_action(state)
            obs.append(env.obs_vector(state))
            acts.append(a)
            state = env.advance(state, env.execute(a))
        episodes.append(Episode(np.array(obs), np.array(acts)))
    return episodes


# ---------------------------------------------------------------------------
# policies that do not need training


class ExpertPolicy:
    """Scripted expert exposed through the observation-only policy interface."""

    def __init__(self, env: ToyEnv, chunk: int = 8):
        self.env = env
        self.chunk = chunk

    def _state_from_obs(self, obs, rng):
        s = obs.state
        env = self.env
        if env.kind == "two_goal_reach":
            return {"pos": s.copy(), "goal": env.expert_infer_goal(s, rng)}
        if env.kind == "precision_slot":
            return {"target": float(s[0]), "placed": None}
        return {"pos": s[:2].copy(), "goal": s[2:].copy()}

    def __call__(self, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        state = self._state_from_obs(obs, rng)
        out = []
        for _ in range(self.chunk):
            a = self.env.expert_action(state)
            out.append(a)
            state = self.env.advance(state, self.env.execute(a))
        return np.array(out)


class RandomPolicy:
    """Uniform actions over the env's nominal action box."""

    def __init__(self, env: ToyEnv, chunk: int = 8):
        self.low, self.high = env.action_low_high()
        self.chunk = chunk

    def __call__(self, obs, rng):
        return rng.uniform(self.low, self.high, size=(self.chunk, len(self.low)))


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutReport:
    env: str
    episodes: int
    successes: int
    success_rate: float
    mean_steps_to_success: Optional[float]
    seed: int
    flagged: int = 0

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "episodes": self.episodes,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_steps_to_success": self.mean_steps_to_success,
            "seed": self.seed,
            "flagged": self.flagged,
        }


@dataclass
class RolloutRecord:
    """Optional sink for everything a policy emitted during rollouts."""

    chunks: list = field(default_factory=list)  # every returned chunk (H, D)
    commanded: list = field(default_factory=list)  # each executed step's command
    executed: list = field(default_factory=list)  # what the actuator applied
    first_actions: list = field(default_factory=list)  # first action of each episode


def rollout(policy: Policy, env: ToyEnv, n_episodes: int, execute_h: int, seed: int = 0,
            record: Optional[RolloutRecord] = None) -> RolloutReport:
    """Closed-loop evaluation with replanning every ``execute_h`` steps.

    Episode ``e`` uses the stream ``derive(seed, "episode", e)`` for both the
    environment reset and the policy, so reports do not depend on the order
    or grouping in which episodes are run.
    """
    if execute_h < 1:
        raise ConfigError(f"execute_h must be >= 1, got {execute_h}")
    successes, flagged, steps_to_success = 0, 0, []
    for e in range(n_episodes):
        rng = rngmod.derive(seed, "episode", e)
        state = env.reset(rng)
        t, done, failed = 0, False, False
        first = True
        while t < env.horizon and not done and not failed:
            chunk = np.asarray(policy(env.observe(state), rng), dtype=np.float64)
            if chunk.ndim != 2 or chunk.shape[1] != env.action_dim:
                raise ConfigError(f"policy returned chunk of shape {chunk.shape}")
            if execute_h > len(chunk):
                raise ConfigError(f"execute_h={execute_h} exceeds the chunk length {len(chunk)}")
            if record is not None:
                record.chunks.append(chunk)
                if first:
                    record.first_actions.append(chunk[0])
            first = False
            for a in chunk[:execute_h]:
                if not np.all(np.isfinite(a)):
                    failed = True
                    flagged += 1
                    break
                applied = env.execute(a)
                if record is not None:
                    record.commanded.append(a)
                    record.executed.append(applied)
                state = env.advance(state, applied)
                t += 1
                if env.success(state):
                    done = True
                    break
                if t >= env.horizon:
                    break
        if done:
            successes += 1
            steps_to_success.append(t)
    return RolloutReport(
        env=env.kind,
        episodes=n_episodes,
        successes=successes,
        success_rate=successes / n_episodes if n_episodes else 0.0,
        mean_steps_to_success=float(np.mean(steps_to_success)) if steps_to_success else None,
        seed=seed,
        flagged=flagged,
    )


@dataclass
class PolicySpec:
    """Named policy factory; ``make(env)`` returns a policy for that env."""

    name: str
    make: Callable[[ToyEnv], Policy]


COMPARE_COLUMNS = ("policy", "env", "seed", "success_rate", "episodes")


def compare(policy_specs: Sequence[PolicySpec], env_specs: Sequence[tuple[str, ToyEnv]],
            seeds: Sequence[int], episodes: int = 100, execute_h: int = 4) -> str:
    """Run every (policy, env, seed) combination and return the table as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for spec in policy_specs:
        for env_name, env in env_specs:
            policy = spec.make(env)
            for seed in seeds:
                rep = rollout(policy, env, episodes, execute_h, seed)
                w.writerow([spec.name, env_name, seed, repr(rep.success_rate), rep.episodes])
    return buf.getvalue()
