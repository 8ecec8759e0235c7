"""Reproducible toy experiments: generate demos, fit a codec, train, evaluate.

The recipes here fix the budgets used by the acceptance suite and the demo
scripts, so both always run the same experiment. A recipe is pure data;
:func:`run_recipe` is deterministic given the recipe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .codec import ChunkLayout, QuantileCodec, fit_stats
from .policies import DiscreteDiffusionPolicy, MSEBaselinePolicy
from .toybench import RolloutRecord, RolloutReport, ToyEnv, gen_demos, make_env, rollout
from .trainer import TrainConfig, TrainState, train


@dataclass(frozen=True)
class ToyRecipe:
    env_kind: str
    bins: int
    horizon: int
    cfg: TrainConfig
    n_demos: int = 500
    execute_h: int = 4
    eval_episodes: int = 200
    eval_seed: int = 1
    seed: int = 0
    env_params: dict = field(default_factory=dict)

    def with_bins(self, bins: int) -> "ToyRecipe":
        return replace(self, bins=bins)


#: Two goals, one start: the demonstrations are an even mixture of two modes.
REACH = ToyRecipe(
    env_kind="two_goal_reach", bins=64, horizon=8,
    cfg=TrainConfig(total_steps=3000, hidden=(128, 128, 128), peak_lr=1e-3, final_lr=1e-4),
)

#: Exact 1-D placement; only fine bins can land inside the slot.
PRECISION = ToyRecipe(
    env_kind="precision_slot", bins=256, horizon=2, execute_h=2, n_demos=1000,
    cfg=TrainConfig(total_steps=12_000, hidden=(128, 128, 128), peak_lr=3e-3, final_lr=3e-4),
)

#: Long chunks on the reach task for the execution-horizon sweep {1, 5, 10, 20}.
REACH_LONG = replace(REACH, horizon=20, bins=32)
EXECUTE_SWEEP = (1, 5, 10, 20)


@dataclass
class TrainedToy:
    recipe: ToyRecipe
    kind: str
    env: ToyEnv
    codec: QuantileCodec
    state: TrainState
    metrics: str

    @property
    def layout(self) -> ChunkLayout:
        return self.state.ema.layout

    def policy(self, steps: Optional[int] = None):
        n = steps or 10
        if self.kind == "discrete":
            return DiscreteDiffusionPolicy(self.state.ema, self.codec, self.recipe.cfg.alpha, n)
        return MSEBaselinePolicy(self.state.ema, self.codec, n)


def make_dataset(recipe: ToyRecipe):
    env = make_env(recipe.env_kind, **recipe.env_params)
    episodes = gen_demos(env, recipe.n_demos, rngmod.derive(recipe.seed, "demos"))
    return env, episodes


def run_recipe(recipe: ToyRecipe, kind: str = "discrete", progress=None) -> TrainedToy:
    env, episodes = make_dataset(recipe)
    codec = fit_stats([e.actions for e in episodes], bins=recipe.bins)
    layout = ChunkLayout(recipe.horizon, env.action_dim)
    state, metrics = train(episodes, codec, layout, recipe.cfg, kind, progress)
    return TrainedToy(recipe, kind, env, codec, state, metrics)


def evaluate(trained: TrainedToy, execute_h: Optional[int] = None, steps: Optional[int] = None,
             episodes: Optional[int] = None) -> tuple[RolloutReport, RolloutRecord]:
    rec = RolloutRecord()
    r = trained.recipe
    report = rollout(trained.policy(steps), trained.env, episodes or r.eval_episodes,
                     execute_h or r.execute_h, r.eval_seed, rec)
    return report, rec


def on_lattice(actions: np.ndarray, codec: QuantileCodec) -> np.ndarray:
    """Per-row flag: every coordinate equals one of its dimension's bin centers exactly."""
    actions = np.atleast_2d(actions)
    centers = codec.bin_centers()
    ok = np.ones(len(actions), dtype=bool)
    for d in range(codec.dims):
        ok &= np.isin(actions[:, d], centers[:, d])
    return ok
