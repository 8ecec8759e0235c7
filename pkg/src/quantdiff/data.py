"""Episode datasets stored as JSON lines.

One episode per line::

    {"observations": [[...], ...], "actions": [[...], ...], "task_id": 0}

``task_id`` is optional and defaults to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError


@dataclass
class Episode:
    observations: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T, D)
    task_id: int = 0

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        if len(self.observations) != len(self.actions):
            raise DatasetError(
                f"episode has {len(self.observations)} observations but {len(self.actions)} actions"
            )
        if not (np.all(np.isfinite(self.observations)) and np.all(np.isfinite(self.actions))):
            raise DatasetError("episode contains non-finite values")

    def __len__(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "observations": self.observations.tolist(),
            "actions": self.actions.tolist(),
            "task_id": int(self.task_id),
        }


def write_episodes(path: str | Path, episodes: Iterable[Episode]) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict()) + "\n")


def read_episodes(path: str | Path) -> list[Episode]:
    episodes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc.msg}") from None
            for key in ("observations", "actions"):
                if key not in doc:
                    raise DatasetError(f"{path}:{lineno}: missing key {key!r}")
            try:
                episodes.append(
                    Episode(doc["observations"], doc["actions"], int(doc.get("task_id", 0)))
                )
            except (DatasetError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not episodes:
        raise DatasetError(f"{path}: no episodes")
    return episodes


def make_chunks(episodes: Sequence[Episode], horizon: int):
    """Slice every episode step into an (observation, action chunk) pair.

    Chunks running past the episode end are padded by repeating the last
    action. Returns ``(states, task_ids, chunks)`` with shapes
    ``(N, state_dim)``, ``(N,)`` and ``(N, horizon, D)``.
    """
    states, tasks, chunks = [], [], []
    for ep in episodes:
        T = len(ep)
        idx = np.minimum(np.arange(T)[:, None] + np.arange(horizon)[None, :], T - 1)
        chunks.append(ep.actions[idx])
        states.append(ep.observations)
        tasks.append(np.full(T, ep.task_id, dtype=np.int64))
    return np.concatenate(states), np.concatenate(tasks), np.concatenate(chunks)
