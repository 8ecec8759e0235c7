"""Exact Bayesian analysis of the noising process on a small bin set.

A clean scalar action takes one of ``K`` values ``b_k`` with prior ``pi_k``.
The discrete model sees ``z = tau * alpha * e_k + (1 - tau) * eps`` in
``R^K``; its Bayes-optimal output is the posterior over ``k``. The
continuous MSE model's Bayes-optimal output is the posterior mean of
``b``. Decoding through the argmax always lands on a bin value, while the
posterior mean generally falls between bins whenever the posterior is
spread out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DegenerateTauError


@dataclass(frozen=True)
class CategoricalPrior:
    probs: np.ndarray
    bin_values: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        b = np.asarray(self.bin_values, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "bin_values", b)
        if p.ndim != 1 or p.shape != b.shape or p.size < 2:
            raise ConfigError("prior needs matching 1D probs and bin_values with K >= 2")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("prior probabilities must be positive and sum to 1")
        if np.any(np.diff(b) <= 0):
            raise ConfigError("bin values must be strictly increasing")

    @property
    def K(self) -> int:
        return self.probs.size

    @property
    def min_gap(self) -> float:
        return float(np.min(np.diff(self.bin_values)))

    @classmethod
    def uniform(cls, bin_values) -> "CategoricalPrior":
        b = np.asarray(bin_values, dtype=np.float64)
        return cls(np.full(b.size, 1.0 / b.size), b)

    @classmethod
    def codec_bins(cls, K: int, probs=None) -> "CategoricalPrior":
        """Bin centers of a ``K``-bin codec in normalized units."""
        b = (np.arange(K) + 0.5) * (2.0 / K) - 1.0
        if probs is None:
            return cls.uniform(b)
        return cls(np.asarray(probs, dtype=np.float64), b)

    @classmethod
    def random(cls, K: int, rng: np.random.Generator, concentration: float = 1.0) -> "CategoricalPrior":
        """Dirichlet probabilities over ``K`` codec bin centers."""
        p = rng.dirichlet(np.full(K, concentration))
        p = np.maximum(p, 1e-12)
        return cls.codec_bins(K, p / p.sum())


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise DegenerateTauError(f"posterior is degenerate at tau={tau}; handle tau in {{0, 1}} analytically")


def log_joint(z: np.ndarray, prior: CategoricalPrior, tau: float, alpha: float) -> np.ndarray:
    """Unnormalized log ``pi_k * N(z; tau*alpha*e_k, (1-tau)^2 I)``, dropping k-free constants."""
    z = np.asarray(z, dtype=np.float64)
    c = tau * alpha
    # ||z - c e_k||^2 = ||z||^2 - 2 c z_k + c^2
    sq = np.sum(z * z, axis=-1, keepdims=True) - 2.0 * c * z + c * c
    return np.log(prior.probs) - sq / (2.0 * (1.0 - tau) ** 2)


def exact_posterior(z, prior: CategoricalPrior, tau: float, alpha: float) -> np.ndarray:
    """Posterior over the clean bin index, via log-sum-exp. ``z`` may be batched ``(..., K)``."""
    _check_tau(tau)
    lj = log_joint(z, prior, tau, alpha)
    lj = lj - lj.max(axis=-1, keepdims=True)
    w = np.exp(lj)
    return w / w.sum(axis=-1, keepdims=True)


def continuous_bayes(z, prior: CategoricalPrior, tau: float, alpha: float):
    """MSE-optimal denoiser output: the posterior mean of the bin value."""
    return exact_posterior(z, prior, tau, alpha) @ prior.bin_values


def support_distance(v, prior: CategoricalPrior):
    v = np.asarray(v, dtype=np.float64)
    return np.min(np.abs(v[..., None] - prior.bin_values), axis=-1)


def entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


@dataclass
class TauSupportStats:
    tau: float
    trials: int
    on_support_count: int
    qualified: int
    off_support_count: int
    off_support_fraction: Optional[float]
    min_off_distance: Optional[float]
    mean_off_distance: Optional[float]
    mean_entropy: float
    entropies: np.ndarray = field(repr=False)

    def to_dict(self, include_entropies: bool = True) -> dict:
        d = {k: getattr(self, k) for k in (
            "tau", "trials", "on_support_count", "qualified", "off_support_count",
            "off_support_fraction", "min_off_distance", "mean_off_distance", "mean_entropy")}
        if include_entropies:
            d["entropies"] = self.entropies.tolist()
        return d


@dataclass
class SupportReport:
    K: int
    alpha: float
    entropy_floor: float
    off_tolerance: float
    bin_values: list
    probs: list
    per_tau: list

    @property
    def trials(self) -> int:
        return sum(s.trials for s in self.per_tau)

    @property
    def on_support_count(self) -> int:
        return sum(s.on_support_count for s in self.per_tau)

    @property
    def qualified(self) -> int:
        return sum(s.qualified for s in self.per_tau)

    @property
    def off_support_fraction(self) -> Optional[float]:
        q = self.qualified
        return sum(s.off_support_count for s in self.per_tau) / q if q else None

    def to_dict(self, include_entropies: bool = True) -> dict:
        return {
            "K": self.K,
            "alpha": self.alpha,
            "entropy_floor": self.entropy_floor,
            "off_tolerance": self.off_tolerance,
            "bin_values": self.bin_values,
            "probs": self.probs,
            "trials": self.trials,
            "on_support_count": self.on_support_count,
            "qualified": self.qualified,
            "off_support_fraction": self.off_support_fraction,
            "per_tau": [s.to_dict(include_entropies) for s in self.per_tau],
        }

    def summary_table(self) -> str:
        def fmt(x, spec=".4f"):
            return "-" if x is None else format(x, spec)

        lines = [f"K={self.K} alpha={self.alpha} entropy_floor={self.entropy_floor} "
                 f"off_tol={self.off_tolerance:.4g}",
                 f"{'tau':>6} {'trials':>7} {'on_supp':>8} {'qualif':>7} {'off_frac':>9} "
                 f"{'min_dist':>9} {'mean_dist':>9} {'H_mean':>7}"]
        for s in self.per_tau:
            lines.append(f"{s.tau:>6.3f} {s.trials:>7d} {s.on_support_count:>8d} {s.qualified:>7d} "
                         f"{fmt(s.off_support_fraction):>9} {fmt(s.min_off_distance):>9} "
                         f"{fmt(s.mean_off_distance):>9} {s.mean_entropy:>7.4f}")
        return "\n".join(lines)


def run_support_experiment(
    prior: CategoricalPrior,
    tau_list: Sequence[float],
    alpha: float,
    trials: int,
    entropy_floor: float = 0.1,
    seed: int = 0,
    off_tol_frac: float = 0.05,
) -> SupportReport:
    """Sample noisy one-hot observations and compare both decoders against the support.

    Each trial draws from its own stream ``derive(seed, "trial", tau_index, i)``.
    A trial qualifies for the continuous statistic when its posterior
    entropy exceeds ``entropy_floor``; it counts as off-support when the
    posterior mean is further than ``off_tol_frac * min_gap`` from every bin.
    """
    if trials < 1:
        raise ConfigError(f"need at least one trial, got {trials}")
    tol = off_tol_frac * prior.min_gap
    support = prior.bin_values
    cdf = np.cumsum(prior.probs)
    per_tau = []
    for ti, tau in enumerate(tau_list):
        _check_tau(tau)
        ks = np.empty(trials, dtype=np.int64)
        eps = np.empty((trials, prior.K))
        for i in range(trials):
            r = rngmod.derive(seed, "trial", ti, i)
            ks[i] = min(int(np.searchsorted(cdf, r.uniform(), side="right")), prior.K - 1)
            eps[i] = r.standard_normal(prior.K)
        z = (1.0 - tau) * eps
        z[np.arange(trials), ks] += tau * alpha
        post = exact_posterior(z, prior, tau, alpha)
        decoded = support[np.argmax(post, axis=1)]
        on_support = int(np.sum(np.any(decoded[:, None] == support[None, :], axis=1)))
        mean = post @ support
        dist = support_distance(mean, prior)
        H = entropy(post)
        q = H > entropy_floor
        nq = int(q.sum())
        off = int(np.sum(dist[q] > tol))
        per_tau.append(TauSupportStats(
            tau=float(tau), trials=trials, on_support_count=on_support, qualified=nq,
            off_support_count=off,
            off_support_fraction=off / nq if nq else None,
            min_off_distance=float(dist[q].min()) if nq else None,
            mean_off_distance=float(dist[q].mean()) if nq else None,
            mean_entropy=float(H.mean()), entropies=H,
        ))
    return SupportReport(prior.K, alpha, entropy_floor, tol, support.tolist(), prior.probs.tolist(), per_tau)
