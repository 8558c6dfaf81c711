"""Trajectory-level sampling from the optimal consequential model.

Rollouts from the original model are weighted by ``exp(-c(tau) / lam)`` and
resampled. The weights are computed in the log domain with a max shift, so
they stay normalized for arbitrarily small ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import TrajectoryBatch, as_generator
from .env import rollout
from .welfare import CostSpec, trajectory_cost


def _check_lambda(lam: float):
    if not lam > 0:
        raise ValueError(f"the optimal sampler needs lambda > 0, got {lam}")


def log_normalizer_from_costs(costs, lam: float) -> float:
    """``log((1/k) sum_i exp(-c_i / lam))``."""
    _check_lambda(lam)
    c = np.asarray(costs, dtype=float)
    if np.isinf(lam):
        return 0.0
    return float(logsumexp(-c / lam) - np.log(c.size))


def estimate_normalizer(original, env, lam: float, kappa: int, spec: CostSpec, rng, T: int | None = None) -> float:
    """Monte-Carlo estimate of the tilted normalizer over ``kappa`` rollouts."""
    _check_lambda(lam)
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    batch = rollout(original, env, T, rng, batch=kappa)
    return float(np.exp(log_normalizer_from_costs(trajectory_cost(spec, batch), lam)))


def importance_weights(costs, lam: float) -> np.ndarray:
    """Normalized weights ``w_i ~ exp(-c_i / lam)``."""
    _check_lambda(lam)
    c = np.asarray(costs, dtype=float).reshape(-1)
    if c.size == 0:
        raise ValueError("need at least one cost")
    if not np.all(np.isfinite(c)):
        raise FloatingPointError("non-finite cost")
    if np.isinf(lam):
        return np.full(c.size, 1.0 / c.size)
    logw = -c / lam
    w = np.exp(logw - logsumexp(logw))
    total = w.sum()
    if not total > 0:
        raise FloatingPointError("all importance weights underflowed")
    return w / total


def resample_indices(weights, rng, method: str = "systematic", size: int | None = None) -> np.ndarray:
    """Indices drawn by stratified resampling on ``size`` equal strata.

    ``systematic`` shares one uniform offset across the strata, which pins
    each count to ``floor(B w_i)`` or ``ceil(B w_i)``; ``independent`` draws
    one uniform per stratum.
    """
    w = np.asarray(weights, dtype=float)
    B = w.size if size is None else size
    rng = as_generator(rng)
    if method == "systematic":
        u = (rng.random() + np.arange(B)) / B
    elif method == "independent":
        u = (rng.random(B) + np.arange(B)) / B
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    cum = np.cumsum(w)
    cum /= cum[-1]
    # snap to a fine grid so integral boundaries such as B * w = 5 stay exact
    edges = np.rint(cum * B * 2**30) / 2**30
    return np.minimum(np.searchsorted(edges, u * B, side="right"), w.size - 1)


def stratified_resample(samples, weights, rng, method: str = "systematic"):
    """Resample ``samples`` (a batch or a sequence) to the same size."""
    w = np.asarray(weights, dtype=float)
    if len(samples) != w.size:
        raise ValueError(f"{len(samples)} samples but {w.size} weights")
    if not np.isclose(w.sum(), 1.0, atol=1e-9):
        raise ValueError("weights must be normalized")
    idx = resample_indices(w, rng, method)
    if isinstance(samples, TrajectoryBatch):
        return samples.take(idx)
    if isinstance(samples, np.ndarray):
        return samples[idx]
    return [samples[i] for i in idx]


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("effective sample size of an empty weight vector")
    return float(w.sum() ** 2 / np.square(w).sum())


@dataclass(frozen=True)
class OptimalSample:
    trajectories: TrajectoryBatch  # resampled
    raw: TrajectoryBatch
    raw_costs: np.ndarray
    weights: np.ndarray
    indices: np.ndarray
    normalizer: float
    ess: float
    raw_draws: int

    @property
    def draws_per_effective_sample(self) -> float:
        return self.raw_draws / self.ess


def tilt(raw: TrajectoryBatch, raw_costs, lam: float, rng, *, normalizer: float = float("nan"),
         raw_draws: int | None = None, method: str = "systematic") -> OptimalSample:
    """Weight and resample an existing batch of original-model rollouts."""
    w = importance_weights(raw_costs, lam)
    idx = resample_indices(w, rng, method)
    return OptimalSample(
        trajectories=raw.take(idx),
        raw=raw,
        raw_costs=np.asarray(raw_costs, dtype=float),
        weights=w,
        indices=idx,
        normalizer=normalizer,
        ess=effective_sample_size(w),
        raw_draws=len(raw) if raw_draws is None else raw_draws,
    )


def sample_optimal_trajectories(original, env, lam: float, B: int, kappa: int, spec: CostSpec, rng,
                                T: int | None = None, method: str = "systematic") -> OptimalSample:
    """``B`` trajectories approximately distributed as the tilted model.

    ``kappa`` extra rollouts estimate the normalizer (a diagnostic; the
    final weight normalization cancels it). ``raw_draws`` counts all
    ``kappa + B`` rollouts.
    """
    _check_lambda(lam)
    rng = as_generator(rng)
    G = estimate_normalizer(original, env, lam, kappa, spec, rng, T)
    raw = rollout(original, env, T, rng, batch=B)
    costs = trajectory_cost(spec, raw)
    return tilt(raw, costs, lam, rng, normalizer=G, raw_draws=kappa + B, method=method)
