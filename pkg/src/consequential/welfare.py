"""Welfare costs, immediate utilities, the S-value and KL fidelity estimates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .core import FeatureMatrix, Ranking, Trajectory, TrajectoryBatch, ordering_from_ranking
from .plackett_luce import trajectory_log_ratio

COST_KINDS = ("topk_feature", "topk_latent_true")
UTILITY_KINDS = ("topk_feature_sum", "top1_feature")


@dataclass(frozen=True)
class CostSpec:
    kind: str
    K: int
    feature_index: int = 0
    latent_field: str = "misinfo"
    normalize_by_T: bool = True

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.normalize_by_T:
            raise ValueError("only T-normalized costs are supported")


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    K: int = 1
    feature_index: int = 0

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")


# Names used by experiment configs.
COST_SPECS = {
    "misinfo_top3": CostSpec("topk_feature", 3, feature_index=0),
    "true_misinfo_top3": CostSpec("topk_latent_true", 3, latent_field="misinfo"),
    "uncivility_top6": CostSpec("topk_feature", 6, feature_index=1),
    "unreliability_top6": CostSpec("topk_feature", 6, feature_index=2),
}
UTILITY_SPECS = {
    "virality_top3": UtilitySpec("topk_feature_sum", 3, feature_index=1),
    "recency_top1": UtilitySpec("top1_feature", 1, feature_index=0),
}


def cost_spec(name: str | CostSpec) -> CostSpec:
    if isinstance(name, CostSpec):
        return name
    try:
        return COST_SPECS[name]
    except KeyError:
        raise KeyError(f"unknown cost {name!r}; expected one of {sorted(COST_SPECS)}") from None


def utility_spec(name: str | UtilitySpec) -> UtilitySpec:
    if isinstance(name, UtilitySpec):
        return name
    try:
        return UTILITY_SPECS[name]
    except KeyError:
        raise KeyError(f"unknown utility {name!r}; expected one of {sorted(UTILITY_SPECS)}") from None


# -- single step -----------------------------------------------------------


def _top_items(ranking, K: int, n: int) -> np.ndarray:
    if K > n:
        raise ValueError(f"K={K} exceeds the {n} ranked items")
    order = ordering_from_ranking(ranking).as_array() - 1
    if order.size != n:
        raise ValueError(f"ranking of {order.size} items for {n} feature rows")
    return order[:K]


def _column(x: np.ndarray, j: int) -> np.ndarray:
    if not 0 <= j < x.shape[1]:
        raise IndexError(f"feature index {j} out of range for p={x.shape[1]}")
    return x[:, j]


def step_cost(spec: CostSpec, features, ranking, latent: Mapping | None = None) -> float:
    """Cost of one ranked step.

    ``latent`` maps item ids to per-item dicts and is only read for
    ``topk_latent_true`` costs.
    """
    fm = features if isinstance(features, FeatureMatrix) else FeatureMatrix(features)
    top = _top_items(ranking, spec.K, fm.n)
    if spec.kind == "topk_feature":
        return float(_column(fm.rows, spec.feature_index)[top].sum())
    total = 0.0
    for i in top:
        iid = fm.item_ids[i]
        try:
            total += float(latent[iid][spec.latent_field])
        except (KeyError, TypeError):
            raise KeyError(f"missing latent {spec.latent_field!r} for item {iid!r}") from None
    return total


def immediate_utility(spec: UtilitySpec, features, ranking) -> float:
    fm = features if isinstance(features, FeatureMatrix) else FeatureMatrix(features)
    K = 1 if spec.kind == "top1_feature" else spec.K
    top = _top_items(ranking, K, fm.n)
    return float(_column(fm.rows, spec.feature_index)[top].sum())


# -- trajectory level ------------------------------------------------------
#
# Early replay steps can hold fewer than K items; the top-K sums then run over
# the items that exist.


def _in_top(traj, K: int) -> np.ndarray:
    return traj.mask & (traj.positions >= 1) & (traj.positions <= K)


def _step_values(spec: CostSpec, traj) -> np.ndarray:
    if spec.kind == "topk_feature":
        if not 0 <= spec.feature_index < traj.p:
            raise IndexError(f"feature index {spec.feature_index} out of range for p={traj.p}")
        vals = traj.features[..., spec.feature_index]
    else:
        vals = traj.latent_at(spec.latent_field)
    return np.where(_in_top(traj, spec.K), vals, 0.0).sum(axis=-1)


def step_costs(spec: CostSpec, trajectory) -> np.ndarray:
    """Per-step costs for ``t = 0..T``, shape ``(..., T + 1)``."""
    return _step_values(spec, trajectory)


def trajectory_cost(spec: CostSpec, trajectory: Trajectory | TrajectoryBatch):
    """``(1/T) * sum_{t=1..T} step_cost``; float or ``(B,)`` array."""
    if trajectory.T < 1:
        raise ValueError("trajectory cost needs T >= 1")
    c = _step_values(spec, trajectory)[..., 1:].mean(axis=-1)
    return float(c) if np.ndim(c) == 0 else c


def true_trajectory_cost(trajectory, K: int = 3):
    return trajectory_cost(CostSpec("topk_latent_true", K), trajectory)


def utility_curve(spec: UtilitySpec, trajectory) -> np.ndarray:
    """Immediate utility at every step ``t = 0..T``."""
    K = 1 if spec.kind == "top1_feature" else spec.K
    vals = trajectory.features[..., spec.feature_index]
    return np.where(_in_top(trajectory, K), vals, 0.0).sum(axis=-1)


def mean_utility(spec: UtilitySpec, trajectory):
    """Per-trajectory average of the immediate utility over ``t = 1..T``."""
    u = utility_curve(spec, trajectory)[..., 1:].mean(axis=-1)
    return float(u) if np.ndim(u) == 0 else u


def misinfo_fraction(trajectory, group, K: int = 3, *, true: bool = False,
                     group_field: str = "virality", value_field: str | None = None):
    """Misinformation fraction in the top K restricted to one group of items.

    ``group`` selects items by their latent ``group_field`` value (e.g.
    virality 10 for viral posts). At each step the group's summed
    misinformation probability (or true flags with ``true=True``) in the top
    K is divided by the number of group items there; steps without group
    items in the top K are skipped. Returns NaN when no step qualifies.
    """
    value_field = value_field or ("misinfo" if true else "misinfo_prob")
    in_group = np.isclose(trajectory.latent_at(group_field), group) & trajectory.mask
    sel = _in_top(trajectory, K) & in_group
    sel = sel[..., 1:, :]
    vals = trajectory.latent_at(value_field)[..., 1:, :]
    count = sel.sum(axis=-1)
    total = np.where(sel, vals, 0.0).sum(axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        per_step = total / np.where(count > 0, count, np.nan)
        out = np.nanmean(per_step, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def s_value(params, original, trajectory, lam: float, spec: CostSpec):
    """``c(tau) + lam * log(p_params(tau) / p_original(tau))``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    c = trajectory_cost(spec, trajectory)
    if lam == 0:
        return c
    return c + lam * trajectory_log_ratio(params, original, trajectory)


@dataclass(frozen=True)
class KLEstimate:
    mean: float
    stderr: float
    n: int


def estimate_kl(params, original, trajectories: TrajectoryBatch | Iterable) -> KLEstimate:
    """Monte-Carlo ``KL(p_params || p_original)`` from draws of ``p_params``.

    ``trajectories`` may be a batch, a single trajectory, or an iterable of
    either; the per-trajectory log ratios are pooled in input order.
    """
    if isinstance(trajectories, (Trajectory, TrajectoryBatch)):
        trajectories = [trajectories]
    parts = [np.atleast_1d(trajectory_log_ratio(params, original, t)) for t in trajectories]
    if not parts or sum(p.size for p in parts) == 0:
        raise ValueError("KL estimate needs at least one trajectory")
    r = np.concatenate(parts)
    stderr = float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0
    return KLEstimate(float(r.mean()), stderr, int(r.size))
