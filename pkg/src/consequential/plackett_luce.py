"""Linear-score Plackett-Luce ranking policies.

The quality score of item ``i`` is ``theta @ X_i``. A ranking is drawn by
repeatedly picking the next item with probability proportional to the
exponentiated scores of the items not yet placed; sampling here uses the
equivalent Gumbel-max construction (perturb every score with standard Gumbel
noise and sort descending).

The ``*_arrays`` kernels work on arbitrary leading batch axes with 0-based
orderings padded by ``-1``; the object-level functions wrap them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    FeatureMatrix,
    Ranking,
    Trajectory,
    TrajectoryBatch,
    as_generator,
    orderings_from_positions,
    ranking_from_ordering,
)


@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise ValueError(f"policy weights must be finite, got {theta}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    def __eq__(self, other):
        return isinstance(other, PolicyParams) and np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash(self.theta.tobytes())

    def __repr__(self):
        return f"PolicyParams({self.theta.tolist()})"

    def to_json(self) -> str:
        return json.dumps([float(v) for v in self.theta])

    @classmethod
    def from_json(cls, text: str) -> "PolicyParams":
        values = json.loads(text)
        if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
            raise ValueError("policy parameters must be a flat JSON array of numbers")
        return cls(np.asarray(values, dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PolicyParams":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _theta(params) -> np.ndarray:
    return params.theta if isinstance(params, PolicyParams) else np.asarray(params, dtype=float)


def _rows(features) -> np.ndarray:
    return features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)


def _check_dims(theta: np.ndarray, features: np.ndarray):
    if features.shape[-1] != theta.shape[0]:
        raise ValueError(
            f"dimension mismatch: {theta.shape[0]} weights for {features.shape[-1]} features"
        )


# -- array kernels ---------------------------------------------------------


def _gather(values: np.ndarray, orderings: np.ndarray, fill):
    valid = orderings >= 0
    idx = np.where(valid, orderings, 0)
    if values.ndim == orderings.ndim:
        out = np.take_along_axis(values, idx, axis=-1)
        return np.where(valid, out, fill), valid
    out = np.take_along_axis(values, idx[..., None], axis=-2)
    return np.where(valid[..., None], out, fill), valid


def _suffix_logsumexp(ordered_scores: np.ndarray) -> np.ndarray:
    rev = ordered_scores[..., ::-1]
    return np.logaddexp.accumulate(rev, axis=-1)[..., ::-1]


def log_prob_arrays(scores: np.ndarray, orderings: np.ndarray) -> np.ndarray:
    """Log-probability of each ordering given scores; sums over the last axis."""
    s, valid = _gather(scores, orderings, -np.inf)
    lse = _suffix_logsumexp(s)
    with np.errstate(invalid="ignore"):
        terms = np.where(valid, s - lse, 0.0)
    return terms.sum(axis=-1)


def score_arrays(features: np.ndarray, scores: np.ndarray, orderings: np.ndarray) -> np.ndarray:
    """Gradient of :func:`log_prob_arrays` with respect to theta.

    For stage ``k`` the softmax over the remaining items gives the expected
    feature row; summing those expectations over stages, item ``k'`` collects
    weight ``sum_{k <= k'} exp(s_k' - lse_k)``, computed with a running
    log-sum-exp of ``-lse`` so every exponent stays nonpositive.
    """
    s, valid = _gather(scores, orderings, -np.inf)
    x, _ = _gather(features, orderings, 0.0)
    lse = _suffix_logsumexp(s)
    neg_lse = np.where(valid, -lse, -np.inf)
    cum = np.logaddexp.accumulate(neg_lse, axis=-1)
    with np.errstate(invalid="ignore"):
        coef = np.where(valid, np.exp(s + cum), 0.0)
    weight = valid.astype(float) - coef
    return np.einsum("...k,...kp->...p", weight, x)


def sample_orderings(scores: np.ndarray, mask: np.ndarray, rng) -> np.ndarray:
    """Gumbel-max Plackett-Luce draws; returns 0-based orderings padded with -1."""
    if not np.all(np.isfinite(scores[mask])):
        raise FloatingPointError("non-finite quality score")
    rng = as_generator(rng)
    keys = np.where(mask, scores + rng.gumbel(size=scores.shape), -np.inf)
    order = np.argsort(-keys, axis=-1, kind="stable")
    valid = np.take_along_axis(mask, order, axis=-1)
    return np.where(valid, order, -1)


# -- single-step API -------------------------------------------------------


def quality_scores(params, features) -> np.ndarray:
    theta, x = _theta(params), _rows(features)
    _check_dims(theta, x)
    return x @ theta


def sample_ranking(params, features, rng) -> Ranking:
    scores = quality_scores(params, features)
    order = sample_orderings(scores, np.ones(scores.shape, bool), rng)
    return ranking_from_ordering(tuple(order + 1))


def _ordering0(ranking) -> np.ndarray:
    if not isinstance(ranking, Ranking):
        ranking = Ranking(tuple(ranking))
    pos = ranking.as_array()
    return orderings_from_positions(pos, np.ones(pos.shape, bool))


def log_prob(params, features, ranking) -> float:
    scores = quality_scores(params, features)
    order = _ordering0(ranking)
    if order.shape != scores.shape:
        raise ValueError(f"ranking of {order.size} items for {scores.size} feature rows")
    return float(log_prob_arrays(scores, order))


def score_function(params, features, ranking) -> np.ndarray:
    x = _rows(features)
    scores = quality_scores(params, x)
    order = _ordering0(ranking)
    if order.shape != scores.shape:
        raise ValueError(f"ranking of {order.size} items for {scores.size} feature rows")
    return score_arrays(x, scores, order)


# -- trajectory level ------------------------------------------------------


def _steps_after_initial(traj):
    feats = traj.features[..., 1:, :, :]
    order = traj.orderings[..., 1:, :]
    return feats, order


def _reduce(value):
    return float(value) if np.ndim(value) == 0 else value


def trajectory_log_prob(params, trajectory: Trajectory | TrajectoryBatch):
    """Sum of per-step log-probabilities for ``t = 1..T`` (step 0 is given).

    Returns a float for a single trajectory and a ``(B,)`` array for a batch.
    """
    theta = _theta(params)
    _check_dims(theta, trajectory.features)
    feats, order = _steps_after_initial(trajectory)
    lp = log_prob_arrays(feats @ theta, order)
    return _reduce(lp.sum(axis=-1))


def trajectory_score(params, trajectory: Trajectory | TrajectoryBatch) -> np.ndarray:
    """``grad_theta log p_theta(tau)``: shape ``(p,)`` or ``(B, p)``."""
    theta = _theta(params)
    _check_dims(theta, trajectory.features)
    feats, order = _steps_after_initial(trajectory)
    return score_arrays(feats, feats @ theta, order).sum(axis=-2)


def trajectory_log_ratio(params, original, trajectory: Trajectory | TrajectoryBatch):
    """``log p_params(tau) - log p_original(tau)``; user-dynamics terms cancel."""
    theta, theta0 = _theta(params), _theta(original)
    if theta.shape != theta0.shape:
        raise ValueError(f"dimension mismatch: {theta.shape[0]} vs {theta0.shape[0]} weights")
    feats, order = _steps_after_initial(trajectory)
    _check_dims(theta, feats)
    diff = log_prob_arrays(feats @ theta, order) - log_prob_arrays(feats @ theta0, order)
    return _reduce(diff.sum(axis=-1))
