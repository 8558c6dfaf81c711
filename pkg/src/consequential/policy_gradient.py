"""Score-function training of Plackett-Luce consequential ranking models.

Each iteration draws a fresh minibatch from the current policy and steps
against a likelihood-ratio estimate of ``grad E[S]``: by default each S is
centred on the mean of the others (``TrainConfig.baseline``), otherwise the
plain ``mean_i (S_i + lam) * grad log p_theta(tau_i)`` is used. The update
descends because ``E[S]`` is minimized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import SeedSpec, Trajectory, TrajectoryBatch
from .plackett_luce import PolicyParams, trajectory_log_ratio, trajectory_score
from .welfare import CostSpec, trajectory_cost


@dataclass(frozen=True)
class TrainConfig:
    lam: float
    iterations: int = 400
    batch_size: int = 50
    learning_rate: float = 1.0
    schedule: str = "constant"  # or "inv_sqrt"
    init: str = "copy_original"  # or "zeros"
    seed: int = 0
    baseline: bool = True
    max_grad_norm: float = 1e3
    direction: str = "descent"  # "ascent" reproduces the literal +gamma update
    lambda_scaled_lr: bool = True
    param_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0 <= self.lam < np.inf:
            raise ValueError("lambda must be finite and nonnegative")
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be at least 1")
        if self.baseline and self.batch_size < 2:
            raise ValueError("a baseline needs batch_size >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.schedule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.init not in ("copy_original", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.direction not in ("descent", "ascent"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def step_size(self, j: int, horizon: float = 1.0) -> float:
        """Learning rate at 1-based iteration ``j`` for minibatches of mean length ``horizon``.

        With ``lambda_scaled_lr`` the base rate is divided by
        ``1 + lam * horizon``: the curvature of the trajectory KL term grows
        like ``lam * T``, and the zero-mean ``lam * grad log p`` part of the
        estimator has variance growing like ``lam**2``.
        """
        g = self.learning_rate
        if self.lambda_scaled_lr:
            g /= 1.0 + self.lam * horizon
        if self.schedule == "inv_sqrt":
            g /= np.sqrt(j)
        return g


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    mean_S: float
    mean_cost: float
    mean_logratio: float
    grad_norm: float
    theta: tuple[float, ...]


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    COLUMNS = ("iter", "mean_S", "mean_cost", "mean_logratio", "grad_norm")

    def rows(self):
        for r in self.records:
            yield (r.iteration, r.mean_S, r.mean_cost, r.mean_logratio, r.grad_norm)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


class TrainingError(FloatingPointError):
    def __init__(self, message, trace: TrainTrace, params: PolicyParams):
        super().__init__(message)
        self.trace = trace
        self.params = params


def _as_batches(minibatch) -> list:
    if isinstance(minibatch, (Trajectory, TrajectoryBatch)):
        return [minibatch]
    return list(minibatch)


@dataclass(frozen=True)
class MinibatchTerms:
    s: np.ndarray  # (B,)
    cost: np.ndarray
    log_ratio: np.ndarray
    score: np.ndarray  # (B, p)
    horizon: np.ndarray  # (B,) trajectory lengths T


def minibatch_terms(params, original, minibatch, lam: float, spec: CostSpec) -> MinibatchTerms:
    batches = _as_batches(minibatch)
    if not batches:
        raise ValueError("empty minibatch")
    cost, ratio, score, horizon = [], [], [], []
    for b in batches:
        c = np.atleast_1d(trajectory_cost(spec, b))
        cost.append(c)
        horizon.append(np.full(c.shape, b.T))
        ratio.append(np.atleast_1d(trajectory_log_ratio(params, original, b)))
        score.append(np.atleast_2d(trajectory_score(params, b)))
    cost, ratio, score = np.concatenate(cost), np.concatenate(ratio), np.concatenate(score)
    if cost.size == 0:
        raise ValueError("empty minibatch")
    s = cost + lam * ratio if lam else cost.copy()
    return MinibatchTerms(s, cost, ratio, score, np.concatenate(horizon).astype(float))


def gradient_from_terms(terms: MinibatchTerms, lam: float, baseline: bool = False) -> np.ndarray:
    B = terms.s.size
    if baseline:
        if B < 2:
            raise ValueError("a baseline needs at least two trajectories")
        # leave-one-out mean of the other S values keeps the estimate unbiased
        mult = (terms.s - terms.s.mean()) * (B / (B - 1))
    else:
        mult = terms.s + lam
    return (mult[:, None] * terms.score).mean(axis=0)


def gradient_estimate(params, original, minibatch, lam: float, spec: CostSpec, baseline: bool = False) -> np.ndarray:
    """Likelihood-ratio estimate of ``grad_theta E[S]`` from on-policy draws.

    ``minibatch`` is a trajectory, a batch, or a list of either, all drawn
    from ``params``. With ``baseline=True`` each trajectory's S is centred on
    the mean S of the other trajectories instead of shifted by ``+ lam``;
    both leave the expectation unchanged.
    """
    terms = minibatch_terms(params, original, minibatch, lam, spec)
    return gradient_from_terms(terms, lam, baseline)


def initial_params(config: TrainConfig, original: PolicyParams) -> PolicyParams:
    if config.init == "zeros":
        return PolicyParams(np.zeros(original.p))
    return PolicyParams(original.theta.copy())


def train(config: TrainConfig, original: PolicyParams, env, spec: CostSpec, *, callback=None):
    """Run ``config.iterations`` on-policy updates; return ``(params, trace)``.

    ``env`` must provide ``sample(policy, B, rng)`` returning the minibatch
    (see :class:`~consequential.env.SyntheticEnv` and
    :class:`~consequential.env.ReplayCorpus`). ``callback(j, params, terms)``
    is invoked after every update.
    """
    params = initial_params(config, original)
    scale = np.ones(original.p) if config.param_scale is None else np.asarray(config.param_scale, float)
    if scale.shape != (original.p,):
        raise ValueError(f"param_scale needs {original.p} entries")
    sign = -1.0 if config.direction == "descent" else 1.0
    seeds = SeedSpec(config.seed, ("train",))
    trace = TrainTrace()
    for j in range(1, config.iterations + 1):
        batch = env.sample(params, config.batch_size, seeds.generator(j))
        terms = minibatch_terms(params, original, batch, config.lam, spec)
        grad = gradient_from_terms(terms, config.lam, config.baseline)
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient at iteration {j}", trace, params)
        direction = scale * grad
        norm = float(np.linalg.norm(direction))
        if norm > config.max_grad_norm:
            direction *= config.max_grad_norm / norm
        theta = params.theta + sign * config.step_size(j, float(terms.horizon.mean())) * scale * direction
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"non-finite parameters at iteration {j}", trace, params)
        trace.records.append(
            TraceRecord(j, float(terms.s.mean()), float(terms.cost.mean()),
                        float(terms.log_ratio.mean()), norm, tuple(float(v) for v in params.theta))
        )
        params = PolicyParams(theta)
        if callback is not None:
            callback(j, params, terms)
    return params, trace
