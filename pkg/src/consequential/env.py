"""User dynamics: a synthetic misinformation feed and open-loop replay.

Both environments expose ``reset(rng, batch)`` and ``step(state, positions,
rng)`` over :class:`EnvState`, whose arrays may carry a leading batch axis so
that many independent rollouts advance together. :func:`rollout` alternates
policy draws with environment steps and packs the result into a
:class:`~consequential.core.Trajectory` (or a batch of them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import (
    FeatureMatrix,
    Trajectory,
    TrajectoryBatch,
    as_generator,
    orderings_from_positions,
    positions_from_orderings,
)
from .plackett_luce import PolicyParams, sample_orderings

SYNTHETIC_FEATURES = ("misinfo_prob", "share_rate")
REPLAY_FEATURES = ("age_seconds", "uncivility", "unreliability")

# Original models: share rate only for the synthetic feed, recency for replay.
SYNTHETIC_ORIGINAL = PolicyParams([0.0, 1.0])
REPLAY_ORIGINAL = PolicyParams([1.25e-4, 0.0, 0.0])


@dataclass(frozen=True)
class EnvState:
    features: np.ndarray  # (..., N, p)
    mask: np.ndarray  # (..., N)
    item_ids: np.ndarray  # (..., N)
    latent: Mapping[str, np.ndarray] = field(default_factory=dict)  # name -> (..., N)
    t: int = 0
    next_id: np.ndarray | int = 0

    @property
    def feature_matrix(self) -> FeatureMatrix:
        if self.features.ndim != 2:
            raise ValueError("feature_matrix is only defined for unbatched states")
        return FeatureMatrix(self.features[self.mask], tuple(self.item_ids[self.mask]))


# -- synthetic feed --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 10
    T: int = 30
    K: int = 3
    p_high: float = 0.6
    p_low: float = 0.1
    alpha_viral: float = 10.0
    alpha_nonviral: float = 0.1
    replace_rate: float = 1.0
    decay_rate: float = 2.0
    exposure_coeff: float = 0.1
    exposure_form: str = "inverted"  # or "literal"

    def __post_init__(self):
        if not (self.n >= self.K >= 1):
            raise ValueError(f"need n >= K >= 1, got n={self.n}, K={self.K}")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        for name in ("replace_rate", "decay_rate", "exposure_coeff", "alpha_viral", "alpha_nonviral"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("p_high", "p_low"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.exposure_form not in ("inverted", "literal"):
            raise ValueError(f"unknown exposure_form {self.exposure_form!r}")


def _draw_items(config: SyntheticConfig, rng: np.random.Generator, shape):
    high = rng.random(shape) < 0.5
    viral = rng.random(shape) < 0.5
    prob = np.where(high, config.p_high, config.p_low)
    misinfo = (rng.random(shape) < prob).astype(float)
    alpha = np.where(viral, config.alpha_viral, config.alpha_nonviral)
    return prob, misinfo, alpha


def synthetic_init(config: SyntheticConfig, original: PolicyParams, rng, batch: int | None = None):
    """Fresh feed with zero share rates and an initial ranking from ``original``.

    Returns ``(state, positions)`` where positions are 1-based.
    """
    rng = as_generator(rng)
    shape = (config.n,) if batch is None else (batch, config.n)
    prob, misinfo, alpha = _draw_items(config, rng, shape)
    share = np.zeros(shape)
    ids = np.broadcast_to(np.arange(config.n), shape).copy()
    state = EnvState(
        features=np.stack([prob, share], axis=-1),
        mask=np.ones(shape, dtype=bool),
        item_ids=ids,
        latent={
            "misinfo_prob": prob,
            "misinfo": misinfo,
            "virality": alpha,
            "first_ranked": np.zeros(shape),
        },
        t=0,
        next_id=np.full(shape[:-1], config.n, dtype=np.int64),
    )
    order = sample_orderings(state.features @ original.theta, state.mask, rng)
    return state, positions_from_orderings(order)


def synthetic_step(config: SyntheticConfig, state: EnvState, positions, rng) -> EnvState:
    """Advance the feed by one step given the ranking shown at ``state.t``.

    Bottom-ranked posts are replaced (Poisson count, clamped to n) by fresh
    posts first ranked at ``t + 1``; surviving posts update their share rate
    with an exponential decay in the time since they were first ranked.
    """
    rng = as_generator(rng)
    positions = np.asarray(positions)
    n = config.n
    if positions.shape != state.mask.shape:
        raise ValueError(f"ranking shape {positions.shape} does not match state {state.mask.shape}")
    if not np.array_equal(np.sort(positions, axis=-1), np.broadcast_to(np.arange(1, n + 1), positions.shape)):
        raise ValueError("ranking is not a permutation of the current items")
    t = state.t
    batch_shape = positions.shape[:-1]
    d = np.minimum(rng.poisson(config.replace_rate, size=batch_shape), n)
    replaced = positions > (n - d)[..., None]

    lat = state.latent
    prob, share = state.features[..., 0], state.features[..., 1]
    exposure = positions if config.exposure_form == "literal" else (n + 1 - positions)
    decay = np.exp(-config.decay_rate * (t - lat["first_ranked"]))
    updated = decay * (share + lat["virality"] + config.exposure_coeff * exposure)

    new_prob, new_misinfo, new_alpha = _draw_items(config, rng, positions.shape)
    offset = np.cumsum(replaced, axis=-1) - 1
    new_ids = np.asarray(state.next_id)[..., None] + offset

    prob = np.where(replaced, new_prob, prob)
    share = np.where(replaced, 0.0, updated)
    latent = {
        "misinfo_prob": prob,
        "misinfo": np.where(replaced, new_misinfo, lat["misinfo"]),
        "virality": np.where(replaced, new_alpha, lat["virality"]),
        "first_ranked": np.where(replaced, float(t + 1), lat["first_ranked"]),
    }
    return EnvState(
        features=np.stack([prob, share], axis=-1),
        mask=state.mask,
        item_ids=np.where(replaced, new_ids, state.item_ids),
        latent=latent,
        t=t + 1,
        next_id=np.asarray(state.next_id) + d,
    )


class SyntheticEnv:
    open_loop = False

    def __init__(self, config: SyntheticConfig | None = None, original: PolicyParams = SYNTHETIC_ORIGINAL):
        self.config = config or SyntheticConfig()
        self.original = original

    @property
    def horizon(self) -> int:
        return self.config.T

    def reset(self, rng, batch=None):
        return synthetic_init(self.config, self.original, rng, batch)

    def step(self, state, positions, rng):
        return synthetic_step(self.config, state, positions, rng)

    def sample(self, policy, B: int, rng) -> list[TrajectoryBatch]:
        """One on-policy minibatch of ``B`` trajectories."""
        return [rollout(policy, self, self.config.T, rng, batch=B)]


# -- replay ----------------------------------------------------------------


@dataclass(frozen=True)
class Comment:
    id: str
    t_offset_sec: float
    phi: float
    gamma: float


@dataclass(frozen=True)
class Submission:
    id: str
    comments: tuple[Comment, ...]

    def __post_init__(self):
        object.__setattr__(self, "comments", tuple(self.comments))
        offsets = [c.t_offset_sec for c in self.comments]
        values = offsets + [c.phi for c in self.comments] + [c.gamma for c in self.comments]
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"submission {self.id}: non-finite comment values")
        if any(b < a for a, b in zip(offsets, offsets[1:])):
            raise ValueError(f"submission {self.id}: arrival offsets must be nondecreasing")
        if any(c.phi < 0 for c in self.comments):
            raise ValueError(f"submission {self.id}: uncivility must be nonnegative")
        if len({c.id for c in self.comments}) != len(self.comments):
            raise ValueError(f"submission {self.id}: duplicate comment ids")

    def features(self) -> np.ndarray:
        return np.array([[c.t_offset_sec, c.phi, c.gamma] for c in self.comments], dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class ReplayDataset:
    submissions: tuple[Submission, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "submissions", tuple(self.submissions))

    def __len__(self):
        return len(self.submissions)

    def __iter__(self):
        return iter(self.submissions)

    def split(self, test_fraction: float, rng) -> tuple["ReplayDataset", "ReplayDataset"]:
        """Random train/test split by submission."""
        rng = as_generator(rng)
        idx = rng.permutation(len(self.submissions))
        n_test = int(round(test_fraction * len(idx)))
        test = sorted(idx[:n_test])
        train = sorted(idx[n_test:])
        return (
            ReplayDataset(tuple(self.submissions[i] for i in train)),
            ReplayDataset(tuple(self.submissions[i] for i in test)),
        )


class ReplayEnv:
    """Open-loop replay of one submission.

    Step ``t`` shows the latest ``window`` comments among the first ``t + 1``
    arrivals (the whole prefix while fewer exist). Rankings never influence
    the features.
    """

    open_loop = True

    def __init__(self, submission: Submission, original: PolicyParams = REPLAY_ORIGINAL, window: int = 10):
        if not submission.comments:
            raise ValueError(f"submission {submission.id} has no comments")
        self.submission = submission
        self.original = original
        self.window = window
        x = submission.features()
        S = len(submission.comments)
        N = min(window, S)
        self._features = np.zeros((S, N, x.shape[1]))
        self._mask = np.zeros((S, N), dtype=bool)
        self._ids = np.full((S, N), -1, dtype=np.int64)
        for t in range(S):
            lo = max(0, t + 1 - window)
            k = t + 1 - lo
            self._features[t, :k] = x[lo : t + 1]
            self._mask[t, :k] = True
            self._ids[t, :k] = np.arange(lo, t + 1)
        self.item_names = tuple(c.id for c in submission.comments)

    @property
    def horizon(self) -> int:
        return len(self.submission.comments) - 1

    def _state(self, t: int, batch) -> EnvState:
        shape = () if batch is None else (batch,)
        bc = lambda a: np.broadcast_to(a, shape + a.shape)
        return EnvState(bc(self._features[t]), bc(self._mask[t]), bc(self._ids[t]), {}, t)

    def reset(self, rng=None, batch=None):
        return self._state(0, batch)

    def step(self, state: EnvState, positions=None, rng=None) -> EnvState:
        if state.t >= self.horizon:
            raise IndexError(f"submission {self.submission.id} has no comment after step {state.t}")
        return self._state(state.t + 1, None if state.mask.ndim == 1 else state.mask.shape[0])

    def feature_sequence(self):
        return self._features, self._mask, self._ids


def replay_step(env: ReplayEnv, state: EnvState, ranking=None) -> FeatureMatrix:
    """Features of the next step; ``ranking`` is accepted and ignored (open loop)."""
    nxt = env.step(state, ranking)
    m = nxt.mask
    return FeatureMatrix(nxt.features[m], tuple(env.item_names[i] for i in nxt.item_ids[m]))


class ReplayCorpus:
    """A set of replay submissions used as a trajectory source for training."""

    def __init__(self, dataset: ReplayDataset, original: PolicyParams = REPLAY_ORIGINAL, window: int = 10):
        self.dataset = dataset
        self.original = original
        self.envs = [ReplayEnv(s, original, window) for s in dataset if len(s.comments) >= 2]
        if not self.envs:
            raise ValueError("replay corpus needs at least one submission with two or more comments")

    def sample(self, policy, B: int, rng) -> list[TrajectoryBatch]:
        """``B`` trajectories: submissions drawn uniformly with replacement."""
        rng = as_generator(rng)
        picks = rng.integers(len(self.envs), size=B)
        counts = np.bincount(picks, minlength=len(self.envs))
        return [
            rollout(policy, self.envs[i], None, rng, batch=int(c))
            for i, c in enumerate(counts)
            if c > 0
        ]


# -- rollout ---------------------------------------------------------------


def _latent_per_item(ids: np.ndarray, slot_latent: Mapping[str, np.ndarray]):
    """Scatter slot-level latent records ``(B, S, N)`` onto per-item arrays."""
    n_items = int(ids.max()) + 1 if ids.size else 0
    out = {}
    B = ids.shape[0]
    rows = np.broadcast_to(np.arange(B)[:, None, None], ids.shape)
    valid = ids >= 0
    for name, values in slot_latent.items():
        arr = np.zeros((B, n_items))
        arr[rows[valid], ids[valid]] = values[valid]
        out[name] = arr
    return out


def _pack(features, mask, orderings, ids, slot_latent, item_names, single: bool):
    positions = positions_from_orderings(orderings)
    latent = _latent_per_item(ids, slot_latent)
    if single:
        return Trajectory(features[0], mask[0], positions[0], ids[0], {k: v[0] for k, v in latent.items()}, item_names)
    return TrajectoryBatch(features, mask, positions, ids, latent, item_names)


def rollout(policy: PolicyParams, env, T: int | None, rng, batch: int | None = None):
    """Sample trajectories of ``T`` steps after the given initial pair.

    Step 0 is produced by ``env.reset`` with its ranking drawn from
    ``env.original``; steps ``1..T`` alternate the environment transition and
    a draw from ``policy``. Returns a :class:`Trajectory` when ``batch`` is
    None, otherwise a :class:`TrajectoryBatch` of that size.
    """
    rng = as_generator(rng)
    T = env.horizon if T is None else T
    if T > env.horizon and env.open_loop:
        raise ValueError(f"replay horizon is {env.horizon}, requested T={T}")
    B = 1 if batch is None else batch
    if getattr(env, "open_loop", False):
        return _open_loop_rollout(policy, env, T, rng, B, batch is None)

    state, positions = env.reset(rng, B)
    feats, masks, ids, orders = [state.features], [state.mask], [state.item_ids], []
    orders.append(orderings_from_positions(positions, state.mask))
    slot_latent = {k: [v] for k, v in state.latent.items()}
    for _ in range(T):
        state = env.step(state, positions, rng)
        order = sample_orderings(state.features @ policy.theta, state.mask, rng)
        positions = positions_from_orderings(order)
        feats.append(state.features)
        masks.append(state.mask)
        ids.append(state.item_ids)
        orders.append(order)
        for k, v in state.latent.items():
            slot_latent[k].append(v)
    stack = lambda xs: np.stack(xs, axis=1)
    return _pack(
        stack(feats), stack(masks), stack(orders), stack(ids),
        {k: stack(v) for k, v in slot_latent.items()},
        getattr(env, "item_names", None), batch is None,
    )


def _open_loop_rollout(policy, env, T, rng, B, single):
    feats, mask, ids = env.feature_sequence()
    feats, mask, ids = feats[: T + 1], mask[: T + 1], ids[: T + 1]
    scores = np.empty((B,) + mask.shape)
    scores[:, :1] = feats[:1] @ env.original.theta
    scores[:, 1:] = feats[1:] @ policy.theta
    order = sample_orderings(scores, np.broadcast_to(mask, scores.shape), rng)
    bc = lambda a: np.broadcast_to(a, (B,) + a.shape)
    return _pack(bc(feats), bc(mask), order, bc(ids), {}, env.item_names, single)
