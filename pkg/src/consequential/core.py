"""Permutations, feature matrices, trajectories and seeding.

Positions and item indices are 1-based on every external surface (the
``Ranking``/``Ordering`` types, JSON files, reports). Internally the array
representation of a trajectory uses 0-based orderings with ``-1`` padding so
that steps with fewer than ``N`` items can share one rectangular array.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class PermutationError(ValueError):
    """A sequence that should be a permutation of 1..n is not."""


class TrajectoryError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def _check_permutation(values, what: str) -> tuple[int, ...]:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise PermutationError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise PermutationError(f"{what} has non-integer entries")
        arr = arr.astype(np.int64)
    n = arr.size
    counts = np.bincount(np.clip(arr, 0, n + 1), minlength=n + 2) if n else np.zeros(2, int)
    out_of_range = [int(v) for v in arr if v < 1 or v > n]
    duplicated = [i for i in range(1, n + 1) if counts[i] > 1]
    missing = [i for i in range(1, n + 1) if counts[i] == 0]
    if out_of_range or duplicated or missing:
        parts = []
        if out_of_range:
            parts.append(f"out of range {out_of_range}")
        if duplicated:
            parts.append(f"duplicated {duplicated}")
        if missing:
            parts.append(f"missing {missing}")
        raise PermutationError(f"{what} is not a permutation of 1..{n}: " + ", ".join(parts))
    return tuple(int(v) for v in arr)


@dataclass(frozen=True)
class Ranking:
    """``positions[i]`` is the 1-based position of item ``i + 1``."""

    positions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", _check_permutation(self.positions, "ranking"))

    @property
    def n(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.int64)


@dataclass(frozen=True)
class Ordering:
    """``items[k]`` is the 1-based item placed at position ``k + 1``."""

    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", _check_permutation(self.items, "ordering"))

    @property
    def n(self) -> int:
        return len(self.items)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.items, dtype=np.int64)


def _invert(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, v in enumerate(perm, start=1):
        inv[v - 1] = i
    return tuple(inv)


def ordering_from_ranking(ranking) -> Ordering:
    if not isinstance(ranking, Ranking):
        ranking = Ranking(tuple(ranking))
    return Ordering(_invert(ranking.positions))


def ranking_from_ordering(ordering) -> Ranking:
    if not isinstance(ordering, Ordering):
        ordering = Ordering(tuple(ordering))
    return Ranking(_invert(ordering.items))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-step item features: an ``n x p`` matrix plus stable item ids."""

    rows: np.ndarray
    item_ids: tuple = ()

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"feature rows must be 2-d, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            i, j = np.argwhere(~np.isfinite(rows))[0]
            raise ValueError(f"non-finite feature at item {i}, column {j}")
        ids = tuple(self.item_ids) if len(self.item_ids) else tuple(range(rows.shape[0]))
        if len(ids) != rows.shape[0]:
            raise ValueError(f"{len(ids)} item ids for {rows.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique within a step")
        object.__setattr__(self, "rows", _readonly(rows))
        object.__setattr__(self, "item_ids", ids)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Violation:
    kind: str  # "shape" | "permutation" | "non_finite" | "empty"
    step: int
    detail: str

    def __str__(self):
        return f"step {self.step}: {self.kind}: {self.detail}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _raw_steps(trajectory) -> list[tuple[np.ndarray, np.ndarray]]:
    if isinstance(trajectory, Trajectory):
        return [(fm.rows, r.as_array()) for fm, r in trajectory.steps]
    if isinstance(trajectory, Mapping):
        return [
            (np.asarray(s["features"], dtype=float), np.asarray(s["ranking"]))
            for s in trajectory["steps"]
        ]
    out = []
    for features, ranking in trajectory:
        if isinstance(features, FeatureMatrix):
            features = features.rows
        if isinstance(ranking, Ranking):
            ranking = ranking.positions
        out.append((np.asarray(features, dtype=float), np.asarray(ranking)))
    return out


def validate_trajectory(trajectory) -> ValidationResult:
    """Check every step of a trajectory and collect all violations.

    Accepts a :class:`Trajectory`, a decoded JSON record, or a sequence of
    ``(features, ranking)`` pairs where both may be raw arrays.
    """
    violations = []
    steps = _raw_steps(trajectory)
    if not steps:
        violations.append(Violation("empty", 0, "trajectory has no steps"))
    p = None
    for t, (x, y) in enumerate(steps):
        if x.ndim != 2:
            violations.append(Violation("shape", t, f"features have shape {x.shape}"))
            continue
        if p is None:
            p = x.shape[1]
        elif x.shape[1] != p:
            violations.append(Violation("shape", t, f"p={x.shape[1]} differs from p={p}"))
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            violations.append(
                Violation("shape", t, f"{x.shape[0]} feature rows but ranking of length {y.size}")
            )
        else:
            try:
                _check_permutation(y, "ranking")
            except PermutationError as exc:
                violations.append(Violation("permutation", t, str(exc)))
        for i, j in np.argwhere(~np.isfinite(x)):
            violations.append(Violation("non_finite", t, f"item {int(i)}, column {int(j)}"))
    return ValidationResult(tuple(violations))


def orderings_from_positions(positions: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """0-based orderings from 1-based positions; padded slots become -1 at the end."""
    n = positions.shape[-1]
    key = np.where(mask, positions, n + 1)
    order = np.argsort(key, axis=-1, kind="stable")
    valid = np.take_along_axis(mask, order, axis=-1)
    return np.where(valid, order, -1)


def positions_from_orderings(orderings: np.ndarray) -> np.ndarray:
    """Inverse of :func:`orderings_from_positions`; padded slots get position 0."""
    n = orderings.shape[-1]
    flat = orderings.reshape(-1, n)
    pos = np.zeros(flat.shape, dtype=np.int64)
    rows, ks = np.nonzero(flat >= 0)
    pos[rows, flat[rows, ks]] = ks + 1
    return pos.reshape(orderings.shape)


class _TrajectoryArrays:
    """Shared accessors for :class:`Trajectory` and :class:`TrajectoryBatch`.

    Array fields (leading batch axis only for batches):

    * ``features``  ``(S, N, p)`` float, padded rows are zero
    * ``mask``      ``(S, N)`` bool, true for items present at the step
    * ``positions`` ``(S, N)`` int, 1-based positions, 0 on padding
    * ``item_ids``  ``(S, N)`` int, index into the latent arrays, -1 on padding
    * ``latent``    name -> ``(n_items,)`` arrays, evaluation-only metadata

    ``S = T + 1``; step 0 is the given initial pair.
    """

    features: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    item_ids: np.ndarray
    latent: Mapping[str, np.ndarray]

    @property
    def T(self) -> int:
        return self.features.shape[-3] - 1

    @property
    def p(self) -> int:
        return self.features.shape[-1]

    @cached_property
    def orderings(self) -> np.ndarray:
        return orderings_from_positions(self.positions, self.mask)

    def latent_at(self, name: str) -> np.ndarray:
        """Latent values gathered onto the ``(S, N)`` slots (0 on padding)."""
        if name not in self.latent:
            raise KeyError(f"trajectory carries no latent field {name!r}")
        values = np.asarray(self.latent[name], dtype=float)
        ids = np.where(self.mask, self.item_ids, 0)
        if values.ndim == 1:
            out = values[ids]
        else:
            flat = ids.reshape(ids.shape[0], -1)
            out = np.take_along_axis(values, flat, axis=-1).reshape(ids.shape)
        return np.where(self.mask, out, 0.0)


def _freeze_arrays(obj, names):
    for name in names:
        object.__setattr__(obj, name, _readonly(getattr(obj, name)))
    object.__setattr__(obj, "latent", {k: _readonly(v) for k, v in obj.latent.items()})


@dataclass(frozen=True, eq=False)
class Trajectory(_TrajectoryArrays):
    features: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    item_ids: np.ndarray
    latent: Mapping[str, np.ndarray] = field(default_factory=dict)
    item_names: tuple[str, ...] | None = None
    id: str = ""

    def __post_init__(self):
        _freeze_arrays(self, ("features", "mask", "positions", "item_ids"))
        if self.features.ndim != 3:
            raise ValueError(f"features must be (S, N, p), got {self.features.shape}")
        shape = self.features.shape[:2]
        for name in ("mask", "positions", "item_ids"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def steps(self) -> list[tuple[FeatureMatrix, Ranking]]:
        out = []
        for t in range(self.T + 1):
            m = self.mask[t]
            ids = self.item_ids[t][m]
            names = tuple(self._name(i) for i in ids)
            out.append((FeatureMatrix(self.features[t][m], names), Ranking(tuple(self.positions[t][m]))))
        return out

    def _name(self, i):
        return self.item_names[i] if self.item_names is not None else int(i)

    def n_at(self, t: int) -> int:
        return int(self.mask[t].sum())

    def equals(self, other: "Trajectory") -> bool:
        return (
            self.id == other.id
            and self.item_names == other.item_names
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("features", "mask", "positions", "item_ids")
            )
            and self.latent.keys() == other.latent.keys()
            and all(np.array_equal(self.latent[k], other.latent[k]) for k in self.latent)
        )

    @classmethod
    def from_steps(cls, steps, latent=None, *, id: str = "") -> "Trajectory":
        """Build from ``(FeatureMatrix | array, Ranking | sequence)`` pairs.

        Item ids are taken from the feature matrices; latent maps are keyed by
        those ids (``{field: {item_id: value}}``). Raises
        :class:`TrajectoryError` listing every violation.
        """
        steps = list(steps)
        result = validate_trajectory(steps)
        if not result.ok:
            raise TrajectoryError(result.violations)
        fms = [s if isinstance(s, FeatureMatrix) else FeatureMatrix(s) for s, _ in steps]
        ranks = [np.asarray(r.positions if isinstance(r, Ranking) else r) for _, r in steps]
        names: list = []
        index: dict = {}
        for fm in fms:
            for iid in fm.item_ids:
                if iid not in index:
                    index[iid] = len(names)
                    names.append(iid)
        S, N, p = len(fms), max(fm.n for fm in fms), fms[0].p
        features = np.zeros((S, N, p))
        mask = np.zeros((S, N), dtype=bool)
        positions = np.zeros((S, N), dtype=np.int64)
        item_ids = np.full((S, N), -1, dtype=np.int64)
        for t, (fm, r) in enumerate(zip(fms, ranks)):
            features[t, : fm.n] = fm.rows
            mask[t, : fm.n] = True
            positions[t, : fm.n] = r
            item_ids[t, : fm.n] = [index[i] for i in fm.item_ids]
        lat = {}
        for key, per_item in (latent or {}).items():
            arr = np.zeros(len(names))
            for iid, v in per_item.items():
                if iid in index:
                    arr[index[iid]] = v
            lat[key] = arr
        item_names = tuple(str(n) for n in names)
        return cls(features, mask, positions, item_ids, lat, item_names, id)

    # -- JSON Lines --------------------------------------------------------

    def to_record(self) -> dict:
        steps = []
        for fm, r in self.steps:
            steps.append(
                {
                    "items": [str(i) for i in fm.item_ids],
                    "features": fm.rows.tolist(),
                    "ranking": list(r.positions),
                }
            )
        latent: dict = {}
        n_items = int(self.item_ids.max()) + 1 if self.item_ids.size else 0
        for i in range(n_items):
            if self.latent:
                latent[str(self._name(i))] = {k: float(v[i]) for k, v in self.latent.items()}
        return {"id": self.id, "T": self.T, "steps": steps, "latent": latent}

    @classmethod
    def from_record(cls, record: Mapping) -> "Trajectory":
        steps = [
            (FeatureMatrix(np.asarray(s["features"], dtype=float).reshape(len(s["items"]), -1), tuple(s["items"])), s["ranking"])
            for s in record["steps"]
        ]
        latent: dict = {}
        for iid, fields in record.get("latent", {}).items():
            for k, v in fields.items():
                latent.setdefault(k, {})[iid] = v
        traj = cls.from_steps(steps, latent, id=record.get("id", ""))
        if "T" in record and record["T"] != traj.T:
            raise TrajectoryError([Violation("shape", 0, f"T={record['T']} but {traj.T + 1} steps")])
        return traj


@dataclass(frozen=True, eq=False)
class TrajectoryBatch(_TrajectoryArrays):
    """Trajectories of equal ``(S, N, p)`` stacked along a leading axis."""

    features: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    item_ids: np.ndarray
    latent: Mapping[str, np.ndarray] = field(default_factory=dict)
    item_names: tuple[str, ...] | None = None
    id: str = ""

    def __post_init__(self):
        _freeze_arrays(self, ("features", "mask", "positions", "item_ids"))
        if self.features.ndim != 4:
            raise ValueError(f"features must be (B, S, N, p), got {self.features.shape}")

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(
            self.features[i],
            self.mask[i],
            self.positions[i],
            self.item_ids[i],
            {k: v[i] for k, v in self.latent.items()},
            self.item_names,
            f"{self.id}/{i}" if self.id else str(i),
        )

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices) -> "TrajectoryBatch":
        idx = np.asarray(indices, dtype=np.int64)
        return TrajectoryBatch(
            self.features[idx],
            self.mask[idx],
            self.positions[idx],
            self.item_ids[idx],
            {k: v[idx] for k, v in self.latent.items()},
            self.item_names,
            self.id,
        )

    @classmethod
    def stack(cls, trajectories: Sequence[Trajectory]) -> "TrajectoryBatch":
        trajectories = list(trajectories)
        if not trajectories:
            raise ValueError("cannot stack an empty list of trajectories")
        shape = trajectories[0].features.shape
        if any(t.features.shape != shape for t in trajectories):
            raise ValueError("all trajectories in a batch must share (S, N, p)")
        keys = set(trajectories[0].latent)
        width = max((len(v) for t in trajectories for v in t.latent.values()), default=0)
        latent = {}
        for k in keys:
            arr = np.zeros((len(trajectories), width))
            for b, t in enumerate(trajectories):
                arr[b, : len(t.latent[k])] = t.latent[k]
            latent[k] = arr
        return cls(
            np.stack([t.features for t in trajectories]),
            np.stack([t.mask for t in trajectories]),
            np.stack([t.positions for t in trajectories]),
            np.stack([t.item_ids for t in trajectories]),
            latent,
            trajectories[0].item_names,
        )


def write_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_record(), sort_keys=True) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
        try:
            out.append(Trajectory.from_record(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


# -- seeding ---------------------------------------------------------------


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be nonnegative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class SeedSpec:
    """A master seed plus a path of stream labels.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    ``SeedSpec(s).child("synth", 3, 17)`` always yields the same generator no
    matter how many other streams were created before it.
    """

    master_seed: int
    labels: tuple = ()

    def child(self, *labels) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.labels + tuple(labels))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            self.master_seed & 0xFFFFFFFFFFFFFFFF,
            spawn_key=tuple(_label_key(lab) for lab in self.labels),
        )

    def generator(self, *labels) -> np.random.Generator:
        spec = self.child(*labels) if labels else self
        return np.random.Generator(np.random.PCG64(spec.seed_sequence()))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, SeedSpec):
        return rng.generator()
    return np.random.default_rng(rng)
