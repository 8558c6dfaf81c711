"""Replay data ingestion and the uncivility / unreliability scoring rules."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

import numpy as np

from .core import as_generator
from .env import Comment, ReplayDataset, Submission

UNRELIABLE_LABELS = frozenset({"false", "pants-fire", "mfalse", "legend"})
RELIABLE_LABELS = frozenset({"true", "mtrue", "mostly-true"})
MOODS = ("indicative", "imperative", "conditional", "subjunctive")
UNCIVIL_MOODS = frozenset({"indicative", "imperative"})


class DataError(ValueError):
    """Malformed or schema-violating input data."""


def extract_domain(url: str) -> str:
    """Lowercased host of ``url`` without a leading ``www.``."""
    text = url.strip()
    if "//" not in text:
        text = "//" + text
    host = (urlsplit(text).hostname or "").lower()
    return host[4:] if host.startswith("www.") else host


@dataclass(frozen=True)
class FactCheckRecord:
    url: str
    domain: str
    label: str

    def __post_init__(self):
        domain = (self.domain or extract_domain(self.url)).strip().lower()
        if not domain:
            raise DataError(f"fact-check record for {self.url!r} has no domain")
        object.__setattr__(self, "domain", domain)


@dataclass(frozen=True)
class CommentRecord:
    id: str
    arrival_offset_seconds: float
    polarity: float
    mood: str
    linked_domains: tuple[str, ...] = ()
    submission: str = ""

    def __post_init__(self):
        if not self.arrival_offset_seconds >= 0:
            raise DataError(f"comment {self.id}: arrival offset must be nonnegative")
        if not -1.0 <= self.polarity <= 1.0:
            raise DataError(f"comment {self.id}: polarity {self.polarity} outside [-1, 1]")
        mood = self.mood.strip().lower()
        if mood not in MOODS:
            raise DataError(f"comment {self.id}: unknown mood {self.mood!r}")
        object.__setattr__(self, "mood", mood)
        object.__setattr__(self, "linked_domains", tuple(d.strip().lower() for d in self.linked_domains if d.strip()))


# -- scoring rules ---------------------------------------------------------


def label_to_unreliability(label: str) -> int:
    key = label.strip().lower()
    if key in UNRELIABLE_LABELS:
        return 1
    if key in RELIABLE_LABELS:
        return -1
    return 0


def domain_score(records: Iterable[FactCheckRecord]) -> float:
    """Mean unreliability of the urls fact-checked for one domain."""
    scores = [label_to_unreliability(r.label) for r in records]
    if not scores:
        raise DataError("domain score needs at least one record")
    return sum(scores) / len(scores)


def domain_scores(records: Iterable[FactCheckRecord]) -> dict[str, float]:
    by_domain: dict[str, list[FactCheckRecord]] = defaultdict(list)
    for r in records:
        by_domain[r.domain].append(r)
    return {d: domain_score(rs) for d, rs in sorted(by_domain.items())}


def comment_unreliability(scores: Sequence[float], rule: str = "positive") -> float:
    """Unreliability of a comment from the scores of the domains it links.

    ``positive`` keeps the mean when it is positive (unreliable sources) and
    returns 0 otherwise; ``literal`` keeps it only when negative. No scores
    (no links, or no known domains) gives 0.
    """
    if len(scores) == 0:
        return 0.0
    mean = float(np.mean(scores))
    if rule == "positive":
        return max(mean, 0.0)
    if rule == "literal":
        return mean if mean < 0 else 0.0
    raise ValueError(f"unknown unreliability rule {rule!r}")


def comment_uncivility(polarity: float, mood: str) -> float:
    if not -1.0 <= polarity <= 1.0:
        raise DataError(f"polarity {polarity} outside [-1, 1]")
    if polarity < 0 and mood.strip().lower() in UNCIVIL_MOODS:
        return abs(polarity)
    return 0.0


def score_comment(record: CommentRecord, scores: Mapping[str, float], rule: str = "positive") -> Comment:
    known = [scores[d] for d in record.linked_domains if d in scores]
    return Comment(
        id=record.id,
        t_offset_sec=float(record.arrival_offset_seconds),
        phi=comment_uncivility(record.polarity, record.mood),
        gamma=comment_unreliability(known, rule),
    )


def score_comments(records: Iterable[CommentRecord], scores: Mapping[str, float], *,
                   default_submission: str = "submission", rule: str = "positive") -> ReplayDataset:
    """Group comment records by submission and attach phi / gamma features."""
    groups: dict[str, list[CommentRecord]] = defaultdict(list)
    for r in records:
        groups[r.submission or default_submission].append(r)
    subs = []
    for sid, rs in groups.items():
        rs = sorted(rs, key=lambda r: r.arrival_offset_seconds)
        subs.append(Submission(sid, tuple(score_comment(r, scores, rule) for r in rs)))
    return ReplayDataset(tuple(subs))


# -- CSV inputs ------------------------------------------------------------


def _csv_rows(path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def read_fact_checks(path) -> list[FactCheckRecord]:
    """Read a ``url,domain,label`` CSV (an empty domain is taken from the url)."""
    out = []
    for lineno, row in _csv_rows(path, ("url", "domain", "label")):
        try:
            out.append(FactCheckRecord(row["url"], row["domain"] or "", row["label"] or ""))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def read_comments(path) -> list[CommentRecord]:
    """Read an ``id,t_offset_sec,polarity,mood,domains`` CSV.

    ``domains`` is ``|``-separated. An optional ``submission`` column groups
    rows; without it the file is a single submission.
    """
    out = []
    for lineno, row in _csv_rows(path, ("id", "t_offset_sec", "polarity", "mood", "domains")):
        try:
            out.append(
                CommentRecord(
                    id=row["id"],
                    arrival_offset_seconds=float(row["t_offset_sec"]),
                    polarity=float(row["polarity"]),
                    mood=row["mood"],
                    linked_domains=tuple((row["domains"] or "").split("|")),
                    submission=row.get("submission") or "",
                )
            )
        except (DataError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


# -- JSON Lines datasets ---------------------------------------------------


def submission_to_record(sub: Submission) -> dict:
    return {
        "id": sub.id,
        "comments": [
            {"id": c.id, "t_offset_sec": c.t_offset_sec, "phi": c.phi, "gamma": c.gamma}
            for c in sub.comments
        ],
    }


def submission_from_record(record: Mapping) -> Submission:
    if not isinstance(record, Mapping) or "comments" not in record:
        raise DataError("submission record needs 'id' and 'comments'")
    comments = []
    for c in record["comments"]:
        try:
            comments.append(Comment(str(c["id"]), float(c["t_offset_sec"]), float(c["phi"]), float(c["gamma"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad comment record {c!r}: {exc}") from None
    try:
        return Submission(str(record.get("id", "")), tuple(comments))
    except ValueError as exc:
        raise DataError(str(exc)) from None


def write_dataset(path, dataset: ReplayDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sub in dataset:
            fh.write(json.dumps(submission_to_record(sub), sort_keys=True) + "\n")


def load_trajectories(path, min_comments: int = 11, max_comments: int | None = 59) -> ReplayDataset:
    """Load a JSON Lines replay dataset, keeping submissions within the size bounds.

    Bounds are inclusive; the defaults keep submissions with more than 10 and
    fewer than 60 comments.
    """
    subs = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
        try:
            sub = submission_from_record(record)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        n = len(sub.comments)
        if n < min_comments or (max_comments is not None and n > max_comments):
            continue
        subs.append(sub)
    return ReplayDataset(tuple(subs))


# -- synthetic fixtures ----------------------------------------------------


@dataclass(frozen=True)
class FixtureConfig:
    """Generator settings for replay datasets with planted uncivility.

    ``uncivil_rate`` of the comments get ``phi ~ U(phi_low, phi_high)``, the
    rest 0; ``gamma`` is planted the same way.
    """

    submissions: int = 200
    min_comments: int = 11
    max_comments: int = 59
    mean_gap_sec: float = 900.0
    uncivil_rate: float = 0.3
    phi_low: float = 0.3
    phi_high: float = 1.0
    unreliable_rate: float = 0.15
    gamma_low: float = 0.2
    gamma_high: float = 1.0


def make_replay_fixture(config: FixtureConfig = FixtureConfig(), rng=0) -> ReplayDataset:
    rng = as_generator(rng)
    subs = []
    for s in range(config.submissions):
        n = int(rng.integers(config.min_comments, config.max_comments + 1))
        gaps = rng.exponential(config.mean_gap_sec, size=n)
        gaps[0] = 0.0
        offsets = np.round(np.cumsum(gaps), 1)
        uncivil = rng.random(n) < config.uncivil_rate
        phi = np.where(uncivil, rng.uniform(config.phi_low, config.phi_high, n), 0.0)
        unreliable = rng.random(n) < config.unreliable_rate
        gamma = np.where(unreliable, rng.uniform(config.gamma_low, config.gamma_high, n), 0.0)
        comments = tuple(
            Comment(f"s{s}c{i}", float(offsets[i]), round(float(phi[i]), 4), round(float(gamma[i]), 4))
            for i in range(n)
        )
        subs.append(Submission(f"s{s}", comments))
    return ReplayDataset(tuple(subs))
