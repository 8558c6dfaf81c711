import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from consequential.data import (
    CommentRecord,
    DataError,
    FactCheckRecord,
    FixtureConfig,
    comment_uncivility,
    comment_unreliability,
    domain_score,
    domain_scores,
    extract_domain,
    label_to_unreliability,
    load_trajectories,
    make_replay_fixture,
    read_comments,
    read_fact_checks,
    score_comments,
    write_dataset,
)
from consequential.env import Comment, ReplayDataset, Submission


def _records(domain, labels):
    return [FactCheckRecord(f"http://{domain}/{i}", domain, lab) for i, lab in enumerate(labels)]


# domain fixtures reproducing the example table
AIDS_GOV = _records("aids.gov", ["true"] * 6 + ["mostly-true"] * 2 + ["half-true"] * 4)
PBS_ORG = _records("pbs.org", ["false"] * 20 + ["mtrue"] * 7 + ["half-flip"] * 23)  # 13 / 50
BREITBART = _records("breitbart.com", ["pants-fire"] * 9 + ["legend"] * 5 + ["mixture"] * 11)  # 14 / 25
LIFEISAJOKE = _records("lifeisajoke.com", ["mfalse"] * 3)


@pytest.mark.parametrize("label,score", [
    ("false", 1), ("pants-fire", 1), ("mfalse", 1), ("legend", 1),
    ("true", -1), ("mtrue", -1), ("mostly-true", -1),
    ("half-flip", 0), ("mixture", 0), ("", 0), (" FALSE ", 1),
])
def test_label_scores(label, score):
    assert label_to_unreliability(label) == score


@given(st.text())
def test_label_mapping_total(label):
    assert label_to_unreliability(label) in (-1, 0, 1)


def test_domain_score_cases():
    assert domain_score(_records("x.com", ["false"] * 4)) == 1.0
    k, m, r = 5, 3, 5
    assert domain_score(_records("x.com", ["false"] * k + ["true"] * m + ["other"] * r)) == pytest.approx((k - m) / 13)
    with pytest.raises(DataError):
        domain_score([])


@given(st.permutations(["false"] * 3 + ["true"] * 2 + ["x"] * 4))
def test_domain_score_order_invariant(labels):
    assert domain_score(_records("x.com", labels)) == pytest.approx(3 / 9 - 2 / 9)


def test_table_domains():
    scores = domain_scores(AIDS_GOV + PBS_ORG + BREITBART + LIFEISAJOKE)
    assert scores["pbs.org"] == pytest.approx(0.26)
    assert scores["breitbart.com"] == pytest.approx(0.56)
    assert comment_unreliability([scores["aids.gov"]]) == 0.0
    assert comment_unreliability([scores["pbs.org"]]) == pytest.approx(0.26)
    assert comment_unreliability([scores["breitbart.com"]]) == pytest.approx(0.56)
    assert comment_unreliability([scores["lifeisajoke.com"]]) == 1.0


def test_comment_unreliability_rules():
    assert comment_unreliability([]) == 0.0
    assert comment_unreliability([0.56]) == 0.56
    assert comment_unreliability([-1.0, 0.2]) == 0.0
    assert comment_unreliability([-1.0, 0.2], rule="literal") == pytest.approx(-0.4)
    with pytest.raises(ValueError):
        comment_unreliability([0.1], rule="other")


@pytest.mark.parametrize("polarity,mood,phi", [
    (-0.4, "imperative", 0.4),
    (0.8, "indicative", 0.0),
    (-0.9, "subjunctive", 0.0),
    (-0.9, "conditional", 0.0),
    (-0.1, "indicative", 0.1),
    (-0.8, "Indicative", 0.8),
    (0.0, "indicative", 0.0),
])
def test_uncivility(polarity, mood, phi):
    assert comment_uncivility(polarity, mood) == pytest.approx(phi)


@given(st.floats(-1, 1), st.sampled_from(["indicative", "imperative", "conditional", "subjunctive"]),
       st.lists(st.floats(-1, 1), max_size=5))
def test_scores_nonnegative(polarity, mood, domain_vals):
    assert 0 <= comment_uncivility(polarity, mood) <= 1
    assert comment_unreliability(domain_vals) >= 0


def test_record_validation():
    with pytest.raises(DataError):
        CommentRecord("c", 0.0, 1.5, "indicative")
    with pytest.raises(DataError):
        CommentRecord("c", 0.0, 0.5, "angry")
    with pytest.raises(DataError):
        CommentRecord("c", -1.0, 0.5, "indicative")
    with pytest.raises(DataError):
        FactCheckRecord("", "", "true")
    assert FactCheckRecord("https://www.PBS.org/a", "", "true").domain == "pbs.org"
    assert extract_domain("news.example.com/path?q=1") == "news.example.com"


def test_csv_pipeline(tmp_path):
    fc = tmp_path / "fc.csv"
    fc.write_text("url,domain,label\nhttp://breitbart.com/a,,false\nhttp://breitbart.com/b,,true\n"
                  "http://breitbart.com/c,,false\nhttp://aids.gov/x,aids.gov,true\n")
    cm = tmp_path / "comments.csv"
    cm.write_text("id,t_offset_sec,polarity,mood,domains\n"
                  "c2,120,-0.4,imperative,\n"
                  "c1,0,0.3,indicative,breitbart.com|aids.gov\n"
                  "c3,300,-0.5,indicative,breitbart.com\n")
    scores = domain_scores(read_fact_checks(fc))
    assert scores == {"aids.gov": -1.0, "breitbart.com": pytest.approx(1 / 3)}
    ds = score_comments(read_comments(cm), scores)
    (sub,) = ds.submissions
    assert [c.id for c in sub.comments] == ["c1", "c2", "c3"]
    assert [c.phi for c in sub.comments] == [0.0, pytest.approx(0.4), 0.5]
    assert [c.gamma for c in sub.comments] == [0.0, 0.0, pytest.approx(1 / 3)]


def test_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,t_offset_sec,polarity,mood\n")
    with pytest.raises(DataError, match="missing columns"):
        read_comments(bad)
    bad.write_text("id,t_offset_sec,polarity,mood,domains\nc1,0,0.1,indicative,\nc2,abc,0.1,indicative,\n")
    with pytest.raises(DataError, match=":3:"):
        read_comments(bad)


def _sub(sid, n):
    return Submission(sid, tuple(Comment(f"{sid}c{i}", 10.0 * i, 0.1, 0.0) for i in range(n)))


def test_load_filters_and_round_trips(tmp_path):
    path = tmp_path / "ds.jsonl"
    ds = ReplayDataset((_sub("a", 5), _sub("b", 12), _sub("c", 59), _sub("d", 60)))
    write_dataset(path, ds)
    loaded = load_trajectories(path, min_comments=10)
    assert [s.id for s in loaded] == ["b", "c"]
    everything = load_trajectories(path, min_comments=0, max_comments=None)
    assert everything == ds


def test_load_empty_and_malformed(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert len(load_trajectories(path)) == 0
    path.write_text(json.dumps({"id": "x", "comments": []}) + "\n[1, 2\n")
    with pytest.raises(DataError, match=":2:"):
        load_trajectories(path)
    path.write_text(json.dumps({"id": "x", "comments": [{"id": "a", "t_offset_sec": 5, "phi": -1, "gamma": 0}]}) + "\n")
    with pytest.raises(DataError, match=":1:"):
        load_trajectories(path, min_comments=0)


def test_fixture_properties():
    cfg = FixtureConfig(submissions=40)
    ds = make_replay_fixture(cfg, 0)
    assert len(ds) == 40
    sizes = [len(s.comments) for s in ds]
    assert min(sizes) >= cfg.min_comments and max(sizes) <= cfg.max_comments
    phi = np.array([c.phi for s in ds for c in s.comments])
    assert abs(np.mean(phi > 0) - cfg.uncivil_rate) < 0.05
    assert make_replay_fixture(cfg, 0) == ds
