import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from consequential.core import (
    FeatureMatrix,
    Ordering,
    PermutationError,
    Ranking,
    SeedSpec,
    Trajectory,
    TrajectoryBatch,
    TrajectoryError,
    orderings_from_positions,
    ordering_from_ranking,
    positions_from_orderings,
    ranking_from_ordering,
    read_trajectories,
    validate_trajectory,
    write_trajectories,
)
from consequential.env import SyntheticConfig, SyntheticEnv, rollout

permutations = st.integers(1, 12).flatmap(lambda n: st.permutations(list(range(1, n + 1))))


def test_identity_ranking():
    assert ordering_from_ranking(Ranking((1, 2, 3))) == Ordering((1, 2, 3))
    assert ranking_from_ordering(Ordering((1, 2, 3))) == Ranking((1, 2, 3))


def test_swap_is_self_inverse():
    assert ordering_from_ranking((2, 1)).items == (2, 1)


def test_inverse_of_cycle():
    # item 3 on top, then 1, then 2: item 1 sits at position 2, item 2 at 3, item 3 at 1
    assert ranking_from_ordering((3, 1, 2)).positions == (2, 3, 1)


def test_round_trip_all_permutations_n6():
    for perm in itertools.permutations(range(1, 7)):
        y = Ranking(perm)
        omega = ordering_from_ranking(y)
        assert ranking_from_ordering(omega) == y
        # omega_{y_i} = i and y_{omega_k} = k
        assert all(omega.items[y.positions[i] - 1] == i + 1 for i in range(6))


@given(permutations)
def test_round_trip_random(perm):
    y = Ranking(tuple(perm))
    assert ranking_from_ordering(ordering_from_ranking(y)) == y
    omega = Ordering(tuple(perm))
    assert ordering_from_ranking(ranking_from_ordering(omega)) == omega


@pytest.mark.parametrize("bad", [(1, 1, 3), (0, 1, 2), (1, 2, 4), (1.5, 2, 3)])
def test_invalid_permutations_rejected(bad):
    with pytest.raises(PermutationError):
        ranking_from_ordering(bad)


def test_permutation_error_names_problem():
    with pytest.raises(PermutationError, match="duplicated \\[1\\].*missing \\[2\\]"):
        Ordering((1, 1, 3))


def test_feature_matrix_invariants():
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        FeatureMatrix(np.ones((2, 2)), ("a", "a"))
    fm = FeatureMatrix(np.ones((2, 3)), ("a", "b"))
    assert (fm.n, fm.p) == (2, 3)
    with pytest.raises(ValueError):
        fm.rows[0, 0] = 5.0


def _steps(n=3, p=2, S=3, seed=0):
    rng = np.random.default_rng(seed)
    return [(rng.normal(size=(n, p)), tuple(rng.permutation(n) + 1)) for _ in range(S)]


def test_validate_well_formed():
    assert validate_trajectory(_steps()).ok


def test_validate_shape_violation_at_step():
    steps = _steps()
    steps[1] = (steps[1][0], (1, 2))
    res = validate_trajectory(steps)
    assert not res.ok
    assert [(v.kind, v.step) for v in res.violations] == [("shape", 1)]


def test_validate_non_finite_location():
    steps = _steps()
    steps[2][0][1, 0] = np.nan
    res = validate_trajectory(steps)
    assert [(v.kind, v.step) for v in res.violations] == [("non_finite", 2)]
    assert "item 1, column 0" in res.violations[0].detail


def test_validate_reports_every_problem():
    steps = _steps()
    steps[0] = (steps[0][0], (1, 1, 2))
    steps[2][0][0, 1] = np.inf
    kinds = {(v.kind, v.step) for v in validate_trajectory(steps).violations}
    assert kinds == {("permutation", 0), ("non_finite", 2)}


def test_validate_empty():
    assert [v.kind for v in validate_trajectory([]).violations] == ["empty"]


def test_from_steps_raises_with_violations():
    steps = _steps()
    steps[1] = (steps[1][0], (3, 3, 1))
    with pytest.raises(TrajectoryError) as info:
        Trajectory.from_steps(steps)
    assert info.value.violations[0].step == 1


def test_from_steps_tracks_items_across_steps():
    fm0 = FeatureMatrix(np.array([[1.0], [2.0]]), ("a", "b"))
    fm1 = FeatureMatrix(np.array([[2.0], [3.0], [4.0]]), ("b", "c", "d"))
    traj = Trajectory.from_steps([(fm0, (2, 1)), (fm1, (1, 3, 2))], {"misinfo": {"b": 1, "d": 1}})
    assert traj.T == 1 and traj.n_at(0) == 2 and traj.n_at(1) == 3
    steps = traj.steps
    assert steps[1][0].item_ids == ("b", "c", "d")
    assert steps[1][1] == Ranking((1, 3, 2))
    misinfo = traj.latent_at("misinfo")
    assert misinfo[1].tolist()[:3] == [1.0, 0.0, 1.0]


def test_step_zero_is_initial_pair():
    steps = _steps()
    traj = Trajectory.from_steps(steps)
    np.testing.assert_array_equal(traj.steps[0][0].rows, steps[0][0])
    assert traj.steps[0][1].positions == steps[0][1]


def test_orderings_positions_inverse_with_padding():
    pos = np.array([[2, 1, 3, 0], [1, 0, 0, 0]])
    mask = pos > 0
    order = orderings_from_positions(pos, mask)
    assert order.tolist() == [[1, 0, 2, -1], [0, -1, -1, -1]]
    np.testing.assert_array_equal(positions_from_orderings(order), pos)


def test_jsonl_round_trip(tmp_path):
    batch = rollout(SyntheticEnv().original, SyntheticEnv(SyntheticConfig(T=4)), 4, 3, batch=3)
    path = tmp_path / "traj.jsonl"
    write_trajectories(path, list(batch))
    back = read_trajectories(path)
    assert len(back) == 3
    for a, b in zip(batch, back):
        assert [(fm.rows.tolist(), r) for fm, r in a.steps] == [(fm.rows.tolist(), r) for fm, r in b.steps]
        assert b.latent_at("misinfo").shape == a.latent_at("misinfo").shape
        np.testing.assert_array_equal(a.latent_at("misinfo"), b.latent_at("misinfo"))


def test_read_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = Trajectory.from_steps(_steps()).to_record()
    path.write_text(json.dumps(good) + "\n{not json\n")
    with pytest.raises(ValueError, match=":2:"):
        read_trajectories(path)


def test_batch_take_and_stack():
    batch = rollout(SyntheticEnv().original, SyntheticEnv(SyntheticConfig(T=3)), 3, 1, batch=4)
    sub = batch.take([2, 0])
    assert len(sub) == 2
    np.testing.assert_array_equal(sub[0].positions, batch[2].positions)
    np.testing.assert_array_equal(sub[1].features, batch[0].features)
    restacked = TrajectoryBatch.stack(list(batch))
    np.testing.assert_array_equal(restacked.positions, batch.positions)


def test_seedspec_determinism():
    a = SeedSpec(7, ("x",)).generator(3).random(5)
    b = SeedSpec(7).child("x").generator(3).random(5)
    c = SeedSpec(7, ("x",)).generator(4).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_identical_seedspec_identical_trajectories():
    env = SyntheticEnv()
    a = rollout(env.original, env, 30, SeedSpec(11, ("r",)).generator(), batch=5)
    b = rollout(env.original, env, 30, SeedSpec(11, ("r",)).generator(), batch=5)
    for name in ("features", "mask", "positions", "item_ids"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert all(a.latent[k].tobytes() == b.latent[k].tobytes() for k in a.latent)
