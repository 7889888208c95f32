import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsbos.models import IpmParams, TorqueBounds
from stsbos.rosv import (RosvSettings, balance_band, compute_boundaries, normalized_state, rosv_score,
                         seatoff_state)
from stsbos.signal import ObservedTrajectory

P = IpmParams(60.0, 0.9)
BOUNDS = TorqueBounds([-300.0], [150.0])


@pytest.fixture(scope="module")
def plane():
    return compute_boundaries(P, BOUNDS, (-0.3, 0.3), 0.25, RosvSettings(positions=50))


def test_normalization_by_hand():
    pos, vel = normalized_state(0.2, 0.0, IpmParams(70.0, 1.0), 0.25)
    assert pos == pytest.approx(np.sin(0.2) / 0.25) and pos == pytest.approx(0.7947, abs=1e-4)
    assert vel == 0.0
    assert normalized_state(0.0, 0.0, P, 0.25) == (0.0, 0.0)
    with pytest.raises(ValueError):
        normalized_state(0.1, 0.1, P, None)


def test_seatoff_is_first_sample():
    t = np.linspace(0, 1, 11)
    traj = ObservedTrajectory(t, np.column_stack([0.3 - 0.3 * t, -0.3 + 0 * t]), ["theta", "omega"], 10.0)
    pos, vel = seatoff_state(traj, P, 0.3)
    assert pos == pytest.approx(0.9 * np.sin(0.3) / 0.3) and vel == pytest.approx(-0.3 * np.cos(0.3))
    with pytest.raises(ValueError):
        seatoff_state(ObservedTrajectory(t, t[:, None], ["x"], 10.0), P)


def test_balance_band():
    lo, hi = balance_band(P, BOUNDS)
    mgl = P.m * P.g * P.l
    # -mgl sin(theta) must lie in [-300, 150]
    assert -mgl * np.sin(lo) == pytest.approx(150.0) and -mgl * np.sin(hi) == pytest.approx(-300.0)


def test_huge_torque_stands_from_anywhere():
    pl = compute_boundaries(P, TorqueBounds([-1e6], [1e6]), (-0.2, 0.2), 0.25, RosvSettings(positions=10))
    assert np.all(pl.left < 0)
    assert np.all(pl.right > 0)
    assert pl.notes  # the boundaries left the velocity window and are reported


def test_zero_torque_follows_the_separatrix():
    pl = compute_boundaries(P, TorqueBounds([-1e-6], [1e-6]), (-0.3, -0.02), 0.25, RosvSettings(positions=12))
    # passive upright pendulum: stable manifold theta_dot = 2 sqrt(g / l) sin(-theta / 2)
    sep = 2 * np.sqrt(P.g / P.l) * np.sin(-pl.theta / 2) * np.cos(pl.theta)
    assert np.max(np.abs(pl.left - sep)) <= 1e-3
    assert np.max(np.abs(pl.right - sep)) <= 1e-3


def test_boundaries_ordered_and_monotone(plane):
    assert plane.position.size >= 50
    assert np.all(plane.left <= plane.right)
    assert np.all(np.diff(plane.right) <= 1e-4)
    assert np.all(np.diff(plane.left) <= 1e-4)


def test_boundaries_reproducible(plane):
    again = compute_boundaries(P, BOUNDS, (-0.3, 0.3), 0.25, RosvSettings(positions=50))
    assert np.array_equal(again.left, plane.left) and np.array_equal(again.right, plane.right)


def test_score_on_boundary_is_zero(plane):
    k = 20
    s = rosv_score(plane.position[k], plane.right[k], plane)
    assert s.distance == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40)
@given(st.floats(-1.0, 1.0), st.floats(-2.0, 1.0), st.floats(0.01, 1.0))
def test_lower_velocity_scores_higher(pos_frac, vel, dv):
    pl = _PLANE
    pos = float(np.interp(pos_frac, [-1, 1], [pl.position.min(), pl.position.max()]))
    v_right = float(np.interp(pos, pl.position, pl.right))
    hi = min(vel, v_right)
    a = rosv_score(pos, hi - dv, pl)
    b = rosv_score(pos, hi, pl)
    assert a.distance >= b.distance - 1e-12


def test_beyond_boundary_is_negative(plane):
    s = rosv_score(0.0, float(np.interp(0.0, plane.position, plane.right)) + 0.5, plane)
    assert s.distance < 0 and "beyond forward-fall boundary" in s.flags
    slow = rosv_score(plane.position[0], float(plane.left[0]) - 0.5, plane)
    assert slow.distance > 0 and "insufficient velocity" in slow.flags


def test_score_out_of_range(plane):
    with pytest.raises(ValueError):
        rosv_score(plane.position.max() + 0.1, 0.0, plane)


def test_boundary_csv(tmp_path, plane):
    plane.to_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == plane.position.size
    assert float(rows[3]["v_right"]) == plane.right[3]


_PLANE = compute_boundaries(P, BOUNDS, (-0.3, 0.3), 0.25, RosvSettings(positions=30))
