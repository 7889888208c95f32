import numpy as np
import pytest

from stsbos.models import ControlAffineField, IpmParams, ipm_dynamics_exact, ipm_polynomial_field, StateBox
from stsbos.optcontrol import TrackingProblem, TrackingSolution, rollout, solve_tracking, transcribe
from stsbos.poly import Polynomial
from stsbos.signal import ObservedTrajectory, SynthStsSpec, generate_synthetic_sts


def integrator():
    return ControlAffineField([Polynomial.zero(2)], [[Polynomial.constant(2, 1.0)]])


def linear_pendulum(a=9.81):
    x1, x2 = Polynomial.variable(3, 1), Polynomial.variable(3, 2)
    return ControlAffineField([x2, a * x1], [[Polynomial.zero(3)], [Polynomial.constant(3, 1.0)]])


def observed(t, x, names=None):
    x = np.asarray(x, float).reshape(len(t), -1)
    return ObservedTrajectory(t, x, names or [f"x{i}" for i in range(x.shape[1])], (len(t) - 1) / (t[-1] - t[0]))


def test_variable_count_ipm():
    fld = ipm_polynomial_field(IpmParams(60.0, 0.9))
    t = np.linspace(0, 1, 101)
    prob = TrackingProblem(fld, observed(t, np.zeros((101, 2))), input_degree=6, nodes=101)
    assert prob.n_variables == 209


def test_two_node_integrator_defect_by_hand():
    t = np.linspace(0, 1, 11)
    tr = transcribe(TrackingProblem(integrator(), observed(t, t), input_degree=0, nodes=2))
    X = np.array([[0.0], [1.0]])
    # x1 - x0 - (h/2)(u + u) with u = a0
    assert tr.defects(X, np.array([[1.0]])).ravel() == pytest.approx([0.0])
    assert tr.defects(X, np.array([[0.25]])).ravel() == pytest.approx([0.75])


def test_perfect_tracking_objective_zero():
    t = np.linspace(0, 1, 101)
    tr = transcribe(TrackingProblem(integrator(), observed(t, t), input_degree=1, nodes=101))
    assert tr.objective(tr.x_ref) == pytest.approx(0.0, abs=1e-15)


def test_ramp_gives_unit_input():
    t = np.linspace(0, 1, 101)
    sol = solve_tracking(TrackingProblem(integrator(), observed(t, t), input_degree=6, nodes=101))
    assert sol.converged
    grid = np.linspace(0, 1, 201)
    assert np.max(np.abs(sol.inputs(grid)[:, 0] - 1.0)) <= 1e-3
    assert sol.objective <= 1e-8
    assert sol.max_defect <= 1e-6


def test_equilibrium_needs_no_input():
    t = np.linspace(0, 1, 101)
    sol = solve_tracking(TrackingProblem(linear_pendulum(), observed(t, np.zeros((101, 2))), input_degree=4, nodes=51))
    assert sol.converged
    assert np.max(np.abs(sol.inputs(np.linspace(0, 1, 50)))) <= 1e-6


def test_round_trip_linear_pendulum():
    u_star = lambda t: 2.0 - 6.0 * t + 3.0 * t ** 2
    fld = linear_pendulum(4.0)
    # fine RK4 reference of the known input
    steps = 4000
    h = 1.0 / steps
    x = np.array([0.1, -0.2])
    xs = [x.copy()]
    f = lambda tt, xx: np.array([xx[1], 4.0 * xx[0] + u_star(tt)])
    for k in range(steps):
        tt = k * h
        k1 = f(tt, x)
        k2 = f(tt + h / 2, x + h / 2 * k1)
        k3 = f(tt + h / 2, x + h / 2 * k2)
        k4 = f(tt + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs.append(x.copy())
    xs = np.array(xs)[::40]
    t = np.linspace(0, 1, 101)
    sol = solve_tracking(TrackingProblem(fld, observed(t, xs), input_degree=6, nodes=101))
    assert sol.converged
    grid = np.linspace(0, 1, 1001)
    err = np.sqrt(np.trapezoid((sol.inputs(grid)[:, 0] - u_star(grid)) ** 2, grid))
    ref = np.sqrt(np.trapezoid(u_star(grid) ** 2, grid))
    assert err <= 1e-3 * ref


def _sts(duration=1.6):
    return generate_synthetic_sts(SynthStsSpec(duration=duration), "ipm")


def test_degree_nesting_does_not_hurt():
    traj = _sts()
    fld = ipm_polynomial_field(IpmParams(60.0, 0.9))
    objs = [solve_tracking(TrackingProblem(fld, traj, input_degree=d, nodes=101)).objective for d in (3, 6)]
    assert objs[1] <= objs[0] + 1e-9


def test_sts_fit_rollout_and_bounds():
    traj = _sts()
    p = IpmParams(60.0, 0.9)
    lo, hi = traj.x.min(0) - 0.5, traj.x.max(0) + 0.5
    fld = ipm_polynomial_field(p, 5, StateBox(lo, hi, traj.T))
    sol = solve_tracking(TrackingProblem(fld, traj, input_degree=6, nodes=101))
    assert sol.converged and sol.max_defect <= 1e-6
    assert sol.objective <= sol.diagnostics["merit_initial"]
    assert np.all((sol.states >= lo - 1e-9) & (sol.states <= hi + 1e-9))
    rms = np.sqrt(np.mean((sol.states - traj.interp(sol.t)) ** 2, axis=0))
    assert np.all(rms <= 0.02 * np.ptp(traj.x, axis=0))
    # the polynomial field rollout reproduces the node states
    ts, xs = rollout(fld, sol.u_obs, sol.states[0], traj.T, steps=2000)
    node_rows = np.searchsorted(ts, sol.t)
    assert np.sqrt(np.mean((xs[node_rows] - sol.states) ** 2)) <= 5e-3


def test_save_load_round_trip(tmp_path):
    t = np.linspace(0, 1, 101)
    sol = solve_tracking(TrackingProblem(integrator(), observed(t, t ** 2), input_degree=3, nodes=21))
    sol.save(tmp_path / "c.txt", tmp_path / "n.csv")
    back = TrackingSolution.load(tmp_path / "c.txt", tmp_path / "n.csv")
    assert back.converged == sol.converged
    assert back.objective == sol.objective
    assert np.array_equal(back.coefficients, sol.coefficients)
    assert np.array_equal(back.states, sol.states)
    grid = np.linspace(0, 1, 7)
    assert np.allclose(back.inputs(grid), sol.inputs(grid), atol=1e-13)
    assert back.diagnostics["variables"] == sol.diagnostics["variables"]


def test_invalid_problems():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        TrackingProblem(integrator(), observed(t, t), nodes=1)
    with pytest.raises(ValueError):
        TrackingProblem(integrator(), observed(t, t), input_degree=-1)
    with pytest.raises(ValueError):
        TrackingProblem(linear_pendulum(), observed(t, t))
