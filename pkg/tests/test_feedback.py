import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from stsbos.feedback import (CareError, FeedbackLaw, LqrWeights, assemble_closed_loop, care_residual,
                             fit_reference_polynomial, linearize_small_angle, saturation_check, solve_care)
from stsbos.models import (ControlAffineField, DpmParams, IpmParams, StateBox, TargetSet, TorqueBounds,
                           dpm_dynamics_exact, dpm_polynomial_field, finite_difference_jacobian, ipm_polynomial_field)
from stsbos.poly import Polynomial
from stsbos.signal import ObservedTrajectory, SynthStsSpec, generate_synthetic_sts

DPM = DpmParams(m1=22.0, m2=48.0, l1=0.82, r1=0.45, r2=0.3)


def double_integrator():
    x2 = Polynomial.variable(3, 2)
    return ControlAffineField([x2, Polynomial.zero(3)], [[Polynomial.zero(3)], [Polynomial.constant(3, 1.0)]])


def const(nv, c):
    return Polynomial.constant(nv, c)


# -- linearization --------------------------------------------------------------
def test_ipm_linearization_by_hand():
    A, B = linearize_small_angle(ipm_polynomial_field(IpmParams(1.0, 1.0, 9.81)))
    assert np.allclose(A, [[0, 1], [9.81, 0]], atol=1e-14)
    assert np.allclose(B, [[0], [1]], atol=1e-14)


def test_double_integrator_linearization():
    A, B = linearize_small_angle(double_integrator())
    assert np.array_equal(A, [[0, 1], [0, 0]])
    assert np.array_equal(B, [[0], [1]])


def test_dpm_linearization_matches_finite_differences():
    A, B = linearize_small_angle(dpm_polynomial_field(DPM, 3))
    J = finite_difference_jacobian(lambda x: dpm_dynamics_exact(x, np.zeros(2), DPM), np.zeros(4))
    assert np.allclose(A, J, atol=1e-6)
    Bfd = finite_difference_jacobian(lambda u: dpm_dynamics_exact(np.zeros(4), u, DPM), np.zeros(2))
    assert np.allclose(B, Bfd, atol=1e-6)


# -- Riccati ---------------------------------------------------------------------
def test_scalar_care_by_hand():
    sol = solve_care(np.zeros((1, 1)), np.ones((1, 1)), LqrWeights([[0.5]], [[0.005]]))
    assert sol.P[0, 0] == pytest.approx(0.05, abs=1e-12)
    assert sol.K[0, 0] == pytest.approx(10.0, abs=1e-9)


def test_hurwitz_with_zero_cost():
    sol = solve_care(np.array([[-1.0, 0.3], [0.0, -2.0]]), np.array([[0.0], [1.0]]),
                     LqrWeights(np.zeros((2, 2)), [[0.005]]))
    assert np.allclose(sol.P, 0.0, atol=1e-14)
    assert np.allclose(sol.K, 0.0, atol=1e-12)


def test_ipm_care_defaults():
    A, B = linearize_small_angle(ipm_polynomial_field(IpmParams(1.0, 1.0)))
    w = LqrWeights.default(2, 1)
    sol = solve_care(A, B, w)
    assert np.linalg.norm(care_residual(A, B, w.Q, w.R, sol.P)) <= 1e-8 * np.linalg.norm(w.Q)
    assert np.max(np.linalg.eigvals(A - B @ sol.K).real) < -1e-9
    assert np.max(np.abs(sol.P - sol.P.T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(sol.P)) >= 0


def test_dpm_care_defaults():
    A, B = linearize_small_angle(dpm_polynomial_field(DPM, 3))
    w = LqrWeights.default(4, 2)
    sol = solve_care(A, B, w)
    assert np.linalg.norm(care_residual(A, B, w.Q, w.R, sol.P)) <= 1e-8 * np.linalg.norm(w.Q)
    assert np.max(np.linalg.eigvals(A - B @ sol.K).real) < -1e-9


def test_unstabilizable_pair_rejected():
    with pytest.raises(CareError):
        solve_care(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[1.0], [0.0]]), LqrWeights.default(2, 1))


def test_weights_validated():
    with pytest.raises(ValueError):
        LqrWeights([[1.0]], [[0.0]])
    with pytest.raises(ValueError):
        LqrWeights([[-1.0]], [[1.0]])


@settings(max_examples=30)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(0.2, 2), min_size=2, max_size=2),
       st.floats(1e-3, 10))
@example([0.0, 1.0, -4e-92, -4e-92], [1.0, 1.0], 1.0)  # spectrum within rounding of the axis
@example([0.0, 1.0, -0.5, -4e-92], [1.0, 1.0], 5.0)
def test_care_properties_random(a, b, r):
    A = np.array(a).reshape(2, 2)
    B = np.array(b).reshape(2, 1)
    w = LqrWeights(np.eye(2) / 2, [[r]])
    try:
        sol = solve_care(A, B, w)
    except CareError as exc:
        # only legitimately unstabilizable pairs may be rejected
        assert "stabilizable" in str(exc)
        return
    assert np.linalg.norm(care_residual(A, B, w.Q, w.R, sol.P)) <= 1e-8 * np.linalg.norm(w.Q)
    assert np.max(np.abs(sol.P - sol.P.T)) <= 1e-12 * max(1.0, np.abs(sol.P).max())
    assert np.max(np.linalg.eigvals(A - B @ sol.K).real) < -1e-9


# -- reference fits -------------------------------------------------------------------
def _traj(t, x):
    x = np.asarray(x).reshape(len(t), -1)
    return ObservedTrajectory(t, x, [f"x{i}" for i in range(x.shape[1])], (len(t) - 1) / (t[-1] - t[0]))


def test_polynomial_reference_recovered_exactly():
    t = np.linspace(0, 1.5, 151)
    y = 0.3 - 2 * t + 0.5 * t ** 3 - 0.1 * t ** 5
    polys, err = fit_reference_polynomial(_traj(t, np.column_stack([y, np.full_like(t, 0.7)])), 5)
    z = np.column_stack([t, np.zeros((t.size, 2))])
    assert np.max(np.abs(polys[0].evaluate(z) - y)) <= 1e-9
    assert np.max(np.abs(polys[1].evaluate(z) - 0.7)) <= 1e-12
    assert np.all(err <= 1e-9)


def test_fit_error_nests_in_degree():
    traj = generate_synthetic_sts(SynthStsSpec(), "ipm")
    errs = [np.sqrt(np.mean((np.column_stack([p.evaluate(np.column_stack([traj.t, traj.x]))
                                                for p in fit_reference_polynomial(traj, d)[0]]) - traj.x) ** 2))
            for d in (4, 6, 8)]
    assert errs[0] >= errs[1] >= errs[2]


def test_fit_degree_must_be_below_samples():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        fit_reference_polynomial(_traj(t, t), 5)


# -- the law and the closed loop ----------------------------------------------------
def _law(K, bounds=None, nv=3):
    t = Polynomial.variable(nv, 0)
    u = [0.5 + 0.2 * t]
    xr = [0.1 * t, Polynomial.constant(nv, 0.1)]
    return FeedbackLaw(u, xr, K, bounds)


def test_law_is_affine_in_x():
    law = _law([[-3.0, -1.0]])
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 2))
    for tt in (0.0, 0.4):
        mid = law(tt, x.mean(axis=0, keepdims=True))
        assert np.allclose(0.5 * (law(tt, x[:1]) + law(tt, x[1:])), mid)
    assert np.allclose(law(0.3, law.reference(0.3)), law.feedforward(0.3))


def test_law_save_load(tmp_path):
    law = _law([[-3.0, -1.0]], TorqueBounds([-4.0], [6.0]))
    law.save(tmp_path / "law.txt")
    back = FeedbackLaw.load(tmp_path / "law.txt")
    assert np.array_equal(back.K, law.K) and back.bounds == law.bounds
    rng = np.random.default_rng(1)
    t, x = rng.uniform(0, 1, 20), rng.normal(size=(20, 2))
    assert np.allclose(back(t, x), law(t, x), atol=1e-14)


def test_law_shape_checked():
    with pytest.raises(ValueError):
        _law([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        _law([[np.inf, 0.0]])


def test_closed_loop_identity_and_degree():
    p = IpmParams(60.0, 0.9)
    box = StateBox((-0.5, -1.0), (1.0, 2.0), 1.6)
    fld = ipm_polynomial_field(p, 5, box)
    traj = generate_synthetic_sts(SynthStsSpec(), "ipm")
    xr, _ = fit_reference_polynomial(traj, 6)
    t = Polynomial.variable(3, 0)
    u = [10.0 - 3 * t + t ** 6]
    law = FeedbackLaw(u, xr, [[-400.0, -60.0]])
    cl = assemble_closed_loop(fld, law)  # evaluates the identity at 100 random points
    assert cl.degree() <= 0 + max(6, 6, 1)
    assert cl.degree() == 6
    rng = np.random.default_rng(3)
    tt, xx = rng.uniform(0, 1.6, 100), rng.uniform(box.lo, box.hi, (100, 2))
    assert np.allclose(cl.evaluate(tt, xx), fld.evaluate(tt, xx, law(tt, xx)), atol=1e-10, rtol=0)


def test_ipm_closed_loop_degree_is_taylor_degree_when_law_is_low_order():
    fld = ipm_polynomial_field(IpmParams(60.0, 0.9), 5, StateBox((-1, -1), (1, 1), 1.0))
    cl = assemble_closed_loop(fld, _law([[-100.0, -20.0]]))
    assert cl.degree() == 5


def test_zero_gain_is_feedforward():
    fld = double_integrator().with_bounds(StateBox((-1, -1), (1, 1), 1.0))
    cl = assemble_closed_loop(fld, _law([[0.0, 0.0]]))
    rng = np.random.default_rng(2)
    tt, xx = rng.uniform(0, 1, 30), rng.uniform(-1, 1, (30, 2))
    assert np.allclose(cl.evaluate(tt, xx), np.column_stack([xx[:, 1], 0.5 + 0.2 * tt]))


def test_pure_lqr_loop_is_linear():
    fld = double_integrator().with_bounds(StateBox((-1, -1), (1, 1), 1.0))
    K = np.array([[-2.0, -3.0]])
    law = FeedbackLaw([Polynomial.zero(3)], [Polynomial.zero(3), Polynomial.zero(3)], K)
    cl = assemble_closed_loop(fld, law)
    A, B = linearize_small_angle(fld)
    rng = np.random.default_rng(4)
    xx = rng.uniform(-1, 1, (30, 2))
    assert np.allclose(cl.evaluate(0.0, xx), xx @ (A + B @ K).T)


def test_nominal_trajectory_tracked_into_target():
    from stsbos.models import default_target, derive_state_box
    from stsbos.optcontrol import TrackingProblem, solve_tracking
    from stsbos.oracle import exact_dynamics, simulate_closed_loop
    p = IpmParams(60.0, 0.9)
    traj = generate_synthetic_sts(SynthStsSpec(), "ipm")
    box = derive_state_box(traj)
    fld = ipm_polynomial_field(p, 5, box)
    sol = solve_tracking(TrackingProblem(fld, traj, 6, 101))
    A, B = linearize_small_angle(fld)
    K = -solve_care(A, B, LqrWeights.default(2, 1)).K
    law = FeedbackLaw(sol.u_obs, fit_reference_polynomial(traj, 6)[0], K)
    target = default_target(traj, box)
    batch = simulate_closed_loop(traj.x[:1], 0.0, law, exact_dynamics(p), box, target, step=1e-3, saturate=False)
    assert bool(batch.reached_at_T[0])


# -- saturation -----------------------------------------------------------------------
def test_saturation_free_when_feedforward_inside_bounds():
    law = FeedbackLaw([Polynomial.constant(2, 1.0)], [Polynomial.zero(2)], [[0.0]], TorqueBounds([-2.0], [2.0]))
    rep = saturation_check(law, StateBox((-1,), (1,), 1.0))
    assert rep["max_violation"] == [0.0] and rep["violation_fraction"] == 0.0


def test_saturation_by_hand():
    law = FeedbackLaw([Polynomial.zero(2)], [Polynomial.zero(2)], [[10.0]], TorqueBounds([-5.0], [5.0]))
    rep = saturation_check(law, StateBox((-1,), (1,), 1.0), density=41)
    assert rep["max_violation"][0] == pytest.approx(5.0)


def test_saturation_fraction_grows_with_box():
    law = FeedbackLaw([Polynomial.zero(2)], [Polynomial.zero(2)], [[10.0]], TorqueBounds([-5.0], [5.0]))
    fr = [saturation_check(law, StateBox((-w,), (w,), 1.0), density=201)["violation_fraction"]
          for w in (0.4, 0.6, 1.0, 2.0)]
    assert fr == sorted(fr) and fr[0] == 0.0 and fr[-1] > 0.5
