import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from mfstein.meanfield import (
    EquilibriumNotFound,
    ModelAssumptionError,
    PreconditionError,
    conserved_basis,
    equilibrium,
    integrate,
    jacobian,
    reduced_jacobian,
    sis_closed_form,
    sis_closed_form_printed,
    sis_reduced_derivative,
    stability_report,
)
from mfstein.model import (
    PopulationModel,
    SisParams,
    TransitionClass,
    build_sis,
    drift,
    drift_jacobian_analytic,
    linear_model,
    sample_domain,
)

from conftest import SQRT2, XSTAR


def test_integrate_converges_to_equilibrium(sis):
    tr = integrate(sis, [1.0, 0.0], 20.0)
    assert abs(tr.final[0] - (2 - SQRT2)) < 1e-6
    assert tr.times[0] == 0 and np.all(np.diff(tr.times) > 0)


def test_integrate_from_equilibrium_is_constant(sis):
    tr = integrate(sis, XSTAR, 50.0)
    assert np.max(np.abs(tr.states - XSTAR)) < 1e-12
    assert max(np.linalg.norm(drift(sis, s)) for s in tr.states) < 1e-9


def test_integrate_matches_closed_form(sis):
    tq = np.linspace(0, 5, 101)
    tr = integrate(sis, [0.9, 0.1], 5.0, tol=1e-10, t_eval=tq)
    assert np.max(np.abs(tr.states[:, 0] - sis_closed_form(0.9, tq))) < 1e-6


def test_integrate_matches_scipy(sis):
    f = lambda t, y: drift(sis, y)
    ref = solve_ivp(f, (0, 8), [0.2, 0.8], rtol=1e-12, atol=1e-13, dense_output=True)
    tq = np.linspace(0, 8, 40)
    tr = integrate(sis, [0.2, 0.8], 8.0, tol=1e-10, t_eval=tq)
    assert np.max(np.abs(tr.states - ref.sol(tq).T)) < 1e-8


@given(st.floats(0.0, 1.0))
def test_mass_conservation(a):
    m = build_sis(SisParams(0.5, 0.5))
    tr = integrate(m, [a, 1 - a], 10.0)
    assert np.max(np.abs(tr.states.sum(axis=1) - 1)) < 1e-10


def test_integration_error_shrinks_with_tol(sis):
    tq = np.linspace(0, 5, 51)
    errs = []
    for tol in (1e-6, 1e-7, 1e-8):
        tr = integrate(sis, [1.0, 0.0], 5.0, tol=tol)
        errs.append(np.max(np.abs(tr.states[:, 0] - sis_closed_form(1.0, tr.times))))
    # per-step error ~ tol, so a tenfold tolerance cut reduces global error well past 4x
    assert errs[0] / errs[1] >= 4 and errs[1] / errs[2] >= 4


def test_trajectory_csv(tmp_path, sis):
    tr = integrate(sis, [1.0, 0.0], 1.0, t_eval=[0, 0.5, 1.0])
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x_1,x_2" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == 1.0


def test_integrate_rejects_bad_start(sis):
    with pytest.raises(ValueError):
        integrate(sis, [1.5, -0.5], 1.0)


def test_equilibrium_sis(sis):
    x = equilibrium(sis)
    assert abs(x[0] - (2 - SQRT2)) < 1e-10
    assert abs(x[1] - (SQRT2 - 1)) < 1e-10


def test_equilibrium_alpha1_beta0():
    x = equilibrium(build_sis(SisParams(1.0, 0.0)))
    assert abs(x[0] - 0.5) < 1e-10


def _bistable():
    # x' = (x - 0.2)(0.5 - x)(0.8 - x) on [0, 1]: stable points 0.2 and 0.8
    return PopulationModel(1, (
        TransitionClass((1,), lambda x: np.maximum(0, (x[0] - 0.2) * (0.5 - x[0]) * (0.8 - x[0]))),
        TransitionClass((-1,), lambda x: np.maximum(0, -(x[0] - 0.2) * (0.5 - x[0]) * (0.8 - x[0]))),
    ))


def test_distinct_equilibria_raise():
    with pytest.raises(ModelAssumptionError):
        equilibrium(_bistable(), guess=[0.1], n_starts=8)


def test_no_equilibrium_in_domain():
    grow = PopulationModel(1, (TransitionClass((1,), lambda x: 1.0 + 0 * x[0]),))
    with pytest.raises(EquilibriumNotFound):
        equilibrium(grow)


@given(st.sampled_from([0.25, 0.5, 1.0]), st.sampled_from([0.25, 0.5, 1.0]))
def test_equilibrium_stable_on_param_grid(a, b):
    m = build_sis(SisParams(a, b))
    x = equilibrium(m)
    assert np.linalg.norm(drift(m, x)) <= 1e-12
    rep = stability_report(m, x)
    assert rep.locally_exponentially_stable and rep.spectral_abscissa < 0


def test_reduced_derivative_is_minus_sqrt2(sis):
    assert abs(sis_reduced_derivative(0.5, 0.5, 2 - SQRT2) + SQRT2) < 1e-12
    J = reduced_jacobian(sis, XSTAR, method="fd")
    assert abs(J[0, 0] + SQRT2) < 1e-5


def test_linear_jacobian():
    A = np.array([[-1.0, 2.0], [0.3, -4.0]])
    np.testing.assert_allclose(jacobian(linear_model(A), [0.2, 0.4]), A, atol=1e-8)


def test_fd_vs_analytic_jacobian(sis):
    X = sample_domain(sis, 100, rng=7).T
    err = max(np.max(np.abs(jacobian(sis, x, "fd") - drift_jacobian_analytic(sis, x)))
              for x in X)
    assert err < 1e-6


def test_stability_sis(sis):
    rep = stability_report(sis, XSTAR)
    assert len(rep.eigenvalues) == 1 and len(rep.excluded_eigenvalues) == 1
    assert abs(rep.eigenvalues[0] + SQRT2) < 1e-6
    assert abs(rep.excluded_eigenvalues[0]) < 1e-6
    assert rep.locally_exponentially_stable
    assert rep.global_stability.startswith("not checked")


def test_stability_scalar_cases():
    stable = stability_report(linear_model([[-1.0]]), [0.0])
    assert stable.locally_exponentially_stable and abs(stable.eigenvalues[0] + 1) < 1e-8
    unstable = stability_report(linear_model([[1.0]]), [0.0])
    assert not unstable.locally_exponentially_stable


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_stable_iff_negative_abscissa(a, d):
    rep = stability_report(linear_model([[a, 0.5], [0.0, d]]), [0.0, 0.0])
    assert rep.locally_exponentially_stable == (rep.spectral_abscissa < -1e-9)


def test_stability_precondition(sis):
    with pytest.raises(PreconditionError):
        stability_report(sis, [0.5, 0.5])


def test_conserved_basis():
    V = conserved_basis(3)
    np.testing.assert_allclose(V.T @ V, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(V.sum(axis=0), 0, atol=1e-14)


def test_closed_form_fixed_point():
    t = np.linspace(0, 30, 50)
    assert np.max(np.abs(sis_closed_form(2 - SQRT2, t) - (2 - SQRT2))) < 1e-12


@given(st.floats(0.0, 1.0))
def test_closed_form_limit(a):
    assert abs(sis_closed_form(a, 50.0) - (2 - SQRT2)) < 1e-10


@given(st.floats(0.0, 1.0))
def test_closed_form_initial_value(a):
    assert abs(sis_closed_form(a, 0.0) - a) < 1e-12


def test_closed_form_vs_integration_at_t1(sis):
    tr = integrate(sis, [1.0, 0.0], 1.0, tol=1e-10)
    assert abs(tr.final[0] - sis_closed_form(1.0, 1.0)) < 1e-6


def test_printed_form_misses_initial_value():
    # the as-printed sign gives sqrt(2)*(1 - a) at t = 0
    for a in (0.0, 0.3, 0.9):
        assert abs(sis_closed_form_printed(a, 0.0) - SQRT2 * (1 - a)) < 1e-12


def test_closed_form_domain_checks():
    with pytest.raises(ValueError):
        sis_closed_form(1.5, 1.0)
    with pytest.raises(ValueError):
        sis_closed_form(0.5, -1.0)
