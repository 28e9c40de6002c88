import numpy as np
import pytest
from hypothesis import given, strategies as st

from mfstein.model import (
    ModelError,
    PopulationModel,
    SisParams,
    TransitionClass,
    build_sis,
    drift,
    drift_jacobian_analytic,
    linear_model,
    rate_drift,
    sample_domain,
    validate,
)

from conftest import XSTAR

simplex_point = st.floats(0.0, 1.0).map(lambda a: np.array([a, 1.0 - a]))
params = st.tuples(st.floats(0.01, 5.0), st.floats(0.0, 5.0))


def test_sis_rates_at_all_susceptible(sis):
    np.testing.assert_allclose(sis.rates([1.0, 0.0]), [0.5, 0.0])


def test_sis_no_infection_when_all_infected():
    for a, b in [(0.5, 0.5), (2.0, 0.0), (0.1, 3.0)]:
        assert build_sis(SisParams(a, b)).rates([0.0, 1.0])[0] == 0.0


def test_sis_rates_midpoint(sis):
    np.testing.assert_allclose(sis.rates([0.5, 0.5]), [0.375, 0.5], atol=1e-15)


def test_sis_structure(sis):
    assert sis.n == 2 and sis.conserved
    assert [tc.jump for tc in sis.transitions] == [(-1, 1), (1, -1)]


@pytest.mark.parametrize("a,b", [(0.0, 0.5), (-1.0, 0.5), (0.5, -0.1)])
def test_sis_params_rejected(a, b):
    with pytest.raises(ModelError):
        SisParams(a, b)


def test_zero_jump_rejected():
    with pytest.raises(ModelError):
        TransitionClass(jump=(0, 0), rate=lambda x: 1.0)


def test_model_needs_transitions():
    with pytest.raises(ModelError):
        PopulationModel(n=2, transitions=())


def test_drift_at_equilibrium(sis):
    assert np.max(np.abs(drift(sis, XSTAR))) < 1e-12


def test_drift_all_infected(sis):
    np.testing.assert_allclose(drift(sis, [0.0, 1.0]), [1.0, -1.0])


def test_drift_zero_rates():
    m = PopulationModel(2, (TransitionClass((1, -1), lambda x: 0.0 * x[0]),), conserved=True)
    np.testing.assert_array_equal(drift(m, [0.3, 0.7]), [0.0, 0.0])


def test_drift_batched_matches_pointwise(sis):
    X = sample_domain(sis, 30, rng=1)
    D = drift(sis, X)
    for k in range(X.shape[1]):
        np.testing.assert_allclose(D[:, k], drift(sis, X[:, k]), atol=1e-15)


@given(params, simplex_point)
def test_conserved_drift_sums_to_zero(p, x):
    m = build_sis(SisParams(*p))
    assert abs(drift(m, x).sum()) < 1e-14


@given(params)
def test_sis_drift_formula(p):
    a, b = p
    m = build_sis(SisParams(a, b))
    X = sample_domain(m, 1000, rng=0)
    inf = a * X[0] + b * X[0] * X[1]
    expected = np.array([-inf + X[1], inf - X[1]])
    assert np.max(np.abs(drift(m, X) - expected)) < 1e-14


def test_analytic_jacobian_matches_hand(sis):
    x = np.array([0.3, 0.7])
    a = b = 0.5
    d_inf = np.array([a + b * x[1], b * x[0]])
    J = np.vstack([-d_inf + [0, 1], d_inf - [0, 1]])
    np.testing.assert_allclose(drift_jacobian_analytic(sis, x), J, atol=1e-15)


def test_meanfield_override_changes_drift_only(sis):
    import dataclasses
    m = dataclasses.replace(sis, meanfield=lambda x: 2.0 * rate_drift(sis, x))
    x = [0.2, 0.8]
    np.testing.assert_allclose(drift(m, x), 2 * rate_drift(sis, x))
    np.testing.assert_allclose(rate_drift(m, x), rate_drift(sis, x))
    assert not m.has_analytic_jacobian


def test_linear_model_drift():
    A = np.array([[-1.0, 0.5], [0.2, -2.0]])
    m = linear_model(A)
    x = np.array([0.3, -0.4])
    np.testing.assert_allclose(drift(m, x), A @ x)
    assert not m.bounded


def test_validate_sis_passes(sis):
    rep = validate(sis, samples=1000)
    assert rep.passed and rep.summary().startswith("PASS")


def test_validate_reports_negative_rate():
    m = PopulationModel(2, (TransitionClass((-1, 1), lambda x: x[0] - 0.5),), conserved=True)
    rep = validate(m, samples=500)
    assert not rep.passed
    cls, x, val = rep.negative_rates[0]
    assert cls == 0 and x[0] < 0.5 and val < 0
    assert "negative rate" in rep.summary()


def test_validate_reports_conservation_violation():
    m = PopulationModel(2, (TransitionClass((1, 0), lambda x: x[1]),), conserved=True)
    rep = validate(m, samples=10)
    assert not rep.passed and rep.conservation_violations == [(1, 0)]


def test_sample_domain_shapes(sis):
    X = sample_domain(sis, 100, rng=3)
    assert X.shape == (2, 100)
    np.testing.assert_allclose(X.sum(axis=0), 1.0)
    box = sample_domain(linear_model(np.eye(3)), 50, rng=3)
    assert box.shape == (3, 50) and box.min() >= 0 and box.max() <= 1
