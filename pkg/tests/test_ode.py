import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from mfstein.ode import StiffnessError, integrate_rk45


def test_exponential_decay():
    sol = integrate_rk45(lambda t, y: -y, [1.0], 5.0, tol=1e-10)
    assert sol.t[0] == 0 and sol.t[-1] == 5.0
    assert abs(sol.y[-1, 0] - np.exp(-5.0)) < 1e-9
    assert np.all(np.diff(sol.t) > 0)


def test_dense_output_matches_exact():
    sol = integrate_rk45(lambda t, y: -2 * y, [1.0], 3.0, tol=1e-10)
    tq = np.linspace(0, 3, 97)
    assert np.max(np.abs(sol(tq)[:, 0] - np.exp(-2 * tq))) < 1e-7


def test_matches_scipy_on_rotation():
    f = lambda t, y: np.array([y[1], -y[0]])
    ours = integrate_rk45(f, [1.0, 0.0], 10.0, tol=1e-10)
    ref = solve_ivp(f, (0, 10), [1.0, 0.0], rtol=1e-12, atol=1e-12, dense_output=True)
    tq = np.linspace(0, 10, 50)
    assert np.max(np.abs(ours(tq) - ref.sol(tq).T)) < 1e-6


def test_domain_protection_keeps_box():
    # logistic growth that saturates exactly at 1
    sol = integrate_rk45(lambda t, y: 5 * (1 - y), [0.0], 20.0, tol=1e-6, bounded=slice(None))
    assert sol.y.max() <= 1.0 + 1e-9 and sol.y.min() >= 0.0


def test_stop_hook():
    sol = integrate_rk45(lambda t, y: -y, [1.0], 100.0, tol=1e-8,
                         stop=lambda t, y: y[0] < 1e-3)
    assert sol.stopped_early and sol.t[-1] < 100 and sol.y[-1, 0] < 1e-3


def test_query_outside_interval_rejected():
    sol = integrate_rk45(lambda t, y: -y, [1.0], 1.0)
    with pytest.raises(ValueError):
        sol(2.0)


def test_blowup_raises_stiffness():
    with pytest.raises(StiffnessError) as exc:
        integrate_rk45(lambda t, y: y ** 2, [1.0], 2.0, tol=1e-8)
    assert abs(exc.value.t - 1.0) < 1e-3


def test_invalid_tol():
    with pytest.raises(ValueError):
        integrate_rk45(lambda t, y: -y, [1.0], 1.0, tol=0)


@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_linear_scalar_property(a, y0):
    sol = integrate_rk45(lambda t, y: -a * y, [y0], 2.0, tol=1e-10)
    assert abs(sol.y[-1, 0] - y0 * np.exp(-2 * a)) < 1e-8 * max(1, abs(y0))
