"""End-to-end acceptance checks for the SIS example.

Each test records one ``PASS``/``FAIL`` line with the measured value, then
asserts. The lines are repeated in the pytest terminal summary.
"""
import math
import sys
import time

import numpy as np
import pytest

from mfstein.ctmc import (
    LatticeState,
    empirical_stationary,
    exact_stationary,
    gillespie_simulate,
    msd_sweep,
    occupation,
    stationary_moments,
    uniformize_simulate,
)
from mfstein.meanfield import equilibrium, integrate, sis_closed_form, sis_closed_form_printed
from mfstein.model import SisParams, build_sis, linear_model
from mfstein.perturbation import cumulative_error_scaling, first_order_sensitivity
from mfstein.stein import second_order_remainder_scan, stein_report

SQRT2 = math.sqrt(2.0)
XSTAR = np.array([2 - SQRT2, SQRT2 - 1])
SIS = build_sis(SisParams(0.5, 0.5))
INITIAL = [0.0, 0.25, 0.5, 0.9, 1.0]


LINES = []      # collected for the terminal summary (see conftest.py)


def verdict(label, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail} ({elapsed:.2f}s, budget {budget:g}s)"
    LINES.append(line)
    print(line)
    return ok


def test_c01_equilibrium():
    t0 = time.perf_counter()
    x = equilibrium(SIS)
    err = float(np.max(np.abs(x - XSTAR)))
    assert verdict("1 equilibrium", err < 1e-10, f"max |x - (2-sqrt2, sqrt2-1)| = {err:.2e}",
                   time.perf_counter() - t0, 1)


def _closed_form_error(formula):
    tq = np.linspace(0, 10, 100)
    worst = 0.0
    for a in INITIAL:
        tr = integrate(SIS, [a, 1 - a], 10.0, tol=1e-10, t_eval=tq)
        worst = max(worst, float(np.max(np.abs(tr.states[:, 0] - formula(a, tq)))))
    return worst


def test_c02_closed_form_as_printed():
    t0 = time.perf_counter()
    err = _closed_form_error(sis_closed_form_printed)
    assert verdict("2 closed form (as printed)", err < 1e-6,
                   f"max |x0(t) - formula| = {err:.3g} over 100 points x 5 starts",
                   time.perf_counter() - t0, 5)


def test_c02_closed_form_sign_corrected():
    t0 = time.perf_counter()
    err = _closed_form_error(sis_closed_form)
    assert verdict("2 closed form (numerator sign corrected)", err < 1e-6,
                   f"max |x0(t) - formula| = {err:.2e} over 100 points x 5 starts",
                   time.perf_counter() - t0, 5)


def test_c03_rate_reference_values():
    t0 = time.perf_counter()
    rows = msd_sweep(SIS, range(100, 1001, 100), XSTAR, method="exact", component=0)
    vals = np.array([r["m_times_msd"] for r in rows])
    std = {r["M"]: r["std_dev"] for r in rows}
    in_band = bool(np.all((vals >= 0.21) & (vals <= 0.27)))
    s100 = abs(std[100] - 0.02177) <= 0.1 * 0.02177
    s1000 = abs(std[1000] - 0.0068) <= 0.1 * 0.0068
    detail = (f"M*E[(x0-x0*)^2] in [{vals.min():.4f}, {vals.max():.4f}] "
              f"(band {'ok' if in_band else 'missed'}); std(M=100) = {std[100]:.5f} vs 0.02177, "
              f"std(M=1000) = {std[1000]:.5f} vs 0.0068")
    assert verdict("3 rate-table reference values", in_band and s100 and s1000, detail,
                   time.perf_counter() - t0, 120)


@pytest.fixture(scope="module")
def reports():
    t0 = time.perf_counter()
    out = {M: stein_report(SIS, M, XSTAR) for M in (20, 50)}
    return out, time.perf_counter() - t0


def test_c04_stein_identity(reports):
    reps, elapsed = reports
    worst = max(abs(r.expected_generator_g) for r in reps.values())
    assert verdict("4 Stein identity", worst < 1e-6,
                   f"max over M in {{20, 50}} of |E[G g]| = {worst:.2e}", elapsed, 300)


def test_c05_decomposition(reports):
    reps, elapsed = reports
    r = reps[50]
    gap = r.decomposition_gap
    ta = float(np.max(np.abs(r.term_a)))
    assert verdict("5 decomposition", gap < 1e-5 and ta < 1e-8,
                   f"|E[A+B] - msd| = {gap:.2e}, max |term_A| = {ta:.1e}, msd = "
                   f"{r.direct_msd:.6g}", elapsed, 300)


def test_c06_remainder_scaling():
    t0 = time.perf_counter()
    rows, slope = second_order_remainder_scan(SIS, [50, 100, 200, 400], XSTAR)
    assert verdict("6 Taylor remainder order", abs(slope + 2) <= 0.15,
                   f"log-log slope = {slope:.4f}", time.perf_counter() - t0, 600)


def test_c07_cumulative_error():
    t0 = time.perf_counter()
    z = np.array([-1.0, 1.0]) / SQRT2
    rows, slope = cumulative_error_scaling(SIS, [0.9, 0.1], z, [0.04, 0.02, 0.01, 0.005])
    assert verdict("7 cumulative perturbation error", abs(slope - 2) <= 0.15,
                   f"log-log slope = {slope:.4f}", time.perf_counter() - t0, 60)


def test_c08_sensitivity():
    from scipy.linalg import expm
    t0 = time.perf_counter()
    x = np.array([0.8, 0.2])
    z = np.array([-1.0, 1.0]) / SQRT2
    h = 1e-6
    tq = np.linspace(0, 5, 21)
    st = first_order_sensitivity(SIS, x, 5.0, t_eval=tq)
    up = integrate(SIS, x + h * z, 5.0, tol=1e-12, t_eval=tq).states
    dn = integrate(SIS, x - h * z, 5.0, tol=1e-12, t_eval=tq).states
    fd_err = float(np.max(np.abs(st.Phi @ z - (up - dn) / (2 * h))))
    A = np.array([[-1.0, 0.4], [0.3, -2.0]])
    lt = first_order_sensitivity(linear_model(A), [0.2, 0.1], 2.0, t_eval=[0.5, 1.0, 2.0])
    ex_err = max(float(np.max(np.abs(P - expm(A * t)))) for t, P in zip(lt.times, lt.Phi))
    assert verdict("8 sensitivity", fd_err < 1e-5 and ex_err < 1e-6,
                   f"SIS vs finite differences {fd_err:.1e}; linear vs expm {ex_err:.1e}",
                   time.perf_counter() - t0, 10)


def test_c09_simulator_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for M in (1, 2, 5):
        pi = exact_stationary(SIS, M)
        idx = pi.index()
        for k, sim in enumerate((gillespie_simulate, uniformize_simulate)):
            path = sim(SIS, M, LatticeState.nearest(XSTAR, M), 1e5, seed=0, replica=k)
            for state, est in occupation(path, n_batches=50).items():
                z = abs(est.mean - pi.probabilities[idx[state]]) / est.stderr
                worst = max(worst, float(z))
    p1 = exact_stationary(SIS, 1).probabilities[exact_stationary(SIS, 1).index()[(0, 1)]]
    assert verdict("9 simulator exactness", worst < 3 and abs(p1 - 1 / 3) < 1e-12,
                   f"largest |occupation - pi| = {worst:.2f} standard errors; "
                   f"pi_M=1(infected) = {p1:.15f}", time.perf_counter() - t0, 60)


def test_c10_fluctuation_decay():
    t0 = time.perf_counter()
    devs = []
    for i, M in enumerate((100, 1000, 100_000)):
        path = uniformize_simulate(SIS, M, LatticeState((M, 0), M), 50.0, seed=0, replica=i)
        mom = stationary_moments(empirical_stationary(path), XSTAR)
        devs.append(math.sqrt(mom.msd_components[1]))
    dec = all(a > b for a, b in zip(devs, devs[1:]))
    assert verdict("10 fluctuation decay in M", dec,
                   "std of x1 around sqrt2-1: " + ", ".join(f"{d:.5f}" for d in devs),
                   time.perf_counter() - t0, 600)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
