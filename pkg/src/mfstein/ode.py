"""Adaptive Dormand-Prince 5(4) integrator with cubic Hermite dense output.

Written in-house rather than wrapping ``scipy.integrate.solve_ivp`` because
mean-field states must stay in [0, 1]^n: a step that leaves the box is
rejected and retried with half the step, which scipy cannot express.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class StiffnessError(RuntimeError):
    """Step size underflow."""

    def __init__(self, t: float, h: float):
        super().__init__(f"step size underflow (h={h:.3g}) at t={t:.6g}; "
                         "problem may be stiff or leave the domain")
        self.t = t


# Dormand & Prince (1980) coefficients, Hairer-Norsett-Wanner I, table 5.2
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
               187 / 2100, 1 / 40])
E = B5 - B4

DOMAIN_SLACK = 1e-9
CLAMP_EPS = 1e-12


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    domain_rejected: int = 0
    nfev: int = 0


@dataclass
class OdeSolution:
    """Accepted step points plus derivatives, enough for Hermite interpolation."""
    t: np.ndarray
    y: np.ndarray        # (len(t), dim)
    f: np.ndarray        # derivative at each step point
    stats: StepStats = field(default_factory=StepStats)
    stopped_early: bool = False

    def __call__(self, tq) -> np.ndarray:
        """Cubic Hermite interpolant; returns (len(tq), dim) or (dim,) for scalar tq."""
        scalar = np.ndim(tq) == 0
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        if tq.min() < self.t[0] - 1e-12 or tq.max() > self.t[-1] + 1e-12:
            raise ValueError("query time outside integrated interval")
        i = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[i], self.t[i + 1]
        h = (t1 - t0)[:, None]
        s = ((tq - t0) / (t1 - t0))[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = (h00 * self.y[i] + h10 * h * self.f[i]
               + h01 * self.y[i + 1] + h11 * h * self.f[i + 1])
        return out[0] if scalar else out


def _initial_step(fun, t0, y0, f0, tol):
    sc = tol + tol * np.abs(y0)
    d0 = np.max(np.abs(y0) / sc)
    d1 = np.max(np.abs(f0) / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate_rk45(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0,
    horizon: float,
    tol: float = 1e-8,
    bounded=None,
    stop: Callable[[float, np.ndarray], bool] | None = None,
    h_max: float = np.inf,
    h_min: float = 1e-14,
    max_steps: int = 1_000_000,
) -> OdeSolution:
    """Integrate ``y' = fun(t, y)`` on ``[0, horizon]``.

    Local error per step is kept below ``tol`` in the mixed norm
    ``max_i |err_i| / (tol + tol*|y_i|)``. ``bounded`` selects the entries
    (index array or slice) that must stay in [0, 1]; a step that leaves the
    box by more than 1e-9 is rejected and halved, and tiny excursions below
    1e-12 are clamped. ``stop(t, y)`` is called after each accepted step and
    ends the integration when it returns True.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.array(y0, dtype=float).ravel()
    t = 0.0
    stats = StepStats()

    def f(tt, yy):
        stats.nfev += 1
        return fun(tt, yy)

    fy = f(t, y)
    ts, ys, fs = [t], [y.copy()], [fy.copy()]
    if horizon <= 0:
        return OdeSolution(np.array(ts), np.array(ys), np.array(fs), stats)
    h = min(_initial_step(f, t, y, fy, tol), horizon, h_max)
    stopped = False
    K = np.empty((7, y.size))

    while t < horizon:
        if stats.accepted + stats.rejected > max_steps:
            raise RuntimeError(f"max_steps exceeded at t={t:.6g}")
        if h < h_min * max(1.0, abs(t)):
            raise StiffnessError(t, h)
        last = t + h >= horizon - 1e-12 * max(1.0, horizon)
        if last:
            h = horizon - t
        K[0] = fy
        for s in range(1, 7):
            K[s] = f(t + C[s] * h, y + h * np.dot(A[s], K[:s]))
        y_new = y + h * np.dot(B5, K)
        err_vec = h * np.dot(E, K)
        sc = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.max(np.abs(err_vec) / sc)

        if err > 1.0:
            stats.rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
            continue

        clamped = False
        if bounded is not None:
            yb = y_new[bounded]
            if np.any(yb < -DOMAIN_SLACK) or np.any(yb > 1 + DOMAIN_SLACK):
                stats.rejected += 1
                stats.domain_rejected += 1
                h *= 0.5
                continue
            tiny = (yb < 0) & (yb > -CLAMP_EPS)
            if np.any(tiny):
                clamped = True
                y_new[bounded] = np.where(tiny, 0.0, yb)

        t = horizon if last else t + h
        y = y_new
        fy = f(t, y) if clamped else K[6].copy()
        stats.accepted += 1
        ts.append(t)
        ys.append(y.copy())
        fs.append(fy.copy())
        if stop is not None and stop(t, y):
            stopped = True
            break
        fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h = min(h * fac, h_max)

    return OdeSolution(np.array(ts), np.array(ys), np.array(fs), stats, stopped)
