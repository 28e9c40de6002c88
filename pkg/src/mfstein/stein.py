"""Poisson-equation solutions and the Stein decomposition of the steady-state error.

The Poisson solution is ``g(x) = -int_0^inf ||x(t, x) - x*||^2 dt``. It is
computed by integrating the flow together with the running cost and, for
the gradient, the sensitivity matrix ``Phi`` and the accumulator
``int 2 (x(t) - x*)^T Phi(t) dt``. Many initial states are integrated as
one vectorized system, so every state sees the same step sequence; this
keeps differences of g between neighbouring lattice points smooth.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ctmc import LatticeState, StationaryDistribution, _lattice_states, exact_stationary
from .meanfield import (
    PreconditionError,
    convergence_from_grid,
    jacobian,
    stability_report,
)
from .model import ModelError, PopulationModel, drift, rate_drift, sample_domain
from .ode import integrate_rk45

DELTA_STOP = 1e-8
TIME_CAP = 1e4


class InstabilityError(RuntimeError):
    """The mean-field flow does not reach x* from some start."""


@dataclass(frozen=True)
class PoissonSolution:
    x: np.ndarray
    g: float
    grad_g: np.ndarray | None
    truncation_time: float
    tail_estimate: float
    residual: float | None      # |grad_g . f(x) - ||x - x*||^2|, None without gradient


def _decay_rate(model, xstar):
    rep = stability_report(model, xstar)
    if not rep.locally_exponentially_stable:
        raise InstabilityError(
            f"x* is not locally exponentially stable (spectral abscissa "
            f"{rep.spectral_abscissa:.3g})")
    return -rep.spectral_abscissa


def solve_poisson_batch(model: PopulationModel, X, xstar, tol: float = 1e-11,
                        gradient: bool = True, delta_stop: float = DELTA_STOP,
                        time_cap: float = TIME_CAP, rate: float | None = None
                        ) -> list[PoissonSolution]:
    """Poisson solutions at the K rows of ``X`` (shape (K, n))."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    xstar = np.asarray(xstar, dtype=float)
    K, n = X.shape
    lam = _decay_rate(model, xstar) if rate is None else rate
    xs = xstar[:, None]
    nx, nphi = n * K, n * n * K
    method = "auto"

    def unpack(y):
        x = y[:nx].reshape(n, K)
        if not gradient:
            return x, None
        phi = y[nx + K: nx + K + nphi].reshape(n, n, K)
        return x, phi

    def rhs(t, y):
        x, phi = unpack(y)
        d = x - xs
        parts = [drift(model, x).ravel(), np.sum(d * d, axis=0)]
        if gradient:
            J = jacobian(model, x, method)
            parts.append(np.einsum("ijk,jlk->ilk", J, phi).ravel())
            parts.append((2.0 * np.einsum("ik,ilk->lk", d, phi)).ravel())
        return np.concatenate(parts)

    y0 = [X.T.ravel(), np.zeros(K)]
    if gradient:
        y0.append(np.repeat(np.eye(n)[:, :, None], K, axis=2).ravel())
        y0.append(np.zeros(nx))
    y0 = np.concatenate(y0)

    def stop(t, y):
        d = y[:nx].reshape(n, K) - xs
        return float(np.max(np.sum(d * d, axis=0))) < delta_stop ** 2

    sol = integrate_rk45(rhs, y0, time_cap, tol=tol,
                         bounded=slice(0, nx) if model.bounded else None, stop=stop)
    if not sol.stopped_early:
        raise InstabilityError(f"flow did not reach x* within t={time_cap:g}")
    T = sol.t[-1]
    yT = sol.y[-1]
    xT, phiT = unpack(yT)
    dT = xT - xs
    s = yT[nx: nx + K]
    tail = np.sum(dT * dT, axis=0) / (2 * lam)
    g = -(s + tail)
    out = []
    if gradient:
        acc = yT[nx + K + nphi:].reshape(n, K)
        tail_grad = np.einsum("ik,ilk->lk", dT, phiT) / lam
        grad = -(acc + tail_grad)
        f0 = drift(model, X.T)
        res = np.abs(np.sum(grad * f0, axis=0) - np.sum((X.T - xs) ** 2, axis=0))
    for k in range(K):
        out.append(PoissonSolution(
            X[k].copy(), float(g[k]),
            grad[:, k].copy() if gradient else None,
            float(T), float(tail[k]),
            float(res[k]) if gradient else None))
    return out


def poisson_g(model: PopulationModel, x, xstar, tol: float = 1e-11) -> PoissonSolution:
    return solve_poisson_batch(model, [x], xstar, tol, gradient=False)[0]


def poisson_gradient(model: PopulationModel, x, xstar, tol: float = 1e-11) -> PoissonSolution:
    return solve_poisson_batch(model, [x], xstar, tol, gradient=True)[0]


class PoissonTable:
    """Poisson solutions memoized by lattice state for one (model, M).

    ``solve`` fills the table for many states in a single batch. Entries
    are written once per key; a duplicate solve of the same key stores an
    identical value, so concurrent fills are harmless.
    """

    def __init__(self, model: PopulationModel, M: int, xstar, tol: float = 1e-11):
        self.model, self.M, self.tol = model, M, tol
        self.xstar = np.asarray(xstar, dtype=float)
        self._memo: dict[tuple[int, ...], PoissonSolution] = {}
        self._rate = _decay_rate(model, self.xstar)

    def solve(self, states) -> None:
        todo = [tuple(int(c) for c in s) for s in states]
        todo = [s for s in dict.fromkeys(todo) if s not in self._memo]
        if not todo:
            return
        X = np.array(todo, dtype=float) / self.M
        sols = solve_poisson_batch(self.model, X, self.xstar, self.tol, rate=self._rate)
        for key, sol in zip(todo, sols):
            self._memo.setdefault(key, sol)

    def solve_lattice(self) -> None:
        self.solve(_lattice_states(self.model, self.M, cap=10 ** 6))

    def __getitem__(self, counts) -> PoissonSolution:
        key = tuple(int(c) for c in (counts.counts if isinstance(counts, LatticeState)
                                     else counts))
        if key not in self._memo:
            self.solve([key])
        return self._memo[key]

    def g(self, counts) -> float:
        return self[counts].g

    def __len__(self):
        return len(self._memo)


def _counts(x):
    return x.counts if isinstance(x, LatticeState) else tuple(int(c) for c in x)


def _neighbours(model, M, counts):
    """(rate q_l, target counts or None) for each class at ``counts``."""
    x = np.asarray(counts, dtype=float) / M
    r = model.rates(x)
    out = []
    for q, tc in zip(r, model.transitions):
        tgt = tuple(c + j for c, j in zip(counts, tc.jump))
        inside = all(0 <= c <= M for c in tgt)
        if q > 0 and not inside:
            raise ModelError(f"class {tc.label or tc.jump} leaves the lattice from {counts}")
        out.append((float(q), tgt if inside else None))
    return out


def generator_apply(model: PopulationModel, M: int, g_eval: Callable, x) -> float:
    """``G g(x) = M * sum_l q_l(x) * (g(x + jump_l/M) - g(x))``.

    ``g_eval`` takes a counts tuple.
    """
    counts = _counts(x)
    gx = g_eval(counts)
    total = 0.0
    for q, tgt in _neighbours(model, M, counts):
        if q > 0:
            total += q * (g_eval(tgt) - gx)
    return M * total


def stein_decomposition(model: PopulationModel, M: int, x, poisson) -> tuple[float, float]:
    """Split ``grad_g . f - G g`` at lattice state ``x`` into (term_A, term_B).

    term_A = grad_g(x) . (f(x) - sum_l q_l M (y_l - x))   (generator mismatch)
    term_B = -M sum_l q_l (g(y_l) - g(x) - grad_g(x) . (y_l - x))
    """
    counts = _counts(x)
    px = poisson[counts]
    xv = np.asarray(counts, dtype=float) / M
    nb = _neighbours(model, M, counts)
    mismatch = drift(model, xv) - rate_drift(model, xv)
    term_a = float(px.grad_g @ mismatch)
    term_b = 0.0
    gen = 0.0
    for (q, tgt), tc in zip(nb, model.transitions):
        if q <= 0:
            continue
        step = np.asarray(tc.jump, dtype=float) / M
        gy = poisson[tgt].g
        term_b -= M * q * (gy - px.g - px.grad_g @ step)
        gen += M * q * (gy - px.g)
    lhs = float(px.grad_g @ drift(model, xv)) - gen
    if abs(term_a + term_b - lhs) > 1e-9 * max(1.0, abs(lhs)):
        raise ArithmeticError("decomposition identity violated")
    return term_a, term_b


def second_order_remainder(poisson_x: PoissonSolution, g_y: float, y) -> float:
    return abs(g_y - poisson_x.g - float(poisson_x.grad_g @ (np.asarray(y) - poisson_x.x)))


def second_order_remainder_scan(model: PopulationModel, M_list, xstar,
                                tol: float = 1e-12, fixed_displacement: float | None = None
                                ) -> tuple[list[dict], float]:
    """Largest ``|g(y) - g(x) - grad_g(x).(y - x)|`` over transition pairs, per M.

    Pairs are lattice states ``x`` and ``y = x + jump/M`` for classes with
    positive rate. With ``fixed_displacement=d`` the neighbour is instead
    ``x + d*jump`` regardless of M (a control that should not shrink).
    Returns the table and the log-log slope of the maxima against M.
    """
    xstar = np.asarray(xstar, dtype=float)
    rate = _decay_rate(model, xstar)
    rows = []
    for M in M_list:
        S = np.array(_lattice_states(model, M, cap=10 ** 6), dtype=float)
        X = S / M
        R = model.rates(X.T)
        pairs = []
        for i in range(len(X)):
            for l, tc in enumerate(model.transitions):
                if R[l, i] <= 0:
                    continue
                step = np.asarray(tc.jump, float) * (1.0 / M if fixed_displacement is None
                                                     else fixed_displacement)
                y = X[i] + step
                if np.all(y >= -1e-12) and np.all(y <= 1 + 1e-12):
                    pairs.append((i, np.clip(y, 0, 1)))
        Y = np.array([p[1] for p in pairs])
        sx = solve_poisson_batch(model, X, xstar, tol, gradient=True, rate=rate)
        if fixed_displacement is None:
            # neighbours are lattice points: reuse the same batch
            index = {tuple(np.round(x * M).astype(int)): k for k, x in enumerate(X)}
            gy = [sx[index[tuple(np.round(y * M).astype(int))]].g for y in Y]
        else:
            gy = [s.g for s in solve_poisson_batch(model, Y, xstar, tol, gradient=False,
                                                   rate=rate)]
        rem = [second_order_remainder(sx[i], g, y) for (i, y), g in zip(pairs, gy)]
        rows.append({"M": M, "max_remainder": float(max(rem)), "pairs": len(pairs)})
    logm = np.log([r["M"] for r in rows])
    logr = np.log([r["max_remainder"] for r in rows])
    slope = float(np.polyfit(logm, logr, 1)[0]) if len(rows) > 1 else float("nan")
    return rows, slope


@dataclass
class ConditionVerdicts:
    bounded_rate_value: float           # E_pi[sum_l q_l]
    bounded_rate_c: float
    bounded_jump_c_tilde: float         # M * max ||y - x||
    bounded_jump_limit: float
    perfect_gap: float                  # sup ||f(x) - sum q M (y - x)||
    expected_generator_gap: float       # E_pi ||f - sum q M (y - x)||
    expected_sq_jump: float             # E_pi[sum q M ||y - x||^2]
    max_jump: float                     # max ||y - x||
    spectral_abscissa: float
    locally_stable: bool
    grid_convergence: float
    max_second_derivative: float
    empirical: bool = False

    def verdicts(self, perfect_tol: float = 1e-12) -> dict[str, str]:
        return {
            "bounded_transition_rate": "PASS" if self.bounded_rate_value <= self.bounded_rate_c
            else "FAIL",
            "bounded_state_transition": "PASS" if self.bounded_jump_c_tilde
            <= self.bounded_jump_limit else "FAIL",
            "perfect_mean_field": "PASS" if self.perfect_gap <= perfect_tol else "FAIL",
            "partial_derivative": "ASSUMED",
            "local_exponential_stability": "PASS" if self.locally_stable else "FAIL",
            "global_asymptotic_stability": "ASSUMED",
        }


def check_conditions(model: PopulationModel, M: int, pi: StationaryDistribution,
                     xstar=None, c: float | None = None, c_tilde: float | None = None,
                     n_samples: int = 2000, seed: int = 0) -> ConditionVerdicts:
    """Measure the quantities behind each convergence condition.

    ``c`` defaults to the supremum of the total normalized rate over a
    domain sample (an M-free constant); ``c_tilde`` defaults to the largest
    integer jump norm.
    """
    X = pi.support / M
    R = model.rates(X.T)
    jumps = model.jumps.astype(float)
    jn = np.linalg.norm(jumps, axis=1)
    Xs = np.hstack([sample_domain(model, n_samples, seed), X.T])
    sup_rate = float(model.rates(Xs).sum(axis=0).max())
    gap_samples = np.linalg.norm(drift(model, Xs) - rate_drift(model, Xs), axis=0)
    gap_pi = np.linalg.norm(drift(model, X.T) - rate_drift(model, X.T), axis=0)
    active = np.any(R > 0, axis=1)
    max_jump = float(jn[active].max() / M) if active.any() else 0.0

    # numerical Hessian magnitude of f on a few samples, as evidence only
    h = 1e-4
    hess = 0.0
    eye = np.eye(model.n) * h
    for xv in sample_domain(model, 20, seed + 1).T:
        for i in range(model.n):
            for j in range(i, model.n):
                ei, ej = eye[i], eye[j]
                d2 = (drift(model, xv + ei + ej) - drift(model, xv + ei - ej)
                      - drift(model, xv - ei + ej) + drift(model, xv - ei - ej)) / (4 * h * h)
                hess = max(hess, float(np.max(np.abs(d2))))

    if xstar is None:
        from .meanfield import equilibrium
        xstar = equilibrium(model)
    try:
        rep = stability_report(model, xstar)
        abscissa, stable = rep.spectral_abscissa, rep.locally_exponentially_stable
    except PreconditionError:
        abscissa, stable = float("nan"), False
    grid = convergence_from_grid(model, xstar, n_points=10) if stable else 0.0

    return ConditionVerdicts(
        bounded_rate_value=pi.expect(R.sum(axis=0)),
        bounded_rate_c=sup_rate if c is None else c,
        bounded_jump_c_tilde=M * max_jump,
        bounded_jump_limit=float(jn.max()) if c_tilde is None else c_tilde,
        perfect_gap=float(max(gap_samples.max(), gap_pi.max())),
        expected_generator_gap=pi.expect(gap_pi),
        expected_sq_jump=pi.expect((R * (jn[:, None] ** 2)).sum(axis=0) / M),
        max_jump=max_jump,
        spectral_abscissa=abscissa,
        locally_stable=stable,
        grid_convergence=grid,
        max_second_derivative=hess,
        empirical=pi.kind != "exact",
    )


@dataclass
class SteinReport:
    M: int
    xstar: np.ndarray
    states: np.ndarray                      # (S, n) counts
    probabilities: np.ndarray
    term_a: np.ndarray
    term_b: np.ndarray
    generator_g: np.ndarray                 # G g at each state
    poisson_residual: np.ndarray
    expected_term_a: float
    expected_term_b: float
    expected_generator_g: float
    direct_msd: float
    conditions: ConditionVerdicts
    tol: float = 1e-5
    extra: dict = field(default_factory=dict)

    @property
    def decomposition_gap(self) -> float:
        return abs(self.expected_term_a + self.expected_term_b - self.direct_msd)

    def to_dict(self) -> dict:
        cond = self.conditions
        return {
            "M": self.M,
            "xstar": self.xstar.tolist(),
            "expected_term_a": self.expected_term_a,
            "expected_term_b": self.expected_term_b,
            "expected_generator_g": self.expected_generator_g,
            "direct_msd": self.direct_msd,
            "decomposition_gap": self.decomposition_gap,
            "max_abs_term_a": float(np.max(np.abs(self.term_a))),
            "max_poisson_residual": float(np.max(self.poisson_residual)),
            "conditions": {k: v for k, v in vars(cond).items()},
            "verdicts": cond.verdicts(),
            "states": [
                {"counts": s.tolist(), "pi": float(p), "term_a": float(a),
                 "term_b": float(b), "generator_g": float(gg)}
                for s, p, a, b, gg in zip(self.states, self.probabilities, self.term_a,
                                          self.term_b, self.generator_g)
            ],
            **self.extra,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)

    def summary(self) -> str:
        c = self.conditions
        v = c.verdicts()
        lines = [
            f"Stein report, M = {self.M}, x* = {np.round(self.xstar, 10).tolist()}",
            f"  bounded transition-rate   {v['bounded_transition_rate']:8s} "
            f"E[sum q] = {c.bounded_rate_value:.6g} <= c = {c.bounded_rate_c:.6g}",
            f"  bounded state transition  {v['bounded_state_transition']:8s} "
            f"M*max||y-x|| = {c.bounded_jump_c_tilde:.6g}",
            f"  perfect mean-field model  {v['perfect_mean_field']:8s} "
            f"sup gap = {c.perfect_gap:.3g}",
            f"  partial derivative        {v['partial_derivative']:8s} "
            f"max |d2f| on samples = {c.max_second_derivative:.3g}",
            f"  local exp. stability      {v['local_exponential_stability']:8s} "
            f"spectral abscissa = {c.spectral_abscissa:.6g}",
            f"  global asympt. stability  {v['global_asymptotic_stability']:8s} "
            f"grid convergence = {c.grid_convergence:.0%}",
            "  asymptotic-accuracy quantities: "
            f"E||f - drift|| = {c.expected_generator_gap:.3g}, "
            f"E[sum q M||y-x||^2] = {c.expected_sq_jump:.3g}, max||y-x|| = {c.max_jump:.3g}",
            f"  E[G g]            = {self.expected_generator_g:.3e}",
            f"  E[term A]         = {self.expected_term_a:.10g}",
            f"  E[term B]         = {self.expected_term_b:.10g}",
            f"  direct E||x-x*||^2 = {self.direct_msd:.10g}",
            f"  decomposition gap = {self.decomposition_gap:.3e} "
            f"({'PASS' if self.decomposition_gap <= self.tol else 'FAIL'} at {self.tol:g})",
        ]
        return "\n".join(lines)


def stein_report(model: PopulationModel, M: int, xstar, tol: float = 1e-11,
                 pi: StationaryDistribution | None = None) -> SteinReport:
    """Evaluate the decomposition at every lattice state under exact pi."""
    xstar = np.asarray(xstar, dtype=float)
    if pi is None:
        pi = exact_stationary(model, M)
    if pi.kind != "exact":
        raise ValueError("the per-state decomposition needs an exact distribution")
    table = PoissonTable(model, M, xstar, tol)
    table.solve(pi.support)
    S = pi.support
    ta, tb, gg, res = [], [], [], []
    for s in S:
        a, b = stein_decomposition(model, M, s, table)
        ta.append(a)
        tb.append(b)
        gg.append(generator_apply(model, M, table.g, s))
        res.append(table[s].residual)
    ta, tb, gg = np.array(ta), np.array(tb), np.array(gg)
    X = S / M
    direct = pi.expect(np.sum((X - xstar) ** 2, axis=1))
    cond = check_conditions(model, M, pi, xstar)
    return SteinReport(M, xstar, S, pi.probabilities, ta, tb, gg, np.array(res),
                       pi.expect(ta), pi.expect(tb), pi.expect(gg), direct, cond)
