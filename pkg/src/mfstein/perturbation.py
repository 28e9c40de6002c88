"""First-order perturbation of the mean-field flow in its initial condition.

For a base start ``x`` and a perturbed start ``y = x + eps*z`` the flow is
split as ``x(t, y) = x(t, x) + Phi(t) (y - x) + e(t)`` where ``Phi`` solves
the variational equation ``Phi' = J(x(t, x)) Phi``, ``Phi(0) = I``. The
three pieces are integrated as one augmented system so they share a step
sequence; ``e`` is a difference of nearly equal numbers and would
otherwise pick up interpolation noise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .meanfield import conserved_basis, jacobian, stability_report
from .model import PopulationModel, drift
from .ode import OdeSolution, integrate_rk45

PERTURB_TOL = 1e-10
E_FLOOR = 1e-12
E_FLOOR_STEPS = 5


class ExponentialStabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SensitivityTrajectory:
    times: np.ndarray
    Phi: np.ndarray         # (len(times), n, n)
    base: np.ndarray        # (len(times), n)
    solution: OdeSolution

    def at(self, t):
        y = self.solution(t)
        n = self.base.shape[1]
        return y[..., :n], y[..., n:].reshape(y.shape[:-1] + (n, n))


def _bounded(model, count):
    return slice(0, count) if model.bounded else None


def first_order_sensitivity(model: PopulationModel, x, horizon: float,
                            tol: float = PERTURB_TOL, t_eval=None) -> SensitivityTrajectory:
    """Co-integrate the flow from ``x`` and its Jacobian ``Phi(t)`` w.r.t. ``x``."""
    x = np.asarray(x, dtype=float)
    n = model.n

    def rhs(t, y):
        xt = y[:n]
        phi = y[n:].reshape(n, n)
        return np.concatenate([drift(model, xt), (jacobian(model, xt, "auto") @ phi).ravel()])

    y0 = np.concatenate([x, np.eye(n).ravel()])
    sol = integrate_rk45(rhs, y0, horizon, tol=tol, bounded=_bounded(model, n))
    if t_eval is None:
        times, Y = sol.t, sol.y
    else:
        times = np.asarray(t_eval, dtype=float)
        Y = sol(times)
    return SensitivityTrajectory(times, Y[:, n:].reshape(-1, n, n), Y[:, :n], sol)


def _restricted_norms(model, Phi):
    if model.conserved:
        V = conserved_basis(model.n)
        Phi = Phi @ V
    return np.linalg.norm(Phi, ord=2, axis=(1, 2))


def sensitivity_decay_check(model: PopulationModel, x, xstar=None,
                            horizon: float | None = None, tol: float = PERTURB_TOL) -> float:
    """Exponential rate of ``||Phi(t)||`` fitted over the second half of the run.

    For conserved models ``Phi`` is restricted to the zero-sum subspace (the
    conserved direction does not decay). A nonnegative rate emits an
    ``ExponentialStabilityWarning``.
    """
    if horizon is None:
        horizon = 10.0
        if xstar is not None:
            ab = stability_report(model, xstar).spectral_abscissa
            if ab < 0:
                horizon = 20.0 / abs(ab)
    st = first_order_sensitivity(model, x, horizon, tol,
                                 t_eval=np.linspace(0, horizon, 401))
    norms = _restricted_norms(model, st.Phi)
    tail = st.times >= horizon / 2
    keep = tail & (norms > 1e-300)
    rate = float(np.polyfit(st.times[keep], np.log(norms[keep]), 1)[0])
    if rate >= 0:
        warnings.warn(f"sensitivity does not decay (fitted rate {rate:.3g})",
                      ExponentialStabilityWarning, stacklevel=2)
    return rate


@dataclass(frozen=True)
class PerturbationRun:
    x: np.ndarray
    y: np.ndarray
    epsilon: float
    z: np.ndarray
    times: np.ndarray
    base: np.ndarray            # x(t, x)
    perturbed: np.ndarray       # x(t, y)
    Phi: np.ndarray             # (len(times), n, n)
    e: np.ndarray               # (len(times), n)
    cumulative: float           # int_0^T ||e(t)|| dt
    linear_sq: float            # int_0^T sum_i ((Phi(t)(y - x))_i)^2 dt
    sup_b: float                # sup_t max_i |e_i + 2 (Phi (y-x))_i + 2 (x_i(t) - x*_i)|
    truncated_at: float
    stats: object = None

    @property
    def e_norm(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=1)

    def accounting_residual(self) -> float:
        """``max ||x(t,y) - x(t,x) - Phi(y-x) - e||`` over the stored samples."""
        d = self.y - self.x
        lin = np.einsum("kij,j->ki", self.Phi, d)
        return float(np.max(np.abs(self.perturbed - self.base - lin - self.e)))


def error_trajectory(model: PopulationModel, x, y, horizon: float = 200.0,
                     tol: float = PERTURB_TOL, xstar=None, t_eval=None) -> PerturbationRun:
    """Second-order error ``e(t)`` of the linearized flow from ``x`` toward ``y``.

    The run ends at ``horizon`` or once ``||e|| < 1e-12`` for five
    consecutive accepted steps; the neglected tail decays geometrically.
    When ``t_eval`` is given the run covers exactly ``[0, max(t_eval)]``.
    ``int ||e|| dt`` and ``int ||Phi (y - x)||^2 dt`` are carried as extra
    ODE components.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = model.n
    d = y - x
    eps = float(np.linalg.norm(d))
    z = d / eps if eps > 0 else np.zeros(n)
    xs = np.zeros(n) if xstar is None else np.asarray(xstar, dtype=float)

    def split(v):
        return v[:n], v[n:2 * n], v[2 * n:2 * n + n * n].reshape(n, n)

    def err(v):
        xa, xb, phi = split(v)
        return (xb - xa) - phi @ d

    def rhs(t, v):
        xa, xb, phi = split(v)
        e = (xb - xa) - phi @ d
        lin = phi @ d
        return np.concatenate([
            drift(model, xa), drift(model, xb),
            (jacobian(model, xa, "auto") @ phi).ravel(),
            [np.linalg.norm(e), lin @ lin],
        ])

    quiet = [0]

    def stop(t, v):
        quiet[0] = quiet[0] + 1 if np.linalg.norm(err(v)) < E_FLOOR else 0
        return quiet[0] >= E_FLOOR_STEPS

    v0 = np.concatenate([x, y, np.eye(n).ravel(), [0.0, 0.0]])
    early = eps > 0 and t_eval is None
    if t_eval is not None:
        # sampled output must cover the requested grid, so no early stop
        horizon = float(np.max(t_eval))
    sol = integrate_rk45(rhs, v0, horizon, tol=tol, bounded=_bounded(model, 2 * n),
                         stop=stop if early else None)
    V = sol.y if t_eval is None else sol(np.asarray(t_eval, dtype=float))
    times = sol.t if t_eval is None else np.asarray(t_eval, dtype=float)
    base, pert = V[:, :n], V[:, n:2 * n]
    Phi = V[:, 2 * n:2 * n + n * n].reshape(-1, n, n)
    e = (pert - base) - np.einsum("kij,j->ki", Phi, d)
    if eps == 0:
        e = np.zeros_like(e)
    # bound constant from the step points, where the solution is most accurate
    Ys = sol.y
    bs, ps = Ys[:, :n], Ys[:, n:2 * n]
    lins = np.einsum("kij,j->ki", Ys[:, 2 * n:2 * n + n * n].reshape(-1, n, n), d)
    es = (ps - bs) - lins
    sup_b = float(np.max(np.abs(es + 2 * lins + 2 * (bs - xs))))
    return PerturbationRun(x, y, eps, z, times, base, pert, Phi, e,
                           float(sol.y[-1, -2]), float(sol.y[-1, -1]), sup_b,
                           float(sol.t[-1]), sol.stats)


def cumulative_error_scaling(model: PopulationModel, x, z, eps_list,
                             tol: float = PERTURB_TOL, horizon: float = 200.0
                             ) -> tuple[list[dict], float]:
    """``int ||e|| dt`` for each eps and the log-log slope against eps.

    Rows whose cumulative error is below ten times the integrator
    tolerance are flagged ``noise_limited`` and left out of the fit.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    rows = []
    for eps in eps_list:
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        y = x + eps * z
        if np.any(y < 0) or np.any(y > 1):
            raise ValueError(f"x + {eps}*z leaves the domain")
        run = error_trajectory(model, x, y, horizon, tol)
        rows.append({"epsilon": float(eps), "cumulative_error": run.cumulative,
                     "noise_limited": run.cumulative < 10 * tol})
    fit = [r for r in rows if not r["noise_limited"]]
    slope = float("nan")
    if len(fit) >= 2:
        slope = float(np.polyfit(np.log([r["epsilon"] for r in fit]),
                                 np.log([r["cumulative_error"] for r in fit]), 1)[0])
    for r in rows:
        r["fit_slope"] = slope
    return rows, slope


def remainder_bound(model: PopulationModel, x, y, xstar, tol: float = PERTURB_TOL,
                    horizon: float = 200.0) -> dict:
    """Right-hand side ``b*sqrt(n)*int||e|| + int sum_i (Phi(y-x))_i^2`` of the
    second-order remainder bound, with ``b`` measured on the trajectory."""
    run = error_trajectory(model, x, y, horizon, tol, xstar=xstar)
    b = run.sup_b
    rhs = b * np.sqrt(model.n) * run.cumulative + run.linear_sq
    return {"b": b, "cumulative_error": run.cumulative, "linear_sq": run.linear_sq,
            "bound": float(rhs)}
