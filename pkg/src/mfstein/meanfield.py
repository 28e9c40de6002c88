"""Mean-field ODE: trajectories, equilibria, Jacobians and local stability."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import PopulationModel, drift, drift_jacobian_analytic, sample_domain
from .ode import OdeSolution, StepStats, integrate_rk45

SQRT2 = np.sqrt(2.0)
EIG_MARGIN = 1e-9


class EquilibriumNotFound(RuntimeError):
    pass


class ModelAssumptionError(RuntimeError):
    """The model violates an assumption of the analysis (e.g. unique equilibrium)."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (len(times), n)
    dense: bool = True
    stats: StepStats = field(default_factory=StepStats)
    solution: OdeSolution | None = None

    def __call__(self, t) -> np.ndarray:
        if self.solution is None:
            raise ValueError("trajectory has no dense output")
        return self.solution(t)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)])
            for t, row in zip(self.times, self.states):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def integrate(model: PopulationModel, x0, horizon: float, tol: float = 1e-9,
              t_eval=None) -> Trajectory:
    """Solve ``x' = f(x)`` from ``x0`` on ``[0, horizon]``.

    Without ``t_eval`` the returned rows are the accepted step points;
    with it, rows are Hermite-interpolated at the requested times.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ValueError(f"x0 must have shape ({model.n},)")
    if model.bounded and (np.any(x0 < -1e-12) or np.any(x0 > 1 + 1e-12)):
        raise ValueError("x0 outside [0, 1]^n")
    sol = integrate_rk45(lambda t, y: drift(model, y), x0, horizon, tol=tol,
                         bounded=slice(None) if model.bounded else None)
    if t_eval is None:
        return Trajectory(sol.t, sol.y, True, sol.stats, sol)
    t_eval = np.asarray(t_eval, dtype=float)
    return Trajectory(t_eval, sol(t_eval), True, sol.stats, sol)


def jacobian(model: PopulationModel, x, method: str = "fd") -> np.ndarray:
    """Jacobian of the drift at ``x`` (shape (n,) or batch (n, K)).

    ``method="fd"`` uses central differences with step
    ``max(1e-6, 1e-6*||x||)``; ``"analytic"`` uses the classes' rate
    gradients; ``"auto"`` prefers analytic when available.
    """
    if method == "auto":
        method = "analytic" if model.has_analytic_jacobian else "fd"
    x = np.asarray(x, dtype=float)
    if method == "analytic":
        return drift_jacobian_analytic(model, x)
    if method != "fd":
        raise ValueError(f"unknown jacobian method {method!r}")
    n = model.n
    h = max(1e-6, 1e-6 * float(np.linalg.norm(x)))
    cols = []
    for j in range(n):
        dx = np.zeros_like(x)
        dx[j] = h
        cols.append((drift(model, x + dx) - drift(model, x - dx)) / (2 * h))
    return np.stack(cols, axis=1)


def conserved_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the zero-sum subspace."""
    # leading n-1 left singular vectors of the centering projector
    u, _, _ = np.linalg.svd(np.eye(n) - np.ones((n, n)) / n)
    return u[:, : n - 1]


def _newton(model, x, tol, max_iter, method):
    """Damped Newton; conserved models get the mass constraint as an extra row."""
    mass = x.sum()

    def residual(z):
        fz = drift(model, z)
        return np.append(fz, z.sum() - mass) if model.conserved else fz

    res = residual(x)
    for _ in range(max_iter):
        if np.linalg.norm(res) <= tol:
            return x
        J = jacobian(model, x, method)
        if model.conserved:
            J = np.vstack([J, np.ones((1, model.n))])
        dx = np.linalg.lstsq(J, -res, rcond=None)[0]
        lam, r0 = 1.0, np.linalg.norm(res)
        while lam > 1e-6:
            xn = x + lam * dx
            rn = residual(xn)
            if np.linalg.norm(rn) < r0 or np.linalg.norm(rn) <= tol:
                break
            lam *= 0.5
        else:
            return None
        x, res = xn, rn
        if not np.all(np.isfinite(x)):
            return None
    return x if np.linalg.norm(res) <= tol else None


def _in_domain(x, slack=1e-9, bounded=True):
    return not bounded or (np.all(x >= -slack) and np.all(x <= 1 + slack))


def _default_guess(model):
    return np.full(model.n, 1.0 / model.n) if model.conserved else np.full(model.n, 0.5)


def equilibrium(model: PopulationModel, guess=None, tol: float = 1e-12,
                max_iter: int = 50, n_starts: int = 4, seed: int = 0,
                method: str = "auto") -> np.ndarray:
    """Find the (assumed unique) equilibrium ``f(x*) = 0`` in the domain.

    Damped Newton on the conserved affine subspace through ``guess``. If
    Newton fails, integrate for a long time and polish the end point.
    Extra starts drawn from the domain check uniqueness; distinct fixed
    points (> 1e-6 apart) raise ``ModelAssumptionError``.
    """
    guess = _default_guess(model) if guess is None else np.asarray(guess, dtype=float)

    def solve_from(x0):
        x = _newton(model, x0.copy(), tol, max_iter, method)
        if x is not None and _in_domain(x, bounded=model.bounded):
            return x
        try:
            traj = integrate(model, np.clip(x0, 0, 1), horizon=500.0, tol=1e-10)
        except Exception:
            return None
        x = _newton(model, traj.final, tol, max_iter, method)
        return x if x is not None and _in_domain(x, bounded=model.bounded) else None

    xstar = solve_from(guess)
    if xstar is None:
        raise EquilibriumNotFound(f"no equilibrium found from guess {guess.tolist()}")
    if n_starts:
        starts = sample_domain(model, n_starts, seed).T
        if model.conserved:
            starts = starts * guess.sum()
        for s in starts:
            other = solve_from(s)
            if other is not None and np.linalg.norm(other - xstar) > 1e-6:
                raise ModelAssumptionError(
                    f"distinct equilibria {xstar.tolist()} and {other.tolist()}")
    return np.where(np.abs(xstar) < 1e-15, 0.0, xstar)


@dataclass(frozen=True)
class StabilityReport:
    equilibrium: np.ndarray
    eigenvalues: np.ndarray         # restricted to the conserved subspace if applicable
    excluded_eigenvalues: np.ndarray
    spectral_abscissa: float
    locally_exponentially_stable: bool
    global_stability: str = "not checked - user-asserted"

    def to_dict(self) -> dict:
        return {
            "equilibrium": self.equilibrium.tolist(),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "excluded_eigenvalues": [[float(z.real), float(z.imag)]
                                     for z in self.excluded_eigenvalues],
            "spectral_abscissa": self.spectral_abscissa,
            "locally_exponentially_stable": self.locally_exponentially_stable,
            "global_stability": self.global_stability,
        }


def reduced_jacobian(model: PopulationModel, x, method: str = "auto") -> np.ndarray:
    """Jacobian restricted to the zero-sum subspace for conserved models."""
    J = jacobian(model, x, method)
    if not model.conserved:
        return J
    V = conserved_basis(model.n)
    return V.T @ J @ V


def stability_report(model: PopulationModel, xstar, margin: float = EIG_MARGIN,
                     method: str = "auto") -> StabilityReport:
    xstar = np.asarray(xstar, dtype=float)
    res = np.linalg.norm(drift(model, xstar))
    if res > 1e-8:
        raise PreconditionError(f"not an equilibrium: ||f(x*)|| = {res:.3g}")
    full = np.linalg.eigvals(jacobian(model, xstar, method))
    eig = np.linalg.eigvals(reduced_jacobian(model, xstar, method))
    excluded = np.array([], dtype=complex)
    if model.conserved:
        # the structural eigenvalue is the one in the full spectrum closest to 0
        # that is not accounted for by the reduced spectrum
        remaining = list(full)
        for z in eig:
            remaining.pop(int(np.argmin([abs(z - w) for w in remaining])))
        excluded = np.array(remaining, dtype=complex)
    abscissa = float(np.max(eig.real)) if eig.size else -np.inf
    return StabilityReport(xstar, eig, excluded, abscissa, abscissa < -margin)


def convergence_from_grid(model: PopulationModel, xstar, n_points: int = 20,
                          horizon: float = 200.0, atol: float = 1e-6, seed: int = 0):
    """Numerical evidence for global attraction: fraction of sampled starts reaching x*."""
    starts = sample_domain(model, n_points, seed).T
    ok = 0
    for s in starts:
        end = integrate(model, s, horizon, tol=1e-9).final
        ok += np.linalg.norm(end - xstar) < atol
    return ok / n_points


def sis_closed_form(x0_initial: float, t) -> np.ndarray:
    """Exact susceptible fraction for SIS with alpha = beta = 1/2.

    Riccati solution of ``x0' = x0**2/2 - 2*x0 + 1``. Relaxes to
    ``2 - sqrt(2)`` with rate ``sqrt(2)``.
    """
    return _closed_form(x0_initial, t, sign=-1.0)


def sis_closed_form_printed(x0_initial: float, t) -> np.ndarray:
    """Same expression with ``+`` in front of the numerator's exponential term.

    Kept for comparison only: it does not satisfy the initial condition
    (at t=0 it returns ``sqrt(2)*(1 - x0_initial)``).
    """
    return _closed_form(x0_initial, t, sign=1.0)


def _closed_form(a, t, sign):
    if not 0.0 <= a <= 1.0:
        raise ValueError("x0_initial must be in [0, 1]")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    u = a - 2 + SQRT2
    e = np.exp(-SQRT2 * t)
    num = sign * e * (2 + SQRT2) * u + (2 - SQRT2) * a - 2
    den = -e * u + a - 2 - SQRT2
    if np.any(np.abs(den) < 1e-14):
        raise ZeroDivisionError("closed-form denominator vanished")
    return num / den


def sis_reduced_derivative(alpha: float, beta: float, x0: float) -> float:
    """d/dx0 of ``-alpha*x0 - beta*x0*(1-x0) + (1-x0)``."""
    return -alpha - beta + 2 * beta * x0 - 1
