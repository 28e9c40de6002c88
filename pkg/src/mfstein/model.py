"""Density-dependent population CTMCs.

A model is a list of transition classes. Each class has an integer jump
vector (change of raw counts) and a normalized rate ``q(x)`` in per-node
units; the M-particle chain fires the class at rate ``M * q(x)``.

Rate functions index their argument componentwise (``x[0]``, ``x[1]``, ...)
so the same callable works on a float tuple and on a ``(n, K)`` array of
K states at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class ModelError(ValueError):
    """Invalid model definition or parameters."""


RateFn = Callable[[Sequence[float]], float]


@dataclass(frozen=True)
class TransitionClass:
    jump: tuple[int, ...]
    rate: RateFn
    # optional analytic gradient of ``rate``; returns a length-n sequence
    rate_grad: Callable | None = None
    label: str = ""

    def __post_init__(self):
        jump = tuple(int(j) for j in self.jump)
        if not any(jump):
            raise ModelError("jump vector must be nonzero")
        object.__setattr__(self, "jump", jump)


@dataclass(frozen=True)
class PopulationModel:
    n: int
    transitions: tuple[TransitionClass, ...]
    conserved: bool = False
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)
    # explicit mean-field drift; None means the drift implied by the rates
    meanfield: Callable | None = None
    # states confined to [0, 1]^n; off only for synthetic test dynamics
    bounded: bool = True

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if self.n < 1:
            raise ModelError("n must be >= 1")
        if not self.transitions:
            raise ModelError("model needs at least one transition class")
        for tc in self.transitions:
            if len(tc.jump) != self.n:
                raise ModelError(f"jump {tc.jump} has wrong length for n={self.n}")

    @property
    def jumps(self) -> np.ndarray:
        """Integer array of shape (L, n)."""
        return np.array([tc.jump for tc in self.transitions], dtype=np.int64)

    def rates(self, x) -> np.ndarray:
        """Normalized rates of all classes at ``x``; shape (L,) or (L, K)."""
        x = np.asarray(x, dtype=float)
        out = [np.broadcast_to(np.asarray(tc.rate(x), dtype=float), x.shape[1:])
               for tc in self.transitions]
        return np.array(out)

    @property
    def has_analytic_jacobian(self) -> bool:
        return self.meanfield is None and all(tc.rate_grad is not None
                                              for tc in self.transitions)


@dataclass(frozen=True)
class SisParams:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ModelError(f"alpha must be > 0, got {self.alpha}")
        if not (self.beta >= 0):
            raise ModelError(f"beta must be >= 0, got {self.beta}")


def build_sis(params: SisParams | None = None) -> PopulationModel:
    """SIS model with an external infection source.

    State ``x = (susceptible, infected)`` fractions. A susceptible node is
    infected at rate ``alpha + beta * x1``; an infected node recovers at
    rate 1.
    """
    p = params if params is not None else SisParams()
    a, b = p.alpha, p.beta

    infection = TransitionClass(
        jump=(-1, 1),
        rate=lambda x: a * x[0] + b * x[0] * x[1],
        rate_grad=lambda x: (a + b * x[1], b * x[0]),
        label="infection",
    )
    recovery = TransitionClass(
        jump=(1, -1),
        rate=lambda x: x[1],
        rate_grad=lambda x: (0.0, 1.0),
        label="recovery",
    )
    return PopulationModel(
        n=2,
        transitions=(infection, recovery),
        conserved=True,
        name="sis",
        params={"alpha": a, "beta": b},
    )


def linear_model(A) -> PopulationModel:
    """Model whose drift is exactly ``f(x) = A x``.

    Intended for tests and sanity checks: rates may go negative, so this
    is not a valid CTMC. Each unit direction ``e_i`` gets a class with
    rate ``(A x)_i``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    classes = []
    for i in range(n):
        jump = tuple(1 if k == i else 0 for k in range(n))
        row = A[i].copy()
        classes.append(TransitionClass(
            jump=jump,
            rate=lambda x, row=row: sum(row[k] * x[k] for k in range(len(row))),
            rate_grad=lambda x, row=row: tuple(row),
            label=f"linear_{i}",
        ))
    return PopulationModel(n=n, transitions=tuple(classes), name="linear",
                           params={f"a{i}{j}": A[i, j] for i in range(n) for j in range(n)},
                           bounded=False)


def rate_drift(model: PopulationModel, x) -> np.ndarray:
    """Expected normalized change per unit time, ``sum_l q_l(x) * jump_l``.

    Accepts a single state of shape (n,) or a batch of shape (n, K).
    """
    x = np.asarray(x, dtype=float)
    r = model.rates(x)
    return np.tensordot(model.jumps.T.astype(float), r, axes=(1, 0))


def drift(model: PopulationModel, x) -> np.ndarray:
    """Mean-field vector field f(x).

    Equals ``rate_drift`` unless the model carries its own ``meanfield``
    (an imperfect mean-field model).
    """
    if model.meanfield is not None:
        return np.asarray(model.meanfield(np.asarray(x, dtype=float)), dtype=float)
    return rate_drift(model, x)


def drift_jacobian_analytic(model: PopulationModel, x) -> np.ndarray:
    """Jacobian from the classes' rate gradients; shape (n, n) or (n, n, K)."""
    if not model.has_analytic_jacobian:
        raise ModelError("model does not carry analytic rate gradients")
    x = np.asarray(x, dtype=float)
    J = 0.0
    for tc in model.transitions:
        grad = np.array([np.broadcast_to(np.asarray(g, dtype=float), x.shape[1:])
                         for g in tc.rate_grad(x)])
        jump = np.asarray(tc.jump, dtype=float).reshape((-1, 1) + (1,) * (x.ndim - 1))
        J = J + jump * grad[None, ...]
    return J


@dataclass
class ValidationReport:
    passed: bool
    negative_rates: list = field(default_factory=list)
    conservation_violations: list = field(default_factory=list)
    samples: int = 0

    def summary(self) -> str:
        if self.passed:
            return f"PASS ({self.samples} samples)"
        parts = []
        if self.negative_rates:
            cls, x, val = self.negative_rates[0]
            parts.append(f"{len(self.negative_rates)} negative rate(s), e.g. class "
                         f"{cls} = {val:.3g} at x = {np.round(x, 6).tolist()}")
        if self.conservation_violations:
            parts.append(f"jumps violating conservation: {self.conservation_violations}")
        return "FAIL: " + "; ".join(parts)


def sample_domain(model: PopulationModel, samples: int, rng=None) -> np.ndarray:
    """Uniform samples of shape (n, samples): simplex if conserved, else unit box."""
    rng = np.random.default_rng(rng)
    if model.conserved:
        return rng.dirichlet(np.ones(model.n), size=samples).T
    return rng.uniform(size=(model.n, samples))


def validate(model: PopulationModel, samples: int = 1000, rng=0) -> ValidationReport:
    """Check rates for negativity on sampled states and jumps for conservation.

    Never raises for a bad model; problems are listed on the report.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    report = ValidationReport(passed=True, samples=samples)
    if model.conserved:
        report.conservation_violations = [tc.jump for tc in model.transitions
                                          if sum(tc.jump) != 0]
    X = sample_domain(model, samples, rng)
    R = model.rates(X)
    for l, k in zip(*np.nonzero(R < 0)):
        report.negative_rates.append((l, X[:, k].copy(), float(R[l, k])))
    report.passed = not (report.negative_rates or report.conservation_violations)
    return report
