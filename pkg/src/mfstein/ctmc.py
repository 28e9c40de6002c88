"""The M-particle chain: path simulation, exact stationary laws, moments.

Paths are stored compactly as event times plus the index of the class
that fired; counts are rebuilt by a cumulative sum of jumps.
"""
from __future__ import annotations

import itertools
import math
from array import array
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .model import ModelError, PopulationModel, sample_domain
from .stats import BatchEstimate, InsufficientData, batch_means, batch_time_averages

STATE_CAP = 200_000
DENSE_LIMIT = 5_000
_BLOCK = 1 << 16
_FIRST_BLOCK = 256     # short paths should not pay for a full block


class StateSpaceTooLarge(ValueError):
    pass


class ReducibleChain(ValueError):
    pass


class RateBoundViolation(RuntimeError):
    def __init__(self, counts, total, bound):
        super().__init__(f"total rate {total:.6g} at state {tuple(counts)} exceeds "
                         f"uniformization bound {bound:.6g}")
        self.state = tuple(counts)


@dataclass(frozen=True)
class LatticeState:
    counts: tuple[int, ...]
    M: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if any(c < 0 for c in counts):
            raise ValueError(f"negative count in {counts}")

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.M

    def check(self, model: PopulationModel) -> None:
        if len(self.counts) != model.n:
            raise ValueError("state dimension does not match model")
        if model.conserved and sum(self.counts) != self.M:
            raise ValueError(f"counts {self.counts} do not sum to M={self.M}")
        if any(c > self.M for c in self.counts):
            raise ValueError(f"count exceeds M in {self.counts}")

    @classmethod
    def nearest(cls, x, M: int) -> "LatticeState":
        """Lattice point closest to the fractions ``x`` (largest-remainder rounding)."""
        x = np.asarray(x, dtype=float)
        raw = x * M
        counts = np.floor(raw).astype(int)
        short = int(round(M * x.sum())) - counts.sum()
        for i in np.argsort(-(raw - counts))[:max(short, 0)]:
            counts[i] += 1
        return cls(tuple(counts), M)


@dataclass
class SamplePath:
    model: PopulationModel = field(repr=False)
    M: int
    x0: tuple[int, ...]
    times: np.ndarray           # event times, increasing
    classes: np.ndarray         # index of the fired class per event
    horizon: float
    seed: int
    method: str
    absorbed: bool = False
    ticks: int = 0              # uniformization clock ticks incl. self-loops

    @property
    def n_events(self) -> int:
        return len(self.times)

    def jump_times(self) -> np.ndarray:
        """Start of each holding interval (0 followed by the event times)."""
        return np.concatenate([[0.0], self.times])

    def counts(self) -> np.ndarray:
        """Counts in each holding interval, shape (n_events + 1, n)."""
        steps = self.model.jumps[self.classes] if len(self.classes) else np.zeros(
            (0, self.model.n), dtype=np.int64)
        return np.vstack([np.asarray(self.x0)[None, :],
                          np.asarray(self.x0) + np.cumsum(steps, axis=0)])

    def fractions(self) -> np.ndarray:
        return self.counts() / self.M

    def sample(self, t) -> np.ndarray:
        """Fractions at the given times (right-continuous)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        return self.fractions()[idx]

    def thin(self, n_points: int):
        """State on a regular grid of ``n_points`` times over [0, horizon]."""
        grid = np.linspace(0.0, self.horizon, n_points)
        return grid, self.sample(grid)


def _rng(seed, replica: int = 0) -> np.random.Generator:
    # counter-based generator, one independent stream per (seed, replica)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


def _prepare(model, M, x0):
    if not isinstance(x0, LatticeState):
        x0 = LatticeState(tuple(x0), M)
    if x0.M != M:
        raise ValueError("x0 built for a different M")
    x0.check(model)
    rates = [tc.rate for tc in model.transitions]
    jumps = [tc.jump for tc in model.transitions]
    return x0, rates, jumps


def gillespie_simulate(model: PopulationModel, M: int, x0, horizon: float,
                       seed: int = 0, replica: int = 0) -> SamplePath:
    """Exact direct-method SSA on [0, horizon].

    Holding time ~ Exp(R) with ``R = M * sum_l q_l(x)``, class chosen with
    probability proportional to its rate. A state with R = 0 is absorbing:
    the path stops there and ``absorbed`` is set.
    """
    x0, rates, jumps = _prepare(model, M, x0)
    rng = _rng(seed, replica)
    L, n = len(rates), model.n
    counts = list(x0.counts)
    t = 0.0
    times, classes = array("d"), array("b" if L < 128 else "i")
    absorbed = False
    block = _FIRST_BLOCK
    expo = rng.standard_exponential(block)
    unif = rng.random(block)
    k = 0
    while True:
        x = [c / M for c in counts]
        r = [rf(x) for rf in rates]
        total = math.fsum(r)
        if total <= 0.0:
            absorbed = True
            break
        if k == block:
            block = min(2 * block, _BLOCK)
            expo = rng.standard_exponential(block)
            unif = rng.random(block)
            k = 0
        t += expo[k] / (M * total)
        if t > horizon:
            break
        target = unif[k] * total
        k += 1
        acc = 0.0
        for l in range(L):
            acc += r[l]
            if target < acc and r[l] > 0:
                break
        else:
            l = max(i for i in range(L) if r[i] > 0)
        jl = jumps[l]
        for i in range(n):
            counts[i] += jl[i]
        times.append(t)
        classes.append(l)
    return SamplePath(model, M, x0.counts, np.frombuffer(times, dtype=float).copy(),
                      np.array(classes, dtype=np.int64), horizon, seed, "gillespie",
                      absorbed)


def _lattice_states(model: PopulationModel, M: int, cap: int):
    n = model.n
    if model.conserved:
        size = math.comb(M + n - 1, n - 1)
    else:
        size = (M + 1) ** n
    if size > cap:
        raise StateSpaceTooLarge(f"{size} lattice states exceed cap {cap}")
    if model.conserved:
        states = [c for c in itertools.product(range(M + 1), repeat=n - 1) if sum(c) <= M]
        return [tuple(c) + (M - sum(c),) for c in states]
    return list(itertools.product(range(M + 1), repeat=n))


def default_rate_bound(model: PopulationModel, M: int, n_samples: int = 20_000,
                       factor: float = 1.05) -> float:
    """``factor`` times the largest total rate over a grid of the domain.

    The grid is the lattice itself when it is small, else random domain
    samples plus the vertices.
    """
    try:
        X = np.array(_lattice_states(model, M, cap=n_samples), dtype=float).T / M
    except StateSpaceTooLarge:
        X = sample_domain(model, n_samples, rng=12345)
        verts = np.eye(model.n) if model.conserved else np.array(
            list(itertools.product([0, 1], repeat=model.n)), dtype=float).T
        X = np.hstack([X, verts])
    total = np.clip(model.rates(X), 0, None).sum(axis=0)
    return factor * M * float(total.max())


def uniformize_simulate(model: PopulationModel, M: int, x0, horizon: float,
                        seed: int = 0, rate_bound: float | None = None,
                        replica: int = 0) -> SamplePath:
    """Uniformized simulation with a Poisson(rate_bound) clock and self-loops.

    Each visited state is checked against the bound; a state whose total
    raw rate exceeds it raises ``RateBoundViolation``.
    """
    x0, rates, jumps = _prepare(model, M, x0)
    bound = default_rate_bound(model, M) if rate_bound is None else float(rate_bound)
    if bound <= 0:
        raise ValueError("rate_bound must be positive")
    rng = _rng(seed, replica)
    L, n = len(rates), model.n
    counts = list(x0.counts)
    t = 0.0
    times, classes = array("d"), array("b" if L < 128 else "i")
    block = _FIRST_BLOCK
    expo = rng.standard_exponential(block)
    unif = rng.random(block)
    k = 0
    ticks = 0
    scale = M / bound
    fresh = True
    r = None
    while True:
        if fresh:
            x = [c / M for c in counts]
            r = [rf(x) * scale for rf in rates]
            tot = math.fsum(r)
            if tot > 1.0 + 1e-12:
                raise RateBoundViolation(counts, tot * bound, bound)
            fresh = False
        if k == block:
            block = min(2 * block, _BLOCK)
            expo = rng.standard_exponential(block)
            unif = rng.random(block)
            k = 0
        t += expo[k] / bound
        if t > horizon:
            break
        u = unif[k]
        k += 1
        ticks += 1
        acc = 0.0
        for l in range(L):
            acc += r[l]
            if u < acc:
                break
        else:
            continue            # self-loop
        jl = jumps[l]
        for i in range(n):
            counts[i] += jl[i]
        times.append(t)
        classes.append(l)
        fresh = True
    return SamplePath(model, M, x0.counts, np.frombuffer(times, dtype=float).copy(),
                      np.array(classes, dtype=np.int64), horizon, seed, "uniformization",
                      False, ticks)


@dataclass
class StationaryDistribution:
    kind: str                               # "exact" | "empirical"
    M: int
    support: np.ndarray | None = None       # (S, n) counts
    probabilities: np.ndarray | None = None
    residual: float = 0.0                   # ||pi Q||_inf
    generator: sp.csr_matrix | None = field(default=None, repr=False)
    # empirical: per-batch time averages of x_i and x_i**2
    batch_first: np.ndarray | None = None
    batch_second: np.ndarray | None = None
    burn_in: float = 0.0

    @property
    def fractions(self) -> np.ndarray:
        return self.support / self.M

    def index(self) -> dict:
        return {tuple(int(c) for c in s): i for i, s in enumerate(self.support)}

    def expect(self, values) -> float:
        """Expectation of per-state values over ``support``.

        For empirical distributions this is the time-weighted occupation
        past burn-in.
        """
        return float(np.dot(self.probabilities, values))


def build_generator(model: PopulationModel, M: int, cap: int = STATE_CAP):
    """Sparse generator over the enumerated lattice; returns (states, Q)."""
    states = _lattice_states(model, M, cap)
    S = np.array(states, dtype=np.int64)
    index = {s: i for i, s in enumerate(states)}
    R = M * model.rates(S.T.astype(float) / M)       # (L, S)
    rows, cols, vals = [], [], []
    for l, tc in enumerate(model.transitions):
        tgt = S + np.asarray(tc.jump)
        for i in np.nonzero(R[l] != 0)[0]:
            if R[l, i] < 0:
                raise ModelError(f"negative rate for class {l} at {states[i]}")
            j = index.get(tuple(int(c) for c in tgt[i]))
            if j is None:
                raise ModelError(f"class {l} leaves the lattice from {states[i]} "
                                 f"with positive rate")
            rows.append(i)
            cols.append(j)
            vals.append(R[l, i])
    n_s = len(states)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n_s, n_s))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return S, Q.tocsr()


def exact_stationary(model: PopulationModel, M: int, cap: int = STATE_CAP
                     ) -> StationaryDistribution:
    """Solve ``pi Q = 0, sum(pi) = 1`` on the enumerated lattice."""
    S, Q = build_generator(model, M, cap)
    n_s = S.shape[0]
    off = (Q - sp.diags(Q.diagonal())).tocsr()
    n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ReducibleChain(f"generator has {n_comp} communicating classes")
    if n_s == 1:
        pi = np.ones(1)
    else:
        A = Q.T.tolil()
        A[n_s - 1, :] = np.ones(n_s)
        b = np.zeros(n_s)
        b[-1] = 1.0
        if n_s <= DENSE_LIMIT:
            pi = np.linalg.solve(A.toarray(), b)
        else:
            pi = spla.spsolve(A.tocsc(), b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.max(np.abs(Q.T @ pi)))
    return StationaryDistribution("exact", M, S, pi, residual, Q)


def empirical_stationary(path: SamplePath, burn_in: float | None = None,
                         n_batches: int = 20) -> StationaryDistribution:
    """Time-average moments past burn-in (default: first 20% of the horizon)."""
    burn = 0.2 * path.horizon if burn_in is None else float(burn_in)
    if path.horizon <= burn:
        raise InsufficientData(f"horizon {path.horizon} not longer than burn-in {burn}")
    C = path.counts()
    x = C / path.M
    vals = np.concatenate([x, x * x], axis=1)
    knots = np.append(path.jump_times(), path.horizon)
    b = batch_time_averages(path.jump_times(), vals, path.horizon, burn, n_batches)
    # time-weighted occupation of visited states past burn-in
    dwell = np.diff(np.clip(knots, burn, path.horizon))
    keys, inv = np.unique(C, axis=0, return_inverse=True)
    w = np.bincount(inv.ravel(), weights=dwell, minlength=len(keys))
    keep = w > 0
    n = path.model.n
    return StationaryDistribution("empirical", path.M, support=keys[keep],
                                  probabilities=w[keep] / w[keep].sum(),
                                  batch_first=b[:, :n], batch_second=b[:, n:],
                                  burn_in=burn)


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    msd: float                  # E[sum_i (x_i - x*_i)^2]
    msd_components: np.ndarray  # E[(x_i - x*_i)^2]
    stderr: float               # 0 for exact
    stderr_components: np.ndarray


def stationary_moments(dist: StationaryDistribution, xstar) -> Moments:
    xstar = np.asarray(xstar, dtype=float)
    if dist.kind == "exact":
        X = dist.fractions
        comp = dist.probabilities @ (X - xstar) ** 2
        mean = dist.probabilities @ X
        z = np.zeros_like(comp)
        return Moments(mean, float(comp.sum()), comp, 0.0, z)
    if dist.batch_first is None:
        raise ValueError("empirical distribution carries no batches")
    comp_b = dist.batch_second - 2 * xstar * dist.batch_first + xstar ** 2
    est_c = batch_means(comp_b)
    est = batch_means(comp_b.sum(axis=1))
    return Moments(dist.batch_first.mean(axis=0), float(est.mean), est_c.mean,
                   float(est.stderr), est_c.stderr)


def occupation(path: SamplePath, burn_in: float | None = None,
               n_batches: int = 20) -> dict[tuple[int, ...], BatchEstimate]:
    """Time fraction spent in each visited lattice state, with batch-means errors."""
    burn = 0.2 * path.horizon if burn_in is None else float(burn_in)
    C = path.counts()
    keys, inv = np.unique(C, axis=0, return_inverse=True)
    onehot = np.zeros((len(C), len(keys)))
    onehot[np.arange(len(C)), inv.ravel()] = 1.0
    b = batch_time_averages(path.jump_times(), onehot, path.horizon, burn, n_batches)
    est = batch_means(b)
    return {tuple(int(c) for c in k): BatchEstimate(est.mean[i], est.stderr[i], b[:, i])
            for i, k in enumerate(keys)}


def msd_sweep(model: PopulationModel, M_list, xstar, method: str = "exact",
              horizon: float = 2_000.0, burn_in: float | None = None,
              seed: int = 0, simulator: str = "uniformization",
              component: int | None = None, n_batches: int = 20) -> list[dict]:
    """Mean-square deviation from ``xstar`` for each M.

    ``component`` selects a single coordinate (e.g. 0 for ``E[(x0-x0*)^2]``);
    None sums all coordinates. Simulated rows start from the lattice point
    nearest ``xstar``.
    """
    M_list = list(M_list)
    if not M_list:
        raise ValueError("M_list must be nonempty")
    rows = []
    for i, M in enumerate(M_list):
        if method == "exact":
            dist = exact_stationary(model, M)
        elif method == "simulate":
            start = LatticeState.nearest(xstar, M)
            sim = uniformize_simulate if simulator == "uniformization" else gillespie_simulate
            path = sim(model, M, start, horizon, seed=seed, replica=i)
            dist = empirical_stationary(path, burn_in, n_batches)
        else:
            raise ValueError(f"unknown method {method!r}")
        mom = stationary_moments(dist, xstar)
        if component is None:
            msd, se = mom.msd, mom.stderr
        else:
            msd, se = float(mom.msd_components[component]), float(mom.stderr_components[component])
        rows.append({"M": M, "msd": msd, "m_times_msd": M * msd, "stderr": se,
                     "std_dev": math.sqrt(msd), "method": method, "seed": seed})
    return rows
