"""Time averages of piecewise-constant paths with batch-means standard errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class BatchEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    batches: np.ndarray     # (n_batches, ...) per-batch time averages


def batch_time_averages(jump_times, values, t_end, t_start=0.0, n_batches=20):
    """Per-batch time averages of a right-continuous step function.

    ``values[k]`` is held on ``[jump_times[k], jump_times[k+1])`` and the
    last value until ``t_end``. ``values`` may carry trailing dimensions.
    The window ``[t_start, t_end]`` is split into ``n_batches`` equal
    pieces.
    """
    jump_times = np.asarray(jump_times, dtype=float)
    values = np.asarray(values, dtype=float)
    if t_end <= t_start:
        raise InsufficientData("averaging window is empty (horizon shorter than burn-in)")
    if n_batches < 2:
        raise ValueError("need at least two batches")
    knots = np.append(jump_times, t_end)
    dt = np.diff(knots).reshape((-1,) + (1,) * (values.ndim - 1))
    cum = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(values * dt, axis=0)])
    edges = np.linspace(t_start, t_end, n_batches + 1)
    # cumulative integral is piecewise linear in t, so linear interpolation is exact
    idx = np.clip(np.searchsorted(knots, edges, side="right") - 1, 0, len(values) - 1)
    at_edges = cum[idx] + values[idx] * (edges - knots[idx]).reshape(
        (-1,) + (1,) * (values.ndim - 1))
    width = (t_end - t_start) / n_batches
    return np.diff(at_edges, axis=0) / width


def batch_means(batches) -> BatchEstimate:
    """Grand mean and standard error from equal-size batch averages."""
    batches = np.asarray(batches, dtype=float)
    B = batches.shape[0]
    mean = batches.mean(axis=0)
    se = batches.std(axis=0, ddof=1) / np.sqrt(B)
    return BatchEstimate(mean, se, batches)
