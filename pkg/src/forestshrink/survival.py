"""Step-function survival curves: Kaplan-Meier and Stieltjes sums."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True, eq=False)
class StepSurvival:
    """Right-continuous non-increasing step function equal to 1 before the first jump."""

    jump_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=np.float64).reshape(-1)
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if t.shape != v.shape:
            raise ValueError("jump_times and values differ in length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0):
            raise ValueError("jump times must be positive and strictly increasing")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.jump_times, t, side="right")
        padded = np.concatenate([[1.0], self.values])
        return padded[idx]

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size


def kaplan_meier(times, events) -> StepSurvival:
    """Product-limit estimate; censorings tied with events leave the risk set after them."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events).reshape(-1).astype(bool)
    if times.size == 0:
        raise DataError("empty input")
    if times.shape != events.shape:
        raise DataError("times and events differ in length")
    uniq, inverse = np.unique(times, return_inverse=True)
    n_at = np.bincount(inverse, minlength=uniq.size)
    d_at = np.bincount(inverse, weights=events, minlength=uniq.size)
    at_risk = times.size - np.concatenate([[0], np.cumsum(n_at)[:-1]])
    has_event = d_at > 0
    factors = 1.0 - d_at[has_event] / at_risk[has_event]
    return StepSurvival(uniq[has_event], np.cumprod(factors))


def step_integral(integrand: StepSurvival, integrator: StepSurvival, L: float) -> float:
    """Stieltjes sum of ``integrand`` against ``integrator`` over ``(0, L]``.

    Each integrator jump at ``u`` is weighted by the integrand's value at the
    preceding grid point of the union of jump times (its value just before
    ``u``), i.e. ``sum_s f(t_s) * (g(t_{s+1}) - g(t_s))`` with ``t_0 = 0``.
    The result is non-positive for a non-increasing integrator.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    grid = np.union1d(integrand.jump_times, integrator.jump_times)
    grid = grid[grid <= L]
    if grid.size == 0:
        return 0.0
    g = integrator(grid)
    dg = np.diff(np.concatenate([[1.0], g]))
    f_before = np.concatenate([[1.0], integrand(grid[:-1])])
    return float(np.dot(f_before, dg))
