"""M-spline hazard basis and its integrated (I-spline) counterpart."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DataError

MIN_DISTINCT_EVENT_TIMES = 5


@dataclass(frozen=True, eq=False)
class MsplineBasis:
    """Clamped M-spline basis normalized so each element integrates to 1.

    Inside ``[low, high]`` the I-spline rises from 0 to 1.  Below ``low`` both
    bases are 0.  Above ``high`` the hazard basis is held at its boundary value
    and the I-spline continues linearly, so the implied cumulative hazard stays
    consistent with the hazard.
    """

    degree: int
    interior_knots: np.ndarray
    boundary_knots: tuple[float, float]

    def __post_init__(self):
        low, high = self.boundary_knots
        inner = np.asarray(self.interior_knots, dtype=np.float64)
        if not 0 < low < high:
            raise DataError("boundary knots must satisfy 0 < low < high")
        if inner.size and (inner.min() <= low or inner.max() >= high):
            raise DataError("interior knots must lie strictly inside the boundaries")
        if np.any(np.diff(inner) <= 0):
            raise DataError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior_knots", inner)
        k = self.degree
        t = np.concatenate([[low] * (k + 1), inner, [high] * (k + 1)])
        M = inner.size + k + 1
        widths = t[k + 1 : k + 1 + M] - t[:M]
        coef = np.diag((k + 1) / widths)
        mspl = BSpline(t, coef, k, extrapolate=False)
        ispl = mspl.antiderivative()
        object.__setattr__(self, "_knots", t)
        object.__setattr__(self, "_mspl", mspl)
        object.__setattr__(self, "_ispl", ispl)
        object.__setattr__(self, "_i_low", ispl(low))
        object.__setattr__(self, "_m_high", mspl(high))
        object.__setattr__(self, "_i_high", ispl(high) - ispl(low))

    @property
    def M(self) -> int:
        return self.interior_knots.size + self.degree + 1

    @property
    def knots(self) -> np.ndarray:
        return self._knots

    def mspline(self, t) -> np.ndarray:
        """(len(t), M) hazard basis values."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        low, high = self.boundary_knots
        out = np.zeros((t.size, self.M))
        inside = (t >= low) & (t <= high)
        if inside.any():
            out[inside] = self._mspl(t[inside])
        out[t > high] = self._m_high
        return np.nan_to_num(out, nan=0.0)

    def ispline(self, t) -> np.ndarray:
        """(len(t), M) integrated basis values; rows are nondecreasing in t."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        low, high = self.boundary_knots
        out = np.zeros((t.size, self.M))
        inside = (t >= low) & (t <= high)
        if inside.any():
            out[inside] = self._ispl(t[inside]) - self._i_low
        above = t > high
        if above.any():
            out[above] = self._i_high + np.outer(t[above] - high, self._m_high)
        return np.nan_to_num(out, nan=0.0)


def knots_from_event_times(event_times, degree: int = 3) -> MsplineBasis:
    """Interior knots at event-time quartiles, widened boundary knots.

    Boundaries sit at the smallest and largest event time, each pushed out by
    the smallest gap between distinct event times.  The lower boundary is kept
    at or above half the smallest event time.  Coinciding quartiles collapse.
    """
    ev = np.asarray(event_times, dtype=np.float64)
    distinct = np.unique(ev)
    if distinct.size < MIN_DISTINCT_EVENT_TIMES:
        raise DataError(
            f"need at least {MIN_DISTINCT_EVENT_TIMES} distinct event times, got {distinct.size}"
        )
    gap = float(np.min(np.diff(distinct)))
    lo_t, hi_t = float(distinct[0]), float(distinct[-1])
    low = max(lo_t - gap, lo_t / 2.0)
    high = hi_t + gap
    interior = np.unique(np.quantile(ev, [0.25, 0.5, 0.75]))
    interior = interior[(interior > low) & (interior < high)]
    return MsplineBasis(degree, interior, (low, high))


def build_mspline_basis(dataset, degree: int = 3) -> MsplineBasis:
    return knots_from_event_times(dataset.time[dataset.event == 1], degree)
