"""Standardization (G-computation) and average hazard ratios."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSubgroupError, DataError
from .survival import StepSurvival, step_integral

DEFAULT_GRID_POINTS = 1000


@dataclass(frozen=True)
class AhrEstimate:
    subgroup: str
    point: float
    L: float
    interval: tuple[float, float] | None = None
    gamma: float = 1.0

    @property
    def log_point(self) -> float:
        return float(np.log(self.point))

    @property
    def log_interval(self) -> tuple[float, float] | None:
        if self.interval is None:
            return None
        return float(np.log(self.interval[0])), float(np.log(self.interval[1]))


def standardize_subgroup(curves, indicator=None, n_k: int | None = None):
    """Average per-subject survival curves over a subgroup.

    ``curves`` is either a sequence of :class:`StepSurvival` (averaged on the
    union of their jump times) or an array whose first axis indexes subjects.
    """
    if indicator is not None:
        idx = np.flatnonzero(np.asarray(indicator, dtype=bool))
        curves = [curves[i] for i in idx] if not isinstance(curves, np.ndarray) else curves[idx]
    count = len(curves)
    if count == 0:
        raise DegenerateSubgroupError("empty subgroup")
    if n_k is not None and n_k != count:
        raise ValueError(f"n_k={n_k} but {count} curves supplied")
    if isinstance(curves, np.ndarray):
        return curves.mean(axis=0)
    grid = np.unique(np.concatenate([c.jump_times for c in curves]))
    values = np.mean([c(grid) for c in curves], axis=0)
    return StepSurvival(grid, values)


def ahr_step(S_C: StepSurvival, S_I: StepSurvival, L: float, gamma: float = 1.0) -> float:
    """Average hazard ratio of two step survival curves, integrated up to ``L``."""
    if gamma != 1.0:
        S_C = StepSurvival(S_C.jump_times, S_C.values ** gamma)
        S_I = StepSurvival(S_I.jump_times, S_I.values ** gamma)
    num = -step_integral(S_C, S_I, L)
    den = -step_integral(S_I, S_C, L)
    if not den > 0:
        raise DegenerateSubgroupError("zero denominator: no control-arm mass before L")
    if not num > 0:
        raise DegenerateSubgroupError("zero numerator: no intervention-arm mass before L")
    return num / den


def uniform_grid(L: float, grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """``grid_points + 1`` equally spaced times from 0 to ``L`` inclusive."""
    return np.linspace(0.0, L, grid_points + 1)


def ahr_grid(S_C, S_I, hazard_I, hazard_C, L: float, grid_points: int | None = None):
    """Average hazard ratio from grid-evaluated curves by left Riemann sums.

    Curves are sampled on ``uniform_grid(L, grid_points)`` along their last
    axis.  Leading axes broadcast, so many subgroups or posterior draws can be
    handled in one call.  Entries with a zero denominator come back as NaN.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in (S_C, S_I, hazard_I, hazard_C)]
    lengths = {a.shape[-1] for a in arrays}
    if len(lengths) != 1:
        raise DataError("misaligned grids")
    n_pts = lengths.pop()
    if grid_points is None:
        grid_points = n_pts - 1
    if n_pts != grid_points + 1:
        raise DataError("misaligned grids")
    sc, si, hi, hc = (a[..., :-1] for a in arrays)
    dt = L / grid_points
    num = np.sum(sc * hi * si, axis=-1) * dt
    den = np.sum(si * hc * sc, axis=-1) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / den, np.nan)
    return float(out) if out.ndim == 0 else out


def summarize_ahr_draws(draws, subgroup: str = "", L: float = float("nan")) -> AhrEstimate:
    """Posterior median with equal-tailed 95% interval (linear-interpolation quantiles)."""
    draws = np.asarray(draws, dtype=np.float64).reshape(-1)
    if draws.size < 100:
        raise ValueError("at least 100 draws are required")
    if not np.all(np.isfinite(draws)):
        raise DataError("non-finite AHR draws")
    lo, med, hi = np.quantile(draws, [0.025, 0.5, 0.975])
    return AhrEstimate(subgroup, float(med), L, (float(lo), float(hi)))
