"""Simulation-study metrics on the log-AHR scale.

Estimates are arranged as ``(n_sim, K)`` arrays with ``NaN`` marking a
missing subgroup estimate.  Missing entries are dropped pairwise and their
counts reported alongside each metric.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

HETEROGENEITY_THRESHOLD = float(np.log(1.1))
# Differences within this distance of the threshold count as ties, so that
# two-decimal table values sitting exactly on log(1.1) stay homogeneous.
TIE_TOLERANCE = 1e-12


def _as_2d(estimates, truths):
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    if est.ndim == 1:
        est = est[None, :]
    if est.ndim != 2 or tru.shape != (est.shape[1],):
        raise DataError(f"estimates {est.shape} and truths {tru.shape} do not align")
    return est, tru


def rmse_overall(estimates, truths, return_missing: bool = False):
    """Root mean squared error pooled over all runs and subgroups.

    Parameters
    ----------
    estimates : array (n_sim, K)
        Log-effect estimates, ``NaN`` where missing.
    truths : array (K,)
        True log AHRs.
    return_missing : bool
        Also return the number of excluded entries.
    """
    est, tru = _as_2d(estimates, truths)
    err = est - tru
    ok = np.isfinite(err)
    if not ok.any():
        raise DataError("all estimates are missing")
    value = float(np.sqrt(np.mean(err[ok] ** 2)))
    if return_missing:
        return value, int((~ok).sum())
    return value


@dataclass(frozen=True)
class SubgroupMetrics:
    rmse: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    coverage: np.ndarray | None
    n_missing: np.ndarray

    def to_dict(self, labels=None) -> list[dict]:
        labels = labels or [str(k) for k in range(self.rmse.size)]
        out = []
        for k, lab in enumerate(labels):
            out.append({
                "subgroup": lab,
                "rmse": _num(self.rmse[k]),
                "bias": _num(self.bias[k]),
                "coverage": None if self.coverage is None else _num(self.coverage[k]),
                "n_missing": int(self.n_missing[k]),
            })
        return out


def _num(x) -> float | None:
    return float(x) if np.isfinite(x) else None


def subgroup_metrics(estimates, truths, intervals=None) -> SubgroupMetrics:
    """Per-subgroup RMSE, bias, variance and interval coverage.

    ``intervals`` has shape ``(n_sim, K, 2)``; a run whose estimate or
    interval is missing does not count towards that subgroup's coverage.
    The variance uses divisor ``n`` so that ``rmse**2 == bias**2 + variance``.
    """
    est, tru = _as_2d(estimates, truths)
    err = est - tru
    ok = np.isfinite(err)
    n_ok = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        e0 = np.where(ok, err, 0.0)
        bias = e0.sum(axis=0) / n_ok
        mse = (e0**2).sum(axis=0) / n_ok
        variance = np.where(ok, (err - bias) ** 2, 0.0).sum(axis=0) / n_ok
    coverage = None
    if intervals is not None:
        iv = np.asarray(intervals, dtype=np.float64)
        if iv.shape != est.shape + (2,):
            raise DataError(f"intervals shape {iv.shape} does not match estimates {est.shape}")
        lo, hi = iv[..., 0], iv[..., 1]
        valid = ok & ~np.isnan(lo) & ~np.isnan(hi)
        hit = valid & (lo <= tru) & (tru <= hi)
        with np.errstate(invalid="ignore", divide="ignore"):
            coverage = hit.sum(axis=0) / valid.sum(axis=0)
    return SubgroupMetrics(np.sqrt(mse), bias, variance, coverage, est.shape[0] - n_ok)


def classify_heterogeneous(truths, overall_truth: float, threshold: float = HETEROGENEITY_THRESHOLD,
                           tie_tol: float = TIE_TOLERANCE) -> np.ndarray:
    """Flag subgroups whose true log AHR differs from the population one by more than ``threshold``."""
    d = np.abs(np.asarray(truths, dtype=np.float64) - float(overall_truth))
    return d > threshold + tie_tol


def _unique_extreme_hits(est: np.ndarray, target: int, reading: str) -> np.ndarray:
    ok = np.all(np.isfinite(est), axis=1)
    if reading == "max":
        ext = est.max(axis=1)
    elif reading == "min":
        ext = est.min(axis=1)
    else:
        raise ValueError(f"unknown reading {reading!r}")
    at = est == ext[:, None]
    return ok & at[:, target] & (at.sum(axis=1) == 1)


def identification_probability(per_run_estimates, null_subgroup_index: int, reading: str = "max") -> float:
    """Fraction of runs whose extreme estimate falls on the null subgroup.

    ``reading="max"`` looks for the largest log effect (the weakest
    treatment effect), ``reading="min"`` for the smallest.  Ties and runs
    with a missing estimate count as failures.
    """
    est = np.asarray(per_run_estimates, dtype=np.float64)
    if est.ndim != 2 or est.shape[0] == 0:
        raise DataError("need a nonempty (n_sim, K) array")
    return float(np.mean(_unique_extreme_hits(est, int(null_subgroup_index), reading)))


@dataclass(eq=False)
class EstimatorSummary:
    estimator: str
    rmse_overall: float | None
    n_missing: int
    metrics: SubgroupMetrics
    identification: dict | None = None

    def to_dict(self, labels) -> dict:
        return {
            "estimator": self.estimator,
            "rmse_overall": self.rmse_overall,
            "n_missing": self.n_missing,
            "identification": self.identification,
            "subgroups": self.metrics.to_dict(labels),
        }


@dataclass(eq=False)
class EvalReport:
    """Metrics of several estimators against one table of true log AHRs."""

    labels: tuple[str, ...]
    truths: np.ndarray
    overall_truth: float
    n_sim: int
    summaries: dict[str, EstimatorSummary] = field(default_factory=dict)
    null_subgroup: int | None = None

    @property
    def heterogeneous(self) -> np.ndarray:
        return classify_heterogeneous(self.truths, self.overall_truth)

    def rmse(self, estimator: str) -> float | None:
        return self.summaries[estimator].rmse_overall

    def to_dict(self) -> dict:
        return {
            "n_sim": self.n_sim,
            "labels": list(self.labels),
            "true_log_ahr": [float(t) for t in self.truths],
            "overall_true_log_ahr": float(self.overall_truth),
            "heterogeneous": [bool(h) for h in self.heterogeneous],
            "null_subgroup": None if self.null_subgroup is None else self.labels[self.null_subgroup],
            "estimators": [s.to_dict(list(self.labels)) for s in self.summaries.values()],
        }

    def to_csv(self) -> str:
        """Flat per-estimator, per-subgroup table."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "subgroup", "true_log_ahr", "heterogeneous", "rmse", "bias", "coverage",
                    "n_missing"])
        het = self.heterogeneous
        for name, s in self.summaries.items():
            for k, row in enumerate(s.metrics.to_dict(list(self.labels))):
                w.writerow([name, row["subgroup"], f"{self.truths[k]:.10g}", int(het[k]),
                            _fmt(row["rmse"]), _fmt(row["bias"]), _fmt(row["coverage"]), row["n_missing"]])
        return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10g}"


def build_report(results: dict, truths, overall_truth: float, labels, null_subgroup: int | None = None) -> EvalReport:
    """Assemble an :class:`EvalReport`.

    ``results`` maps estimator name to ``(estimates, intervals)`` where
    ``intervals`` may be ``None``.  When ``null_subgroup`` is given both
    identification readings are computed.
    """
    truths = np.asarray(truths, dtype=np.float64)
    n_sim = 0
    summaries = {}
    for name, (est, iv) in results.items():
        est = np.asarray(est, dtype=np.float64)
        n_sim = max(n_sim, est.shape[0])
        try:
            value, miss = rmse_overall(est, truths, return_missing=True)
        except DataError:
            value, miss = None, int(est.size)
        ident = None
        if null_subgroup is not None:
            ident = {
                "largest_log_effect": identification_probability(est, null_subgroup, "max"),
                "smallest_log_effect": identification_probability(est, null_subgroup, "min"),
            }
        summaries[name] = EstimatorSummary(name, value, miss, subgroup_metrics(est, truths, iv), ident)
    return EvalReport(tuple(labels), truths, float(overall_truth), n_sim, summaries, null_subgroup)
