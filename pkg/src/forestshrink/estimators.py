"""Subgroup treatment-effect estimators.

Every estimator returns one :class:`SubgroupEstimate` per subgroup on the
log scale.  Inputs are first put in a canonical subject order so results do
not depend on how rows happen to be arranged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from . import kernels
from .bayes import HorseshoeCoxModel, PriorConfig
from .cox import (
    CD_TOL,
    breslow_baseline,
    cox_cd_fit,
    cox_nr_fit,
    cv_lambda,
)
from .data import TrialDataset, build_design, reduced_columns
from .errors import DegenerateSubgroupError, NumericalError, SamplerError
from .hmc import HmcConfig, hmc_sample
from .marginal import ahr_grid, ahr_step, summarize_ahr_draws, uniform_grid, DEFAULT_GRID_POINTS
from .survival import StepSurvival

log = logging.getLogger(__name__)

Z975 = norm.ppf(0.975)
ESTIMATORS = ("naive", "population", "lasso", "ridge", "horseshoe", "avg")


@dataclass(frozen=True)
class SubgroupEstimate:
    subgroup: str
    estimator: str
    log_effect: float
    interval: tuple[float, float] | None = None
    interval_kind: str | None = None
    missing: bool = False
    reason: str = ""

    def __post_init__(self):
        if self.interval is not None and not self.missing:
            lo, hi = self.interval
            if not lo <= self.log_effect <= hi:
                raise ValueError(f"interval {self.interval} does not bracket {self.log_effect}")

    @property
    def effect(self) -> float:
        return float(np.exp(self.log_effect))

    def to_dict(self) -> dict:
        return {
            "subgroup": self.subgroup,
            "estimator": self.estimator,
            "log_effect": None if self.missing else self.log_effect,
            "effect": None if self.missing else self.effect,
            "interval": None if self.interval is None else list(self.interval),
            "interval_kind": self.interval_kind,
            "missing": self.missing,
            "reason": self.reason,
        }


@dataclass(frozen=True, eq=False)
class EstimateSet:
    """Per-subgroup estimates of one estimator plus fit metadata."""

    estimator: str
    estimates: tuple[SubgroupEstimate, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def log_effects(self) -> np.ndarray:
        return np.array([np.nan if e.missing else e.log_effect for e in self.estimates])

    @property
    def intervals(self) -> np.ndarray:
        return np.array([
            (np.nan, np.nan) if (e.interval is None or e.missing) else e.interval for e in self.estimates
        ])

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.subgroup for e in self.estimates)

    @property
    def n_missing(self) -> int:
        return sum(e.missing for e in self.estimates)

    def __len__(self) -> int:
        return len(self.estimates)

    def __getitem__(self, k) -> SubgroupEstimate:
        return self.estimates[k]

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "metadata": self.metadata,
            "estimates": [e.to_dict() for e in self.estimates],
        }


def _missing(label: str, tag: str, reason: str) -> SubgroupEstimate:
    return SubgroupEstimate(label, tag, float("nan"), None, None, True, reason)


def _treatment_only(dataset: TrialDataset):
    z = dataset.treatment.astype(np.float64)[:, None]
    arm_events = [dataset.event[dataset.treatment == a].sum() for a in (0, 1)]
    if min(arm_events) == 0:
        raise DegenerateSubgroupError("no events in one arm")
    fit = cox_nr_fit(z, dataset)
    b, se = float(fit.coefficients[0]), float(fit.std_errors[0])
    return b, (b - Z975 * se, b + Z975 * se)


def estimate_naive(dataset: TrialDataset) -> EstimateSet:
    """Treatment-only Cox model within each subgroup, Wald 95% intervals."""
    dataset = dataset.canonical()
    member = dataset.membership()
    out = []
    for k, label in enumerate(dataset.schema.labels):
        sub = dataset.subset(member[:, k])
        try:
            b, ci = _treatment_only(sub)
            out.append(SubgroupEstimate(label, "naive", b, ci, "wald"))
        except NumericalError as exc:
            out.append(_missing(label, "naive", f"{type(exc).__name__}: {exc}"))
    return EstimateSet("naive", tuple(out), {"effect_measure": "conditional hazard ratio"})


def estimate_population(dataset: TrialDataset) -> EstimateSet:
    """Whole-sample treatment-only Cox estimate, replicated for every subgroup."""
    dataset = dataset.canonical()
    labels = dataset.schema.labels
    try:
        b, ci = _treatment_only(dataset)
    except NumericalError as exc:
        return EstimateSet("population", tuple(_missing(l, "population", str(exc)) for l in labels))
    return EstimateSet(
        "population", tuple(SubgroupEstimate(l, "population", b, ci, "wald") for l in labels),
        {"effect_measure": "conditional hazard ratio"},
    )


def default_horizon(dataset: TrialDataset) -> float:
    """Largest uncensored event time."""
    ev = dataset.time[dataset.event == 1]
    if ev.size == 0:
        raise DegenerateSubgroupError("no events")
    return float(ev.max())


def standardized_step_curves(coefficients, baseline, design) -> tuple[np.ndarray, np.ndarray]:
    """Subgroup-by-arm standardized curves at the baseline jump times, shape (2, K, J)."""
    member = design.matrix[:, design.main_slice]
    n_k = member.sum(axis=0)
    cumhaz = baseline.cumulative()
    out = np.empty((2, design.K, cumhaz.size))
    for arm in (0, 1):
        lp = design.forced(arm) @ coefficients
        S = np.exp(-np.outer(np.exp(lp), cumhaz))
        with np.errstate(invalid="ignore", divide="ignore"):
            out[arm] = (member.T @ S) / n_k[:, None]
    return out, n_k


def subgroup_ahr_from_fit(coefficients, baseline, design, labels, L: float, tag: str):
    curves, n_k = standardized_step_curves(coefficients, baseline, design)
    out = []
    for k, label in enumerate(labels):
        if n_k[k] == 0:
            out.append(_missing(label, tag, "empty subgroup"))
            continue
        s_c = StepSurvival(baseline.jump_times, curves[0, k])
        s_i = StepSurvival(baseline.jump_times, curves[1, k])
        try:
            out.append(SubgroupEstimate(label, tag, float(np.log(ahr_step(s_c, s_i, L)))))
        except DegenerateSubgroupError as exc:
            out.append(_missing(label, tag, str(exc)))
    return tuple(out)


@dataclass(frozen=True)
class CvConfig:
    n_folds: int = 10
    seed: int = 0
    n_lambda: int = 100
    ratio: float = 1e-3
    lam: float | None = None


def estimate_penalized(dataset: TrialDataset, kind: str = "lasso", cv: CvConfig | None = None,
                       L: float | None = None) -> EstimateSet:
    """Penalized global Cox model, Breslow baseline, standardization and step AHR.

    If ``cv.lam`` is given it is used directly instead of cross-validating.
    """
    cv = cv or CvConfig()
    dataset = dataset.canonical()
    design = build_design(dataset)
    meta = {"kind": kind, "n_folds": cv.n_folds, "cv_seed": cv.seed, "selection_rule": "min_deviance"}
    if cv.lam is None:
        res = cv_lambda(design, dataset, kind, cv.n_folds, cv.seed, cv.n_lambda, cv.ratio)
        lam = res.lambda_star
        meta.update(lambda_max=float(res.lambdas[0]), lambda_index=res.index_star)
    else:
        lam = float(cv.lam)
    fit = cox_cd_fit(design, dataset, kind, lam)
    baseline = breslow_baseline(fit, design, dataset)
    L = default_horizon(dataset) if L is None else L
    meta.update(lambda_star=lam, L=L, iterations=fit.iterations, tolerance=CD_TOL,
                nonzero_interactions=int(np.sum(fit.coefficients[design.interaction_slice] != 0)))
    ests = subgroup_ahr_from_fit(fit.coefficients, baseline, design, dataset.schema.labels, L, kind)
    return EstimateSet(kind, ests, meta)


@dataclass(frozen=True)
class HorseshoeConfig:
    hmc: HmcConfig = field(default_factory=HmcConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    spline_degree: int = 3
    grid_points: int = DEFAULT_GRID_POINTS
    max_ahr_draws: int | None = 1000
    rhat_gate: float | None = None


def _thin(n_total: int, max_draws: int | None) -> np.ndarray:
    if max_draws is None or n_total <= max_draws:
        return np.arange(n_total)
    return np.linspace(0, n_total - 1, max_draws).round().astype(np.int64)


def horseshoe_ahr_draws(model: HorseshoeCoxModel, draws: np.ndarray, L: float,
                        grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """(n_draws, K) subgroup AHRs from smooth standardized curves on a uniform grid."""
    grid = uniform_grid(L, grid_points)
    I_grid = model.basis.ispline(grid)
    M_grid = model.basis.mspline(grid)
    n = model.sub_idx.shape[0]
    member = np.zeros((model.K, n))
    member[model.sub_idx.T, np.arange(n)[None, :]] = 1.0
    n_k = member.sum(axis=1)
    p = model.unpack(draws)
    out = np.empty((draws.shape[0], model.K))
    for s in range(draws.shape[0]):
        c = p["weights"][s]
        H0 = I_grid @ c
        h0 = M_grid @ c
        base = p["eta0"][s] + p["alpha"][s][model.sub_idx].sum(axis=1)
        bsum = p["beta"][s][model.sub_idx].sum(axis=1)
        u = np.exp(np.vstack([base, base + p["beta0"][s] + bsum]))
        S, F = kernels.standardize_grid(u, member, H0, h0)
        with np.errstate(invalid="ignore", divide="ignore"):
            S = S / n_k[None, :, None]
            F = F / n_k[None, :, None]
            haz = np.where(S > 0, F / S, 0.0)
        out[s] = ahr_grid(S[0], S[1], haz[1], haz[0], L, grid_points)
    return out


def sample_horseshoe(model: HorseshoeCoxModel, hmc: HmcConfig):
    """Sample in the model's reparameterized coordinates, return model-space draws."""
    post = hmc_sample(
        model.sampler_log_posterior, lambda rng: model.to_sampler(model.initial_point(rng)), hmc,
    )
    return post.transformed(model.reparameterization, model.names)


def estimate_horseshoe(dataset: TrialDataset, config: HorseshoeConfig | None = None,
                       L: float | None = None) -> EstimateSet:
    """Bayesian global model with a regularized horseshoe; credible intervals from draws."""
    cfg = config or HorseshoeConfig()
    dataset = dataset.canonical()
    model = HorseshoeCoxModel.from_dataset(dataset, prior=cfg.prior, degree=cfg.spline_degree)
    post = sample_horseshoe(model, cfg.hmc)
    diag = post.diagnostics()
    if cfg.rhat_gate is not None and diag.get("max_rhat", 1.0) > cfg.rhat_gate:
        raise SamplerError(f"max split R-hat {diag['max_rhat']:.3f} exceeds {cfg.rhat_gate}")
    L = default_horizon(dataset) if L is None else L
    flat = post.flat
    idx = _thin(flat.shape[0], cfg.max_ahr_draws)
    ahr = horseshoe_ahr_draws(model, flat[idx], L, cfg.grid_points)
    out = []
    for k, label in enumerate(dataset.schema.labels):
        col = ahr[:, k]
        if not np.all(np.isfinite(col)):
            out.append(_missing(label, "horseshoe", "non-finite AHR draws"))
            continue
        est = summarize_ahr_draws(np.log(col), label, L)
        out.append(SubgroupEstimate(label, "horseshoe", est.point, est.interval, "credible"))
    meta = {"L": L, "grid": "uniform", "grid_points": cfg.grid_points, "ahr_draws": int(idx.size),
            "knots": model.basis.knots.tolist(), **diag}
    return EstimateSet("horseshoe", tuple(out), meta)


@dataclass(frozen=True, eq=False)
class ModelAveragingFit:
    beta0: np.ndarray
    beta_p: np.ndarray
    cov: np.ndarray
    bic: np.ndarray
    weights: np.ndarray
    overlap: np.ndarray
    converged: np.ndarray

    def components(self, k: int):
        """Means and standard deviations of each candidate's normal for subgroup ``k``."""
        w = self.overlap[k]
        mean = self.beta0 + w * self.beta_p
        var = self.cov[:, 0, 0] + 2 * w * self.cov[:, 0, 1] + w * w * self.cov[:, 1, 1]
        return mean, np.sqrt(np.maximum(var, 0.0))


def fit_model_averaging(dataset: TrialDataset) -> ModelAveragingFit:
    """Fit the K single-interaction candidate models and their BIC weights."""
    K = dataset.schema.K
    member = dataset.membership()
    n_events = max(dataset.n_events, 1)
    beta0 = np.zeros(K)
    beta_p = np.zeros(K)
    cov = np.zeros((K, 2, 2))
    bic = np.full(K, np.inf)
    ok = np.zeros(K, dtype=bool)
    for p in range(K):
        X = reduced_columns(dataset, [p])
        try:
            fit = cox_nr_fit(X, dataset)
        except NumericalError as exc:
            log.warning("candidate model %d dropped: %s", p, exc)
            continue
        beta0[p], beta_p[p] = fit.coefficients[0], fit.coefficients[-1]
        idx = [0, X.shape[1] - 1]
        cov[p] = fit.covariance[np.ix_(idx, idx)]
        bic[p] = -2 * fit.loglik + X.shape[1] * np.log(n_events)
        ok[p] = True
    if not ok.any():
        raise NumericalError("no candidate model converged")
    rel = -0.5 * (bic - bic[ok].min())
    weights = np.where(ok, np.exp(rel), 0.0)
    weights /= weights.sum()
    inter = member.T.astype(np.float64) @ member.astype(np.float64)
    size = member.sum(axis=0).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        overlap = np.where(size[None, :] > 0, inter / size[None, :], 0.0)
    return ModelAveragingFit(beta0, beta_p, cov, bic, weights, overlap, ok)


def mixture_quantile(q: float, weights, means, sds) -> float:
    """Quantile of a finite normal mixture by root finding on its CDF."""
    w, m, s = (np.asarray(a, dtype=np.float64) for a in (weights, means, sds))
    keep = w > 0
    w, m, s = w[keep], m[keep], s[keep]
    w = w / w.sum()
    point = s == 0

    def cdf(x):
        vals = np.where(point, (x >= m).astype(np.float64), norm.cdf((x - m) / np.where(point, 1.0, s)))
        return float(np.dot(w, vals)) - q

    span = float(np.max(s)) if s.size else 0.0
    lo = float(np.min(m)) - 10 * span - 1.0
    hi = float(np.max(m)) + 10 * span + 1.0
    return float(brentq(cdf, lo, hi, xtol=1e-12, rtol=1e-12))


def estimate_model_averaging(dataset: TrialDataset) -> EstimateSet:
    """BIC-weighted mixture of single-interaction Cox models."""
    dataset = dataset.canonical()
    fit = fit_model_averaging(dataset)
    out = []
    for k, label in enumerate(dataset.schema.labels):
        mean, sd = fit.components(k)
        med = mixture_quantile(0.5, fit.weights, mean, sd)
        lo = mixture_quantile(0.025, fit.weights, mean, sd)
        hi = mixture_quantile(0.975, fit.weights, mean, sd)
        out.append(SubgroupEstimate(label, "avg", med, (lo, hi), "mixture"))
    meta = {
        "bic_weights": fit.weights.tolist(),
        "dropped_models": int(np.sum(~fit.converged)),
        "bic_sample_size": "events",
        "effect_measure": "conditional hazard ratio",
    }
    return EstimateSet("avg", tuple(out), meta)


def run_estimator(tag: str, dataset: TrialDataset, seed: int = 0, horseshoe: HorseshoeConfig | None = None,
                  cv: CvConfig | None = None) -> EstimateSet:
    """Dispatch by estimator tag; ``seed`` feeds cross-validation folds and the sampler."""
    if tag == "naive":
        return estimate_naive(dataset)
    if tag == "population":
        return estimate_population(dataset)
    if tag in ("lasso", "ridge"):
        cv = cv or CvConfig()
        return estimate_penalized(dataset, tag, CvConfig(cv.n_folds, seed, cv.n_lambda, cv.ratio, cv.lam))
    if tag == "horseshoe":
        h = horseshoe or HorseshoeConfig()
        hmc = HmcConfig(**{**h.hmc.__dict__, "seed": seed})
        return estimate_horseshoe(dataset, HorseshoeConfig(hmc, h.prior, h.spline_degree, h.grid_points,
                                                           h.max_ahr_draws, h.rhat_gate))
    if tag in ("avg", "model_averaging"):
        return estimate_model_averaging(dataset)
    raise ValueError(f"unknown estimator {tag!r}")
