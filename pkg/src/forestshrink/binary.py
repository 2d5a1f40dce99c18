"""Binary-outcome variant: global logistic model and standardized proportions.

The global model has the same columns as the Cox model plus an intercept:
``[1, z, s_1..s_K, z*s_1..z*s_K]``.  Unpenalized fits are computed on a
full-rank reference-coded version of these columns and mapped back, so
coefficients of reference levels are zero.  For such fits the score
equations force, in every subgroup-by-arm cell, the mean fitted probability
to equal the observed event proportion; :func:`check_equivalence` measures
how closely that holds.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from . import kernels
from .data import SubgroupSchema, _flag, _levels, _read_rows, _readonly, design_columns, interaction_groups
from .errors import ConvergenceError, DataError, MonotoneLikelihoodError, NumericalError

BINARY_COLUMNS = ("outcome", "treatment")
GRADIENT_TOL = 1e-10
NUMERICAL_RIDGE = 1e-8
CD_TOL = 1e-9
SEPARATION_BOUND = 25.0


@dataclass(frozen=True, eq=False)
class BinaryDataset:
    """Per-subject binary outcome, treatment arm and categorical covariates."""

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    schema: SubgroupSchema

    def __post_init__(self):
        y = np.asarray(self.outcome).reshape(-1)
        z = np.asarray(self.treatment).reshape(-1)
        cov = np.asarray(self.covariates, dtype=np.int64).reshape(len(y), -1)
        if len(z) != len(y):
            raise DataError("outcome and treatment lengths differ")
        if cov.shape[1] != self.schema.p:
            raise DataError(f"expected {self.schema.p} covariate columns, got {cov.shape[1]}")
        for name, arr in (("outcome", y), ("treatment", z)):
            if not np.all((arr == 0) | (arr == 1)):
                raise DataError(f"{name} must be 0/1")
        levels = np.asarray(self.schema.n_levels)
        if len(y) and (np.any(cov < 0) or np.any(cov >= levels[None, :])):
            raise DataError("covariate level index out of range")
        object.__setattr__(self, "outcome", _readonly(y.astype(np.int8)))
        object.__setattr__(self, "treatment", _readonly(z.astype(np.int8)))
        object.__setattr__(self, "covariates", _readonly(cov))

    @property
    def n(self) -> int:
        return len(self.outcome)

    def subgroup_index(self) -> np.ndarray:
        return self.covariates + self.schema.offsets[None, :]

    def membership(self) -> np.ndarray:
        m = np.zeros((self.n, self.schema.K), dtype=bool)
        m[np.arange(self.n)[:, None], self.subgroup_index()] = True
        return m

    def subset(self, mask) -> "BinaryDataset":
        mask = np.asarray(mask)
        return BinaryDataset(self.outcome[mask], self.treatment[mask], self.covariates[mask], self.schema)

    def canonical(self) -> "BinaryDataset":
        keys = [self.outcome, self.treatment] + [self.covariates[:, j] for j in range(self.schema.p)]
        return self.subset(np.lexsort(keys[::-1]))


def parse_binary_dataset(csv_text: str, schema: SubgroupSchema) -> BinaryDataset:
    """Parse CSV text with ``outcome,treatment`` plus one column per variable."""
    pos, rows = _read_rows(csv_text, BINARY_COLUMNS, schema)
    y, z, cov = [], [], []
    for r, raw in rows:
        y.append(_flag(raw[pos["outcome"]], "outcome", r))
        z.append(_flag(raw[pos["treatment"]], "treatment", r))
        cov.append(_levels(raw, pos, schema, r))
    return BinaryDataset(np.array(y), np.array(z), np.array(cov), schema)


def serialize_binary_dataset(dataset: BinaryDataset) -> str:
    schema = dataset.schema
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(BINARY_COLUMNS) + [v.name for v in schema.variables])
    for i in range(dataset.n):
        w.writerow([int(dataset.outcome[i]), int(dataset.treatment[i])]
                   + [schema.variables[j].levels[dataset.covariates[i, j]] for j in range(schema.p)])
    return buf.getvalue()


def logistic_design(treatment, subgroup_index, K: int) -> np.ndarray:
    """Overparameterized columns ``[1, z, mains, interactions]``."""
    X = design_columns(np.asarray(treatment, dtype=np.float64), subgroup_index, K)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def logistic_loglik(X, y, beta, want_hessian: bool = True):
    """Bernoulli log-likelihood with its gradient and (optionally) negative Hessian."""
    eta = X @ beta
    ll = float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))
    p = expit(eta)
    grad = X.T @ (y - p)
    info = (X * (p * (1 - p))[:, None]).T @ X if want_hessian else None
    return ll, grad, info


def logistic_newton(X, y, tol: float = GRADIENT_TOL, max_iter: int = 200) -> tuple[np.ndarray, int]:
    """Unpenalized maximum likelihood by Newton-Raphson with step halving.

    Stops once the largest score component falls below ``tol``.  A
    coefficient drifting past ``SEPARATION_BOUND`` signals separation.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b = np.zeros(X.shape[1])
    ll, g, H = logistic_loglik(X, y, b)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < tol:
            return b, it - 1
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular logistic information matrix") from exc
        t = 1.0
        while True:
            b_new = b + t * step
            ll_new, g_new, H_new = logistic_loglik(X, y, b_new)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        b, ll, g, H = b_new, ll_new, g_new, H_new
        if np.max(np.abs(b)) > SEPARATION_BOUND:
            raise MonotoneLikelihoodError("logistic coefficients diverge; outcome is separated")
    if np.max(np.abs(g)) < tol:
        return b, max_iter
    raise ConvergenceError(f"Newton-Raphson did not reach gradient {tol} in {max_iter} iterations")


@dataclass(frozen=True, eq=False)
class LogisticFit:
    """Coefficients in the overparameterized layout ``[intercept, z, mains, interactions]``."""

    coefficients: np.ndarray
    K: int
    penalty: str = "none"
    lam: float = 0.0
    iterations: int = 0
    loglik: float = float("nan")
    metadata: dict = field(default_factory=dict)

    @property
    def interactions(self) -> np.ndarray:
        return self.coefficients[2 + self.K:]

    def linear_predictor(self, treatment, subgroup_index) -> np.ndarray:
        return logistic_design(treatment, subgroup_index, self.K) @ self.coefficients


def _check_classes(dataset: BinaryDataset) -> None:
    if dataset.n == 0 or dataset.outcome.min() == dataset.outcome.max():
        raise DataError("both outcome classes must be present")


def _reference_columns(dataset: BinaryDataset) -> np.ndarray:
    """Positions in the overparameterized layout kept by reference coding."""
    K = dataset.schema.K
    refs = set(dataset.schema.offsets.tolist())
    nonref = [k for k in range(K) if k not in refs]
    return np.array([0, 1] + [2 + k for k in nonref] + [2 + K + k for k in nonref], dtype=np.int64)


def _penalized_fit(X, y, codes, lam, groups, tol=CD_TOL, max_outer=500):
    """Proximal-Newton coordinate descent for ``-loglik + penalty``."""
    q = X.shape[1]
    b = np.zeros(q)
    lam_eff = 0.0 if not np.isfinite(lam) else float(lam)

    def objective(beta):
        ll = logistic_loglik(X, y, beta, want_hessian=False)[0]
        return -ll + kernels.penalty_value(beta, codes, lam_eff, NUMERICAL_RIDGE)

    obj = objective(b)
    for outer in range(1, max_outer + 1):
        _, g, H = logistic_loglik(X, y, b)
        target, _ = kernels.quad_cd(H, -g, b.copy(), b.copy(), codes, lam_eff, NUMERICAL_RIDGE,
                                    tol * 0.1, 100_000, groups)
        step = target - b
        t = 1.0
        while True:
            cand = b + t * step
            new_obj = objective(cand)
            if new_obj <= obj + 1e-13 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        change = float(np.max(np.abs(cand - b)))
        b, obj = cand, new_obj
        if not np.isfinite(obj):
            raise NumericalError("non-finite penalized logistic objective")
        if np.max(np.abs(b)) > SEPARATION_BOUND:
            raise MonotoneLikelihoodError("logistic coefficients diverge; outcome is separated")
        if change < tol:
            return b, outer
    raise ConvergenceError(f"penalized logistic fit did not converge in {max_outer} Newton steps")


def fit_global_logistic(dataset: BinaryDataset, penalty: str = "none", lam: float = 0.0) -> LogisticFit:
    """Global logistic model, unpenalized or with a penalty on the interactions.

    Parameters
    ----------
    dataset : BinaryDataset
    penalty : {"none", "lasso", "ridge"}
    lam : float
        Penalty weight on ``-loglik``; ``inf`` pins every interaction at zero.
    """
    _check_classes(dataset)
    K = dataset.schema.K
    X = logistic_design(dataset.treatment, dataset.subgroup_index(), K)
    y = dataset.outcome.astype(np.float64)
    if penalty == "none":
        keep = _reference_columns(dataset)
        b_red, iters = logistic_newton(X[:, keep], y)
        b = np.zeros(X.shape[1])
        b[keep] = b_red
        lam = 0.0
    elif penalty in ("lasso", "ridge"):
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        # Unpenalized mains are reference-coded; every interaction column is kept.
        keep = np.concatenate([_reference_columns(dataset)[: 2 + K - dataset.schema.p],
                               np.arange(2 + K, 2 + 2 * K)])
        codes = np.full(keep.size, kernels.UNPENALIZED, dtype=np.int64)
        code = kernels.FROZEN if np.isinf(lam) else (kernels.LASSO if penalty == "lasso" else kernels.RIDGE)
        codes[keep >= 2 + K] = code
        groups = interaction_groups(dataset.schema.offsets, K, 1, 2 + K - dataset.schema.p)
        b_red, iters = _penalized_fit(X[:, keep], y, codes, lam, groups)
        b = np.zeros(X.shape[1])
        b[keep] = b_red
    else:
        raise ValueError(f"unknown penalty {penalty!r}")
    ll = logistic_loglik(X, y, b, want_hessian=False)[0]
    return LogisticFit(b, K, penalty, float(lam), iters, ll)


def binary_lambda_max(dataset: BinaryDataset) -> float:
    """Largest interaction score at the fit with all interactions pinned at zero."""
    fit = fit_global_logistic(dataset, "lasso", np.inf)
    K = dataset.schema.K
    X = logistic_design(dataset.treatment, dataset.subgroup_index(), K)
    _, g, _ = logistic_loglik(X, dataset.outcome.astype(np.float64), fit.coefficients, want_hessian=False)
    return float(np.max(np.abs(g[2 + K:])))


@dataclass(frozen=True, eq=False)
class BinaryStandardization:
    """Per-subgroup standardized proportions under each forced arm and effect measures."""

    labels: tuple[str, ...]
    proportions: np.ndarray  # (K, 2): control, intervention

    @property
    def risk_difference(self) -> np.ndarray:
        return self.proportions[:, 1] - self.proportions[:, 0]

    @property
    def undefined(self) -> np.ndarray:
        p = self.proportions
        return np.any((p <= 0.0) | (p >= 1.0), axis=1)

    @property
    def risk_ratio(self) -> np.ndarray:
        p = self.proportions
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.undefined, np.nan, p[:, 1] / p[:, 0])

    @property
    def odds_ratio(self) -> np.ndarray:
        p = self.proportions
        with np.errstate(divide="ignore", invalid="ignore"):
            odds = p / (1.0 - p)
            return np.where(self.undefined, np.nan, odds[:, 1] / odds[:, 0])

    def to_dict(self) -> list[dict]:
        out = []
        for k, lab in enumerate(self.labels):
            rr, orr = self.risk_ratio[k], self.odds_ratio[k]
            out.append({
                "subgroup": lab,
                "p_control": float(self.proportions[k, 0]),
                "p_intervention": float(self.proportions[k, 1]),
                "risk_difference": float(self.risk_difference[k]),
                "risk_ratio": None if np.isnan(rr) else float(rr),
                "odds_ratio": None if np.isnan(orr) else float(orr),
                "missing": bool(self.undefined[k]),
            })
        return out


def standardize_binary(fit: LogisticFit, dataset: BinaryDataset) -> BinaryStandardization:
    """Average model probabilities over each subgroup with treatment forced to each arm."""
    idx = dataset.subgroup_index()
    member = dataset.membership().astype(np.float64)
    n_k = member.sum(axis=0)
    if np.any(n_k == 0):
        raise DataError("empty subgroup")
    probs = np.empty((dataset.schema.K, 2))
    for a in (0, 1):
        p = expit(fit.linear_predictor(np.full(dataset.n, a), idx))
        probs[:, a] = (member.T @ p) / n_k
    return BinaryStandardization(dataset.schema.labels, probs)


def check_equivalence(fit: LogisticFit, dataset: BinaryDataset) -> float:
    """Largest gap between mean fitted and observed proportion over subgroup-by-arm cells.

    Only cells containing subjects are compared.  Each comparison uses the
    subjects' own arm, which is what the score equations constrain.
    """
    idx = dataset.subgroup_index()
    member = dataset.membership()
    p_hat = expit(fit.linear_predictor(dataset.treatment, idx))
    y = dataset.outcome.astype(np.float64)
    worst = 0.0
    for a in (0, 1):
        arm = dataset.treatment == a
        cell = member & arm[:, None]
        count = cell.sum(axis=0)
        nz = count > 0
        gap = np.abs((cell.T @ p_hat)[nz] - (cell.T @ y)[nz]) / count[nz]
        if gap.size:
            worst = max(worst, float(gap.max()))
    return worst


def observed_proportions(dataset: BinaryDataset) -> np.ndarray:
    """(K, 2) observed event proportions by subgroup and arm (``NaN`` for empty cells)."""
    member = dataset.membership()
    y = dataset.outcome.astype(np.float64)
    out = np.full((dataset.schema.K, 2), np.nan)
    for a in (0, 1):
        cell = member & (dataset.treatment == a)[:, None]
        c = cell.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, a] = np.where(c > 0, (cell.T @ y) / c, np.nan)
    return out


def binary_folds(outcome, n_folds: int, seed) -> np.ndarray:
    """Fold labels balanced within each outcome class."""
    rng = np.random.default_rng(seed)
    folds = np.empty(len(outcome), dtype=np.int64)
    for cls in (0, 1):
        pos = np.flatnonzero(np.asarray(outcome) == cls)
        perm = rng.permutation(pos)
        folds[perm] = np.arange(perm.size) % n_folds
    return folds


def cv_binary_lambda(dataset: BinaryDataset, penalty: str, n_folds: int = 10, seed=0,
                     n_lambda: int = 30, ratio: float = 1e-3) -> tuple[float, np.ndarray, np.ndarray]:
    """Penalty minimizing held-out binomial deviance; returns ``(lam, grid, deviance)``."""
    lmax = binary_lambda_max(dataset)
    if penalty == "ridge":
        lmax = lmax / (2.0 * 1e-3)
    grid = lmax * np.logspace(0, np.log10(ratio), n_lambda)
    folds = binary_folds(dataset.outcome, n_folds, seed)
    dev = np.zeros(n_lambda)
    K = dataset.schema.K
    for f in range(n_folds):
        train, test = dataset.subset(folds != f), dataset.subset(folds == f)
        Xt = logistic_design(test.treatment, test.subgroup_index(), K)
        yt = test.outcome.astype(np.float64)
        for j, lam in enumerate(grid):
            try:
                b = fit_global_logistic(train, penalty, lam).coefficients
                dev[j] += -2.0 * logistic_loglik(Xt, yt, b, want_hessian=False)[0]
            except (NumericalError, DataError):
                dev[j] = np.inf
    return float(grid[int(np.argmin(dev))]), grid, dev


BINARY_ESTIMATORS = ("naive", "population", "global", "lasso", "ridge")


def _treatment_log_or(y, z):
    """Treatment-only logistic fit; returns the log odds ratio and its Wald interval."""
    from .estimators import Z975

    X = np.column_stack([np.ones(len(y)), z]).astype(np.float64)
    b, _ = logistic_newton(X, y)
    _, _, info = logistic_loglik(X, y, b)
    se = float(np.sqrt(np.linalg.inv(info)[1, 1]))
    return float(b[1]), (float(b[1] - Z975 * se), float(b[1] + Z975 * se))


def estimate_binary(tag: str, dataset: BinaryDataset, seed: int = 0, n_folds: int = 10):
    """Subgroup log odds ratios for the binary pipeline.

    ``naive`` and ``population`` are treatment-only logistic fits with Wald
    intervals.  ``global``, ``lasso`` and ``ridge`` standardize the global
    model and report the marginal odds ratio without an interval.
    """
    from .estimators import EstimateSet, SubgroupEstimate, _missing

    dataset = dataset.canonical()
    labels = dataset.schema.labels
    y = dataset.outcome.astype(np.float64)
    z = dataset.treatment.astype(np.float64)
    meta = {"effect_measure": "odds ratio"}
    out = []
    if tag == "naive":
        member = dataset.membership()
        for k, lab in enumerate(labels):
            m = member[:, k]
            try:
                if np.unique(z[m]).size < 2 or np.unique(y[m]).size < 2:
                    raise DataError("subgroup lacks an arm or an outcome class")
                b, ci = _treatment_log_or(y[m], z[m])
                out.append(SubgroupEstimate(lab, tag, b, ci, "wald"))
            except (NumericalError, DataError) as exc:
                out.append(_missing(lab, tag, str(exc)))
        return EstimateSet(tag, tuple(out), meta)
    if tag == "population":
        b, ci = _treatment_log_or(y, z)
        return EstimateSet(tag, tuple(SubgroupEstimate(l, tag, b, ci, "wald") for l in labels), meta)
    if tag == "global":
        fit = fit_global_logistic(dataset)
    elif tag in ("lasso", "ridge"):
        lam, _, _ = cv_binary_lambda(dataset, tag, n_folds, seed)
        fit = fit_global_logistic(dataset, tag, lam)
        meta.update(lambda_star=lam, n_folds=n_folds, cv_seed=seed)
    else:
        raise ValueError(f"unknown binary estimator {tag!r}")
    st = standardize_binary(fit, dataset)
    orr = st.odds_ratio
    for k, lab in enumerate(labels):
        if np.isnan(orr[k]):
            out.append(_missing(lab, tag, "standardized proportion at 0 or 1"))
        else:
            out.append(SubgroupEstimate(lab, tag, float(np.log(orr[k]))))
    meta["proportions"] = st.to_dict()
    return EstimateSet(tag, tuple(out), meta)
