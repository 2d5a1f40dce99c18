"""Frequentist Cox regression: Newton-Raphson, penalized coordinate descent,
cross-validated penalty selection and the Breslow baseline hazard.

Ties are handled with the Breslow approximation throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import DesignMatrix, TrialDataset
from .errors import ConvergenceError, DataError, MonotoneLikelihoodError, NumericalError
from .survival import StepSurvival

NUMERICAL_RIDGE = 1e-8
CD_TOL = 1e-7
NR_TOL = 1e-9
MAX_SWEEPS = 100_000
DIVERGENCE_BOUND = 20.0
RIDGE_ALPHA_FLOOR = 1e-3
HESSIAN_REFRESH = 1e-2
HISTORY_CAP = 10_000

_PEN_CODES = {"none": kernels.UNPENALIZED, "lasso": kernels.LASSO, "ridge": kernels.RIDGE}


@dataclass(frozen=True, eq=False)
class RiskSets:
    """Time-sorted bookkeeping shared by every partial-likelihood evaluation."""

    order: np.ndarray
    time: np.ndarray
    event: np.ndarray
    event_times: np.ndarray
    risk_start: np.ndarray
    d: np.ndarray
    n_le: np.ndarray

    @classmethod
    def build(cls, time, event) -> "RiskSets":
        time = np.asarray(time, dtype=np.float64)
        event = np.asarray(event, dtype=np.float64)
        order = np.argsort(time, kind="stable")
        ts, es = time[order], event[order]
        ev_times = ts[es > 0]
        uniq = np.unique(ev_times)
        risk_start = np.searchsorted(ts, uniq, side="left").astype(np.int64)
        d = np.bincount(np.searchsorted(uniq, ev_times), minlength=uniq.size).astype(np.float64)
        n_le = np.searchsorted(uniq, ts, side="right").astype(np.int64)
        return cls(order, ts, es, uniq, risk_start, d, n_le)

    @property
    def n(self) -> int:
        return self.order.size


def _as_matrix(design) -> np.ndarray:
    if isinstance(design, DesignMatrix):
        return design.matrix
    X = np.asarray(design, dtype=np.float64)
    return X.reshape(len(X), -1)


def _risk(dataset) -> RiskSets:
    if isinstance(dataset, RiskSets):
        return dataset
    return RiskSets.build(dataset.time, dataset.event)


@dataclass(frozen=True)
class PartialLikelihood:
    value: float
    gradient: np.ndarray
    diagonal_hessian: np.ndarray


def cox_partial_loglik(design, dataset: TrialDataset, coefficients) -> PartialLikelihood:
    """Breslow partial log-likelihood, gradient and diagonal of its Hessian."""
    X = _as_matrix(design)
    rs = _risk(dataset)
    beta = np.asarray(coefficients, dtype=np.float64)
    eta = X @ beta
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite linear predictor")
    Xs = np.ascontiguousarray(X[rs.order])
    ll, grad, info = kernels.cox_derivatives(
        Xs, eta[rs.order], rs.event, rs.risk_start, rs.d, rs.n_le, True
    )
    return PartialLikelihood(float(ll), np.asarray(grad), -np.diag(info).copy())


@dataclass(frozen=True)
class Penalty:
    kind: str = "none"
    lam: float = 0.0
    penalized_mask: tuple[bool, ...] = ()


@dataclass(frozen=True, eq=False)
class CoxFit:
    coefficients: np.ndarray
    penalty: Penalty
    iterations: int
    final_gradient_norm: float
    loglik: float
    std_errors: np.ndarray | None = None
    covariance: np.ndarray | None = None
    objective_history: tuple[float, ...] = field(default=())
    sweeps: int = 0

    def linear_predictor(self, design) -> np.ndarray:
        return _as_matrix(design) @ self.coefficients


def cox_nr_fit(design, dataset, max_iter: int = 100, tol: float = NR_TOL) -> CoxFit:
    """Unpenalized maximum partial likelihood by Newton-Raphson with step halving.

    Intended for small full-rank designs.  Raises :class:`MonotoneLikelihoodError`
    when a coefficient exceeds 20 in magnitude and :class:`ConvergenceError`
    after ``max_iter`` iterations.
    """
    X = _as_matrix(design)
    rs = _risk(dataset)
    if rs.d.size == 0:
        raise MonotoneLikelihoodError("no events")
    Xs = np.ascontiguousarray(X[rs.order])
    q = X.shape[1]
    beta = np.zeros(q)

    def derivs(b):
        return kernels.cox_derivatives(Xs, Xs @ b, rs.event, rs.risk_start, rs.d, rs.n_le, True)

    ll, grad, info = derivs(beta)
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise MonotoneLikelihoodError("singular information matrix") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c = kernels.cox_loglik(Xs @ cand, rs.event, rs.risk_start, rs.d)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
            if t < 1e-10:
                raise ConvergenceError("Newton-Raphson line search failed")
        beta = cand
        if np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            raise MonotoneLikelihoodError("coefficient diverged (monotone likelihood)")
        ll, grad, info = derivs(beta)
    else:
        if float(np.linalg.norm(grad)) >= tol:
            raise ConvergenceError(f"Newton-Raphson did not converge in {max_iter} iterations")
        it = max_iter
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise MonotoneLikelihoodError("singular information matrix") from exc
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CoxFit(
        beta, Penalty("none", 0.0, (False,) * q), it, float(np.linalg.norm(grad)), float(ll),
        std_errors=se, covariance=cov,
    )


def _penalty_codes(q: int, penalized_mask, kind: str, pinned=None) -> np.ndarray:
    codes = np.full(q, kernels.UNPENALIZED, dtype=np.int64)
    codes[np.asarray(penalized_mask, dtype=bool)] = _PEN_CODES[kind]
    if pinned is not None:
        codes[np.asarray(pinned, dtype=bool)] = kernels.FROZEN
    return codes


def _pinned(design):
    return design.reference_mask if isinstance(design, DesignMatrix) else None


NO_GROUPS = np.zeros((0, 1), dtype=np.int64)


def _groups(design) -> np.ndarray:
    return design.null_groups if isinstance(design, DesignMatrix) else NO_GROUPS


def _cd_solve(Xs, rs: RiskSets, codes, lam, beta_init, groups=NO_GROUPS, eps=NUMERICAL_RIDGE,
              tol=CD_TOL, max_sweeps=MAX_SWEEPS, refresh=HESSIAN_REFRESH):
    """Proximal-Newton coordinate descent for one penalty on presorted data.

    See :func:`forestshrink.kernels.cd_path`.  Returns
    ``(beta, loglik, outer, sweeps, kkt_norm, history)``.
    """
    coefs, lls, outer, sweeps, hist, n_hist, status = kernels.cd_path(
        Xs, rs.event, rs.risk_start, rs.d, rs.n_le, np.asarray(codes, dtype=np.int64),
        np.array([lam], dtype=np.float64), np.asarray(beta_init, dtype=np.float64),
        eps, tol, max_sweeps, refresh, HISTORY_CAP, groups,
    )
    _check_status(status, max_sweeps)
    beta = coefs[0]
    _, grad, _ = kernels.cox_derivatives(
        Xs, Xs @ beta, rs.event, rs.risk_start, rs.d, rs.n_le, False
    )
    unpen = np.asarray(codes) == kernels.UNPENALIZED
    kkt = grad[unpen] - 2 * eps * beta[unpen]
    gnorm = float(np.linalg.norm(kkt)) if kkt.size else 0.0
    return beta, float(lls[0]), int(outer[0]), int(sweeps[0]), gnorm, tuple(hist[:n_hist].tolist())


def _check_status(status: int, max_sweeps: int) -> None:
    if status == 1:
        raise ConvergenceError(f"coordinate descent exceeded {max_sweeps} sweeps")
    if status == 2:
        raise NumericalError("non-finite penalized objective")


def cox_cd_fit(design: DesignMatrix, dataset, kind: str = "lasso", lam: float = 0.0,
               init=None, penalized_mask=None, tol: float = CD_TOL) -> CoxFit:
    """Penalized Cox fit with the penalty on interaction columns only."""
    if kind not in ("lasso", "ridge"):
        raise ValueError(f"unknown penalty kind {kind!r}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    X = _as_matrix(design)
    rs = _risk(dataset)
    if penalized_mask is None:
        penalized_mask = design.interaction_mask
    codes = _penalty_codes(X.shape[1], penalized_mask, kind, _pinned(design))
    Xs = np.ascontiguousarray(X[rs.order])
    beta0 = np.zeros(X.shape[1]) if init is None else np.array(init, dtype=np.float64)
    beta0[codes == kernels.FROZEN] = 0.0
    beta, ll, outer, sweeps, gnorm, hist = _cd_solve(Xs, rs, codes, lam, beta0, _groups(design), tol=tol)
    return CoxFit(
        beta, Penalty(kind, float(lam), tuple(bool(m) for m in penalized_mask)), outer, gnorm, ll,
        objective_history=hist, sweeps=sweeps,
    )


def lambda_max(design: DesignMatrix, dataset, kind: str = "lasso") -> float:
    """Smallest lasso penalty zeroing every interaction, from the profiled null fit.

    For ridge the lasso value is divided by ``2 * 1e-3``, the usual convention of
    treating a ridge path as an elastic net with mixing 0.001.
    """
    X = _as_matrix(design)
    rs = _risk(dataset)
    mask = design.interaction_mask
    Xs = np.ascontiguousarray(X[rs.order])
    codes = _penalty_codes(X.shape[1], mask, "lasso", _pinned(design))
    beta, *_ = _cd_solve(Xs, rs, codes, np.inf, np.zeros(X.shape[1]), _groups(design))
    _, grad, _ = kernels.cox_derivatives(Xs, Xs @ beta, rs.event, rs.risk_start, rs.d, rs.n_le, False)
    lmax = float(np.max(np.abs(grad[mask])))
    if kind == "ridge":
        lmax /= 2 * RIDGE_ALPHA_FLOOR
    return lmax


def lambda_grid(lmax: float, n_lambda: int = 100, ratio: float = 1e-3) -> np.ndarray:
    return lmax * np.logspace(0.0, np.log10(ratio), n_lambda)


def stratified_folds(event, n_folds: int, seed) -> np.ndarray:
    """Fold label per subject: seeded permutation within event/censored strata."""
    event = np.asarray(event)
    rng = np.random.default_rng(seed)
    folds = np.empty(event.size, dtype=np.int64)
    ev = rng.permutation(np.flatnonzero(event > 0))
    ce = rng.permutation(np.flatnonzero(event == 0))
    stacked = np.concatenate([ev, ce])
    folds[stacked] = np.arange(stacked.size) % n_folds
    return folds


@dataclass(frozen=True, eq=False)
class CVResult:
    lambda_star: float
    path: tuple[tuple[float, float], ...]
    lambdas: np.ndarray
    deviance: np.ndarray
    folds: np.ndarray
    kind: str
    n_folds: int
    selection_rule: str = "min_deviance"

    @property
    def index_star(self) -> int:
        return int(np.argmin(self.deviance))


def fit_path(Xs, rs: RiskSets, codes, lambdas, beta_init=None, groups=NO_GROUPS):
    """Warm-started fits along a decreasing lambda sequence; returns (n_lambda, q)."""
    beta = np.zeros(Xs.shape[1]) if beta_init is None else np.asarray(beta_init, dtype=np.float64)
    coefs, _, _, _, _, _, status = kernels.cd_path(
        Xs, rs.event, rs.risk_start, rs.d, rs.n_le, np.asarray(codes, dtype=np.int64),
        np.asarray(lambdas, dtype=np.float64), beta, NUMERICAL_RIDGE, CD_TOL, MAX_SWEEPS,
        HESSIAN_REFRESH, 1, groups,
    )
    _check_status(status, MAX_SWEEPS)
    return coefs


def cv_lambda(design: DesignMatrix, dataset: TrialDataset, kind: str = "lasso", n_folds: int = 10,
              seed=0, n_lambda: int = 100, ratio: float = 1e-3, lambdas=None) -> CVResult:
    """Cross-validated penalty via the Verweij-van Houwelingen partial-likelihood deviance.

    Fold ``f`` contributes ``l(b_f) - l_{-f}(b_f)`` where ``b_f`` is fitted without
    fold ``f``; the deviance is -2 times the sum over folds.  The minimizer is returned.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if n_folds > dataset.n:
        raise ValueError("more folds than subjects")
    X = _as_matrix(design)
    folds = stratified_folds(dataset.event, n_folds, seed)
    for f in range(n_folds):
        if not np.any(dataset.event[folds == f] > 0):
            raise DataError(f"cross-validation fold {f} has zero events")
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(design, dataset, kind), n_lambda, ratio)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    codes = _penalty_codes(X.shape[1], design.interaction_mask, kind, _pinned(design))
    rs_full = RiskSets.build(dataset.time, dataset.event)
    Xs_full = np.ascontiguousarray(X[rs_full.order])
    score = np.zeros(lambdas.size)
    for f in range(n_folds):
        train = folds != f
        rs_tr = RiskSets.build(dataset.time[train], dataset.event[train])
        X_tr = X[train]
        Xs_tr = np.ascontiguousarray(X_tr[rs_tr.order])
        coefs = fit_path(Xs_tr, rs_tr, codes, lambdas, groups=_groups(design))
        for i in range(lambdas.size):
            b = coefs[i]
            ll_full = kernels.cox_loglik(Xs_full @ b, rs_full.event, rs_full.risk_start, rs_full.d)
            ll_tr = kernels.cox_loglik(Xs_tr @ b, rs_tr.event, rs_tr.risk_start, rs_tr.d)
            score[i] += ll_full - ll_tr
    deviance = -2.0 * score
    i_star = int(np.argmin(deviance))
    return CVResult(
        float(lambdas[i_star]), tuple(zip(lambdas.tolist(), deviance.tolist())), lambdas, deviance,
        folds, kind, n_folds,
    )


@dataclass(frozen=True, eq=False)
class StepCumHazard:
    jump_times: np.ndarray
    increments: np.ndarray

    def cumulative(self, t=None) -> np.ndarray:
        cum = np.cumsum(self.increments)
        if t is None:
            return cum
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=np.float64), side="right")
        return np.concatenate([[0.0], cum])[idx]


def breslow_baseline(fit: CoxFit, design, dataset) -> StepCumHazard:
    """Breslow increments: events at t over the risk-set sum of exp(linear predictor)."""
    X = _as_matrix(design)
    rs = _risk(dataset)
    eta = (X @ fit.coefficients)[rs.order]
    r0 = np.cumsum(np.exp(eta)[::-1])[::-1]
    return StepCumHazard(rs.event_times.copy(), rs.d / r0[rs.risk_start])


def forced_row(row, arm: int, K: int) -> np.ndarray:
    r = np.array(row, dtype=np.float64)
    r[0] = arm
    r[1 + K :] = r[1 : 1 + K] * arm
    return r


def predict_survival(fit: CoxFit, baseline: StepCumHazard, covariate_row, forced_treatment: int,
                     K: int | None = None) -> StepSurvival:
    """Survival curve of one subject as if assigned to ``forced_treatment``."""
    row = np.asarray(covariate_row, dtype=np.float64)
    if K is None:
        K = (row.size - 1) // 2
    lp = float(forced_row(row, forced_treatment, K) @ fit.coefficients)
    return StepSurvival(baseline.jump_times, np.exp(-baseline.cumulative() * np.exp(lp)))


def predict_survival_matrix(coefficients, baseline: StepCumHazard, X_forced) -> np.ndarray:
    """(n, n_jumps) survival values after each baseline jump for many subjects."""
    lp = np.asarray(X_forced) @ coefficients
    return np.exp(-np.outer(np.exp(lp), baseline.cumulative()))
