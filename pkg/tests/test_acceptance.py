"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL | detail`` line to the
terminal (outside pytest's capture) before asserting.
"""
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from forestshrink import kernels
from forestshrink.bayes import HorseshoeCoxModel
from forestshrink.binary import BinaryDataset, check_equivalence, fit_global_logistic
from forestshrink.cox import RiskSets, cox_cd_fit, cox_nr_fit, cv_lambda, fit_path, lambda_grid, lambda_max
from forestshrink.data import TrialDataset, build_design, reduced_columns
from forestshrink.estimators import run_estimator
from forestshrink.evaluation import classify_heterogeneous, identification_probability, rmse_overall, \
    subgroup_metrics
from forestshrink.hmc import HmcConfig, hmc_sample
from forestshrink.marginal import ahr_grid, ahr_step, uniform_grid
from forestshrink.reference import HETEROGENEOUS, LABELS, reference_log_ahr
from forestshrink.simulation import gen_covariates, run_seed, scenario_coeffs, simulate_trial, \
    simulation_schema, true_ahr_oracle
from forestshrink.survival import kaplan_meier

from conftest import make_schema

pytestmark = pytest.mark.acceptance

FREQ_RUNS = 100
NAIVE_RUNS = 500
BAYES_RUNS = 20


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


_ORACLES = {}


def oracle(scenario):
    if scenario not in _ORACLES:
        _ORACLES[scenario] = true_ahr_oracle(scenario_coeffs(scenario))
    return _ORACLES[scenario]


def trial(scenario, run):
    spec = scenario_coeffs(scenario)
    return simulate_trial(spec, run_seed(spec.master_seed, run))


def test_criterion_1_oracle_fidelity(verdict):
    t0 = time.perf_counter()
    s1 = true_ahr_oracle(scenario_coeffs(1))
    s3 = true_ahr_oracle(scenario_coeffs(3))
    elapsed = time.perf_counter() - t0
    _ORACLES.update({1: s1, 3: s3})
    ahr1 = np.exp(s1.log_ahr)
    overall3 = float(np.exp(s3.overall_log_ahr))
    ok = bool(np.all(np.abs(ahr1 - 0.66) <= 0.02)) and abs(overall3 - 0.98) <= 0.02 and elapsed < 120
    verdict(1, ok, f"S1 subgroup AHR range [{ahr1.min():.3f}, {ahr1.max():.3f}], S3 overall {overall3:.3f}, "
                   f"{elapsed:.1f}s for both oracles")


_C2 = {"grid": 0.0, "km": 0.0, "concordance": 0.0}


@settings(max_examples=12, deadline=None)
@given(st.sampled_from([0.5, 0.66, 1.0]), st.floats(0.5, 20.0), st.integers(0, 2**31 - 1))
def _criterion_2_property(r, L, seed):
    t = uniform_grid(L, 10_000)
    grid = ahr_grid(np.exp(-t), np.exp(-r * t), np.full_like(t, r), np.ones_like(t), L, 10_000)
    _C2["grid"] = max(_C2["grid"], abs(grid - r))
    assert abs(grid - r) < 1e-3
    rng = np.random.default_rng(seed)
    n = 100_000
    tc, ti = rng.exponential(1.0, n), rng.exponential(1.0 / r, n)
    km = ahr_step(kaplan_meier(tc, np.ones(n)), kaplan_meier(ti, np.ones(n)), np.inf)
    _C2["km"] = max(_C2["km"], abs(km - r))
    assert abs(km - r) < 0.02
    # odds of concordance from independent draws
    a, b = rng.exponential(1.0, n), rng.exponential(1.0 / r, n)
    odds = np.mean(b < a) / np.mean(a < b)
    _C2["concordance"] = max(_C2["concordance"], abs(odds - km))
    assert abs(odds - km) < 0.02


def test_criterion_2_ahr_correctness(verdict):
    try:
        _criterion_2_property()
        ok, note = True, ""
    except AssertionError as exc:
        ok, note = False, f" ({str(exc).splitlines()[0]})"
    verdict(2, ok, f"max errors: grid {_C2['grid']:.2e}, KM {_C2['km']:.4f}, "
                   f"concordance vs KM {_C2['concordance']:.4f}{note}")


def test_criterion_3_frequentist_shrinkage(verdict):
    tags = ("naive", "population", "lasso", "ridge")
    lines, ok = [], True
    t0 = time.perf_counter()
    for s in range(1, 7):
        truth = oracle(s)
        est = {t: np.empty((FREQ_RUNS, 25)) for t in tags}
        for r in range(FREQ_RUNS):
            ds = trial(s, r)
            for t in tags:
                est[t][r] = run_estimator(t, ds, seed=r).log_effects
        rmse = {t: rmse_overall(est[t], truth.log_ahr) for t in tags}
        good = rmse["lasso"] < rmse["naive"] and rmse["ridge"] < rmse["naive"]
        if s != 5:
            good = good and rmse["population"] < rmse["naive"]
        ok = ok and good
        lines.append(f"S{s} " + " ".join(f"{t}={rmse[t]:.3f}" for t in tags) + ("" if good else " [violated]"))
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 30 * 60
    verdict(3, ok, "; ".join(lines) + f"; {elapsed / 60:.1f} min (target < 30)")


def test_criterion_4_naive_calibration(verdict):
    truth = oracle(1)
    est = np.empty((NAIVE_RUNS, 25))
    iv = np.empty((NAIVE_RUNS, 25, 2))
    for r in range(NAIVE_RUNS):
        es = run_estimator("naive", trial(1, r))
        est[r], iv[r] = es.log_effects, es.intervals
    m = subgroup_metrics(est, truth.log_ahr, iv)
    cov_ok = bool(np.all(np.abs(m.coverage - 0.95) <= 0.02))
    bias_ok = bool(np.all(np.abs(m.bias) <= 0.02))
    worst_cov = LABELS[int(np.argmax(np.abs(m.coverage - 0.95)))]
    worst_bias = LABELS[int(np.argmax(np.abs(m.bias)))]
    n_cov = int(np.sum(np.abs(m.coverage - 0.95) > 0.02))
    n_bias = int(np.sum(np.abs(m.bias) > 0.02))
    verdict(4, cov_ok and bias_ok,
            f"coverage median {np.median(m.coverage):.3f} range [{m.coverage.min():.3f}, {m.coverage.max():.3f}], "
            f"{n_cov}/25 outside band (worst {worst_cov}); |bias| median {np.median(np.abs(m.bias)):.4f} "
            f"max {np.abs(m.bias).max():.4f}, {n_bias}/25 above 0.02 (worst {worst_bias}); "
            f"missing {int(m.n_missing.sum())}")


_BAYES = {}


def bayes_runs():
    """Horseshoe, naive and ridge on the first runs of scenarios 1 and 2, computed once."""
    if not _BAYES:
        for s in (1, 2):
            rows = {"horseshoe": [], "naive": [], "ridge": [], "seconds": [], "rhat": []}
            for r in range(BAYES_RUNS):
                ds = trial(s, r)
                t0 = time.perf_counter()
                hs = run_estimator("horseshoe", ds, seed=r)
                rows["seconds"].append(time.perf_counter() - t0)
                rows["rhat"].append(hs.metadata["max_rhat"])
                rows["horseshoe"].append(hs.log_effects)
                rows["naive"].append(run_estimator("naive", ds).log_effects)
                rows["ridge"].append(run_estimator("ridge", ds, seed=r).log_effects)
            _BAYES[s] = {k: np.array(v) for k, v in rows.items()}
    return _BAYES


def test_criterion_5_horseshoe_reduced_scale(verdict):
    runs = bayes_runs()
    parts, ok = [], True
    for s in (1, 2):
        truth = oracle(s).log_ahr
        res = runs[s]
        wins = np.mean([rmse_overall(h, truth) < rmse_overall(n, truth)
                        for h, n in zip(res["horseshoe"], res["naive"])])
        ok = ok and wins >= 0.8
        parts.append(f"S{s} horseshoe beats naive in {wins:.0%} of runs")
    null = LABELS.index("x4=a")
    ident = {t: identification_probability(runs[2][t], null, "max") for t in ("horseshoe", "naive", "ridge")}
    ordered = ident["horseshoe"] >= ident["naive"] >= ident["ridge"]
    slowest = max(float(np.max(runs[s]["seconds"])) for s in (1, 2))
    ok = ok and ordered and slowest <= 300
    parts.append("S2 identification " + " ".join(f"{t}={v:.2f}" for t, v in ident.items()))
    parts.append(f"slowest fit {slowest:.0f}s")
    verdict(5, ok, "; ".join(parts))


def test_criterion_6_sampler_and_gradient(verdict):
    ds = trial(1, 0)
    model = HorseshoeCoxModel.from_dataset(ds.canonical())
    rng = np.random.default_rng(6)
    h = 1e-6
    worst = 0.0
    for _ in range(5):
        theta = model.initial_point(rng, spread=0.5)
        _, grad = model.log_posterior(theta)
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            fd = (model.log_posterior(theta + e)[0] - model.log_posterior(theta - e)[0]) / (2 * h)
            worst = max(worst, abs(fd - grad[j]) / max(1.0, abs(grad[j])))
    d = hmc_sample(lambda x: (-0.5 * float(x @ x), -x), np.full(10, 0.5),
                   HmcConfig(chains=4, warmup=500, draws=1000, leapfrog=10, seed=3))
    flat = d.flat
    mcse = flat.std(axis=0) / np.sqrt(d.ess())
    mean_ok = bool(np.all(np.abs(flat.mean(axis=0)) < 4 * mcse))
    sd_ok = bool(np.all(np.abs(flat.std(axis=0) - 1.0) < 0.1))
    rhat = bayes_runs()[1]["rhat"]
    ok = worst < 1e-5 and mean_ok and sd_ok and float(rhat.max()) < 1.05
    verdict(6, ok, f"gradient rel err {worst:.1e}; 10-D normal means within 4 MCSE: {mean_ok}, "
                   f"sds within 0.1: {sd_ok}; max split R-hat over {rhat.size} scenario-1 fits {rhat.max():.3f}")


def test_criterion_7_binary_equivalence(verdict):
    schema = simulation_schema()
    gaps = []
    for r in range(50):
        seeds = np.random.SeedSequence([2024, r]).spawn(2)
        cov = gen_covariates(1000, seeds[0])
        rng = np.random.default_rng(seeds[1])
        z = np.arange(1000) % 2
        sub = cov + schema.offsets[None, :]
        alpha = rng.normal(0, 0.15, schema.K)
        beta = rng.normal(0, 0.15, schema.K)
        eta = -0.5 - 0.4 * z + alpha[sub].sum(axis=1) + z * beta[sub].sum(axis=1)
        y = (rng.uniform(size=1000) < expit(eta)).astype(int)
        ds = BinaryDataset(y, z, cov, schema)
        gaps.append(check_equivalence(fit_global_logistic(ds), ds))
    worst = max(gaps)
    verdict(7, worst < 1e-8, f"max subgroup-arm gap over 50 datasets {worst:.2e}")


def _brute_loglik(x, time_, event, beta):
    total = np.zeros(beta.size)
    for i in np.flatnonzero(event):
        at_risk = time_ >= time_[i]
        total += beta * x[i] - np.log(np.exp(np.outer(beta, x[at_risk])).sum(axis=1))
    return total


def test_criterion_8_small_instance_oracles(verdict):
    # coordinate descent at lambda 0 against Newton-Raphson on a full-rank coding
    ds = trial(1, 0)
    d = build_design(ds)
    refs = set(ds.schema.offsets.tolist())
    R = reduced_columns(ds, [k for k in range(ds.schema.K) if k not in refs])
    lp_cd = d.matrix @ cox_cd_fit(d, ds, "lasso", 0.0).coefficients
    lp_nr = R @ cox_nr_fit(R, ds).coefficients
    lp_gap = float(np.max(np.abs((lp_cd - lp_cd.mean()) - (lp_nr - lp_nr.mean()))))

    # eight-subject fit against a grid search
    t8 = np.array([0.5, 1.2, 1.9, 2.3, 3.1, 3.6, 4.4, 5.0])
    e8 = np.array([1, 1, 0, 1, 1, 0, 1, 1])
    z8 = np.array([1, 0, 1, 0, 1, 1, 0, 0])
    ds8 = TrialDataset(t8, e8, z8, np.zeros((8, 1), dtype=int), make_schema(2))
    grid = np.round(np.arange(-3.0, 3.0 + 5e-5, 1e-4), 10)
    best = grid[np.argmax(_brute_loglik(z8.astype(float), t8, e8, grid))]
    grid_gap = abs(cox_nr_fit(z8[:, None].astype(float), ds8).coefficients[0] - best)

    # leave-one-out cross-validation against a brute-force loop
    rng = np.random.default_rng(21)
    n = 30
    cov = np.column_stack([rng.integers(0, 2, n), rng.integers(0, 3, n)])
    z = np.arange(n) % 2
    small = TrialDataset(rng.exponential(1.0, n) * np.exp(0.4 * z + 0.3 * cov[:, 0]), np.ones(n, dtype=int), z,
                         cov, make_schema(2, 3))
    ds_ = build_design(small)
    lambdas = lambda_grid(lambda_max(ds_, small), 15, 1e-2)
    res = cv_lambda(ds_, small, "lasso", n_folds=n, seed=3, lambdas=lambdas)
    X = ds_.matrix
    codes = np.where(ds_.interaction_mask, kernels.LASSO, kernels.UNPENALIZED).astype(np.int64)
    codes[ds_.reference_mask] = kernels.FROZEN
    full = RiskSets.build(small.time, small.event)
    Xf = np.ascontiguousarray(X[full.order])
    score = np.zeros(lambdas.size)
    for i in range(n):
        keep = np.arange(n) != i
        rs = RiskSets.build(small.time[keep], small.event[keep])
        Xs = np.ascontiguousarray(X[keep][rs.order])
        for j, b in enumerate(fit_path(Xs, rs, codes, lambdas, groups=ds_.null_groups)):
            score[j] += (kernels.cox_loglik(Xf @ b, full.event, full.risk_start, full.d)
                         - kernels.cox_loglik(Xs @ b, rs.event, rs.risk_start, rs.d))
    loo_exact = bool(np.array_equal(res.deviance, -2 * score))
    ok = lp_gap < 1e-5 and grid_gap < 1e-4 and loo_exact
    verdict(8, ok, f"CD vs NR linear predictor gap {lp_gap:.1e}; 8-subject vs grid {grid_gap:.1e}; "
                   f"LOO deviance identical to brute force: {loo_exact}")


def test_criterion_9_heterogeneity_classification(verdict):
    total, exact = 0, True
    for s in range(1, 7):
        truths, overall = reference_log_ahr(s)
        flags = classify_heterogeneous(truths, overall)
        total += int(flags.sum())
        exact = exact and {LABELS[k] for k in np.flatnonzero(flags)} == set(HETEROGENEOUS[s])
    verdict(9, exact and total == 29, f"{total} heterogeneous subgroups; starred sets matched: {exact}")
