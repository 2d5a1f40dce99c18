import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.special import expit, logit

from forestshrink.binary import (
    BinaryDataset,
    LogisticFit,
    binary_lambda_max,
    check_equivalence,
    estimate_binary,
    fit_global_logistic,
    logistic_design,
    logistic_loglik,
    observed_proportions,
    parse_binary_dataset,
    serialize_binary_dataset,
    standardize_binary,
)
from forestshrink.errors import DataError, MonotoneLikelihoodError

from conftest import make_schema


def table_dataset(cells, levels=(2,)):
    """Expand ``{(level, arm): (events, total)}`` into a dataset."""
    y, z, cov = [], [], []
    for (lev, arm), (ev, tot) in cells.items():
        y += [1] * ev + [0] * (tot - ev)
        z += [arm] * tot
        cov += [lev] * tot
    return BinaryDataset(y, z, np.array(cov).reshape(len(y), -1), make_schema(*levels))


def random_binary(seed, n=300, levels=(2, 3), effect=-0.5, inter=0.0):
    rng = np.random.default_rng(seed)
    cov = np.column_stack([rng.integers(0, l, n) for l in levels])
    z = rng.integers(0, 2, n)
    eta = -0.3 + effect * z + 0.4 * (cov[:, 0] == 1) + inter * z * (cov[:, -1] == 1)
    y = (rng.uniform(size=n) < expit(eta)).astype(int)
    return BinaryDataset(y, z, cov, make_schema(*levels))


def test_saturated_two_by_two_tables():
    cells = {(0, 0): (10, 20), (0, 1): (30, 40), (1, 0): (12, 30), (1, 1): (9, 25)}
    ds = table_dataset(cells)
    fit = fit_global_logistic(ds)
    for (lev, arm), (ev, tot) in cells.items():
        lp = fit.linear_predictor([arm], np.array([[lev]]))[0]
        assert lp == pytest.approx(logit(ev / tot), abs=1e-8)
    st_ = standardize_binary(fit, ds)
    assert np.log(st_.odds_ratio[0]) == pytest.approx(np.log(3.0), abs=1e-8)
    np.testing.assert_allclose(st_.proportions, [[0.5, 0.75], [0.4, 0.36]], atol=1e-10)


def test_gradient_matches_finite_differences():
    ds = random_binary(1)
    X = logistic_design(ds.treatment, ds.subgroup_index(), ds.schema.K)
    y = ds.outcome.astype(float)
    beta = np.random.default_rng(2).normal(0, 0.3, X.shape[1])
    _, g, H = logistic_loglik(X, y, beta)
    h = 1e-6
    fd = np.array([
        (logistic_loglik(X, y, beta + h * e, False)[0] - logistic_loglik(X, y, beta - h * e, False)[0]) / (2 * h)
        for e in np.eye(X.shape[1])
    ])
    assert np.max(np.abs(fd - g)) / np.max(np.abs(g)) < 1e-6
    fd_h = np.array([
        (logistic_loglik(X, y, beta - h * e)[1] - logistic_loglik(X, y, beta + h * e)[1]) / (2 * h)
        for e in np.eye(X.shape[1])
    ])
    np.testing.assert_allclose(fd_h, H, atol=1e-5)


def test_infinite_lambda_zeroes_interactions():
    ds = random_binary(3, inter=1.0)
    for kind in ("lasso", "ridge"):
        assert np.all(fit_global_logistic(ds, kind, np.inf).interactions == 0.0)
    lmax = binary_lambda_max(ds)
    assert np.all(np.abs(fit_global_logistic(ds, "lasso", lmax * 1.0001).interactions) < 1e-9)
    assert np.any(fit_global_logistic(ds, "lasso", lmax * 0.5).interactions != 0.0)


def test_lambda_zero_matches_unpenalized():
    ds = random_binary(4, inter=0.8)
    ref = fit_global_logistic(ds)
    X = logistic_design(ds.treatment, ds.subgroup_index(), ds.schema.K)
    for kind in ("lasso", "ridge"):
        pen = fit_global_logistic(ds, kind, 0.0)
        np.testing.assert_allclose(X @ pen.coefficients, X @ ref.coefficients, atol=1e-5)


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(2,), (2, 3), (3, 2, 2)]))
def test_equivalence_theorem(seed, levels):
    ds = random_binary(seed, n=400, levels=levels, inter=0.7)
    try:
        fit = fit_global_logistic(ds)
    except (MonotoneLikelihoodError, DataError):
        assume(False)
    assert check_equivalence(fit, ds) < 1e-8


def test_penalized_fit_breaks_equivalence():
    ds = random_binary(5, inter=1.5)
    lmax = binary_lambda_max(ds)
    fit = fit_global_logistic(ds, "lasso", 0.3 * lmax)
    assert check_equivalence(fit, ds) > 1e-4
    assert check_equivalence(fit_global_logistic(ds, "ridge", 10.0), ds) > 1e-4


def test_standardized_proportions_may_differ_from_observed_arm_proportions():
    # strong prognostic second variable, imbalanced between arms within v1=a
    cells_y, cells_z, cov = [], [], []
    rng = np.random.default_rng(6)
    for _ in range(600):
        v1, z = rng.integers(0, 2), rng.integers(0, 2)
        v2 = int(rng.uniform() < (0.8 if z == 1 else 0.2))
        p = expit(-1.0 + 2.0 * v2 - 0.5 * z)
        cells_y.append(int(rng.uniform() < p))
        cells_z.append(z)
        cov.append((v1, v2))
    ds = BinaryDataset(cells_y, cells_z, cov, make_schema(2, 2))
    fit = fit_global_logistic(ds)
    assert check_equivalence(fit, ds) < 1e-8
    gap = np.abs(standardize_binary(fit, ds).proportions - observed_proportions(ds))
    assert np.nanmax(gap) > 0.02


def test_null_model_effect_measures():
    ds = random_binary(7)
    coef = np.zeros(2 + 2 * ds.schema.K)
    coef[0] = -0.7
    st_ = standardize_binary(LogisticFit(coef, ds.schema.K), ds)
    np.testing.assert_allclose(st_.risk_difference, 0.0, atol=1e-15)
    np.testing.assert_allclose(st_.odds_ratio, 1.0, rtol=1e-14)
    np.testing.assert_allclose(st_.risk_ratio, 1.0, rtol=1e-14)


def test_four_subject_hand_fixture():
    schema = make_schema(2)
    ds = BinaryDataset([1, 0, 1, 0], [1, 0, 0, 1], [[0], [0], [1], [1]], schema)
    # [intercept, z, main a, main b, z*a, z*b]
    coef = np.array([0.2, -0.4, 0.0, 0.5, 0.3, -0.1])
    st_ = standardize_binary(LogisticFit(coef, 2), ds)
    e = expit
    assert st_.proportions[0, 0] == pytest.approx(e(0.2))
    assert st_.proportions[0, 1] == pytest.approx(e(0.2 - 0.4 + 0.3))
    assert st_.proportions[1, 0] == pytest.approx(e(0.7))
    assert st_.proportions[1, 1] == pytest.approx(e(0.7 - 0.4 - 0.1))


def test_arm_swap_negates_rd_and_inverts_or():
    ds = random_binary(8, inter=0.6)
    swapped = BinaryDataset(ds.outcome, 1 - ds.treatment, ds.covariates, ds.schema)
    a = standardize_binary(fit_global_logistic(ds), ds)
    b = standardize_binary(fit_global_logistic(swapped), swapped)
    np.testing.assert_allclose(b.risk_difference, -a.risk_difference, atol=1e-9)
    np.testing.assert_allclose(b.odds_ratio, 1.0 / a.odds_ratio, rtol=1e-8)


@given(st.integers(0, 2**31 - 1))
def test_effect_measure_bounds(seed):
    rng = np.random.default_rng(seed)
    ds = random_binary(seed, n=60)
    coef = rng.normal(0, 3, 2 + 2 * ds.schema.K)
    st_ = standardize_binary(LogisticFit(coef, ds.schema.K), ds)
    assert np.all((st_.proportions >= 0) & (st_.proportions <= 1))
    assert np.all(np.abs(st_.risk_difference) <= 1)


def test_undefined_measures_flagged():
    ds = random_binary(9, n=50)
    coef = np.zeros(2 + 2 * ds.schema.K)
    coef[0] = -800.0
    st_ = standardize_binary(LogisticFit(coef, ds.schema.K), ds)
    assert st_.undefined.all()
    assert all(r["odds_ratio"] is None and r["missing"] for r in st_.to_dict())


def test_single_class_and_separation_errors():
    ds = random_binary(10, n=40)
    with pytest.raises(DataError):
        fit_global_logistic(BinaryDataset(np.zeros(40), ds.treatment, ds.covariates, ds.schema))
    y = ds.treatment.copy()
    with pytest.raises(MonotoneLikelihoodError):
        fit_global_logistic(BinaryDataset(y, ds.treatment, ds.covariates, ds.schema))


def test_round_trip_csv():
    ds = random_binary(11, n=30)
    again = parse_binary_dataset(serialize_binary_dataset(ds), ds.schema)
    np.testing.assert_array_equal(again.outcome, ds.outcome)
    np.testing.assert_array_equal(again.covariates, ds.covariates)


def test_estimate_binary_pipelines():
    ds = random_binary(12, n=400, inter=1.0)
    glob = estimate_binary("global", ds)
    st_ = standardize_binary(fit_global_logistic(ds.canonical()), ds.canonical())
    np.testing.assert_allclose(glob.log_effects, np.log(st_.odds_ratio), rtol=1e-12)
    pop = estimate_binary("population", ds)
    assert np.all(pop.log_effects == pop.log_effects[0])
    naive = estimate_binary("naive", ds)
    assert all(e.interval[0] < e.log_effect < e.interval[1] for e in naive)
    lasso = estimate_binary("lasso", ds, seed=1, n_folds=5)
    assert lasso.metadata["lambda_star"] > 0
    assert np.all(np.isfinite(lasso.log_effects))
    with pytest.raises(ValueError):
        estimate_binary("horseshoe", ds)
