import numpy as np
import pytest
from hypothesis import given, strategies as st

from forestshrink.errors import DataError, DegenerateSubgroupError
from forestshrink.marginal import ahr_grid, ahr_step, standardize_subgroup, summarize_ahr_draws, uniform_grid
from forestshrink.survival import StepSurvival, kaplan_meier


def exp_km(rng, n, rate):
    return kaplan_meier(rng.exponential(1.0 / rate, n), np.ones(n))


def test_ahr_step_identical_curves():
    s = StepSurvival([1.0, 2.0, 4.0], [0.7, 0.4, 0.1])
    assert ahr_step(s, s, 10.0) == 1.0


def test_ahr_step_hand_fixture():
    S_C = StepSurvival([1.0, 3.0], [0.8, 0.5])
    S_I = StepSurvival([2.0], [0.6])
    # numerator: S_C just before 2 times the drop of S_I at 2
    # denominator: S_I before 1 times drop at 1, plus S_I before 3 times drop at 3
    expected = (0.8 * 0.4) / (1.0 * 0.2 + 0.6 * 0.3)
    assert ahr_step(S_C, S_I, 5.0) == pytest.approx(expected, rel=0, abs=1e-12)


def test_ahr_step_exponential_proportional_hazards():
    rng = np.random.default_rng(2024)
    S_C = exp_km(rng, 100_000, 1.0)
    S_I = exp_km(rng, 100_000, 0.66)
    assert ahr_step(S_C, S_I, np.inf) == pytest.approx(0.66, abs=0.02)


def test_ahr_step_zero_denominator():
    with pytest.raises(DegenerateSubgroupError):
        ahr_step(StepSurvival([5.0], [0.5]), StepSurvival([1.0], [0.5]), 2.0)


@given(st.integers(0, 10_000))
def test_ahr_step_arm_swap_is_reciprocal(seed):
    rng = np.random.default_rng(seed)
    a = exp_km(rng, 30, 1.0)
    b = exp_km(rng, 30, 0.7)
    L = float(max(a.jump_times.max(), b.jump_times.max()))
    assert ahr_step(b, a, L) == pytest.approx(1.0 / ahr_step(a, b, L), rel=1e-13)


def test_ahr_equals_odds_of_concordance():
    rng = np.random.default_rng(77)
    S_C = exp_km(rng, 2000, 1.0)
    S_I = kaplan_meier(rng.weibull(1.5, 2000) * 1.3, np.ones(2000))
    L = 1.5

    def draw(curve, m):
        # inverse transform on the step curve; mass beyond the last jump is sent to infinity
        u = rng.uniform(size=m)
        idx = np.searchsorted(-curve.values, -u, side="left")
        return np.where(idx < curve.n_jumps, curve.jump_times[np.minimum(idx, curve.n_jumps - 1)], np.inf)

    m = 400_000
    tc, ti = draw(S_C, m), draw(S_I, m)
    num = np.mean((ti <= L) & (tc >= ti))
    den = np.mean((tc <= L) & (ti >= tc))
    assert ahr_step(S_C, S_I, L) == pytest.approx(num / den, rel=0.015)


def _exp_curves(r, L, n):
    t = uniform_grid(L, n)
    return np.exp(-t), np.exp(-r * t), np.full_like(t, r), np.ones_like(t)


def test_ahr_grid_exponential():
    S_C, S_I, h_I, h_C = _exp_curves(0.5, 40.0, 10_000)
    assert ahr_grid(S_C, S_I, h_I, h_C, 40.0) == pytest.approx(0.5, abs=1e-3)


def test_ahr_grid_identical_is_one():
    S_C, _, _, h_C = _exp_curves(1.0, 5.0, 1000)
    assert ahr_grid(S_C, S_C, h_C, h_C, 5.0) == 1.0


def _weibull_ahr(n):
    L = 2.0
    t = uniform_grid(L, n)
    S_C, h_C = np.exp(-t ** 1.5), 1.5 * t ** 0.5
    S_I, h_I = np.exp(-0.6 * t ** 2), 1.2 * t
    return ahr_grid(S_C, S_I, h_I, h_C, L)


def test_ahr_grid_first_order_convergence():
    a, b, c = _weibull_ahr(250), _weibull_ahr(500), _weibull_ahr(1000)
    assert abs(a - b) < 4 * abs(b - c)
    assert abs(b - c) < abs(a - b)


def test_ahr_grid_arm_swap_and_broadcasting():
    S_C, S_I, h_I, h_C = _exp_curves(0.7, 6.0, 1000)
    fwd = ahr_grid(S_C, S_I, h_I, h_C, 6.0)
    assert ahr_grid(S_I, S_C, h_C, h_I, 6.0) == pytest.approx(1.0 / fwd, rel=1e-14)
    stacked = ahr_grid(np.stack([S_C, S_C]), np.stack([S_I, S_C]), np.stack([h_I, h_C]), h_C, 6.0)
    np.testing.assert_allclose(stacked, [fwd, 1.0], rtol=1e-14)


def test_ahr_grid_errors():
    S_C, S_I, h_I, h_C = _exp_curves(0.7, 6.0, 100)
    with pytest.raises(DataError):
        ahr_grid(S_C[:-1], S_I, h_I, h_C, 6.0)
    with pytest.raises(DataError):
        ahr_grid(S_C, S_I, h_I, h_C, 6.0, grid_points=50)
    assert np.isnan(ahr_grid(S_C, S_I, h_I, np.zeros_like(h_C), 6.0))


def test_standardize_identical_subjects():
    s = StepSurvival([1.0, 2.0], [0.6, 0.3])
    avg = standardize_subgroup([s, s, s])
    grid = np.linspace(0, 3, 31)
    np.testing.assert_array_equal(avg(grid), s(grid))


def test_standardize_two_subjects_pointwise_mean():
    s1 = StepSurvival([0.5, 1.5], [0.9, 0.2])
    s2 = StepSurvival([1.0, 2.5], [0.5, 0.4])
    avg = standardize_subgroup([s1, s2])
    for t in np.linspace(0, 3, 20):
        assert avg(t) == pytest.approx(0.5 * (s1(t) + s2(t)), abs=1e-15)


def test_standardize_with_indicator_and_arrays():
    curves = np.array([[1.0, 0.5], [1.0, 0.3], [1.0, 0.1]])
    np.testing.assert_allclose(standardize_subgroup(curves, [1, 0, 1], 2), [1.0, 0.3])
    with pytest.raises(DegenerateSubgroupError):
        standardize_subgroup(curves, [0, 0, 0])
    with pytest.raises(ValueError):
        standardize_subgroup(curves, [1, 1, 0], 3)


@given(st.lists(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5), min_size=1, max_size=6))
def test_standardize_preserves_monotonicity_and_bounds(raw):
    curves = []
    for j, vals in enumerate(raw):
        times = np.arange(1, len(vals) + 1) + 0.1 * j
        curves.append(StepSurvival(times, np.sort(vals)[::-1]))
    v = standardize_subgroup(curves)(np.linspace(0, 8, 200))
    assert v[0] == 1.0
    assert np.all(np.diff(v) <= 1e-15)
    assert np.all((v >= 0) & (v <= 1))


def test_summarize_constant_draws():
    est = summarize_ahr_draws(np.full(200, 0.8))
    assert est.point == 0.8
    assert est.interval == (0.8, 0.8)


def test_summarize_matches_order_statistics():
    draws = np.arange(1, 1001) * 0.002
    rng = np.random.default_rng(0)
    est = summarize_ahr_draws(rng.permutation(draws))
    x = np.sort(draws)

    def q(p):
        h = (x.size - 1) * p
        lo = int(np.floor(h))
        return x[lo] + (h - lo) * (x[lo + 1] - x[lo])

    assert est.point == pytest.approx(q(0.5), abs=1e-15)
    assert est.interval[0] == pytest.approx(q(0.025), abs=1e-15)
    assert est.interval[1] == pytest.approx(q(0.975), abs=1e-15)


def test_summarize_log_symmetric_median_is_geometric_mean():
    logs = np.random.default_rng(4).normal(-0.3, 0.2, 20_000)
    est = summarize_ahr_draws(np.exp(logs))
    assert est.log_point == pytest.approx(logs.mean(), abs=4 * 0.2 / np.sqrt(20_000) * 1.26)
    assert est.interval[0] < est.point < est.interval[1]


def test_summarize_errors():
    with pytest.raises(ValueError):
        summarize_ahr_draws(np.ones(99))
    with pytest.raises(DataError):
        summarize_ahr_draws(np.r_[np.ones(150), np.nan])
