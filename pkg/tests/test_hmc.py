import numpy as np
import pytest

from forestshrink.errors import ConfigError, SamplerError
from forestshrink.hmc import HmcConfig, effective_sample_size, hmc_sample, split_rhat


def std_normal(x):
    return -0.5 * float(x @ x), -x


def banana(v):
    # Rosenbrock-type density: x ~ N(1, 1), y | x ~ N(x^2, 0.5^2)
    x, y = v
    with np.errstate(over="ignore", invalid="ignore"):
        r = y - x * x
        val = -0.5 * (x - 1.0) ** 2 - 2.0 * r * r
        return val, np.array([-(x - 1.0) + 8.0 * r * x, -4.0 * r])


def test_standard_normal_moments():
    cfg = HmcConfig(chains=4, warmup=500, draws=1000, leapfrog=10, seed=3)
    d = hmc_sample(std_normal, np.zeros(10) + 0.5, cfg)
    flat = d.flat
    ess = d.ess()
    sd = flat.std(axis=0)
    assert np.all(np.abs(flat.mean(axis=0)) < 4 * sd / np.sqrt(ess))
    assert np.all(np.abs(sd - 1.0) < 0.1)
    assert d.samples.shape == (4, 1000, 10)
    assert 0.6 < d.accept_rate.mean() < 0.95


def test_banana_rhat():
    cfg = HmcConfig(chains=4, warmup=1000, draws=1000, leapfrog=32, seed=11)
    d = hmc_sample(banana, lambda r: r.normal(size=2), cfg)
    assert np.all(d.rhat() < 1.05)
    x = d.flat[:, 0]
    assert abs(x.mean() - 1.0) < 0.15


def test_deterministic_given_seed():
    cfg = HmcConfig(chains=2, warmup=50, draws=50, leapfrog=5, seed=42)
    a = hmc_sample(std_normal, np.ones(3), cfg)
    b = hmc_sample(std_normal, np.ones(3), cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = hmc_sample(std_normal, np.ones(3), HmcConfig(chains=2, warmup=50, draws=50, leapfrog=5, seed=43))
    assert not np.array_equal(a.samples, c.samples)


def test_low_acceptance_aborts():
    def cliff(x):
        # finite only at the start, so every proposal is rejected
        if np.any(x != 0.0):
            return -np.inf, np.zeros_like(x)
        return 0.0, np.zeros_like(x)

    with pytest.raises(SamplerError, match="acceptance"):
        hmc_sample(cliff, np.zeros(2), HmcConfig(chains=1, warmup=20, draws=20, leapfrog=3))


def test_non_finite_start():
    with pytest.raises(SamplerError):
        hmc_sample(lambda x: (-np.inf, np.zeros_like(x)), np.zeros(2), HmcConfig(chains=1, warmup=5, draws=5))


def test_config_validation():
    with pytest.raises(ConfigError):
        HmcConfig(chains=0)
    with pytest.raises(ConfigError):
        HmcConfig(target_accept=1.0)
    with pytest.raises(ConfigError):
        HmcConfig(jitter=1.5)


def test_split_rhat_detects_disagreement():
    rng = np.random.default_rng(0)
    iid = rng.normal(size=(4, 500, 2))
    assert np.all(np.abs(split_rhat(iid) - 1.0) < 0.02)
    shifted = iid + np.array([0, 0, 0, 2.0])[:, None, None]
    assert np.all(split_rhat(shifted) > 1.1)
    with pytest.raises(ValueError):
        split_rhat(iid[:, :3])


def test_ess_of_ar1_chain():
    rng = np.random.default_rng(1)
    rho, n = 0.8, 20_000
    x = np.empty((2, n))
    x[:, 0] = rng.normal(size=2)
    noise = rng.normal(size=(2, n)) * np.sqrt(1 - rho ** 2)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + noise[:, t]
    ess = effective_sample_size(x[..., None])[0]
    expected = 2 * n * (1 - rho) / (1 + rho)
    assert ess == pytest.approx(expected, rel=0.15)
    iid = effective_sample_size(rng.normal(size=(2, 2000, 1)))[0]
    assert iid == pytest.approx(4000, rel=0.15)
