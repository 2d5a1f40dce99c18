from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from forestshrink.data import SubgroupSchema, TrialDataset, Variable

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_schema(*levels) -> SubgroupSchema:
    return SubgroupSchema(tuple(
        Variable(f"v{j + 1}", tuple("abcd"[:n])) for j, n in enumerate(levels)
    ))


def random_dataset(rng, n, levels=(2, 3), hr=0.7, censor=0.3) -> TrialDataset:
    """Exponential outcomes with a treatment effect and random censoring."""
    schema = make_schema(*levels)
    cov = np.column_stack([rng.integers(0, l, n) for l in levels])
    z = np.arange(n) % 2
    t = rng.exponential(1.0, n) / np.where(z == 1, hr, 1.0)
    c = rng.exponential(1.0 / censor, n) if censor > 0 else np.full(n, np.inf)
    time = np.minimum(t, c)
    event = (t <= c).astype(int)
    return TrialDataset(time, event, z, cov, schema)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
