import numpy as np
import pytest
from hypothesis import given, strategies as st

from forestshrink.data import (
    SubgroupSchema,
    TrialDataset,
    build_design,
    parse_dataset,
    reduced_columns,
    serialize_dataset,
)
from forestshrink.errors import DataError
from forestshrink.simulation import simulation_schema

from conftest import make_schema

BINARY = SubgroupSchema.from_dict({"variables": [{"name": "g", "levels": ["a", "b"]}]})


def test_minimal_file():
    ds = parse_dataset("time,event,treatment,g\n1.0,1,0,a\n2.0,1,1,b\n", BINARY)
    assert ds.n == 2
    np.testing.assert_array_equal(ds.time, [1.0, 2.0])
    np.testing.assert_array_equal(ds.covariates[:, 0], [0, 1])


@pytest.mark.parametrize(
    "body, needle",
    [
        ("1.0,1,0,a\n-1,1,1,b\n", "nonpositive time, row 2"),
        ("1.0,1,0,a\nabc,1,1,b\n", "non-numeric time, row 2"),
        ("1.0,2,0,a\n", "event outside {0,1}, row 1"),
        ("1.0,1,3,a\n", "treatment outside {0,1}, row 1"),
        ("1.0,1,0,z\n", "unknown level 'z', row 1, column 'g'"),
        ("1.0,1,0,\n", "missing value, row 1, column 'g'"),
    ],
)
def test_row_diagnostics(body, needle):
    with pytest.raises(DataError, match=needle.replace("{", r"\{").replace("}", r"\}")):
        parse_dataset("time,event,treatment,g\n" + body, BINARY)


def test_missing_column_and_empty():
    with pytest.raises(DataError, match="missing column, column 'event'"):
        parse_dataset("time,treatment,g\n1,0,a\n", BINARY)
    with pytest.raises(DataError, match="empty file"):
        parse_dataset("", BINARY)
    with pytest.raises(DataError, match="empty file"):
        parse_dataset("time,event,treatment,g\n", BINARY)


def test_twenty_row_fixture(fixtures_dir):
    schema = SubgroupSchema.from_json(fixtures_dir / "trial20_schema.json")
    ds = parse_dataset((fixtures_dir / "trial20.csv").read_text(), schema)
    expected = [
        (0.52, 1, 0, 0, 0), (1.10, 0, 1, 1, 1), (2.25, 1, 1, 0, 2), (0.87, 1, 0, 1, 0),
        (3.40, 0, 0, 0, 1), (1.75, 1, 1, 1, 2), (2.90, 1, 0, 0, 0), (0.33, 0, 1, 1, 1),
        (4.10, 1, 1, 0, 2), (1.05, 1, 0, 1, 0), (2.05, 0, 1, 0, 1), (3.75, 1, 0, 1, 2),
        (0.95, 1, 1, 0, 0), (1.60, 0, 0, 1, 1), (2.60, 1, 1, 0, 2), (3.15, 1, 0, 1, 0),
        (0.71, 0, 1, 0, 1), (1.99, 1, 0, 1, 2), (4.80, 0, 1, 0, 0), (2.35, 1, 0, 1, 1),
    ]
    assert ds.n == 20
    for i, (t, e, z, sex, stage) in enumerate(expected):
        assert ds.time[i] == t
        assert ds.event[i] == e
        assert ds.treatment[i] == z
        assert tuple(ds.covariates[i]) == (sex, stage)
    assert schema.labels == ("sex=f", "sex=m", "stage=I", "stage=II", "stage=III")


def test_schema_validation():
    with pytest.raises(DataError):
        SubgroupSchema.from_dict({"variables": [{"name": "g", "levels": ["a"]}]})
    with pytest.raises(DataError):
        SubgroupSchema.from_dict({"variables": [{"name": "g", "levels": ["a", "a"]}]})
    with pytest.raises(DataError):
        SubgroupSchema.from_dict({"variables": [{"name": "time", "levels": ["a", "b"]}]})
    with pytest.raises(DataError):
        SubgroupSchema.from_dict({"variables": []})


def test_design_binary_variable():
    ds = TrialDataset([1.0, 2.0], [1, 0], [0, 1], [[1], [0]], BINARY)
    X = build_design(ds).matrix
    assert X.shape == (2, 5)
    np.testing.assert_array_equal(X[0], [0, 0, 1, 0, 0])


def test_design_simulation_schema_width():
    schema = simulation_schema()
    assert schema.K == 25
    assert sorted(schema.n_levels) == [2] * 6 + [3] * 3 + [4]
    ds = TrialDataset([1.0], [1], [1], [[0] * 10], schema)
    assert build_design(ds).n_columns == 51


def test_design_intervention_two_binaries():
    ds = TrialDataset([1.0], [1], [1], [[0, 1]], make_schema(2, 2))
    np.testing.assert_array_equal(build_design(ds).matrix[0], [1, 1, 0, 0, 1, 1, 0, 0, 1])


@st.composite
def datasets(draw):
    levels = draw(st.lists(st.integers(2, 4), min_size=1, max_size=3))
    n = draw(st.integers(1, 25))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    times = rng.exponential(1.0, n) + 1e-3
    # round-trip must be exact even for awkward floats
    times = times * draw(st.floats(0.1, 100.0))
    cov = np.column_stack([rng.integers(0, l, n) for l in levels])
    return TrialDataset(times, rng.integers(0, 2, n), rng.integers(0, 2, n), cov, make_schema(*levels))


@given(datasets())
def test_design_invariants(ds):
    d = build_design(ds)
    X = d.matrix
    np.testing.assert_array_equal(X[:, d.main_slice].sum(axis=1), ds.schema.p)
    np.testing.assert_array_equal(X[:, d.interaction_slice], X[:, d.main_slice] * X[:, :1])


@given(datasets())
def test_parse_serialize_round_trip(ds):
    again = parse_dataset(serialize_dataset(ds), ds.schema)
    assert again.equals(ds)


@given(datasets())
def test_canonical_order_is_permutation_invariant(ds):
    perm = np.random.default_rng(0).permutation(ds.n)
    assert ds.permute(perm).canonical().equals(ds.canonical())


@given(datasets())
def test_reduced_columns_span_linear_predictor(ds):
    """Reference coding spans the same column space as the overparameterized mains."""
    R = reduced_columns(ds)
    d = build_design(ds)
    full = np.hstack([d.matrix[:, :1 + ds.schema.K], np.ones((ds.n, 1))])
    assert np.linalg.matrix_rank(np.hstack([full, R])) == np.linalg.matrix_rank(full)
