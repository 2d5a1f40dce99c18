"""Trial datasets, subgroup schemas and the overparameterized design matrix."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

REQUIRED_COLUMNS = ("time", "event", "treatment")


@dataclass(frozen=True)
class Variable:
    name: str
    levels: tuple[str, ...]


@dataclass(frozen=True)
class SubgroupSchema:
    """Categorical subgrouping variables and the subgroups they induce.

    Subgroup ``k`` enumerates (variable, level) pairs with variables in
    declared order and levels in declared order within each variable.
    """

    variables: tuple[Variable, ...]

    def __post_init__(self):
        if not self.variables:
            raise DataError("schema declares no variables")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names in schema")
        for v in self.variables:
            if v.name in REQUIRED_COLUMNS or v.name == "outcome":
                raise DataError(f"variable name {v.name!r} is reserved")
            if len(v.levels) < 2:
                raise DataError(f"variable {v.name!r} needs at least 2 levels")
            if len(set(v.levels)) != len(v.levels):
                raise DataError(f"variable {v.name!r} has duplicate levels")
        if len(set(self.labels)) != len(self.labels):
            raise DataError("subgroup labels are not unique")

    @classmethod
    def from_dict(cls, obj: dict) -> "SubgroupSchema":
        try:
            variables = tuple(
                Variable(str(v["name"]), tuple(str(lv) for lv in v["levels"]))
                for v in obj["variables"]
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema: {exc}") from exc
        return cls(variables)

    @classmethod
    def from_json(cls, text_or_path) -> "SubgroupSchema":
        if isinstance(text_or_path, Path) or (
            isinstance(text_or_path, str) and not text_or_path.lstrip().startswith("{")
        ):
            text = Path(text_or_path).read_text(encoding="utf-8")
        else:
            text = text_or_path
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"schema is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return {"variables": [{"name": v.name, "levels": list(v.levels)} for v in self.variables]}

    @property
    def p(self) -> int:
        return len(self.variables)

    @property
    def n_levels(self) -> tuple[int, ...]:
        return tuple(len(v.levels) for v in self.variables)

    @property
    def K(self) -> int:
        return sum(self.n_levels)

    @property
    def offsets(self) -> np.ndarray:
        """Index of each variable's first subgroup."""
        return np.concatenate([[0], np.cumsum(self.n_levels)[:-1]]).astype(np.int64)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f"{v.name}={lv}" for v in self.variables for lv in v.levels)

    def subgroup(self, k: int) -> tuple[int, int]:
        """Map subgroup index to (variable index, level index)."""
        if not 0 <= k < self.K:
            raise IndexError(k)
        j = int(np.searchsorted(self.offsets, k, side="right") - 1)
        return j, k - int(self.offsets[j])

    def restrict(self, names) -> "SubgroupSchema":
        keep = set(names)
        return SubgroupSchema(tuple(v for v in self.variables if v.name in keep))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Per-subject time-to-event data with categorical covariates.

    ``covariates[i, j]`` is the level index of variable ``j`` for subject ``i``.
    """

    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    schema: SubgroupSchema

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.float64).reshape(-1)
        event = np.asarray(self.event).reshape(-1)
        treatment = np.asarray(self.treatment).reshape(-1)
        cov = np.asarray(self.covariates, dtype=np.int64)
        n = len(time)
        cov = cov.reshape(n, -1) if n else cov.reshape(0, self.schema.p)
        if len(event) != n or len(treatment) != n:
            raise DataError("time, event and treatment lengths differ")
        if cov.shape[1] != self.schema.p:
            raise DataError(f"expected {self.schema.p} covariate columns, got {cov.shape[1]}")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DataError("times must be positive and finite")
        for name, arr in (("event", event), ("treatment", treatment)):
            if not np.all((arr == 0) | (arr == 1)):
                raise DataError(f"{name} must be 0/1")
        levels = np.asarray(self.schema.n_levels)
        if n and (np.any(cov < 0) or np.any(cov >= levels[None, :])):
            raise DataError("covariate level index out of range")
        object.__setattr__(self, "time", _readonly(time))
        object.__setattr__(self, "event", _readonly(event.astype(np.int8)))
        object.__setattr__(self, "treatment", _readonly(treatment.astype(np.int8)))
        object.__setattr__(self, "covariates", _readonly(cov))

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def subgroup_index(self) -> np.ndarray:
        """(n, p) global subgroup index of each subject's level per variable."""
        return self.covariates + self.schema.offsets[None, :]

    def membership(self) -> np.ndarray:
        """(n, K) boolean subgroup indicators."""
        m = np.zeros((self.n, self.schema.K), dtype=bool)
        m[np.arange(self.n)[:, None], self.subgroup_index()] = True
        return m

    def subset(self, mask) -> "TrialDataset":
        mask = np.asarray(mask)
        return TrialDataset(
            self.time[mask], self.event[mask], self.treatment[mask], self.covariates[mask], self.schema
        )

    def canonical_order(self) -> np.ndarray:
        """Subject order that depends only on record values, not on input order."""
        keys = [self.time, self.event, self.treatment] + [self.covariates[:, j] for j in range(self.schema.p)]
        return np.lexsort(keys[::-1])

    def canonical(self) -> "TrialDataset":
        return self.permute(self.canonical_order())

    def permute(self, order) -> "TrialDataset":
        return self.subset(np.asarray(order, dtype=np.int64))

    def equals(self, other: "TrialDataset") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.event, other.event)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.covariates, other.covariates)
        )


def _fail(msg: str, row: int | None = None, column: str | None = None):
    where = []
    if row is not None:
        where.append(f"row {row}")
    if column is not None:
        where.append(f"column {column!r}")
    raise DataError(", ".join([msg] + where))


def _read_rows(csv_text: str, required: tuple[str, ...], schema: SubgroupSchema):
    if not csv_text.strip():
        _fail("empty file")
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        _fail("empty file")
    for col in list(required) + [v.name for v in schema.variables]:
        if col not in header:
            _fail("missing column", column=col)
    pos = {h: i for i, h in enumerate(header)}
    rows = []
    for r, raw in enumerate(reader, start=1):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(header):
            _fail(f"expected {len(header)} fields, got {len(raw)}", row=r)
        rows.append((r, raw))
    if not rows:
        _fail("empty file")
    return pos, rows


def _flag(value: str, name: str, row: int) -> int:
    v = value.strip()
    if v == "":
        _fail(f"missing {name}", row=row, column=name)
    if v not in ("0", "1", "0.0", "1.0"):
        _fail(f"{name} outside {{0,1}}", row=row, column=name)
    return int(float(v))


def _levels(raw, pos, schema: SubgroupSchema, row: int) -> list[int]:
    out = []
    for v in schema.variables:
        label = raw[pos[v.name]].strip()
        if label == "":
            _fail("missing value", row=row, column=v.name)
        try:
            out.append(v.levels.index(label))
        except ValueError:
            _fail(f"unknown level {label!r}", row=row, column=v.name)
    return out


def parse_dataset(csv_text: str, schema: SubgroupSchema) -> TrialDataset:
    """Parse CSV text with ``time,event,treatment`` plus one column per variable."""
    pos, rows = _read_rows(csv_text, REQUIRED_COLUMNS, schema)
    time, event, treat, cov = [], [], [], []
    for r, raw in rows:
        t_raw = raw[pos["time"]].strip()
        if t_raw == "":
            _fail("missing time", row=r, column="time")
        try:
            t = float(t_raw)
        except ValueError:
            _fail("non-numeric time", row=r, column="time")
        if not np.isfinite(t):
            _fail("non-finite time", row=r, column="time")
        if t <= 0:
            _fail("nonpositive time", row=r, column="time")
        time.append(t)
        event.append(_flag(raw[pos["event"]], "event", r))
        treat.append(_flag(raw[pos["treatment"]], "treatment", r))
        cov.append(_levels(raw, pos, schema, r))
    return TrialDataset(np.array(time), np.array(event), np.array(treat), np.array(cov), schema)


def serialize_dataset(dataset: TrialDataset) -> str:
    """Inverse of :func:`parse_dataset`; floats use ``repr`` so parsing round-trips exactly."""
    schema = dataset.schema
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(REQUIRED_COLUMNS) + [v.name for v in schema.variables])
    for i in range(dataset.n):
        w.writerow(
            [repr(float(dataset.time[i])), int(dataset.event[i]), int(dataset.treatment[i])]
            + [schema.variables[j].levels[dataset.covariates[i, j]] for j in range(schema.p)]
        )
    return buf.getvalue()


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Columns: treatment, K main-effect indicators, K treatment interactions."""

    matrix: np.ndarray
    roles: tuple[str, ...]
    subgroup_index: np.ndarray
    treatment: np.ndarray
    K: int
    labels: tuple[str, ...] = field(default=())
    reference_columns: tuple[int, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    @property
    def main_slice(self) -> slice:
        return slice(1, 1 + self.K)

    @property
    def interaction_slice(self) -> slice:
        return slice(1 + self.K, 1 + 2 * self.K)

    @property
    def interaction_mask(self) -> np.ndarray:
        return np.array([r == "interaction" for r in self.roles])

    @property
    def reference_mask(self) -> np.ndarray:
        """Main-effect columns of each variable's first level.

        Within a variable the main indicators sum to one, so together with the
        absent intercept every variable contributes a direction along which the
        partial likelihood is flat.  Pinning the reference columns to zero
        removes those directions without changing any linear predictor.
        """
        mask = np.zeros(self.n_columns, dtype=bool)
        mask[list(self.reference_columns)] = True
        return mask

    @property
    def null_groups(self) -> np.ndarray:
        """Treatment column followed by each variable's interaction columns."""
        offsets = np.asarray(self.reference_columns, dtype=np.int64) - 1
        return interaction_groups(offsets, self.K, 0, 1 + self.K)

    def forced(self, arm: int) -> np.ndarray:
        """Copy of the matrix with every subject assigned to ``arm``."""
        X = self.matrix.copy()
        X[:, 0] = arm
        X[:, self.interaction_slice] = X[:, self.main_slice] * arm
        return X


def design_columns(treatment: np.ndarray, subgroup_index: np.ndarray, K: int) -> np.ndarray:
    n = len(treatment)
    X = np.zeros((n, 1 + 2 * K))
    X[:, 0] = treatment
    rows = np.arange(n)[:, None]
    X[rows, 1 + subgroup_index] = 1.0
    X[:, 1 + K :] = X[:, 1 : 1 + K] * X[:, :1]
    return X


def build_design(dataset: TrialDataset, schema: SubgroupSchema | None = None) -> DesignMatrix:
    schema = schema or dataset.schema
    if schema != dataset.schema:
        raise DataError("dataset was not validated against this schema")
    K = schema.K
    idx = dataset.subgroup_index()
    X = design_columns(dataset.treatment.astype(np.float64), idx, K)
    X.setflags(write=False)
    roles = ("treatment",) + ("main",) * K + ("interaction",) * K
    labels = ("treatment",) + tuple(f"main:{l}" for l in schema.labels) + tuple(
        f"interaction:{l}" for l in schema.labels
    )
    refs = tuple(int(1 + o) for o in schema.offsets)
    return DesignMatrix(X, roles, _readonly(idx), dataset.treatment, K, labels, refs)


def interaction_groups(offsets, K: int, anchor: int, first: int) -> np.ndarray:
    """Rows ``[anchor, first + k for k in variable j]`` padded with -1.

    Within each variable the treatment-by-level columns sum to the treatment
    column, so every row names a direction the fitted values cannot see.
    """
    bounds = list(np.asarray(offsets, dtype=np.int64)) + [K]
    width = 1 + max(b - a for a, b in zip(bounds[:-1], bounds[1:]))
    groups = np.full((len(bounds) - 1, width), -1, dtype=np.int64)
    for j, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        groups[j, 0] = anchor
        groups[j, 1:1 + b - a] = first + np.arange(a, b)
    return groups


def reduced_columns(dataset: TrialDataset, interactions=()) -> np.ndarray:
    """Full-rank reference-coded design: treatment, non-reference mains, chosen interactions.

    The first level of every variable is the reference.  ``interactions`` is an
    iterable of global subgroup indices whose ``s_k * z`` columns are appended.
    """
    schema = dataset.schema
    member = dataset.membership().astype(np.float64)
    z = dataset.treatment.astype(np.float64)
    keep = [k for k in range(schema.K) if k not in set(schema.offsets.tolist())]
    cols = [z[:, None], member[:, keep]]
    for k in interactions:
        cols.append((member[:, k] * z)[:, None])
    return np.hstack(cols)
