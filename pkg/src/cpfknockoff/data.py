"""Dataset containers, CSV ingestion, standardization and percentile grids."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConstantColumn,
    DegenerateSplit,
    DimensionMismatch,
    InvalidOutcome,
    NonBinaryValue,
    ParseError,
    SchemaMismatch,
    ValidationError,
)

CONTINUOUS = "continuous"
BINARY = "binary"
OUTCOME_KINDS = ("continuous", "binary", "survival", "competing_risks")


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense N x d design matrix with named, typed columns."""

    values: np.ndarray
    column_names: tuple
    column_kinds: tuple

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DimensionMismatch(f"feature matrix must be 2-D, got shape {values.shape}")
        names = tuple(str(c) for c in self.column_names)
        kinds = tuple(self.column_kinds)
        if len(names) != values.shape[1] or len(kinds) != values.shape[1]:
            raise DimensionMismatch("column_names/column_kinds length does not match matrix width")
        if len(set(names)) != len(names):
            raise ValidationError("column names must be unique")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature matrix contains NaN or infinite entries")
        for j, kind in enumerate(kinds):
            if kind not in (CONTINUOUS, BINARY):
                raise ValidationError(f"unknown column kind {kind!r}")
            if kind == BINARY:
                bad = ~np.isin(values[:, j], (0.0, 1.0))
                if bad.any():
                    row = int(np.argmax(bad))
                    raise NonBinaryValue(names[j], row + 1, float(values[row, j]))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "column_kinds", kinds)

    @classmethod
    def from_array(cls, values, names=None, kinds=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        d = values.shape[1]
        if names is None:
            names = [f"x{j + 1}" for j in range(d)]
        if kinds is None:
            kinds = [CONTINUOUS] * d
        return cls(values, tuple(names), tuple(kinds))

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    @property
    def binary_mask(self):
        return np.array([k == BINARY for k in self.column_kinds], dtype=bool)

    def take(self, rows):
        return FeatureMatrix(self.values[rows], self.column_names, self.column_kinds)

    def hstack(self, other):
        return FeatureMatrix(
            np.hstack([self.values, other.values]),
            self.column_names + other.column_names,
            self.column_kinds + other.column_kinds,
        )


# -- outcomes ---------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousOutcome:
    y: np.ndarray
    kind: str = field(default="continuous", init=False)

    def __post_init__(self):
        y = _frozen(self.y)
        if not np.all(np.isfinite(y)):
            raise InvalidOutcome("continuous outcome contains non-finite values")
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    def take(self, rows):
        return ContinuousOutcome(self.y[rows])

    def columns(self):
        return {"y": self.y}


@dataclass(frozen=True)
class BinaryOutcome:
    y: np.ndarray
    kind: str = field(default="binary", init=False)

    def __post_init__(self):
        y = _frozen(self.y)
        bad = ~np.isin(y, (0.0, 1.0))
        if bad.any():
            row = int(np.argmax(bad))
            raise NonBinaryValue("outcome", row + 1, float(y[row]))
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    def take(self, rows):
        return BinaryOutcome(self.y[rows])

    def columns(self):
        return {"y": self.y.astype(int)}


@dataclass(frozen=True)
class SurvivalOutcome:
    time: np.ndarray
    event: np.ndarray
    kind: str = field(default="survival", init=False)

    def __post_init__(self):
        time = _frozen(self.time)
        event = _frozen(self.event)
        if time.shape != event.shape:
            raise DimensionMismatch("time and event lengths differ")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            row = int(np.argmax(~(np.isfinite(time) & (time > 0))))
            raise InvalidOutcome(f"survival times must be strictly positive (row {row + 1})")
        bad = ~np.isin(event, (0.0, 1.0))
        if bad.any():
            row = int(np.argmax(bad))
            raise NonBinaryValue("event", row + 1, float(event[row]))
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return len(self.time)

    def take(self, rows):
        return SurvivalOutcome(self.time[rows], self.event[rows])

    def columns(self):
        return {"time": self.time, "event": self.event.astype(int)}


@dataclass(frozen=True)
class CompetingRisksOutcome:
    """Observed time plus cause code: 0 = censored, 1 or 2 = event type."""

    time: np.ndarray
    cause: np.ndarray
    kind: str = field(default="competing_risks", init=False)

    def __post_init__(self):
        time = _frozen(self.time)
        cause = _frozen(self.cause, dtype=int)
        if time.shape != cause.shape:
            raise DimensionMismatch("time and cause lengths differ")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            row = int(np.argmax(~(np.isfinite(time) & (time > 0))))
            raise InvalidOutcome(f"competing-risks times must be strictly positive (row {row + 1})")
        bad = ~np.isin(cause, (0, 1, 2))
        if bad.any():
            row = int(np.argmax(bad))
            raise InvalidOutcome(f"cause must be 0, 1 or 2 (row {row + 1}, value {cause[row]})")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "cause", cause)

    def __len__(self):
        return len(self.time)

    def take(self, rows):
        return CompetingRisksOutcome(self.time[rows], self.cause[rows])

    def columns(self):
        return {"time": self.time, "cause": self.cause}


Outcome = ContinuousOutcome | BinaryOutcome | SurvivalOutcome | CompetingRisksOutcome


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column centering and scaling; NaN entries mark untouched columns."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "scale", _frozen(self.scale))

    @property
    def mask(self):
        return ~np.isnan(self.mean)

    def to_dict(self):
        return {
            "mean": [None if math.isnan(v) else float(v) for v in self.mean],
            "scale": [None if math.isnan(v) else float(v) for v in self.scale],
        }


@dataclass(frozen=True)
class Dataset:
    features: FeatureMatrix
    outcome: Outcome
    standardization: StandardizationParams | None = None

    def __post_init__(self):
        if len(self.outcome) != self.features.n_rows:
            raise DimensionMismatch(
                f"outcome length {len(self.outcome)} != feature rows {self.features.n_rows}"
            )

    @property
    def n(self):
        return self.features.n_rows

    @property
    def p(self):
        return self.features.n_cols

    def take(self, rows):
        return Dataset(self.features.take(rows), self.outcome.take(rows), self.standardization)

    def with_features(self, features):
        return Dataset(features, self.outcome, self.standardization)


# -- CSV --------------------------------------------------------------------


@dataclass(frozen=True)
class OutcomeSpec:
    """Maps CSV columns to roles.

    ``kind`` is one of ``continuous``, ``binary``, ``survival`` or
    ``competing_risks``.  Continuous/binary outcomes use ``outcome``;
    survival uses ``time`` + ``event``; competing risks uses ``time`` +
    ``cause``.  ``features`` defaults to every remaining column and
    ``binary`` lists feature columns declared 0/1.
    """

    kind: str
    outcome: str | None = None
    time: str | None = None
    event: str | None = None
    cause: str | None = None
    features: tuple | None = None
    binary: tuple = ()

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise ValidationError(f"unknown outcome kind {self.kind!r}")
        needed = {
            "continuous": ("outcome",),
            "binary": ("outcome",),
            "survival": ("time", "event"),
            "competing_risks": ("time", "cause"),
        }[self.kind]
        for role in needed:
            if getattr(self, role) is None:
                raise ValidationError(f"{self.kind} outcome requires the {role!r} column")
        if self.features is not None:
            object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "binary", tuple(self.binary))

    @property
    def role_columns(self):
        return [c for c in (self.outcome, self.time, self.event, self.cause) if c is not None]

    @classmethod
    def from_dict(cls, d):
        allowed = {"kind", "outcome", "time", "event", "cause", "features", "binary"}
        unknown = set(d) - allowed
        if unknown:
            raise ValidationError(f"unknown outcome spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {
            "kind": self.kind,
            "outcome": self.outcome,
            "time": self.time,
            "event": self.event,
            "cause": self.cause,
            "features": list(self.features) if self.features is not None else None,
            "binary": list(self.binary),
        }


_MISSING_TOKENS = {"", "na", "nan", "null", "none", "n/a", "."}


def _parse_cell(text, row, column):
    token = text.strip()
    if token.lower() in _MISSING_TOKENS:
        raise ParseError(row, column, text)
    try:
        value = float(token)
    except ValueError:
        raise ParseError(row, column, text) from None
    if not math.isfinite(value):
        raise ParseError(row, column, text)
    return value


def load_csv(path, outcome_spec: OutcomeSpec) -> Dataset:
    """Read a UTF-8, comma-delimited CSV with a header row into a Dataset.

    Rows are numbered from 1 (first data row) in error messages.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path} is empty") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]

    if len(set(header)) != len(header):
        raise SchemaMismatch("duplicate column names in header")
    spec = outcome_spec
    for col in spec.role_columns + list(spec.binary) + list(spec.features or ()):
        if col not in header:
            raise SchemaMismatch(f"column {col!r} not found in header")
    feature_cols = list(spec.features) if spec.features is not None else [
        c for c in header if c not in spec.role_columns
    ]
    overlap = set(feature_cols) & set(spec.role_columns)
    if overlap:
        raise SchemaMismatch(f"columns used both as features and outcome: {sorted(overlap)}")
    if not feature_cols:
        raise SchemaMismatch("no feature columns")
    if not rows:
        raise SchemaMismatch("no data rows")

    index = {c: i for i, c in enumerate(header)}
    used = feature_cols + spec.role_columns
    table = np.empty((len(rows), len(used)))
    for r, raw in enumerate(rows, start=1):
        if len(raw) != len(header):
            raise ParseError(r, None, ",".join(raw))
        for k, col in enumerate(used):
            table[r - 1, k] = _parse_cell(raw[index[col]], r, col)

    p = len(feature_cols)
    binary = set(spec.binary)
    kinds = tuple(BINARY if c in binary else CONTINUOUS for c in feature_cols)
    for j, col in enumerate(feature_cols):
        if col in binary:
            bad = ~np.isin(table[:, j], (0.0, 1.0))
            if bad.any():
                row = int(np.argmax(bad))
                raise NonBinaryValue(col, row + 1, float(table[row, j]))
    features = FeatureMatrix(table[:, :p], tuple(feature_cols), kinds)
    roles = {c: table[:, p + k] for k, c in enumerate(spec.role_columns)}

    if spec.kind == "continuous":
        outcome = ContinuousOutcome(roles[spec.outcome])
    elif spec.kind == "binary":
        y = roles[spec.outcome]
        bad = ~np.isin(y, (0.0, 1.0))
        if bad.any():
            row = int(np.argmax(bad))
            raise NonBinaryValue(spec.outcome, row + 1, float(y[row]))
        outcome = BinaryOutcome(y)
    elif spec.kind == "survival":
        outcome = SurvivalOutcome(roles[spec.time], roles[spec.event])
    else:
        cause = roles[spec.cause]
        if np.any(cause != np.round(cause)):
            row = int(np.argmax(cause != np.round(cause)))
            raise ParseError(row + 1, spec.cause, str(cause[row]))
        outcome = CompetingRisksOutcome(roles[spec.time], cause.astype(int))
    return Dataset(features, outcome)


def _fmt(v):
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_csv(dataset: Dataset, path, outcome_spec: OutcomeSpec | None = None):
    """Write a Dataset back to CSV so that :func:`load_csv` recovers it exactly.

    Returns the OutcomeSpec describing the written file.
    """
    out = dataset.outcome
    if outcome_spec is None:
        cols = out.columns()
        kw = {"continuous": {"outcome": "y"}, "binary": {"outcome": "y"},
              "survival": {"time": "time", "event": "event"},
              "competing_risks": {"time": "time", "cause": "cause"}}[out.kind]
        outcome_spec = OutcomeSpec(
            kind=out.kind,
            features=dataset.features.column_names,
            binary=tuple(c for c, k in zip(dataset.features.column_names,
                                            dataset.features.column_kinds) if k == BINARY),
            **kw,
        )
    role_names = outcome_spec.role_columns
    role_values = list(out.columns().values())
    header = list(dataset.features.column_names) + role_names
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(v) for v in dataset.features.values[i]]
            row += [_fmt(col[i]) for col in role_values]
            w.writerow(row)
    return outcome_spec


# -- transforms -------------------------------------------------------------


def standardize(m: FeatureMatrix):
    """Center and scale continuous columns (sample sd, N-1 denominator).

    Binary columns pass through unchanged.  Returns the transformed matrix
    and the parameters needed to invert it.
    """
    values = np.array(m.values, dtype=float)
    p = m.n_cols
    mean = np.full(p, np.nan)
    scale = np.full(p, np.nan)
    if m.n_rows < 2:
        raise ValidationError("standardization needs at least two rows")
    for j, kind in enumerate(m.column_kinds):
        if kind != CONTINUOUS:
            continue
        col = values[:, j]
        mu = col.mean()
        sd = col.std(ddof=1)
        if not sd > 1e-12 * max(1.0, abs(mu)):
            raise ConstantColumn(m.column_names[j])
        values[:, j] = (col - mu) / sd
        mean[j] = mu
        scale[j] = sd
    return (
        FeatureMatrix(values, m.column_names, m.column_kinds),
        StandardizationParams(mean, scale),
    )


def apply_standardization(m: FeatureMatrix, params: StandardizationParams) -> FeatureMatrix:
    values = np.array(m.values, dtype=float)
    mask = params.mask
    values[:, mask] = (values[:, mask] - params.mean[mask]) / params.scale[mask]
    return FeatureMatrix(values, m.column_names, m.column_kinds)


def destandardize(m: FeatureMatrix, params: StandardizationParams) -> FeatureMatrix:
    values = np.array(m.values, dtype=float)
    mask = params.mask
    values[:, mask] = values[:, mask] * params.scale[mask] + params.mean[mask]
    return FeatureMatrix(values, m.column_names, m.column_kinds)


def standardize_dataset(d: Dataset) -> Dataset:
    x, params = standardize(d.features)
    return Dataset(x, d.outcome, params)


def train_test_split(d: Dataset, train_fraction: float, seed: int):
    """Random disjoint row partition; train size is round(N * fraction)."""
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplit(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = d.n
    n_train = int(round(n * train_fraction))
    if n_train < 1 or n - n_train < 1:
        raise DegenerateSplit(f"cannot split {n} rows at fraction {train_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    train_rows = np.sort(perm[:n_train])
    test_rows = np.sort(perm[n_train:])
    return d.take(train_rows), d.take(test_rows)


@dataclass(frozen=True)
class PercentileGrid:
    """Per-column evaluation points; binary columns always get ``[0, 1]``."""

    J: int
    values: tuple

    def __getitem__(self, i):
        return self.values[i]

    def __len__(self):
        return len(self.values)


def quantile_levels(J: int) -> np.ndarray:
    return np.arange(1, J + 1) / (J + 1)


def percentile_grid(m: FeatureMatrix | np.ndarray, J: int, kinds: Sequence[str] | None = None) -> PercentileGrid:
    """Empirical quantiles at levels j/(J+1), j = 1..J, per column.

    Quantiles interpolate linearly between order statistics.
    """
    if J < 1:
        raise ValidationError("J must be at least 1")
    if isinstance(m, FeatureMatrix):
        values = m.values
        kinds = m.column_kinds if kinds is None else kinds
    else:
        values = np.asarray(m, dtype=float)
        kinds = kinds or [CONTINUOUS] * values.shape[1]
    if values.size == 0:
        raise ValidationError("percentile grid of an empty matrix")
    levels = quantile_levels(J)
    cols = []
    for j, kind in enumerate(kinds):
        if kind == BINARY:
            g = np.array([0.0, 1.0])
        else:
            g = np.quantile(values[:, j], levels, method="linear")
        g.setflags(write=False)
        cols.append(g)
    return PercentileGrid(J, tuple(cols))


def load_feature_matrix(path, features=None, binary=()) -> FeatureMatrix:
    """Read only a feature matrix (no outcome roles) from a CSV file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path} is empty") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    cols = list(features) if features is not None else header
    for col in list(cols) + list(binary):
        if col not in header:
            raise SchemaMismatch(f"column {col!r} not found in header")
    if not rows:
        raise SchemaMismatch("no data rows")
    index = {c: i for i, c in enumerate(header)}
    table = np.empty((len(rows), len(cols)))
    for r, raw in enumerate(rows, start=1):
        if len(raw) != len(header):
            raise ParseError(r, None, ",".join(raw))
        for k, col in enumerate(cols):
            table[r - 1, k] = _parse_cell(raw[index[col]], r, col)
    binary = set(binary)
    kinds = tuple(BINARY if c in binary else CONTINUOUS for c in cols)
    return FeatureMatrix(table, tuple(cols), kinds)
