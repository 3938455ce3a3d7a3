"""Mixed-type tabular data model, encoding, correlations, and CSV round-trip.

Every other module consumes this representation: a long-format table whose
columns are metric (float) or categorical (integer level codes), plus an
explicit missingness mask. Categorical missing cells hold ``MISSING_CODE``,
metric missing cells hold NaN; the mask is authoritative.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

METRIC = "metric"
BINARY = "binary"
ORDINAL = "ordinal"
NOMINAL = "nominal"
CATEGORICAL_KINDS = (BINARY, ORDINAL, NOMINAL)

MISSING_CODE = -1
FLOAT_FORMAT = "%.10g"  # canonical on-disk float formatting


class SchemaError(ValueError):
    """Schema file and data file disagree, or the schema is malformed."""


class EncodingError(ValueError):
    """A cell cannot be encoded/parsed under its declared column type."""


@dataclass(frozen=True)
class ColumnType:
    """Column kind plus ordered level labels (empty for metric columns)."""

    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (METRIC,) + CATEGORICAL_KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r}")
        if self.kind == METRIC and self.levels:
            raise SchemaError("metric columns carry no levels")
        if self.kind == BINARY and len(self.levels) != 2:
            raise SchemaError("binary columns need exactly 2 levels")
        if self.kind in (ORDINAL, NOMINAL) and len(self.levels) < 2:
            raise SchemaError(f"{self.kind} columns need >= 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError("duplicate level labels")

    @property
    def is_categorical(self) -> bool:
        return self.kind in CATEGORICAL_KINDS

    @property
    def n_levels(self) -> int:
        return len(self.levels)


def metric() -> ColumnType:
    return ColumnType(METRIC)


def binary(levels=("no", "yes")) -> ColumnType:
    return ColumnType(BINARY, tuple(str(l) for l in levels))


def ordinal(levels) -> ColumnType:
    return ColumnType(ORDINAL, tuple(str(l) for l in levels))


def nominal(levels) -> ColumnType:
    return ColumnType(NOMINAL, tuple(str(l) for l in levels))


@dataclass
class Dataset:
    """Long-format table: per-column value arrays plus a missingness mask.

    ``values[i]`` is float64 for metric columns and int64 level codes for
    categorical ones. ``mask[r, c]`` is True when cell (r, c) is missing.
    ``ids``/``waves`` are optional panel keys, one entry per row.
    """

    columns: list[tuple[str, ColumnType]]
    values: list[np.ndarray]
    mask: np.ndarray
    ids: np.ndarray | None = None
    waves: np.ndarray | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.n_rows
        if len(self.values) != len(self.columns):
            raise ValueError("values/columns length mismatch")
        for (name, ct), arr in zip(self.columns, self.values):
            if arr.shape != (n,):
                raise ValueError(f"column {name!r} has {arr.shape[0]} cells, expected {n}")
        if self.mask.shape != (n, len(self.columns)):
            raise ValueError("mask shape must be (n_rows, n_columns)")
        for key in (self.ids, self.waves):
            if key is not None and key.shape != (n,):
                raise ValueError("panel keys must have one entry per row")
        self._index = {name: i for i, (name, _) in enumerate(self.columns)}
        if len(self._index) != len(self.columns):
            raise ValueError("duplicate column names")

    @property
    def n_rows(self) -> int:
        return 0 if not self.values else self.values[0].shape[0]

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def col_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def col(self, name: str) -> np.ndarray:
        return self.values[self.col_index(name)]

    def coltype(self, name: str) -> ColumnType:
        return self.columns[self.col_index(name)][1]

    def copy(self) -> "Dataset":
        return Dataset(
            columns=list(self.columns),
            values=[v.copy() for v in self.values],
            mask=self.mask.copy(),
            ids=None if self.ids is None else self.ids.copy(),
            waves=None if self.waves is None else self.waves.copy(),
        )

    def missing_rate(self) -> float:
        return float(self.mask.sum()) / (self.n_rows * self.n_cols)

    def set_missing(self, rows: np.ndarray, col: int) -> None:
        """Mark cells missing and scrub their values (NaN / MISSING_CODE)."""
        self.mask[rows, col] = True
        name, ct = self.columns[col]
        if ct.is_categorical:
            self.values[col][rows] = MISSING_CODE
        else:
            self.values[col][rows] = np.nan

    def validate_cells(self) -> None:
        """Check level codes against the schema; raises EncodingError."""
        for c, ((name, ct), arr) in enumerate(zip(self.columns, self.values)):
            if not ct.is_categorical:
                continue
            obs = ~self.mask[:, c]
            bad = obs & ((arr < 0) | (arr >= ct.n_levels))
            if bad.any():
                r = int(np.nonzero(bad)[0][0])
                raise EncodingError(
                    f"cell ({r}, {name}) holds code {arr[r]} outside 0..{ct.n_levels - 1}"
                )


def make_dataset(columns, values, ids=None, waves=None) -> Dataset:
    """Build a fully observed Dataset from (name, ColumnType) pairs and arrays."""
    vals = []
    for (name, ct), v in zip(columns, values):
        arr = np.asarray(v, dtype=np.int64 if ct.is_categorical else np.float64)
        vals.append(arr.copy())
    n = vals[0].shape[0] if vals else 0
    mask = np.zeros((n, len(columns)), dtype=bool)
    ds = Dataset(list(columns), vals, mask,
                 ids=None if ids is None else np.asarray(ids, dtype=np.int64),
                 waves=None if waves is None else np.asarray(waves, dtype=np.int64))
    ds.validate_cells()
    return ds


# ---------------------------------------------------------------------------
# dummy encoding


@dataclass
class DesignMatrix:
    """Dense regression design: dummy-expanded categoricals, metric passthrough."""

    values: np.ndarray
    column_labels: list[str]
    reference_levels: dict[str, str]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def term_label(column: str, level: str) -> str:
    """Canonical label of the dummy column for ``column`` == ``level``."""
    return f"{column}_{level}"


def dummy_encode(ds: Dataset, refs: dict[str, str] | None = None,
                 intercept: bool = True, columns: list[str] | None = None) -> DesignMatrix:
    """Expand categorical columns to reference-coded dummies.

    One dummy per non-reference level, in level order; metric columns pass
    through unchanged. All encoded cells must be observed.
    """
    refs = dict(refs or {})
    names = columns if columns is not None else ds.names
    cols: list[np.ndarray] = []
    labels: list[str] = []
    used_refs: dict[str, str] = {}
    if intercept:
        cols.append(np.ones(ds.n_rows))
        labels.append("intercept")
    for name in names:
        c = ds.col_index(name)
        ct = ds.columns[c][1]
        miss = ds.mask[:, c]
        if miss.any():
            r = int(np.nonzero(miss)[0][0])
            raise EncodingError(f"missing cell at (row {r}, column {name!r}) cannot be encoded")
        arr = ds.values[c]
        if not ct.is_categorical:
            cols.append(arr.astype(np.float64))
            labels.append(name)
            continue
        ref = refs.get(name, ct.levels[0])
        if ref not in ct.levels:
            raise SchemaError(f"reference level {ref!r} not among levels of {name!r}")
        used_refs[name] = ref
        ref_code = ct.levels.index(ref)
        for code, level in enumerate(ct.levels):
            if code == ref_code:
                continue
            cols.append((arr == code).astype(np.float64))
            labels.append(term_label(name, level))
    X = np.column_stack(cols) if cols else np.empty((ds.n_rows, 0))
    return DesignMatrix(X, labels, used_refs)


# ---------------------------------------------------------------------------
# correlations and matrix distances


def _numeric_coding(ds: Dataset, names) -> np.ndarray:
    """Columns as floats: metric values, categorical level indices 0..L-1."""
    out = np.empty((ds.n_rows, len(names)))
    for j, name in enumerate(names):
        c = ds.col_index(name)
        if ds.mask[:, c].any():
            raise EncodingError(f"column {name!r} has missing cells")
        out[:, j] = ds.values[c].astype(np.float64)
    return out


def correlation_matrix(ds: Dataset, method: str = "pearson",
                       columns: list[str] | None = None) -> np.ndarray:
    """Pairwise correlation matrix over numerically coded columns.

    ``method`` is one of pearson / spearman / kendall. Zero-variance columns
    get 0 off-diagonal (with a warning) so distance aggregation stays finite.
    """
    names = columns if columns is not None else ds.names
    X = _numeric_coding(ds, names)
    p = X.shape[1]
    const = X.std(axis=0) == 0.0
    if const.any():
        bad = [names[j] for j in np.nonzero(const)[0]]
        warnings.warn(f"zero-variance columns in correlation: {bad}", stacklevel=2)
    if method in ("pearson", "spearman"):
        Z = X if method == "pearson" else np.apply_along_axis(stats.rankdata, 0, X)
        sd = Z.std(axis=0)
        Zc = Z - Z.mean(axis=0)
        denom = np.outer(sd, sd) * Z.shape[0]
        with np.errstate(invalid="ignore", divide="ignore"):
            R = (Zc.T @ Zc) / denom
    elif method == "kendall":
        R = np.eye(p)
        for a in range(p):
            for b in range(a + 1, p):
                if const[a] or const[b]:
                    continue
                R[a, b] = R[b, a] = stats.kendalltau(X[:, a], X[:, b]).statistic
    else:
        raise ValueError(f"unknown correlation method {method!r}")
    R[const, :] = 0.0
    R[:, const] = 0.0
    np.fill_diagonal(R, 1.0)
    return np.clip(R, -1.0, 1.0)


def matrix_distance(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    """frobenius = sqrt(sum d^2); mae = mean |d|; rmse = sqrt(mean d^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    if metric == "frobenius":
        return float(np.sqrt(np.sum(d * d)))
    if metric == "mae":
        return float(np.mean(np.abs(d)))
    if metric == "rmse":
        return float(np.sqrt(np.mean(d * d)))
    raise ValueError(f"unknown distance metric {metric!r}")


# ---------------------------------------------------------------------------
# CSV + JSON schema sidecar I/O


def default_schema_path(path) -> Path:
    return Path(str(path) + ".schema.json")


def write_schema(ds: Dataset, schema_path) -> None:
    doc = {
        "columns": [
            {"name": name, "kind": ct.kind, "levels": list(ct.levels)}
            for name, ct in ds.columns
        ],
        "panel": {"ids": ds.ids is not None, "waves": ds.waves is not None},
    }
    Path(schema_path).write_text(json.dumps(doc, indent=2) + "\n")


def read_schema(schema_path):
    try:
        doc = json.loads(Path(schema_path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"unparseable schema {schema_path}: {e}") from e
    columns = []
    for entry in doc["columns"]:
        columns.append((entry["name"], ColumnType(entry["kind"], tuple(entry.get("levels", ())))))
    panel = doc.get("panel", {})
    return columns, bool(panel.get("ids")), bool(panel.get("waves"))


def io_write(ds: Dataset, path, schema_path=None) -> None:
    """Write CSV (empty field = missing) plus the JSON schema sidecar."""
    path = Path(path)
    schema_path = default_schema_path(path) if schema_path is None else Path(schema_path)
    write_schema(ds, schema_path)
    header = []
    if ds.ids is not None:
        header.append("id")
    if ds.waves is not None:
        header.append("wave_key")
    header += ds.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(ds.n_rows):
            row = []
            if ds.ids is not None:
                row.append(str(int(ds.ids[r])))
            if ds.waves is not None:
                row.append(str(int(ds.waves[r])))
            for c, (name, ct) in enumerate(ds.columns):
                if ds.mask[r, c]:
                    row.append("")
                elif ct.is_categorical:
                    row.append(ct.levels[int(ds.values[c][r])])
                else:
                    row.append(FLOAT_FORMAT % ds.values[c][r])
            w.writerow(row)


def io_read(path, schema_path=None) -> Dataset:
    """Read a CSV written by :func:`io_write` back into a Dataset."""
    path = Path(path)
    schema_path = default_schema_path(path) if schema_path is None else Path(schema_path)
    columns, has_ids, has_waves = read_schema(schema_path)
    level_maps = [
        {lvl: i for i, lvl in enumerate(ct.levels)} if ct.is_categorical else None
        for _, ct in columns
    ]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    expected = (["id"] if has_ids else []) + (["wave_key"] if has_waves else []) + [n for n, _ in columns]
    if header != expected:
        extra = [h for h in header if h not in expected]
        if extra:
            raise SchemaError(f"undeclared columns in {path}: {extra}")
        raise SchemaError(f"header {header} does not match schema {expected}")
    n = len(body)
    off = int(has_ids) + int(has_waves)
    ids = np.empty(n, dtype=np.int64) if has_ids else None
    waves = np.empty(n, dtype=np.int64) if has_waves else None
    values = [
        np.full(n, MISSING_CODE, dtype=np.int64) if ct.is_categorical else np.full(n, np.nan)
        for _, ct in columns
    ]
    mask = np.zeros((n, len(columns)), dtype=bool)
    for r, row in enumerate(body):
        if len(row) != off + len(columns):
            raise SchemaError(f"row {r} of {path} has {len(row)} fields, expected {off + len(columns)}")
        k = 0
        if has_ids:
            ids[r] = int(row[k]); k += 1
        if has_waves:
            waves[r] = int(row[k]); k += 1
        for c, (name, ct) in enumerate(columns):
            cell = row[k + c]
            if cell == "":
                mask[r, c] = True
                continue
            if ct.is_categorical:
                code = level_maps[c].get(cell)
                if code is None:
                    raise EncodingError(
                        f"row {r}, column {name!r}: level {cell!r} not in {list(ct.levels)}"
                    )
                values[c][r] = code
            else:
                try:
                    values[c][r] = float(cell)
                except ValueError:
                    raise EncodingError(
                        f"row {r}, column {name!r}: {cell!r} is not a number"
                    ) from None
    return Dataset(columns, values, mask, ids=ids, waves=waves)
