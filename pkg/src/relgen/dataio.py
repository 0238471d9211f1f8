"""Load/store relational datasets as CSV directories, check key integrity,
and build deterministic benchmark-shaped fixture datasets.

Storage layout: one ``<table>.csv`` per table plus ``metadata.json`` in the
same directory. CSV dialect is comma-delimited, ``\\n`` line ends, UTF-8,
header row first; floats are written with shortest round-trip formatting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .schema import ColumnSpec, Relationship, SchemaMetadata, parse_metadata, serialize_metadata

PROVENANCES = ("real", "synthetic", "fixture")

METADATA_FILENAME = "metadata.json"


class DataTypeError(ValueError):
    """A cell failed to parse as its schema type."""


class IntegrityError(ValueError):
    """Key constraints violated (duplicate or negative primary keys)."""


@dataclass(eq=False)
class RelationalDataset:
    """A schema plus one DataFrame per table.

    Column dtypes follow the schema: numerical -> float64, keys -> int64,
    categorical/discrete -> str. Treated as immutable after construction.
    """

    schema: SchemaMetadata
    tables: dict[str, pd.DataFrame]
    provenance: str = "real"

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        extra = set(self.tables) - set(self.schema.tables)
        if extra:
            raise ValueError(f"data has tables missing from schema: {sorted(extra)}")
        for name in self.schema.tables:
            if name not in self.tables:
                raise ValueError(f"schema table {name!r} has no data")
            frame = self.tables[name]
            expected = self.schema.column_names(name)
            if set(frame.columns) != set(expected):
                raise ValueError(
                    f"table {name!r}: columns {sorted(frame.columns)} do not match "
                    f"schema {sorted(expected)}"
                )
            self.tables[name] = frame = frame[expected]
            pk = self.schema.primary_key(name)
            if frame[pk].duplicated().any():
                dup = frame[pk][frame[pk].duplicated()].iloc[0]
                raise IntegrityError(f"table {name!r}: duplicate primary key {dup}")
            for col in self.schema.columns(name):
                if col.is_key and len(frame) and (frame[col.name] < 0).any():
                    raise IntegrityError(f"table {name!r}: negative key in {col.name!r}")

    def equals(self, other: "RelationalDataset") -> bool:
        return (
            self.schema == other.schema
            and all(self.tables[t].equals(other.tables[t]) for t in self.schema.tables)
        )

    def row_counts(self) -> dict[str, int]:
        return {name: len(frame) for name, frame in self.tables.items()}


@dataclass(frozen=True)
class RIReport:
    """Referential-integrity check result.

    ``dangling`` lists (child table, fk column, count of fk values with no
    matching parent key); the boolean is true iff it is empty.
    ``uncovered_parents`` lists parents whose keys are never referenced by
    any child (informational only).
    """

    referential_integrity: bool
    dangling: tuple[tuple[str, str, int], ...] = ()
    uncovered_parents: tuple[tuple[str, int], ...] = ()


def check_referential_integrity(dataset: RelationalDataset) -> RIReport:
    """Report dangling foreign keys and unreferenced parent keys."""
    dangling: list[tuple[str, str, int]] = []
    referenced: dict[str, set[int]] = {}
    for rel in dataset.schema.relationships:
        parent_keys = set(dataset.tables[rel.parent][dataset.schema.primary_key(rel.parent)])
        fk_values = dataset.tables[rel.child][rel.foreign_key_column]
        missing = int((~fk_values.isin(parent_keys)).sum())
        if missing:
            dangling.append((rel.child, rel.foreign_key_column, missing))
        referenced.setdefault(rel.parent, set()).update(fk_values)

    uncovered: list[tuple[str, int]] = []
    for parent in sorted(referenced):
        keys = set(dataset.tables[parent][dataset.schema.primary_key(parent)])
        unref = len(keys - referenced[parent])
        if unref:
            uncovered.append((parent, unref))

    return RIReport(
        referential_integrity=not dangling,
        dangling=tuple(dangling),
        uncovered_parents=tuple(uncovered),
    )


def _format_cell(value, kind: str) -> str:
    if kind == "numerical":
        return repr(float(value))
    if kind in ("primary_key", "foreign_key"):
        return str(int(value))
    return str(value)


def write_dataset(dataset: RelationalDataset, directory: str | Path) -> None:
    """Write one CSV per table plus the metadata document."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / METADATA_FILENAME).write_text(serialize_metadata(dataset.schema), encoding="utf-8")
    for name in dataset.schema.tables:
        frame = dataset.tables[name]
        kinds = [c.kind for c in dataset.schema.columns(name)]
        with open(directory / f"{name}.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(frame.columns.tolist())
            for row in frame.itertuples(index=False):
                writer.writerow([_format_cell(v, k) for v, k in zip(row, kinds)])


def _convert_column(raw: list[str], table: str, column: str, kind: str) -> np.ndarray:
    series = pd.Series(raw, dtype="object")
    if kind in ("categorical", "discrete"):
        bad = series.index[series == ""]
        if len(bad):
            raise DataTypeError(f"table {table!r} row {bad[0]} column {column!r}: empty cell")
        return series.to_numpy()

    # float() round-trips repr() output exactly; pandas' fast parser can be
    # off by one ULP, which would break write/load byte determinism.
    values = np.empty(len(raw), dtype=float)
    for i, text in enumerate(raw):
        try:
            values[i] = float(text)
        except ValueError:
            values[i] = np.nan
    bad = np.flatnonzero(~np.isfinite(values))
    if len(bad):
        raise DataTypeError(
            f"table {table!r} row {bad[0]} column {column!r}: "
            f"cannot parse {raw[bad[0]]!r} as {kind}"
        )
    if kind == "numerical":
        return values
    nonint = np.flatnonzero(values != np.floor(values))
    if len(nonint):
        raise DataTypeError(
            f"table {table!r} row {nonint[0]} column {column!r}: "
            f"key value {raw[nonint[0]]!r} is not an integer"
        )
    return values.astype(np.int64)


def _read_table(path: Path, table: str, schema: SchemaMetadata) -> pd.DataFrame:
    with open(path, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise DataTypeError(f"table {table!r}: file {path} has no header row")
    header, body = rows[0], rows[1:]
    expected = schema.column_names(table)
    if set(header) != set(expected):
        raise DataTypeError(
            f"table {table!r}: header {header} does not match schema columns {expected}"
        )
    widths = {len(r) for r in body}
    if widths - {len(header)}:
        raise DataTypeError(f"table {table!r}: ragged row in {path}")

    kinds = {c.name: c.kind for c in schema.columns(table)}
    columns = {}
    for pos, name in enumerate(header):
        raw = [r[pos] for r in body]
        columns[name] = _convert_column(raw, table, name, kinds[name])
    frame = pd.DataFrame(columns)[expected]
    if not len(body):  # header-only file: preserve dtypes
        for name in expected:
            if kinds[name] == "numerical":
                frame[name] = frame[name].astype(float)
            elif kinds[name] in ("primary_key", "foreign_key"):
                frame[name] = frame[name].astype(np.int64)
    return frame


def load_dataset(
    metadata_path: str | Path,
    data_directory: str | Path | None = None,
    provenance: str = "real",
) -> RelationalDataset:
    """Load a dataset directory written by write_dataset (or hand-built).

    `metadata_path` may be the metadata file itself or a directory containing
    ``metadata.json``; CSVs are looked up next to it unless `data_directory`
    says otherwise.
    """
    metadata_path = Path(metadata_path)
    if metadata_path.is_dir():
        metadata_path = metadata_path / METADATA_FILENAME
    schema = parse_metadata(metadata_path.read_text(encoding="utf-8"))
    directory = Path(data_directory) if data_directory is not None else metadata_path.parent

    tables = {}
    for name in schema.tables:
        csv_path = directory / f"{name}.csv"
        if not csv_path.exists():
            raise FileNotFoundError(f"no data file for table {name!r}: {csv_path}")
        tables[name] = _read_table(csv_path, name, schema)
    return RelationalDataset(schema=schema, tables=tables, provenance=provenance)


# --- fixture datasets -------------------------------------------------------
#
# Self-contained stand-ins for the multi-table benchmark datasets: table and
# relationship counts copied from the published dataset descriptions, content
# synthetic with known ground truth (two-component Gaussian mixtures for
# numerics, Zipf-weighted categories) so metric behavior is predictable.


@dataclass(frozen=True)
class _NumericCol:
    name: str
    components: tuple[tuple[float, float, float], ...]  # (weight, mean, std)


@dataclass(frozen=True)
class _CategoryCol:
    name: str
    categories: tuple[str, ...]
    kind: str = "categorical"


@dataclass(frozen=True)
class _TableDef:
    name: str
    numeric: tuple[_NumericCol, ...]
    categorical: tuple[_CategoryCol, ...]
    # (parent, relationship kind, mean children per parent or None)
    parents: tuple[tuple[str, str, float | None], ...] = ()


def _num(name, *components) -> _NumericCol:
    return _NumericCol(name, tuple(components))


def _cat(name, *categories, kind="categorical") -> _CategoryCol:
    return _CategoryCol(name, tuple(categories), kind)


_SHAPES: dict[str, tuple[_TableDef, ...]] = {
    # 2 tables, one one-to-many relationship
    "pyrimidine": (
        _TableDef(
            "molecule",
            (_num("ring_density", (0.55, 0.3, 0.05), (0.45, 0.8, 0.07)),
             _num("polarity", (0.5, -5.0, 1.0), (0.5, 5.0, 1.5))),
            (_cat("bond_type", "single", "double", "aromatic", "mixed"),),
        ),
        _TableDef(
            "atom",
            (_num("charge", (0.6, -1.0, 0.2), (0.4, 1.5, 0.3)),
             _num("mass", (0.5, 12.0, 0.8), (0.5, 16.0, 0.6))),
            (_cat("element", "C", "N", "O", "H", "S"),
             _cat("hybridization", "sp", "sp2", "sp3", kind="discrete")),
            parents=(("molecule", "one_to_many", 3.0),),
        ),
    ),
    # 5 tables, 3 parents / 2 children, 4 relationships, both kinds
    "university": (
        _TableDef(
            "department",
            (_num("budget", (0.5, 2.0, 0.4), (0.5, 8.0, 1.0)),
             _num("head_count", (0.6, 25.0, 4.0), (0.4, 60.0, 8.0))),
            (_cat("campus", "north", "south", "east", "west"),),
        ),
        _TableDef(
            "professor",
            (_num("salary", (0.7, 70.0, 8.0), (0.3, 120.0, 10.0)),
             _num("h_index", (0.5, 10.0, 3.0), (0.5, 35.0, 6.0))),
            (_cat("rank", "assistant", "associate", "full"),),
        ),
        _TableDef(
            "student",
            (_num("gpa", (0.5, 2.8, 0.3), (0.5, 3.7, 0.15)),
             _num("credits", (0.6, 40.0, 10.0), (0.4, 110.0, 12.0))),
            (_cat("major", "biology", "chemistry", "compsci", "math", "physics"),),
        ),
        _TableDef(
            "advisor_file",
            (_num("meeting_hours", (0.5, 2.0, 0.5), (0.5, 8.0, 1.2)),
             _num("rating", (0.6, 3.0, 0.4), (0.4, 4.6, 0.2))),
            (_cat("status", "active", "paused", "closed"),),
            parents=(("professor", "one_to_one", None), ("student", "one_to_one", None)),
        ),
        _TableDef(
            "course",
            (_num("workload", (0.5, 3.0, 0.6), (0.5, 9.0, 1.0)),
             _num("enrollment_score", (0.5, 20.0, 5.0), (0.5, 90.0, 15.0))),
            (_cat("level", "intro", "core", "advanced", "seminar"),),
            parents=(("department", "one_to_many", 4.0), ("professor", "one_to_many", None)),
        ),
    ),
    # 7 tables, 4 parents / 3 children with two parents each, both kinds
    "hepatitis": (
        _TableDef(
            "patient",
            (_num("age", (0.55, 35.0, 7.0), (0.45, 62.0, 6.0)),
             _num("bmi", (0.5, 21.0, 1.5), (0.5, 29.0, 2.5))),
            (_cat("blood_type", "A", "B", "AB", "O"),),
        ),
        _TableDef(
            "clinic",
            (_num("capacity", (0.5, 40.0, 8.0), (0.5, 150.0, 25.0)),
             _num("staff_ratio", (0.6, 0.3, 0.05), (0.4, 0.7, 0.08))),
            (_cat("tier", "primary", "secondary", "tertiary"),),
        ),
        _TableDef(
            "lab",
            (_num("throughput", (0.5, 200.0, 30.0), (0.5, 800.0, 90.0)),
             _num("error_rate", (0.7, 0.01, 0.003), (0.3, 0.05, 0.01))),
            (_cat("accreditation", "basic", "advanced", "reference"),),
        ),
        _TableDef(
            "insurer",
            (_num("premium", (0.5, 120.0, 20.0), (0.5, 400.0, 60.0)),
             _num("coverage", (0.6, 0.6, 0.08), (0.4, 0.95, 0.03))),
            (_cat("plan", "bronze", "silver", "gold", "platinum"),),
        ),
        _TableDef(
            "screening",
            (_num("risk_score", (0.6, 0.2, 0.05), (0.4, 0.75, 0.1)),
             _num("wait_days", (0.5, 4.0, 1.0), (0.5, 20.0, 4.0))),
            (_cat("outcome", "clear", "follow_up", "referred"),),
            parents=(("patient", "one_to_one", None), ("clinic", "one_to_many", None)),
        ),
        _TableDef(
            "bloodwork",
            (_num("alt_level", (0.6, 25.0, 5.0), (0.4, 80.0, 15.0)),
             _num("platelets", (0.5, 180.0, 25.0), (0.5, 320.0, 30.0))),
            (_cat("flag", "normal", "low", "high", "critical"),),
            parents=(("lab", "one_to_many", None), ("patient", "one_to_many", 3.0)),
        ),
        _TableDef(
            "claim",
            (_num("amount", (0.7, 150.0, 40.0), (0.3, 900.0, 120.0)),
             _num("processing_days", (0.5, 5.0, 1.5), (0.5, 25.0, 5.0))),
            (_cat("status", "paid", "denied", "pending"),),
            parents=(("insurer", "one_to_many", None), ("patient", "one_to_many", 2.0)),
        ),
    ),
}

FIXTURE_SHAPES = tuple(sorted(_SHAPES))


def fixture_schema(shape: str) -> SchemaMetadata:
    """Schema for a fixture shape, without generating any rows."""
    if shape not in _SHAPES:
        raise ValueError(f"unknown fixture shape {shape!r}; choose from {FIXTURE_SHAPES}")
    tables = {}
    relationships = []
    for tdef in _SHAPES[shape]:
        cols = [ColumnSpec(f"{tdef.name}_id", "primary_key")]
        for parent, kind, _ in tdef.parents:
            cols.append(ColumnSpec(f"{parent}_id", "foreign_key", parent))
            relationships.append(Relationship(parent, tdef.name, kind, f"{parent}_id"))
        cols.extend(ColumnSpec(c.name, "numerical") for c in tdef.numeric)
        cols.extend(ColumnSpec(c.name, c.kind) for c in tdef.categorical)
        tables[tdef.name] = tuple(cols)
    return SchemaMetadata(tables=tables, relationships=tuple(relationships))


def _sample_mixture(rng: np.random.Generator, n: int, components) -> np.ndarray:
    weights = np.array([w for w, _, _ in components])
    weights = weights / weights.sum()
    picks = rng.choice(len(components), size=n, p=weights)
    means = np.array([m for _, m, _ in components])[picks]
    stds = np.array([s for _, _, s in components])[picks]
    return rng.normal(means, stds)


def _sample_categories(rng: np.random.Generator, n: int, categories) -> np.ndarray:
    weights = 1.0 / np.arange(1, len(categories) + 1)
    weights /= weights.sum()
    return rng.choice(np.array(categories, dtype=object), size=n, p=weights)


def generate_fixture(shape: str, n_root_rows: int, seed: int) -> RelationalDataset:
    """Deterministic fixture dataset of the given shape.

    Root tables get `n_root_rows` rows; one-to-many children draw
    child-per-parent counts from a seeded Poisson process, one-to-one
    children match their parents row-for-row. The result always passes
    check_referential_integrity.
    """
    if shape not in _SHAPES:
        raise ValueError(f"unknown fixture shape {shape!r}; choose from {FIXTURE_SHAPES}")
    if n_root_rows < 10:
        raise ValueError(f"n_root_rows must be >= 10, got {n_root_rows}")

    rng = np.random.default_rng(seed)
    schema = fixture_schema(shape)
    frames: dict[str, pd.DataFrame] = {}

    for tdef in _SHAPES[shape]:
        columns: dict[str, np.ndarray] = {}
        if not tdef.parents:
            n_rows = n_root_rows
        else:
            one_to_one = [p for p in tdef.parents if p[1] == "one_to_one"]
            if one_to_one:
                n_rows = n_root_rows
            else:
                driver = next(p for p in tdef.parents if p[2] is not None)
                counts = rng.poisson(driver[2], size=len(frames[driver[0]]))
                if counts.sum() == 0:
                    counts[0] = 1
                n_rows = int(counts.sum())
                columns[f"{driver[0]}_id"] = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
        columns[f"{tdef.name}_id"] = np.arange(n_rows, dtype=np.int64)

        for parent, kind, mean_children in tdef.parents:
            fk_name = f"{parent}_id"
            if fk_name in columns:
                continue
            parent_n = len(frames[parent])
            if kind == "one_to_one":
                columns[fk_name] = rng.permutation(parent_n).astype(np.int64)
            else:
                columns[fk_name] = rng.integers(0, parent_n, size=n_rows, dtype=np.int64)

        for num in tdef.numeric:
            columns[num.name] = _sample_mixture(rng, n_rows, num.components)
        for cat in tdef.categorical:
            columns[cat.name] = _sample_categories(rng, n_rows, cat.categories)

        frames[tdef.name] = pd.DataFrame(columns)[schema.column_names(tdef.name)]

    return RelationalDataset(schema=schema, tables=frames, provenance="fixture")
