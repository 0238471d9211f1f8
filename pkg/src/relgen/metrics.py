"""Synthetic-data quality metrics and multi-run report aggregation.

All scores live in [0, 1] (higher is better except NewRowSynthesis, where
higher means more novel rows). Column scores roll up by unweighted means
into six families — CS (column shapes), CPT (column pair trends), PCR
(parent-child cardinality shape), RC (range/category coverage), NRS (new
row synthesis), BA (boundary adherence) — plus a referential-integrity
flag; multi-run reports aggregate each family as mean +/- std across runs.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .dataio import RelationalDataset, check_referential_integrity
from .schema import Relationship, SchemaMetadata
from .sampler import child_counts

FAMILIES = ("CS", "CPT", "PCR", "RC", "NRS", "BA")
COEFFICIENTS = ("pearson", "spearman")
DEFAULT_NUMERIC_TOLERANCE = 0.01
_ABS_TOLERANCE = 1e-9


class MetricUndefinedError(ValueError):
    """The metric is undefined for these inputs (constant column); callers
    aggregating many columns exclude the score with a warning."""


def _as_floats(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


def ks_complement(real, synthetic) -> float:
    """1 - sup |F_real - F_synthetic| over the empirical CDFs."""
    return 1.0 - _ks_statistic(_as_floats(real, "real"), _as_floats(synthetic, "synthetic"))


def _frequencies(values) -> dict:
    series = pd.Series(list(values))
    if series.size == 0:
        raise ValueError("category sample must be non-empty")
    freq = series.value_counts(normalize=True)
    return dict(freq)


def tv_complement(real, synthetic) -> float:
    """1 - total variation distance between category frequency tables,
    computed over the union of observed categories."""
    real_freq = _frequencies(real)
    syn_freq = _frequencies(synthetic)
    categories = set(real_freq) | set(syn_freq)
    distance = 0.5 * sum(abs(real_freq.get(c, 0.0) - syn_freq.get(c, 0.0)) for c in categories)
    return 1.0 - distance


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        raise MetricUndefinedError("correlation undefined for a zero-variance column")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def _ranks(x: np.ndarray) -> np.ndarray:
    return rankdata(x)


def correlation_similarity(real_x, real_y, synthetic_x, synthetic_y, coefficient: str = "pearson") -> float:
    """1 - |corr(real pair) - corr(synthetic pair)| / 2."""
    if coefficient not in COEFFICIENTS:
        raise ValueError(f"coefficient must be one of {COEFFICIENTS}")
    rx = _as_floats(real_x, "real_x")
    ry = _as_floats(real_y, "real_y")
    sx = _as_floats(synthetic_x, "synthetic_x")
    sy = _as_floats(synthetic_y, "synthetic_y")
    if rx.size < 2 or sx.size < 2:
        raise ValueError("correlation needs at least two rows per dataset")
    if coefficient == "spearman":
        rx, ry, sx, sy = _ranks(rx), _ranks(ry), _ranks(sx), _ranks(sy)
    return 1.0 - abs(_pearson(rx, ry) - _pearson(sx, sy)) / 2.0


def contingency_similarity(real_pair: pd.DataFrame, synthetic_pair: pd.DataFrame) -> float:
    """1 - total variation distance between the joint category-combination
    frequency tables of a two-column categorical pair."""
    if real_pair.shape[1] != 2 or synthetic_pair.shape[1] != 2:
        raise ValueError("contingency similarity expects exactly two columns per side")
    if len(real_pair) == 0 or len(synthetic_pair) == 0:
        raise ValueError("inputs must be non-empty")
    real_combos = list(zip(real_pair.iloc[:, 0].astype(str), real_pair.iloc[:, 1].astype(str)))
    syn_combos = list(zip(synthetic_pair.iloc[:, 0].astype(str), synthetic_pair.iloc[:, 1].astype(str)))
    return tv_complement(real_combos, syn_combos)


def cardinality_shape_similarity(
    real: RelationalDataset, synthetic: RelationalDataset, relationship: Relationship
) -> float:
    """ks_complement of the per-parent child-count distributions (parents
    with zero children included on both sides)."""
    if len(real.tables[relationship.parent]) == 0 or len(synthetic.tables[relationship.parent]) == 0:
        raise ValueError(f"parent table {relationship.parent!r} is empty")
    return ks_complement(child_counts(real, relationship), child_counts(synthetic, relationship))


def range_coverage(real, synthetic) -> float:
    """How much of the real [min, max] range the synthetic column spans,
    thresholded below at zero."""
    r = _as_floats(real, "real")
    s = _as_floats(synthetic, "synthetic")
    r_min, r_max = float(r.min()), float(r.max())
    if r_max == r_min:
        raise MetricUndefinedError("range coverage undefined for a constant real column")
    width = r_max - r_min
    uncovered = max(float(s.min()) - r_min, 0.0) / width + max(r_max - float(s.max()), 0.0) / width
    return max(1.0 - uncovered, 0.0)


def category_coverage(real, synthetic) -> float:
    """Fraction of the real categories that appear in the synthetic column."""
    real_cats = set(pd.Series(list(real)).astype(str))
    if not real_cats:
        raise ValueError("real categories must be non-empty")
    syn_cats = set(pd.Series(list(synthetic)).astype(str)) if len(list(synthetic)) else set()
    return len(real_cats & syn_cats) / len(real_cats)


def new_row_synthesis(
    real: pd.DataFrame,
    synthetic: pd.DataFrame,
    numeric_tolerance: float = DEFAULT_NUMERIC_TOLERANCE,
) -> float:
    """Fraction of synthetic rows with no matching real row. A match needs
    exact equality on non-numeric columns and, per numeric column, the real
    value within `numeric_tolerance` (relative, anchored on the synthetic
    value, with a small absolute floor near zero)."""
    if set(real.columns) != set(synthetic.columns):
        raise ValueError("real and synthetic tables must share a column set")
    if len(synthetic) == 0:
        raise ValueError("synthetic table must be non-empty")
    if len(real) == 0:
        return 1.0
    numeric_cols = [c for c in real.columns if pd.api.types.is_numeric_dtype(real[c])]
    category_cols = [c for c in real.columns if c not in numeric_cols]

    real_num = real[numeric_cols].to_numpy(dtype=float) if numeric_cols else None
    syn_num = synthetic[numeric_cols].to_numpy(dtype=float) if numeric_cols else None
    cat_codes = {}
    for col in category_cols:
        combined = pd.concat([real[col].astype(str), synthetic[col].astype(str)], ignore_index=True)
        codes, _ = pd.factorize(combined)
        cat_codes[col] = (codes[: len(real)], codes[len(real):])

    matched = np.zeros(len(synthetic), dtype=bool)
    chunk = 256
    for start in range(0, len(synthetic), chunk):
        stop = min(start + chunk, len(synthetic))
        ok = np.ones((stop - start, len(real)), dtype=bool)
        for col in category_cols:
            real_c, syn_c = cat_codes[col]
            ok &= syn_c[start:stop, None] == real_c[None, :]
        if numeric_cols:
            for j in range(len(numeric_cols)):
                s = syn_num[start:stop, j][:, None]
                tol = np.maximum(np.abs(s) * numeric_tolerance, _ABS_TOLERANCE)
                ok &= np.abs(real_num[None, :, j] - s) <= tol
        matched[start:stop] = ok.any(axis=1)
    return 1.0 - matched.mean()


def boundary_adherence(real, synthetic) -> float:
    """Fraction of synthetic values inside the real [min, max] (inclusive)."""
    r = _as_floats(real, "real")
    s = _as_floats(synthetic, "synthetic")
    return float(((s >= r.min()) & (s <= r.max())).mean())


@dataclass(frozen=True)
class FamilyScore:
    """One metric family aggregated across runs."""

    mean: float
    std: float
    per_run: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (-1e-9 <= self.mean <= 1.0 + 1e-9):
            raise ValueError(f"family mean {self.mean} out of [0, 1]")
        if self.std < 0:
            raise ValueError("std must be nonnegative")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "per_run": list(self.per_run)}

    @classmethod
    def from_dict(cls, d: dict) -> "FamilyScore":
        return cls(mean=d["mean"], std=d["std"], per_run=tuple(d["per_run"]))

    @classmethod
    def from_runs(cls, scores) -> "FamilyScore":
        arr = np.asarray(list(scores), dtype=float)
        return cls(mean=float(arr.mean()), std=float(arr.std(ddof=0)), per_run=tuple(arr.tolist()))


@dataclass(frozen=True)
class MetricReport:
    """Aggregated quality report for one real dataset vs one or more
    synthetic runs."""

    n_runs: int
    referential_integrity: bool
    families: dict[str, FamilyScore]
    tables: dict[str, dict[str, FamilyScore]]
    relationships: dict[str, FamilyScore]

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "referential_integrity": self.referential_integrity,
            "families": {k: v.to_dict() for k, v in self.families.items()},
            "tables": {t: {k: v.to_dict() for k, v in fam.items()} for t, fam in self.tables.items()},
            "relationships": {k: v.to_dict() for k, v in self.relationships.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            n_runs=int(d["n_runs"]),
            referential_integrity=bool(d["referential_integrity"]),
            families={k: FamilyScore.from_dict(v) for k, v in d["families"].items()},
            tables={
                t: {k: FamilyScore.from_dict(v) for k, v in fam.items()}
                for t, fam in d["tables"].items()
            },
            relationships={k: FamilyScore.from_dict(v) for k, v in d["relationships"].items()},
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))


def render_report(report: MetricReport) -> str:
    """Aligned plain-text table: one row per metric family plus the
    referential-integrity verdict."""
    rows = [("Metric", "Score")]
    for family in FAMILIES:
        score = report.families.get(family)
        value = "n/a" if score is None else f"{score.mean:.4f} ± {score.std:.4f}"
        rows.append((family, value))
    rows.append(("RI", "Yes" if report.referential_integrity else "No"))
    name_width = max(len(r[0]) for r in rows)
    lines = [f"{name.ljust(name_width)}  {value}" for name, value in rows]
    lines.insert(1, "-" * max(len(line) for line in lines))
    return "\n".join(lines) + "\n"


def _metric_columns(schema: SchemaMetadata, table: str) -> tuple[list[str], list[str]]:
    numerical = [c.name for c in schema.columns(table) if c.kind == "numerical"]
    categorical = [c.name for c in schema.columns(table) if c.kind in ("categorical", "discrete")]
    return numerical, categorical


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _table_cs(real: pd.DataFrame, synthetic: pd.DataFrame, numerical, categorical) -> float | None:
    scores = [ks_complement(real[c], synthetic[c]) for c in numerical]
    scores += [tv_complement(real[c], synthetic[c]) for c in categorical]
    return _mean_or_none(scores)


def _table_cpt(
    real: pd.DataFrame, synthetic: pd.DataFrame, numerical, categorical, coefficient: str
) -> float | None:
    scores = []
    for a, b in itertools.combinations(numerical, 2):
        try:
            scores.append(correlation_similarity(real[a], real[b], synthetic[a], synthetic[b], coefficient))
        except MetricUndefinedError as exc:
            warnings.warn(f"pair ({a}, {b}) excluded: {exc}", RuntimeWarning, stacklevel=2)
    for a, b in itertools.combinations(categorical, 2):
        scores.append(contingency_similarity(real[[a, b]], synthetic[[a, b]]))
    return _mean_or_none(scores)


def _table_rc(real: pd.DataFrame, synthetic: pd.DataFrame, numerical, categorical) -> float | None:
    scores = []
    for c in numerical:
        try:
            scores.append(range_coverage(real[c], synthetic[c]))
        except MetricUndefinedError as exc:
            warnings.warn(f"column {c} excluded: {exc}", RuntimeWarning, stacklevel=2)
    scores += [category_coverage(real[c], synthetic[c]) for c in categorical]
    return _mean_or_none(scores)


def _table_ba(real: pd.DataFrame, synthetic: pd.DataFrame, numerical) -> float | None:
    return _mean_or_none([boundary_adherence(real[c], synthetic[c]) for c in numerical])


def evaluate(
    real: RelationalDataset,
    synthetic_runs,
    coefficient: str = "pearson",
    numeric_tolerance: float = DEFAULT_NUMERIC_TOLERANCE,
) -> MetricReport:
    """Score one or more synthetic runs against the real dataset and
    aggregate each family as mean +/- std (population) across runs."""
    runs = list(synthetic_runs)
    if not runs:
        raise ValueError("at least one synthetic run is required")
    schema = real.schema
    for run in runs:
        if run.schema != schema:
            raise ValueError("synthetic run schema does not match the real dataset")

    family_runs: dict[str, list[float]] = {f: [] for f in FAMILIES}
    table_runs: dict[str, dict[str, list[float]]] = {
        t: {f: [] for f in FAMILIES if f != "PCR"} for t in schema.tables
    }
    rel_runs: dict[str, list[float]] = {
        f"{r.parent}->{r.child}.{r.foreign_key_column}": [] for r in schema.relationships
    }
    ri_flags: list[bool] = []

    for run in runs:
        per_family: dict[str, list[float]] = {f: [] for f in FAMILIES}
        for table in sorted(schema.tables):
            numerical, categorical = _metric_columns(schema, table)
            feature_cols = numerical + categorical
            real_frame = real.tables[table]
            syn_frame = run.tables[table]
            values = {
                "CS": _table_cs(real_frame, syn_frame, numerical, categorical),
                "CPT": _table_cpt(real_frame, syn_frame, numerical, categorical, coefficient),
                "RC": _table_rc(real_frame, syn_frame, numerical, categorical),
                "NRS": (
                    new_row_synthesis(real_frame[feature_cols], syn_frame[feature_cols], numeric_tolerance)
                    if feature_cols
                    else None
                ),
                "BA": _table_ba(real_frame, syn_frame, numerical),
            }
            for family, value in values.items():
                if value is not None:
                    per_family[family].append(value)
                    table_runs[table][family].append(value)
        for rel in schema.relationships:
            score = cardinality_shape_similarity(real, run, rel)
            per_family["PCR"].append(score)
            rel_runs[f"{rel.parent}->{rel.child}.{rel.foreign_key_column}"].append(score)
        for family in FAMILIES:
            if per_family[family]:
                family_runs[family].append(float(np.mean(per_family[family])))
        ri_flags.append(check_referential_integrity(run).referential_integrity)

    families = {f: FamilyScore.from_runs(v) for f, v in family_runs.items() if v}
    tables = {
        t: {f: FamilyScore.from_runs(v) for f, v in fams.items() if v}
        for t, fams in table_runs.items()
    }
    relationships = {k: FamilyScore.from_runs(v) for k, v in rel_runs.items() if v}
    return MetricReport(
        n_runs=len(runs),
        referential_integrity=all(ri_flags),
        families=families,
        tables=tables,
        relationships=relationships,
    )
