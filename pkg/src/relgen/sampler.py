"""Hierarchical sampling with guaranteed referential integrity.

Tables are sampled in topological order. Root tables get the requested row
count. A child with any one-to-one parent copies every parent id exactly
once; otherwise its row count is driven by per-relationship Gamma
cardinality models, and foreign keys are drawn with replacement under a
coverage guarantee: every parent key is referenced at least once, enforced
by a bounded retry loop plus a deterministic repair step. Primary keys are
always the contiguous range 0..num_primary-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .conditioning import build_cond_matrix, sample_stored_conditions
from .dataio import RelationalDataset, check_referential_integrity
from .gan import ModelBundle, generate_encoded, sample_parent_noise
from .schema import Relationship, parents, topological_order
from .transform import decode_table

DEFAULT_MAX_RETRIES = 100


@dataclass(frozen=True)
class CardinalityModel:
    """Children-per-parent-key distribution for one relationship, as a
    method-of-moments Gamma fit plus the observed counts themselves."""

    parent: str
    child: str
    foreign_key: str
    mean: float
    variance: float
    shape: float | None
    scale: float | None
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.counts:
            raise ValueError("cardinality model needs at least one observed count")
        if (self.shape is None) != (self.scale is None):
            raise ValueError("shape and scale must be defined together")
        if self.shape is not None and (self.shape <= 0 or self.scale <= 0):
            raise ValueError("gamma parameters must be positive")

    @property
    def degenerate(self) -> bool:
        return self.shape is None

    def to_dict(self) -> dict:
        return {
            "parent": self.parent,
            "child": self.child,
            "foreign_key": self.foreign_key,
            "mean": self.mean,
            "variance": self.variance,
            "shape": self.shape,
            "scale": self.scale,
            "counts": list(self.counts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CardinalityModel":
        return cls(
            parent=d["parent"],
            child=d["child"],
            foreign_key=d["foreign_key"],
            mean=d["mean"],
            variance=d["variance"],
            shape=d["shape"],
            scale=d["scale"],
            counts=tuple(d["counts"]),
        )


def child_counts(dataset: RelationalDataset, relationship: Relationship) -> np.ndarray:
    """Children per parent key, including parents with zero children, in
    parent-key order."""
    pk = dataset.schema.primary_key(relationship.parent)
    parent_keys = dataset.tables[relationship.parent][pk]
    fk_values = dataset.tables[relationship.child][relationship.foreign_key_column]
    counts = fk_values.value_counts().reindex(parent_keys, fill_value=0)
    return counts.to_numpy(dtype=np.int64)


def fit_cardinality(dataset: RelationalDataset, relationship: Relationship) -> CardinalityModel:
    """Method-of-moments Gamma fit (shape = mean^2/var, scale = var/mean) to
    the per-parent child counts; zero variance yields a degenerate model that
    always returns the constant mean."""
    if relationship.kind != "one_to_many":
        raise ValueError("cardinality models apply to one_to_many relationships")
    if len(dataset.tables[relationship.parent]) == 0:
        raise ValueError(f"parent table {relationship.parent!r} is empty")
    counts = child_counts(dataset, relationship)
    mean = float(counts.mean())
    variance = float(counts.var(ddof=1)) if counts.size > 1 else 0.0
    if variance == 0.0:
        shape = scale = None
    else:
        shape = mean * mean / variance
        scale = variance / mean
    return CardinalityModel(
        parent=relationship.parent,
        child=relationship.child,
        foreign_key=relationship.foreign_key_column,
        mean=mean,
        variance=variance,
        shape=shape,
        scale=scale,
        counts=tuple(counts.tolist()),
    )


def sample_num_foreign(model: CardinalityModel, n_parents: int, rng: np.random.Generator) -> int:
    """Total child-row count for n_parents keys: the sum of per-parent
    rounded Gamma draws (each clamped nonnegative), with the total clamped to
    at least n_parents so full key coverage stays possible."""
    if n_parents < 1:
        raise ValueError("n_parents must be positive")
    if model.degenerate:
        total = int(round(model.mean * n_parents))
    else:
        draws = np.maximum(np.rint(rng.gamma(model.shape, model.scale, size=n_parents)), 0.0)
        total = int(draws.sum())
    return max(total, n_parents)


def sample_foreign_keys(
    parent_ids,
    num_keys: int,
    rng: np.random.Generator,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> np.ndarray:
    """num_keys draws with replacement from parent_ids such that every id
    appears at least once. Coverage is retried up to max_retries times, then
    repaired deterministically: missing ids overwrite the first positions,
    and any id clobbered by that pass is restored onto a duplicate slot."""
    ids = np.asarray(sorted(set(int(i) for i in parent_ids)), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("parent_ids must be non-empty")
    if num_keys < ids.size:
        raise ValueError(f"num_keys={num_keys} cannot cover {ids.size} parent ids")
    draw = ids[rng.integers(0, ids.size, size=num_keys)]
    for _ in range(max_retries):
        if np.unique(draw).size == ids.size:
            return draw
        draw = ids[rng.integers(0, ids.size, size=num_keys)]
    if np.unique(draw).size == ids.size:
        return draw
    missing = sorted(set(ids.tolist()) - set(draw.tolist()))
    draw[: len(missing)] = missing
    still_missing = sorted(set(ids.tolist()) - set(draw.tolist()))
    if still_missing:
        values, counts = np.unique(draw, return_counts=True)
        dup_count = dict(zip(values.tolist(), counts.tolist()))
        cursor = 0
        for value in still_missing:
            while dup_count.get(int(draw[cursor]), 0) <= 1:
                cursor += 1
            dup_count[int(draw[cursor])] -= 1
            draw[cursor] = value
            dup_count[value] = 1
            cursor += 1
    return draw


def sample_database(bundle: ModelBundle, n: int, seed: int) -> RelationalDataset:
    """Sample a full synthetic database with n root-table rows per root.

    Returns a RelationalDataset with provenance "synthetic" whose primary
    keys are 0..num_primary-1 per table and which always satisfies
    referential integrity.
    """
    if n < 1:
        raise ValueError("n must be positive")
    schema = bundle.schema
    rng = np.random.default_rng(seed)
    order = topological_order(schema)

    frames: dict[str, pd.DataFrame] = {}
    primary_keys: dict[str, np.ndarray] = {}
    for table in order:
        model = bundle.tables[table]
        rels = parents(schema, table)
        fk_columns: dict[str, np.ndarray] = {}
        if not rels:
            num_primary = n
        elif any(rel.kind == "one_to_one" for rel in rels):
            sizes = {rel.parent: primary_keys[rel.parent].size for rel in rels}
            if len(set(sizes.values())) != 1:
                raise ValueError(
                    f"table {table!r} has a one-to-one parent, so all its parents "
                    f"must have equal row counts; got {sizes}"
                )
            num_primary = next(iter(sizes.values()))
            for rel in rels:
                fk_columns[rel.foreign_key_column] = rng.permutation(primary_keys[rel.parent])
        else:
            num_keys = 0
            for rel in rels:
                key = (rel.parent, rel.child, rel.foreign_key_column)
                cardinality = bundle.cardinality.get(key)
                if cardinality is None:
                    raise ValueError(f"bundle is missing a cardinality model for {key}")
                num_keys = max(num_keys, sample_num_foreign(cardinality, primary_keys[rel.parent].size, rng))
            num_primary = num_keys
            for rel in rels:
                fk_columns[rel.foreign_key_column] = sample_foreign_keys(
                    primary_keys[rel.parent], num_keys, rng
                )

        noise = sample_parent_noise(model.noise_spec, num_primary, rng)
        conditions = sample_stored_conditions(model.transformer, num_primary, rng)
        cond = build_cond_matrix(conditions, model.transformer)
        chunks = []
        step = bundle.config.batch_size
        for start in range(0, num_primary, step):
            chunks.append(
                generate_encoded(
                    model,
                    noise[start:start + step],
                    cond[start:start + step],
                    bundle.config.temperature,
                    rng,
                )
            )
        encoded = np.concatenate(chunks, axis=0)
        frame = decode_table(encoded, model.transformer, clip_alpha=True)

        pk_name = schema.primary_key(table)
        frame[pk_name] = np.arange(num_primary, dtype=np.int64)
        for fk_name, values in fk_columns.items():
            frame[fk_name] = values.astype(np.int64)
        frames[table] = frame[list(schema.column_names(table))]
        primary_keys[table] = np.arange(num_primary, dtype=np.int64)

    dataset = RelationalDataset(schema=schema, tables=frames, provenance="synthetic")
    report = check_referential_integrity(dataset)
    if not report.referential_integrity:
        raise AssertionError(f"sampled database lost referential integrity: {report}")
    return dataset


def condition_compliance(bundle: ModelBundle, table: str, n: int, seed: int) -> float:
    """Fraction of generated rows whose decoded category equals the condition
    they were generated under — a diagnostic for conditional control."""
    model = bundle.tables[table]
    if not model.transformer.discrete_columns:
        raise ValueError(f"table {table!r} has no discrete columns to condition on")
    rng = np.random.default_rng(seed)
    conditions = sample_stored_conditions(model.transformer, n, rng)
    cond = build_cond_matrix(conditions, model.transformer)
    noise = sample_parent_noise(model.noise_spec, n, rng)
    encoded = generate_encoded(model, noise, cond, bundle.config.temperature, rng)
    decoded = decode_table(encoded, model.transformer, clip_alpha=True)
    hits = sum(
        1
        for row, condition in enumerate(conditions)
        if condition is not None and decoded[condition.column].iloc[row] == condition.category
    )
    return hits / n
