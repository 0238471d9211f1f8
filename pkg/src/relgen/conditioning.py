"""Conditional-vector construction and training-by-sampling.

Each generated row is conditioned on one (column, category) pair drawn from
the discrete columns: the column uniformly, the category with probability
proportional to log(1 + count) so rare categories are rehearsed more often
than their raw frequency. Real rows fed to the critic are resampled to
satisfy the same conditions, and the generator pays a cross-entropy penalty
whenever its output disagrees with the requested category.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .transform import TableTransformer

_LOG_EPS = 1e-12


def _log_frequency_probs(counts) -> np.ndarray:
    weights = np.log1p(np.asarray(counts, dtype=float))
    return weights / weights.sum()


@dataclass(frozen=True)
class Condition:
    """One requested (column, category) pair."""

    column: str
    category: str


def sample_stored_conditions(
    transformer: TableTransformer, n: int, rng: np.random.Generator
) -> list[Condition | None]:
    """Draw conditions from the category frequencies recorded in a fitted
    transformer — the same column-uniform, log-frequency distribution used
    during training, available without the training table."""
    cols = transformer.discrete_columns
    if not cols:
        return [None] * n
    probs = {c: _log_frequency_probs(transformer.category_counts[c]) for c in cols}
    out: list[Condition | None] = []
    for _ in range(n):
        col = cols[int(rng.integers(len(cols)))]
        vocab = transformer.vocabularies[col]
        out.append(Condition(col, vocab[int(rng.choice(len(vocab), p=probs[col]))]))
    return out


def build_cond_vector(condition: Condition | None, transformer: TableTransformer) -> np.ndarray:
    """One-hot conditional vector over the discrete spans; all-zero when no
    condition is given (tables without discrete columns)."""
    vec = np.zeros(transformer.cond_width)
    if condition is None:
        return vec
    span = transformer.cond_spans.get(condition.column)
    if span is None:
        raise ValueError(f"column {condition.column!r} is not a discrete column")
    try:
        offset = transformer.vocabularies[condition.column].index(condition.category)
    except ValueError:
        raise ValueError(
            f"column {condition.column!r}: unknown category {condition.category!r}"
        ) from None
    vec[span[0] + offset] = 1.0
    return vec


def build_cond_matrix(conditions, transformer: TableTransformer) -> np.ndarray:
    if not conditions:
        return np.zeros((0, transformer.cond_width))
    return np.stack([build_cond_vector(c, transformer) for c in conditions])


def cond_penalty(probabilities: np.ndarray, cond: np.ndarray) -> float:
    """Mean negative log-probability the generator assigns to each row's
    requested category; rows without a condition contribute zero."""
    probabilities = np.asarray(probabilities, dtype=float)
    cond = np.asarray(cond, dtype=float)
    if probabilities.shape != cond.shape:
        raise ValueError("probabilities and cond must have the same shape")
    if probabilities.size == 0:
        return 0.0
    picked = (probabilities * cond).sum(axis=1)
    conditioned = cond.sum(axis=1) > 0
    losses = np.where(conditioned, -np.log(np.maximum(picked, _LOG_EPS)), 0.0)
    return float(losses.mean())


@dataclass
class TrainingSampler:
    """Indexes a training table so rows matching a condition can be drawn in
    O(1); also owns the condition distribution for that table."""

    transformer: TableTransformer
    n_rows: int
    _category_probs: dict[str, np.ndarray] = field(repr=False)
    _rows_by_category: dict[tuple[str, str], np.ndarray] = field(repr=False)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, transformer: TableTransformer) -> "TrainingSampler":
        category_probs: dict[str, np.ndarray] = {}
        rows_by_category: dict[tuple[str, str], np.ndarray] = {}
        for col in transformer.discrete_columns:
            category_probs[col] = _log_frequency_probs(transformer.category_counts[col])
            values = frame[col].astype(str).to_numpy()
            for cat in transformer.vocabularies[col]:
                rows_by_category[(col, cat)] = np.flatnonzero(values == cat)
        return cls(
            transformer=transformer,
            n_rows=len(frame),
            _category_probs=category_probs,
            _rows_by_category=rows_by_category,
        )

    def sample_condition(self, rng: np.random.Generator) -> Condition | None:
        """Uniform over discrete columns, then log-frequency over categories;
        None when the table has no discrete columns."""
        cols = self.transformer.discrete_columns
        if not cols:
            return None
        col = cols[int(rng.integers(len(cols)))]
        vocab = self.transformer.vocabularies[col]
        cat = vocab[int(rng.choice(len(vocab), p=self._category_probs[col]))]
        return Condition(col, cat)

    def sample_conditions(self, n: int, rng: np.random.Generator) -> list[Condition | None]:
        return [self.sample_condition(rng) for _ in range(n)]

    def sample_matching_rows(self, conditions, rng: np.random.Generator) -> np.ndarray:
        """Row indices whose values satisfy the per-row conditions; a None
        condition draws uniformly from the whole table."""
        out = np.empty(len(conditions), dtype=np.int64)
        for i, cond in enumerate(conditions):
            if cond is None:
                out[i] = int(rng.integers(self.n_rows))
                continue
            pool = self._rows_by_category[(cond.column, cond.category)]
            if pool.size == 0:
                raise ValueError(
                    f"no rows match {cond.column!r} == {cond.category!r}"
                )
            out[i] = int(pool[int(rng.integers(pool.size))])
        return out
