"""Column transforms between raw tables and the model representation.

Numerical columns use mode-specific normalization: a variational Gaussian
mixture is fitted per column, each value picks a mode proportionally to the
per-mode density, and is stored as a scalar alpha = (x - mean) / (4 * std)
plus a one-hot mode indicator beta. Categorical and discrete columns are
one-hot encoded. A row vector is the concatenation
alpha_1, beta_1, ..., alpha_Nc, beta_Nc, d_1, ..., d_Nd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.mixture import BayesianGaussianMixture

DEFAULT_MAX_MODES = 10
WEIGHT_PRUNE_THRESHOLD = 0.005
EPS_STD = 1e-6
_FIT_RANDOM_STATE = 7  # fit is a deterministic function of its inputs


class EncodingError(ValueError):
    """A value cannot be encoded with a fitted transformer."""


class DecodeError(ValueError):
    """An encoded vector cannot be decoded."""


@dataclass(frozen=True)
class ModeNormalizer:
    """Pruned Gaussian mixture for one numerical column."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("normalizer needs at least one mode")
        if not (len(self.weights) == len(self.means) == len(self.stds)):
            raise ValueError("weights, means, and stds must have matching lengths")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("mode weights must sum to 1")
        if any(s <= 0 for s in self.stds):
            raise ValueError("mode stds must be positive")

    @property
    def n_modes(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "means": list(self.means), "stds": list(self.stds)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModeNormalizer":
        return cls(tuple(d["weights"]), tuple(d["means"]), tuple(d["stds"]))


@dataclass(frozen=True)
class EncodedValue:
    """One normalized numerical value: scalar alpha plus one-hot mode."""

    alpha: float
    beta: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", tuple(float(b) for b in np.asarray(self.beta).ravel()))
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if sum(self.beta) != 1.0 or any(b not in (0.0, 1.0) for b in self.beta):
            raise ValueError("beta must be one-hot")


def fit_mode_normalizer(values, max_modes: int = DEFAULT_MAX_MODES) -> ModeNormalizer:
    """Fit the per-column Gaussian mixture with a variational estimate of the
    mode count; modes below the weight-prune threshold are dropped and the
    remaining weights renormalized."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot fit a normalizer on an empty column")
    if not np.isfinite(values).all():
        raise ValueError("column contains non-finite values")
    if max_modes < 1:
        raise ValueError("max_modes must be positive")

    if np.unique(values).size == 1:
        return ModeNormalizer((1.0,), (float(values[0]),), (EPS_STD,))

    mixture = BayesianGaussianMixture(
        n_components=min(max_modes, values.size),
        weight_concentration_prior_type="dirichlet_process",
        weight_concentration_prior=1e-3,
        n_init=1,
        max_iter=200,
        random_state=_FIT_RANDOM_STATE,
    )
    mixture.fit(values.reshape(-1, 1))
    weights = mixture.weights_
    keep = weights > WEIGHT_PRUNE_THRESHOLD
    if not keep.any():
        keep[np.argmax(weights)] = True
    weights = weights[keep]
    means = mixture.means_.ravel()[keep]
    stds = np.sqrt(mixture.covariances_.reshape(-1)[keep])
    stds = np.maximum(stds, EPS_STD)
    weights = weights / weights.sum()
    return ModeNormalizer(tuple(weights.tolist()), tuple(means.tolist()), tuple(stds.tolist()))


def mode_probabilities(values, normalizer: ModeNormalizer) -> np.ndarray:
    """Per-value mode-selection probabilities, proportional to
    weight * N(x; mean, std). Rows where every density underflows fall back
    to a point mass on the nearest mode in std units."""
    x = np.asarray(values, dtype=float).reshape(-1, 1)
    means = np.asarray(normalizer.means)
    stds = np.asarray(normalizer.stds)
    weights = np.asarray(normalizer.weights)
    z = (x - means) / stds
    with np.errstate(under="ignore"):
        dens = weights * np.exp(-0.5 * z**2) / (stds * np.sqrt(2.0 * np.pi))
    totals = dens.sum(axis=1, keepdims=True)
    dead = totals.ravel() == 0.0
    if dead.any():
        nearest = np.abs(z[dead]).argmin(axis=1)
        dens[dead] = 0.0
        dens[dead, nearest] = 1.0
        totals = dens.sum(axis=1, keepdims=True)
    return dens / totals


def _sample_categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    return (rng.random((len(probs), 1)) < cum).argmax(axis=1)


def encode_numerical(x: float, normalizer: ModeNormalizer, rng: np.random.Generator) -> EncodedValue:
    """Sample a mode for `x` and normalize it within that mode."""
    probs = mode_probabilities([x], normalizer)[0]
    k = int(_sample_categorical_rows(probs[None, :], rng)[0])
    alpha = (x - normalizer.means[k]) / (4.0 * normalizer.stds[k])
    beta = np.zeros(normalizer.n_modes)
    beta[k] = 1.0
    return EncodedValue(float(alpha), beta)


def decode_numerical(ev: EncodedValue, normalizer: ModeNormalizer) -> float:
    """Invert the normalization for the mode indicated by beta (argmax for
    softmax-relaxed generator outputs)."""
    k = int(np.argmax(ev.beta))
    return float(ev.alpha * 4.0 * normalizer.stds[k] + normalizer.means[k])


@dataclass(frozen=True)
class TableTransformer:
    """Fitted per-column encoders plus the row-vector layout for one table.

    Layout: numerical columns first (alpha, then beta span), then one one-hot
    span per discrete column; `spans` maps column -> (start, stop) of its
    slice, with the numerical alpha at `start` and beta filling the rest.
    The conditional-vector layout covers discrete columns only.
    """

    numerical_columns: tuple[str, ...]
    discrete_columns: tuple[str, ...]
    normalizers: dict[str, ModeNormalizer]
    vocabularies: dict[str, tuple[str, ...]]
    category_counts: dict[str, tuple[int, ...]]

    @property
    def width(self) -> int:
        num = sum(1 + self.normalizers[c].n_modes for c in self.numerical_columns)
        return num + sum(len(self.vocabularies[c]) for c in self.discrete_columns)

    @property
    def cond_width(self) -> int:
        return sum(len(self.vocabularies[c]) for c in self.discrete_columns)

    @property
    def spans(self) -> dict[str, tuple[int, int]]:
        out = {}
        offset = 0
        for col in self.numerical_columns:
            stop = offset + 1 + self.normalizers[col].n_modes
            out[col] = (offset, stop)
            offset = stop
        for col in self.discrete_columns:
            stop = offset + len(self.vocabularies[col])
            out[col] = (offset, stop)
            offset = stop
        return out

    @property
    def cond_spans(self) -> dict[str, tuple[int, int]]:
        out = {}
        offset = 0
        for col in self.discrete_columns:
            stop = offset + len(self.vocabularies[col])
            out[col] = (offset, stop)
            offset = stop
        return out

    @property
    def discrete_layout(self) -> list[int]:
        return [len(self.vocabularies[c]) for c in self.discrete_columns]

    def to_dict(self) -> dict:
        return {
            "numerical_columns": list(self.numerical_columns),
            "discrete_columns": list(self.discrete_columns),
            "normalizers": {c: self.normalizers[c].to_dict() for c in self.numerical_columns},
            "vocabularies": {c: list(self.vocabularies[c]) for c in self.discrete_columns},
            "category_counts": {c: list(self.category_counts[c]) for c in self.discrete_columns},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TableTransformer":
        return cls(
            numerical_columns=tuple(d["numerical_columns"]),
            discrete_columns=tuple(d["discrete_columns"]),
            normalizers={c: ModeNormalizer.from_dict(v) for c, v in d["normalizers"].items()},
            vocabularies={c: tuple(v) for c, v in d["vocabularies"].items()},
            category_counts={c: tuple(v) for c, v in d["category_counts"].items()},
        )


def fit_transformer(
    frame: pd.DataFrame,
    numerical_columns,
    discrete_columns,
    max_modes: int = DEFAULT_MAX_MODES,
) -> TableTransformer:
    """Fit per-column encoders on training data. Category vocabularies are
    the sorted distinct values; unseen categories are an encode-time error."""
    normalizers = {c: fit_mode_normalizer(frame[c].to_numpy(), max_modes) for c in numerical_columns}
    vocabularies: dict[str, tuple[str, ...]] = {}
    counts: dict[str, tuple[int, ...]] = {}
    for col in discrete_columns:
        values = frame[col].astype(str)
        freq = values.value_counts()
        vocab = tuple(sorted(freq.index))
        vocabularies[col] = vocab
        counts[col] = tuple(int(freq[v]) for v in vocab)
    return TableTransformer(
        numerical_columns=tuple(numerical_columns),
        discrete_columns=tuple(discrete_columns),
        normalizers=normalizers,
        vocabularies=vocabularies,
        category_counts=counts,
    )


def encode_table(frame: pd.DataFrame, transformer: TableTransformer, rng: np.random.Generator) -> np.ndarray:
    """Vectorized row encoding; returns an (n_rows, width) float matrix."""
    n = len(frame)
    out = np.zeros((n, transformer.width))
    spans = transformer.spans
    for col in transformer.numerical_columns:
        norm = transformer.normalizers[col]
        x = frame[col].to_numpy(dtype=float)
        probs = mode_probabilities(x, norm)
        modes = _sample_categorical_rows(probs, rng)
        start, _ = spans[col]
        means = np.asarray(norm.means)[modes]
        stds = np.asarray(norm.stds)[modes]
        out[:, start] = (x - means) / (4.0 * stds)
        out[np.arange(n), start + 1 + modes] = 1.0
    for col in transformer.discrete_columns:
        vocab = transformer.vocabularies[col]
        index = {v: i for i, v in enumerate(vocab)}
        values = frame[col].astype(str)
        start, _ = spans[col]
        for row, value in enumerate(values):
            pos = index.get(value)
            if pos is None:
                raise EncodingError(f"column {col!r}: unseen category {value!r}")
            out[row, start + pos] = 1.0
    return out


def decode_table(
    matrix: np.ndarray,
    transformer: TableTransformer,
    clip_alpha: bool = False,
) -> pd.DataFrame:
    """Vectorized inverse of encode_table. Beta and discrete spans decode by
    argmax, so softmax-relaxed generator outputs are accepted; `clip_alpha`
    bounds alpha to [-1, 1] for generator-side decoding."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != transformer.width:
        raise DecodeError(f"expected shape (*, {transformer.width}), got {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise DecodeError("encoded matrix contains non-finite entries")
    spans = transformer.spans
    columns: dict[str, np.ndarray] = {}
    for col in transformer.numerical_columns:
        norm = transformer.normalizers[col]
        start, stop = spans[col]
        alpha = matrix[:, start]
        if clip_alpha:
            alpha = np.clip(alpha, -1.0, 1.0)
        modes = matrix[:, start + 1:stop].argmax(axis=1)
        columns[col] = alpha * 4.0 * np.asarray(norm.stds)[modes] + np.asarray(norm.means)[modes]
    for col in transformer.discrete_columns:
        start, stop = spans[col]
        picks = matrix[:, start:stop].argmax(axis=1)
        vocab = np.array(transformer.vocabularies[col], dtype=object)
        columns[col] = vocab[picks]
    return pd.DataFrame(columns)


def encode_row(row, transformer: TableTransformer, rng: np.random.Generator) -> np.ndarray:
    """Encode a single row (mapping column -> value); key columns may be
    present and are ignored."""
    frame = pd.DataFrame({c: [row[c]] for c in
                          (*transformer.numerical_columns, *transformer.discrete_columns)})
    return encode_table(frame, transformer, rng)[0]


def decode_row(vector: np.ndarray, transformer: TableTransformer) -> dict:
    """Decode a single encoded vector back to a column -> value mapping."""
    vector = np.asarray(vector, dtype=float)
    if vector.ndim != 1:
        raise DecodeError("decode_row expects a single vector")
    frame = decode_table(vector[None, :], transformer)
    return {c: frame[c].iloc[0] for c in frame.columns}
