"""Mode-specific normalization and the row-vector encoding layout."""

import numpy as np
import pandas as pd
import pytest
from scipy.stats import chisquare

from relgen.transform import (
    DEFAULT_MAX_MODES,
    EPS_STD,
    DecodeError,
    EncodedValue,
    EncodingError,
    ModeNormalizer,
    TableTransformer,
    decode_numerical,
    decode_row,
    decode_table,
    encode_numerical,
    encode_row,
    encode_table,
    fit_mode_normalizer,
    fit_transformer,
    mode_probabilities,
)


def two_cluster_values(n=500, seed=0):
    rng = np.random.default_rng(seed)
    low = rng.normal(0.0, 0.1, size=n // 2)
    high = rng.normal(10.0, 0.1, size=n - n // 2)
    return np.concatenate([low, high])


def hand_normalizer(weights=(0.5, 0.5), means=(-1.0, 1.0), stds=(1.0, 1.0)):
    return ModeNormalizer(weights=weights, means=means, stds=stds)


def sample_frame(n=200, seed=4):
    rng = np.random.default_rng(seed)
    return pd.DataFrame(
        {
            "x": np.concatenate([rng.normal(0, 1, n // 2), rng.normal(8, 0.5, n - n // 2)]),
            "y": rng.normal(-3, 2, n),
            "color": rng.choice(["red", "green", "blue"], size=n, p=[0.6, 0.3, 0.1]),
            "size": rng.choice(["s", "m"], size=n),
        }
    )


# --- fitting ------------------------------------------------------------------


def test_constant_column_fits_single_floored_mode():
    norm = fit_mode_normalizer(np.full(50, 3.25))
    assert norm.weights == (1.0,)
    assert norm.means == (3.25,)
    assert norm.stds == (EPS_STD,)


def test_fit_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fit_mode_normalizer(np.array([]))
    with pytest.raises(ValueError):
        fit_mode_normalizer(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        fit_mode_normalizer(np.array([1.0, 2.0]), max_modes=0)


def test_two_separated_clusters_recovered():
    norm = fit_mode_normalizer(two_cluster_values())
    assert norm.n_modes == 2
    assert sorted(abs(m - t) for m, t in zip(sorted(norm.means), [0.0, 10.0]))[-1] < 0.2
    for w in norm.weights:
        assert abs(w - 0.5) < 0.1


def test_mode_count_respects_max_modes():
    values = two_cluster_values()
    norm = fit_mode_normalizer(values, max_modes=1)
    assert norm.n_modes == 1
    norm = fit_mode_normalizer(values, max_modes=DEFAULT_MAX_MODES)
    assert 1 <= norm.n_modes <= DEFAULT_MAX_MODES


def test_fit_weights_sum_to_one_after_pruning():
    rng = np.random.default_rng(9)
    norm = fit_mode_normalizer(rng.normal(5.0, 2.0, 400))
    assert abs(sum(norm.weights) - 1.0) < 1e-9
    assert all(s >= EPS_STD for s in norm.stds)


# --- normalizer / encoded-value validation ---------------------------------------


def test_normalizer_validates_fields():
    with pytest.raises(ValueError):
        ModeNormalizer(weights=(0.7, 0.7), means=(0.0, 1.0), stds=(1.0, 1.0))
    with pytest.raises(ValueError):
        ModeNormalizer(weights=(1.0,), means=(0.0,), stds=(0.0,))
    with pytest.raises(ValueError):
        ModeNormalizer(weights=(1.0,), means=(0.0, 1.0), stds=(1.0,))


def test_normalizer_dict_round_trip():
    norm = fit_mode_normalizer(two_cluster_values())
    assert ModeNormalizer.from_dict(norm.to_dict()) == norm


def test_encoded_value_requires_one_hot_beta():
    EncodedValue(alpha=0.2, beta=(0.0, 1.0))
    with pytest.raises(ValueError):
        EncodedValue(alpha=0.2, beta=(0.5, 0.5))
    with pytest.raises(ValueError):
        EncodedValue(alpha=0.2, beta=(0.0, 0.0))


# --- mode probabilities ------------------------------------------------------------


def test_mode_probabilities_rows_sum_to_one():
    norm = fit_mode_normalizer(two_cluster_values())
    probs = mode_probabilities(two_cluster_values(seed=1), norm)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_symmetric_midpoint_splits_evenly():
    probs = mode_probabilities(np.array([0.0]), hand_normalizer())
    np.testing.assert_allclose(probs[0], [0.5, 0.5], atol=1e-12)


def test_underflow_falls_back_to_nearest_mode():
    norm = hand_normalizer(means=(0.0, 10.0), stds=(1e-3, 1e-3))
    probs = mode_probabilities(np.array([1e6]), norm)
    np.testing.assert_allclose(probs[0], [0.0, 1.0])


def test_mode_assignment_frequencies_match_probabilities():
    # Property: the sampled mode for a repeated value follows the posted
    # posterior. chi-square on ~2000 draws.
    norm = hand_normalizer(weights=(0.3, 0.7), means=(0.0, 1.0), stds=(1.0, 1.0))
    x = 0.5
    expected = mode_probabilities(np.array([x]), norm)[0]
    rng = np.random.default_rng(123)
    draws = np.array([encode_numerical(x, norm, rng).beta.index(1.0) for _ in range(2000)])
    observed = np.bincount(draws, minlength=2)
    result = chisquare(observed, expected * len(draws))
    assert result.pvalue > 0.001


# --- scalar encode/decode -------------------------------------------------------------


def test_encode_decode_scalar_round_trip():
    norm = fit_mode_normalizer(two_cluster_values())
    rng = np.random.default_rng(0)
    for x in [-0.2, 0.05, 9.8, 10.3]:
        ev = encode_numerical(x, norm, rng)
        assert abs(decode_numerical(ev, norm) - x) < 1e-9


def test_encode_alpha_formula():
    norm = hand_normalizer(weights=(1.0,), means=(2.0,), stds=(0.5,))
    ev = encode_numerical(3.0, norm, np.random.default_rng(0))
    assert ev.beta == (1.0,)
    assert abs(ev.alpha - (3.0 - 2.0) / (4.0 * 0.5)) < 1e-12


# --- table-level encoding --------------------------------------------------------------


def test_transformer_layout_arithmetic():
    frame = sample_frame()
    tf = fit_transformer(frame, ["x", "y"], ["color", "size"])
    n_x = tf.normalizers["x"].n_modes
    n_y = tf.normalizers["y"].n_modes
    assert tf.width == (1 + n_x) + (1 + n_y) + 3 + 2
    assert tf.cond_width == 5
    assert tf.discrete_layout == [3, 2]
    spans = tf.spans
    assert spans["x"] == (0, 1 + n_x)
    assert spans["y"] == (1 + n_x, 2 + n_x + n_y)
    assert spans["color"][1] - spans["color"][0] == 3
    assert spans["size"] == (tf.width - 2, tf.width)
    assert tf.cond_spans == {"color": (0, 3), "size": (3, 5)}
    assert tf.vocabularies["color"] == ("blue", "green", "red")  # sorted


def test_table_round_trip():
    frame = sample_frame()
    tf = fit_transformer(frame, ["x", "y"], ["color", "size"])
    encoded = encode_table(frame, tf, np.random.default_rng(1))
    assert encoded.shape == (len(frame), tf.width)
    decoded = decode_table(encoded, tf)
    np.testing.assert_allclose(decoded["x"], frame["x"], atol=1e-9)
    np.testing.assert_allclose(decoded["y"], frame["y"], atol=1e-9)
    assert list(decoded["color"]) == list(frame["color"])
    assert list(decoded["size"]) == list(frame["size"])


def test_unseen_category_raises():
    frame = sample_frame()
    tf = fit_transformer(frame, ["x"], ["color"])
    bad = frame.head(3).copy()
    bad.loc[bad.index[0], "color"] = "mauve"
    with pytest.raises(EncodingError, match="mauve"):
        encode_table(bad, tf, np.random.default_rng(0))


def test_decode_rejects_bad_matrices():
    tf = fit_transformer(sample_frame(), ["x"], ["color"])
    with pytest.raises(DecodeError, match="shape"):
        decode_table(np.zeros((4, tf.width + 1)), tf)
    bad = np.zeros((2, tf.width))
    bad[0, 0] = np.nan
    with pytest.raises(DecodeError, match="non-finite"):
        decode_table(bad, tf)


def test_clip_alpha_bounds_decoded_values():
    norm = hand_normalizer(weights=(1.0,), means=(5.0,), stds=(0.25,))
    tf = TableTransformer(
        numerical_columns=("x",),
        discrete_columns=(),
        normalizers={"x": norm},
        vocabularies={},
        category_counts={},
    )
    matrix = np.array([[7.0, 1.0]])  # alpha far outside [-1, 1]
    unclipped = decode_table(matrix, tf)["x"].iloc[0]
    clipped = decode_table(matrix, tf, clip_alpha=True)["x"].iloc[0]
    assert unclipped == pytest.approx(5.0 + 7.0 * 4.0 * 0.25)
    assert clipped == pytest.approx(5.0 + 1.0 * 4.0 * 0.25)


def test_row_wrappers_match_table_forms():
    frame = sample_frame()
    tf = fit_transformer(frame, ["x", "y"], ["color", "size"])
    row = {"x": 1.5, "y": -2.0, "color": "red", "size": "m", "some_id": 7}
    vector = encode_row(row, tf, np.random.default_rng(2))
    assert vector.shape == (tf.width,)
    decoded = decode_row(vector, tf)
    assert decoded["color"] == "red" and decoded["size"] == "m"
    assert decoded["x"] == pytest.approx(1.5, abs=1e-9)
    assert decoded["y"] == pytest.approx(-2.0, abs=1e-9)
    with pytest.raises(DecodeError, match="single vector"):
        decode_row(np.zeros((2, tf.width)), tf)


def test_transformer_dict_round_trip():
    tf = fit_transformer(sample_frame(), ["x", "y"], ["color", "size"])
    clone = TableTransformer.from_dict(tf.to_dict())
    assert clone == tf


def test_category_counts_recorded():
    frame = pd.DataFrame({"c": ["a"] * 9 + ["b"]})
    tf = fit_transformer(frame, [], ["c"])
    assert tf.vocabularies["c"] == ("a", "b")
    assert tf.category_counts["c"] == (9, 1)
