"""Networks, losses, hierarchical noise, training, and bundle persistence."""

import copy
import json

import numpy as np
import pandas as pd
import pytest
import torch
from torch import nn

from relgen.conditioning import Condition, build_cond_matrix, cond_penalty
from relgen.dataio import RelationalDataset, generate_fixture
from relgen.gan import (
    BUNDLE_FORMAT_VERSION,
    BundleFormatError,
    Critic,
    Generator,
    NetworkSpec,
    ParentNoiseSpec,
    ParentStats,
    TrainingConfig,
    TrainingDivergenceError,
    _cond_penalty_torch,
    apply_output_activations,
    compute_parent_stats,
    critic_loss,
    generate_encoded,
    generator_loss,
    gradient_penalty,
    gumbel_noise,
    load_bundle,
    sample_parent_noise,
    save_bundle,
    train,
)
from relgen.schema import ColumnSpec, SchemaError, SchemaMetadata
from relgen.transform import EPS_STD, fit_transformer

SMALL_CONFIG = TrainingConfig(
    epochs=1, batch_size=20, pac=4, noise_width=16, stats_rows=16, seed=0
)


def small_fixture():
    return generate_fixture("pyrimidine", n_root_rows=30, seed=0)


@pytest.fixture(scope="module")
def small_bundle():
    return train(small_fixture(), SMALL_CONFIG)


class _LinearCritic(nn.Module):
    """C(x) = w . x with an explicit pac, for analytic loss checks."""

    def __init__(self, weight, pac=1):
        super().__init__()
        self.pac = pac
        self.w = nn.Parameter(torch.as_tensor(weight, dtype=torch.float64))

    def forward(self, x):
        return x.reshape(-1, self.w.numel()) @ self.w[:, None]


class _SmoothCritic(nn.Module):
    """Small tanh network in float64 (no dropout) so finite differences of
    the score are clean."""

    def __init__(self, sample_width, pac, seed=0):
        super().__init__()
        self.pac = pac
        g = torch.Generator().manual_seed(seed)
        self.w1 = nn.Parameter(
            torch.randn(sample_width * pac, 8, generator=g, dtype=torch.float64)
        )
        self.w2 = nn.Parameter(torch.randn(8, 1, generator=g, dtype=torch.float64))

    def forward(self, x):
        n, width = x.shape
        h = torch.tanh(x.reshape(n // self.pac, width * self.pac) @ self.w1)
        return h @ self.w2


# --- configuration ---------------------------------------------------------------


def test_config_defaults_round_trip():
    config = TrainingConfig()
    assert config.epochs == 50
    assert config.batch_size == 500
    assert config.pac == 10
    assert config.gp_lambda == 10.0
    assert TrainingConfig.from_dict(config.to_dict()) == config


def test_config_validation():
    with pytest.raises(ValueError, match="multiple of pac"):
        TrainingConfig(batch_size=25, pac=10)
    with pytest.raises(ValueError, match="positive"):
        TrainingConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="stats_rows"):
        TrainingConfig(stats_rows=1)
    with pytest.raises(ValueError):
        TrainingConfig(epochs=0)


def test_network_spec_widths():
    spec = NetworkSpec(data_width=12, cond_width=5, noise_width=16, pac=4)
    assert spec.generator_input_width == 21
    assert spec.critic_input_width == (12 + 5) * 4
    with pytest.raises(ValueError):
        NetworkSpec(data_width=0, cond_width=0, noise_width=16)


# --- hierarchical noise -------------------------------------------------------------


def test_root_noise_is_standard_normal():
    spec = ParentNoiseSpec(width=8)
    draws = sample_parent_noise(spec, 100_000, np.random.default_rng(0))
    assert draws.shape == (100_000, 8)
    assert abs(draws.mean()) < 0.005
    assert abs(draws.std() - 1.0) < 0.005


def test_parent_noise_matches_parent_statistics():
    stats = ParentStats("p", means=(2.0, -1.0), stds=(0.5, 1.5))
    spec = ParentNoiseSpec(width=2, parent_stats=(stats,))
    draws = sample_parent_noise(spec, 200_000, np.random.default_rng(1))
    np.testing.assert_allclose(draws.mean(axis=0), [2.0, -1.0], atol=0.01)
    np.testing.assert_allclose(draws.std(axis=0), [0.5, 1.5], atol=0.01)


def test_multi_parent_noise_concatenates_in_order():
    a = ParentStats("a", means=(0.0, 0.0, 0.0), stds=(1.0, 1.0, 1.0))
    b = ParentStats("b", means=(5.0, 5.0, 5.0, 5.0), stds=(0.1, 0.1, 0.1, 0.1))
    spec = ParentNoiseSpec(width=7, parent_stats=(a, b))
    draws = sample_parent_noise(spec, 50_000, np.random.default_rng(2))
    assert draws.shape == (50_000, 7)
    assert abs(draws[:, :3].mean()) < 0.05
    np.testing.assert_allclose(draws[:, 3:].mean(axis=0), 5.0, atol=0.05)
    with pytest.raises(ValueError, match="width"):
        ParentNoiseSpec(width=6, parent_stats=(a, b))


def test_compute_parent_stats_hand_values():
    stats = compute_parent_stats(np.array([[0.0], [2.0]]))
    assert stats.means == (1.0,)
    assert stats.stds == (pytest.approx(np.sqrt(2.0)),)  # ddof=1
    constant = compute_parent_stats(np.full((10, 2), 3.0))
    assert constant.stds == (EPS_STD, EPS_STD)
    with pytest.raises(ValueError, match="two generated rows"):
        compute_parent_stats(np.zeros((1, 4)))


def test_noise_round_trip_consistency():
    # Stats of noise drawn from stats reproduce those stats.
    rng = np.random.default_rng(3)
    batch = rng.normal(1.5, 2.0, size=(500, 3))
    stats = compute_parent_stats(batch, "p")
    spec = ParentNoiseSpec(width=3, parent_stats=(stats,))
    redrawn = sample_parent_noise(spec, 100_000, rng)
    np.testing.assert_allclose(redrawn.mean(axis=0), stats.means, atol=0.05)
    np.testing.assert_allclose(redrawn.std(axis=0), stats.stds, atol=0.05)


def test_parent_stats_round_trip_dict():
    stats = ParentStats("p", means=(0.5,), stds=(1.0,))
    spec = ParentNoiseSpec(width=1, parent_stats=(stats,))
    assert ParentNoiseSpec.from_dict(spec.to_dict()) == spec


# --- losses ----------------------------------------------------------------------------


def test_gradient_penalty_linear_critic_analytic():
    # For C(x) = w.x the gradient is w everywhere, so the penalty is exactly
    # (||w|| - 1)^2 regardless of the interpolates.
    w = np.array([3.0, -4.0])  # norm 5
    critic = _LinearCritic(w)
    real = torch.randn(6, 2, dtype=torch.float64)
    fake = torch.randn(6, 2, dtype=torch.float64)
    penalty = gradient_penalty(critic, real, fake, np.random.default_rng(0)).detach()
    assert abs(float(penalty) - 16.0) < 1e-9

    unit = _LinearCritic(np.array([0.6, 0.8]))  # norm 1
    penalty = gradient_penalty(unit, real, fake, np.random.default_rng(0)).detach()
    assert abs(float(penalty)) < 1e-12


def test_gradient_penalty_matches_finite_differences():
    sample_width, pac, n = 3, 2, 8
    critic = _SmoothCritic(sample_width, pac)
    rng_data = np.random.default_rng(7)
    real = torch.from_numpy(rng_data.normal(size=(n, sample_width)))
    fake = torch.from_numpy(rng_data.normal(size=(n, sample_width)))

    penalty = float(gradient_penalty(critic, real, fake, np.random.default_rng(42)).detach())

    # Rebuild the interpolates with the same draw sequence, then measure the
    # critic gradient numerically.
    u = torch.from_numpy(np.random.default_rng(42).random((n // pac, 1)))
    u = u.repeat_interleave(pac, dim=0)
    x_hat = u * real + (1.0 - u) * fake
    h = 1e-6
    grads = torch.zeros_like(x_hat)
    with torch.no_grad():
        for i in range(n):
            for j in range(sample_width):
                plus = x_hat.clone()
                plus[i, j] += h
                minus = x_hat.clone()
                minus[i, j] -= h
                delta = critic(plus).sum() - critic(minus).sum()
                grads[i, j] = delta / (2 * h)
    norms = grads.reshape(n // pac, pac * sample_width).norm(2, dim=1)
    numeric = float(((norms - 1.0) ** 2).mean())
    assert abs(penalty - numeric) / max(abs(numeric), 1e-12) < 1e-4


def test_gradient_penalty_input_validation():
    critic = _LinearCritic(np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="shape"):
        gradient_penalty(critic, torch.zeros(4, 2), torch.zeros(3, 2), np.random.default_rng(0))
    critic.pac = 4
    with pytest.raises(ValueError, match="divisible"):
        gradient_penalty(critic, torch.zeros(6, 2), torch.zeros(6, 2), np.random.default_rng(0))


def test_critic_loss_hand_values():
    critic = _LinearCritic(np.array([1.0, 2.0]))
    real = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    fake = torch.tensor([[2.0, 0.0], [0.0, 2.0]], dtype=torch.float64)
    # scores: real {1, 2} mean 1.5; fake {2, 4} mean 3  ->  loss 1.5
    assert float(critic_loss(critic, real, fake).detach()) == pytest.approx(1.5)
    assert float(critic_loss(critic, real, real).detach()) == pytest.approx(0.0)


def test_generator_loss_sign_and_penalty():
    critic = _LinearCritic(np.array([1.0, 2.0]))
    fake = torch.tensor([[2.0, 0.0], [0.0, 2.0]], dtype=torch.float64)
    loss = generator_loss(critic, fake, torch.tensor(0.25, dtype=torch.float64))
    assert float(loss.detach()) == pytest.approx(-3.0 + 0.25)


def test_dropout_active_in_critic_training_mode():
    spec = NetworkSpec(data_width=6, cond_width=0, noise_width=4, pac=2)
    critic = Critic(spec)
    critic.train()
    x = torch.randn(8, 6)
    torch.manual_seed(0)
    a = critic(x)
    torch.manual_seed(1)
    b = critic(x)
    assert not torch.equal(a, b)  # dropout masks differ
    critic.eval()
    assert torch.equal(critic(x), critic(x))


# --- output activations -------------------------------------------------------------


def activation_setup(temperature=0.2, seed=0):
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame(
        {
            "x": rng.normal(0, 1, 80),
            "y": rng.normal(5, 2, 80),
            "c": rng.choice(["a", "b", "c"], 80),
            "d": rng.choice(["u", "v"], 80),
        }
    )
    tf = fit_transformer(frame, ["x", "y"], ["c", "d"])
    raw = torch.from_numpy(rng.normal(size=(32, tf.width))).float()
    gumbel = gumbel_noise((32, tf.width), rng)
    return tf, raw, gumbel, apply_output_activations(raw, tf, temperature, gumbel)


def test_activation_layout_invariants():
    tf, _, _, activated = activation_setup()
    spans = tf.spans
    for col in tf.numerical_columns:
        start, stop = spans[col]
        alpha = activated[:, start]
        assert (alpha > -1).all() and (alpha < 1).all()
        block = activated[:, start + 1:stop]
        assert (block >= 0).all()
        np.testing.assert_allclose(block.sum(dim=1).numpy(), 1.0, atol=1e-5)
    for col in tf.discrete_columns:
        start, stop = spans[col]
        block = activated[:, start:stop]
        assert (block >= 0).all()
        np.testing.assert_allclose(block.sum(dim=1).numpy(), 1.0, atol=1e-5)


def test_low_temperature_approaches_one_hot():
    tf, _, _, activated = activation_setup(temperature=0.01)
    start, stop = tf.spans[tf.discrete_columns[0]]
    peaks = activated[:, start:stop].max(dim=1).values
    # Rows where the top two gumbel-perturbed logits nearly tie stay soft at
    # any finite temperature, so assert on the overwhelming majority.
    assert float((peaks >= 0.99).float().mean()) >= 0.9
    assert float(peaks.median()) >= 0.999


def test_activations_deterministic_given_noise():
    tf, raw, gumbel, activated = activation_setup()
    again = apply_output_activations(raw, tf, 0.2, gumbel)
    assert torch.equal(activated, again)


def test_torch_penalty_matches_reference():
    tf, _, _, activated = activation_setup()
    conditions = [
        Condition("c", "a"),
        None,
        Condition("d", "v"),
        Condition("c", "b"),
    ] * 8
    cond = build_cond_matrix(conditions, tf)
    torch_value = float(
        _cond_penalty_torch(activated, torch.from_numpy(cond).float(), tf)
    )
    probs = activated.numpy()[:, tf.width - tf.cond_width:]
    assert abs(torch_value - cond_penalty(probs, cond)) < 5e-6  # float32 forward pass


def test_torch_penalty_zero_width():
    frame = pd.DataFrame({"x": np.linspace(0, 1, 20)})
    tf = fit_transformer(frame, ["x"], [])
    activated = torch.zeros(4, tf.width)
    value = _cond_penalty_torch(activated, torch.zeros(4, 0), tf)
    assert float(value) == 0.0


# --- training ---------------------------------------------------------------------------


def test_train_smoke_structure(small_bundle):
    bundle = small_bundle
    assert set(bundle.tables) == {"molecule", "atom"}
    molecule = bundle.tables["molecule"]
    atom = bundle.tables["atom"]
    # Root noise is the configured width; child noise spans the parent encoding.
    assert molecule.noise_spec.width == SMALL_CONFIG.noise_width
    assert molecule.noise_spec.parent_stats == ()
    assert atom.noise_spec.width == molecule.transformer.width
    assert atom.noise_spec.parent_stats[0].table == "molecule"
    assert ("molecule", "atom", "molecule_id") in bundle.cardinality
    assert bundle.config == SMALL_CONFIG


def test_training_is_seed_deterministic(tmp_path):
    a = train(small_fixture(), SMALL_CONFIG)
    b = train(small_fixture(), SMALL_CONFIG)
    save_bundle(a, tmp_path / "a")
    save_bundle(b, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_train_requires_a_relationship():
    schema = SchemaMetadata(
        tables={"solo": (ColumnSpec("solo_id", "primary_key"), ColumnSpec("x", "numerical"))},
        relationships=(),
    )
    frame = pd.DataFrame({"solo_id": np.arange(12, dtype=np.int64), "x": np.linspace(0, 1, 12)})
    dataset = RelationalDataset(schema=schema, tables={"solo": frame})
    with pytest.raises(SchemaError, match="at least one relation"):
        train(dataset, SMALL_CONFIG)


def test_progress_callback_reports_losses():
    events = []
    train(small_fixture(), SMALL_CONFIG, progress=events.append)
    assert {e["table"] for e in events} == {"molecule", "atom"}
    for e in events:
        assert e["epoch"] == 0
        assert np.isfinite(e["critic_loss"]) and np.isfinite(e["generator_loss"])


def test_child_noise_uses_freshest_parent_stats():
    # Invariant: every noise draw for a child during epoch e happens after the
    # parent's epoch-e refresh, so the observed parent version is e + 1.
    events = []
    config = TrainingConfig(epochs=3, batch_size=20, pac=4, noise_width=16, stats_rows=16, seed=0)
    train(small_fixture(), config, instrument=events.append)
    noise_draws = [e for e in events if e["event"] == "noise_draw"]
    refreshes = [e for e in events if e["event"] == "stats_refresh"]
    assert noise_draws and refreshes
    for event in noise_draws:
        for parent, version in event["parent_versions"].items():
            assert version == event["epoch"] + 1, (parent, event)
    # Refresh versions count up once per epoch per table.
    for table in ("molecule", "atom"):
        versions = [e["version"] for e in refreshes if e["table"] == table]
        assert versions == [1, 2, 3]


def test_generate_encoded_pads_singleton_batches(small_bundle):
    model = small_bundle.tables["molecule"]
    rng = np.random.default_rng(0)
    noise = rng.standard_normal((1, model.spec.noise_width))
    cond = np.zeros((1, model.transformer.cond_width))
    out = generate_encoded(model, noise, cond, 0.2, rng)
    assert out.shape == (1, model.transformer.width)
    empty = generate_encoded(model, np.zeros((0, model.spec.noise_width)),
                             np.zeros((0, model.transformer.cond_width)), 0.2, rng)
    assert empty.shape == (0, model.transformer.width)


def test_divergence_detected_on_poisoned_weights(small_bundle):
    model = copy.deepcopy(small_bundle.tables["molecule"])
    with torch.no_grad():
        model.generator.head.weight.fill_(float("nan"))
    rng = np.random.default_rng(0)
    noise = rng.standard_normal((4, model.spec.noise_width))
    cond = np.zeros((4, model.transformer.cond_width))
    with pytest.raises(TrainingDivergenceError, match="molecule"):
        generate_encoded(model, noise, cond, 0.2, rng)


# --- persistence ---------------------------------------------------------------------------


def test_save_load_save_is_byte_identical(small_bundle, tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    save_bundle(small_bundle, first)
    save_bundle(load_bundle(first), second)
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    for rel in files:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel


def test_loaded_bundle_generates_identically(small_bundle, tmp_path):
    save_bundle(small_bundle, tmp_path / "b")
    loaded = load_bundle(tmp_path / "b")
    model_a = small_bundle.tables["atom"]
    model_b = loaded.tables["atom"]
    assert model_b.transformer == model_a.transformer
    assert model_b.noise_spec == model_a.noise_spec
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    noise = np.random.default_rng(6).standard_normal((8, model_a.spec.noise_width))
    cond = np.zeros((8, model_a.transformer.cond_width))
    out_a = generate_encoded(model_a, noise, cond, 0.2, rng_a)
    out_b = generate_encoded(model_b, noise, cond, 0.2, rng_b)
    np.testing.assert_array_equal(out_a, out_b)


def test_load_rejects_missing_manifest(tmp_path):
    with pytest.raises(BundleFormatError, match="manifest"):
        load_bundle(tmp_path)


def test_load_rejects_unknown_version(small_bundle, tmp_path):
    save_bundle(small_bundle, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["format_version"] == BUNDLE_FORMAT_VERSION
    manifest["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(BundleFormatError, match="version"):
        load_bundle(tmp_path)


def test_load_rejects_corrupt_blobs(small_bundle, tmp_path):
    save_bundle(small_bundle, tmp_path)
    blob_path = tmp_path / "params" / "molecule.bin"
    blob = blob_path.read_bytes()
    blob_path.write_bytes(blob[:-8])
    with pytest.raises(BundleFormatError, match="truncated"):
        load_bundle(tmp_path)
    blob_path.write_bytes(blob + b"\x00" * 4)
    with pytest.raises(BundleFormatError, match="trailing"):
        load_bundle(tmp_path)
