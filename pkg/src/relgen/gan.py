"""Networks, losses, and the hierarchical training loop.

Each table gets a conditional generator and a packed critic trained with the
WGAN gradient-penalty objective. Tables are visited in topological order;
after a table's pass in every epoch, column-wise statistics of a freshly
generated batch are recorded, and child tables draw their generator input
noise from Gaussians with those statistics instead of N(0, 1). Training ends
with a ModelBundle holding everything sampling needs: generator weights,
transformers, noise specs, and per-relationship cardinality models.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from torch import nn

from .conditioning import TrainingSampler, build_cond_matrix
from .dataio import METADATA_FILENAME, RelationalDataset
from .schema import SchemaMetadata, parents, parse_metadata, serialize_metadata, topological_order, validate_acyclic
from .transform import EPS_STD, TableTransformer, encode_table, fit_transformer

BUNDLE_FORMAT_VERSION = 1
MANIFEST_FILENAME = "manifest.json"
_GUMBEL_CLIP = 1e-12


class TrainingDivergenceError(RuntimeError):
    """A loss or generator output became non-finite during training."""


class BundleFormatError(ValueError):
    """A serialized bundle directory is malformed or has an unknown version."""


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one training run."""

    epochs: int = 50
    batch_size: int = 500
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    weight_decay: float = 1e-6
    gp_lambda: float = 10.0
    critic_steps: int = 1
    temperature: float = 0.2
    pac: int = 10
    noise_width: int = 128
    max_modes: int = 10
    stats_rows: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.critic_steps < 1:
            raise ValueError("epochs, batch_size and critic_steps must be positive")
        if self.pac < 1 or self.batch_size % self.pac != 0:
            raise ValueError("batch_size must be a positive multiple of pac")
        for name in ("learning_rate", "gp_lambda", "temperature", "noise_width", "stats_rows"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.stats_rows < 2:
            raise ValueError("stats_rows must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    """Computed layer widths for one table's generator/critic pair."""

    data_width: int
    cond_width: int
    noise_width: int
    generator_blocks: tuple[int, ...] = (256, 256)
    critic_blocks: tuple[int, ...] = (256, 256)
    leaky_slope: float = 0.2
    dropout: float = 0.5
    pac: int = 10

    def __post_init__(self) -> None:
        if self.data_width < 1 or self.noise_width < 1 or self.cond_width < 0:
            raise ValueError("widths must be positive (cond width may be zero)")
        if self.pac < 1:
            raise ValueError("pac must be at least 1")

    @property
    def generator_input_width(self) -> int:
        return self.noise_width + self.cond_width

    @property
    def critic_input_width(self) -> int:
        return (self.data_width + self.cond_width) * self.pac


@dataclass(frozen=True)
class ParentStats:
    """Column-wise Gaussian parameters of one parent table's generated output."""

    table: str
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.means) != len(self.stds):
            raise ValueError("means and stds must have equal length")
        if any(s < EPS_STD for s in self.stds):
            raise ValueError("stds must be floored at the minimum std")


@dataclass(frozen=True)
class ParentNoiseSpec:
    """Where a table's generator input noise comes from: per-parent Gaussians
    concatenated in canonical parent order, or standard normal for roots."""

    width: int
    parent_stats: tuple[ParentStats, ...] = ()

    def __post_init__(self) -> None:
        if self.parent_stats:
            total = sum(len(p.means) for p in self.parent_stats)
            if total != self.width:
                raise ValueError("width must equal the total parent encoded width")
        elif self.width < 1:
            raise ValueError("default noise width must be positive")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "parents": [
                {"table": p.table, "means": list(p.means), "stds": list(p.stds)}
                for p in self.parent_stats
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParentNoiseSpec":
        stats = tuple(
            ParentStats(p["table"], tuple(p["means"]), tuple(p["stds"])) for p in d["parents"]
        )
        return cls(width=int(d["width"]), parent_stats=stats)


def sample_parent_noise(spec: ParentNoiseSpec, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Draw generator input noise: N(mean_j, std_j) per encoded parent column,
    standard normal when the table has no parents."""
    if not spec.parent_stats:
        return rng.standard_normal((batch, spec.width))
    parts = [
        rng.normal(np.asarray(p.means), np.asarray(p.stds), size=(batch, len(p.means)))
        for p in spec.parent_stats
    ]
    return np.concatenate(parts, axis=1)


def compute_parent_stats(encoded_batch: np.ndarray, table: str = "") -> ParentStats:
    """Column-wise mean and (N-1)-normalized std of a generated batch, std
    floored so downstream Gaussians stay proper."""
    batch = np.asarray(encoded_batch, dtype=float)
    if batch.ndim != 2 or batch.shape[0] < 2:
        raise ValueError("parent statistics need at least two generated rows")
    means = batch.mean(axis=0)
    stds = np.maximum(batch.std(axis=0, ddof=1), EPS_STD)
    return ParentStats(table, tuple(means.tolist()), tuple(stds.tolist()))


class _Residual(nn.Module):
    def __init__(self, in_width: int, out_width: int) -> None:
        super().__init__()
        self.linear = nn.Linear(in_width, out_width)
        self.norm = nn.BatchNorm1d(out_width)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm(self.linear(x)))
        return torch.cat([h, x], dim=1)


class Generator(nn.Module):
    """Residual stack ending in a linear layer producing raw span logits."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__()
        width = spec.generator_input_width
        blocks = []
        for out_width in spec.generator_blocks:
            blocks.append(_Residual(width, out_width))
            width += out_width
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(width, spec.data_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.head(x)


class Critic(nn.Module):
    """Affine stack with LeakyReLU and dropout, scoring packed samples."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__()
        self.pac = spec.pac
        self.sample_width = spec.data_width + spec.cond_width
        width = spec.critic_input_width
        layers: list[nn.Module] = []
        for out_width in spec.critic_blocks:
            layers += [nn.Linear(width, out_width), nn.LeakyReLU(spec.leaky_slope), nn.Dropout(spec.dropout)]
            width = out_width
        layers.append(nn.Linear(width, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] % self.pac != 0:
            raise ValueError("batch size must be divisible by pac")
        return self.net(x.reshape(-1, self.sample_width * self.pac))


def gumbel_noise(shape, rng: np.random.Generator) -> torch.Tensor:
    u = np.clip(rng.random(shape), _GUMBEL_CLIP, 1.0 - _GUMBEL_CLIP)
    return torch.from_numpy(-np.log(-np.log(u))).float()


def apply_output_activations(
    raw: torch.Tensor,
    transformer: TableTransformer,
    temperature: float,
    gumbel: torch.Tensor,
) -> torch.Tensor:
    """tanh on alpha positions; gumbel-softmax (soft) on mode and discrete
    spans, with the gumbel noise supplied by the caller."""
    out = torch.empty_like(raw)
    spans = transformer.spans
    for col in transformer.numerical_columns:
        start, stop = spans[col]
        out[:, start] = torch.tanh(raw[:, start])
        perturbed = (raw[:, start + 1:stop] + gumbel[:, start + 1:stop]) / temperature
        out[:, start + 1:stop] = torch.softmax(perturbed, dim=1)
    for col in transformer.discrete_columns:
        start, stop = spans[col]
        perturbed = (raw[:, start:stop] + gumbel[:, start:stop]) / temperature
        out[:, start:stop] = torch.softmax(perturbed, dim=1)
    return out


def critic_loss(critic: Critic, real_cat: torch.Tensor, fake_cat: torch.Tensor) -> torch.Tensor:
    return critic(fake_cat).mean() - critic(real_cat).mean()


def gradient_penalty(
    critic: Critic,
    real_cat: torch.Tensor,
    fake_cat: torch.Tensor,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Unscaled two-sided penalty E[(||grad C(x_hat)||_2 - 1)^2] on random
    interpolates, with one interpolation weight per packed sample."""
    if real_cat.shape != fake_cat.shape:
        raise ValueError("real and fake batches must share a shape")
    n, width = real_cat.shape
    pac = critic.pac
    if n % pac != 0:
        raise ValueError("batch size must be divisible by pac")
    u = torch.from_numpy(rng.random((n // pac, 1))).to(real_cat.dtype)
    u = u.repeat_interleave(pac, dim=0)
    x_hat = (u * real_cat + (1.0 - u) * fake_cat).requires_grad_(True)
    scores = critic(x_hat)
    grads = torch.autograd.grad(
        outputs=scores.sum(), inputs=x_hat, create_graph=True, retain_graph=True
    )[0]
    norms = grads.reshape(n // pac, pac * width).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def generator_loss(critic: Critic, fake_cat: torch.Tensor, cond_penalty: torch.Tensor) -> torch.Tensor:
    return -critic(fake_cat).mean() + cond_penalty


def _cond_penalty_torch(activated: torch.Tensor, cond: torch.Tensor, transformer: TableTransformer) -> torch.Tensor:
    """Differentiable twin of conditioning.cond_penalty, reading the requested
    category's probability off the activated discrete spans (they occupy the
    trailing cond_width positions of the row vector)."""
    if transformer.cond_width == 0:
        return activated.new_zeros(())
    probs = activated[:, transformer.width - transformer.cond_width:]
    picked = (probs * cond).sum(dim=1)
    conditioned = cond.sum(dim=1) > 0
    losses = torch.where(
        conditioned, -torch.log(torch.clamp(picked, min=_GUMBEL_CLIP)), torch.zeros_like(picked)
    )
    return losses.mean()


@dataclass
class TableModel:
    """Everything sampling needs for one table."""

    table: str
    transformer: TableTransformer
    generator: Generator
    spec: NetworkSpec
    noise_spec: ParentNoiseSpec


@dataclass
class ModelBundle:
    """Trained model state for a whole schema; immutable after training."""

    schema: SchemaMetadata
    config: TrainingConfig
    tables: dict[str, TableModel]
    cardinality: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if set(self.tables) != set(self.schema.tables):
            raise ValueError("bundle must hold exactly one model per schema table")


def generate_encoded(
    model: TableModel,
    noise: np.ndarray,
    cond: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run the generator on prepared noise/condition batches and return the
    activated encoded rows. Batch normalization runs on batch statistics, so
    singleton batches are padded with a duplicate row."""
    n = len(noise)
    if n == 0:
        return np.zeros((0, model.transformer.width))
    noise_t = torch.from_numpy(np.asarray(noise)).float()
    cond_t = torch.from_numpy(np.asarray(cond)).float()
    inputs = torch.cat([noise_t, cond_t], dim=1)
    padded = n == 1
    if padded:
        inputs = torch.cat([inputs, inputs], dim=0)
    gumbel = gumbel_noise((len(inputs), model.transformer.width), rng)
    was_training = model.generator.training
    model.generator.train()
    try:
        with torch.no_grad():
            raw = model.generator(inputs)
            activated = apply_output_activations(raw, model.transformer, temperature, gumbel)
    finally:
        model.generator.train(was_training)
    out = activated.numpy().astype(float)
    if padded:
        out = out[:1]
    if not np.isfinite(out).all():
        raise TrainingDivergenceError(f"generator for table {model.table!r} produced non-finite output")
    return out


def _column_roles(schema: SchemaMetadata, table: str) -> tuple[list[str], list[str]]:
    numerical = [c.name for c in schema.columns(table) if c.kind == "numerical"]
    discrete = [c.name for c in schema.columns(table) if c.kind in ("categorical", "discrete")]
    return numerical, discrete


def _canonical_parents(schema: SchemaMetadata, table: str) -> list[str]:
    seen: list[str] = []
    for rel in parents(schema, table):
        if rel.parent not in seen:
            seen.append(rel.parent)
    return seen


def train(
    dataset: RelationalDataset,
    config: TrainingConfig,
    progress=None,
    instrument=None,
) -> ModelBundle:
    """Fit one conditional generator per table (topological order), refresh
    parent statistics after each table's pass every epoch, and return the
    bundle. `progress(info)` receives per-table epoch losses; `instrument`
    receives stats-refresh and noise-draw events for auditing."""
    schema = dataset.schema
    validate_acyclic(schema)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    order = topological_order(schema)

    transformers: dict[str, TableTransformer] = {}
    samplers: dict[str, TrainingSampler] = {}
    encoded: dict[str, torch.Tensor] = {}
    for table in order:
        frame = dataset.tables[table]
        if len(frame) == 0:
            raise ValueError(f"table {table!r} has no rows to train on")
        numerical, discrete = _column_roles(schema, table)
        transformer = fit_transformer(frame, numerical, discrete, config.max_modes)
        transformers[table] = transformer
        samplers[table] = TrainingSampler.from_frame(frame, transformer)
        encoded[table] = torch.from_numpy(encode_table(frame, transformer, rng)).float()

    specs: dict[str, NetworkSpec] = {}
    generators: dict[str, Generator] = {}
    critics: dict[str, Critic] = {}
    gen_opt: dict[str, torch.optim.Adam] = {}
    critic_opt: dict[str, torch.optim.Adam] = {}
    parent_names: dict[str, list[str]] = {}
    for table in order:
        parent_names[table] = _canonical_parents(schema, table)
        noise_width = (
            sum(transformers[p].width for p in parent_names[table])
            if parent_names[table]
            else config.noise_width
        )
        spec = NetworkSpec(
            data_width=transformers[table].width,
            cond_width=transformers[table].cond_width,
            noise_width=noise_width,
            pac=config.pac,
        )
        specs[table] = spec
        generators[table] = Generator(spec)
        critics[table] = Critic(spec)
        adam = dict(betas=(config.beta1, config.beta2), weight_decay=config.weight_decay)
        gen_opt[table] = torch.optim.Adam(generators[table].parameters(), lr=config.learning_rate, **adam)
        critic_opt[table] = torch.optim.Adam(critics[table].parameters(), lr=config.learning_rate, **adam)

    stats: dict[str, ParentStats] = {}
    stats_version: dict[str, int] = {}
    current_epoch = 0

    def draw_noise(table: str, batch: int) -> np.ndarray:
        names = parent_names[table]
        if not names:
            return rng.standard_normal((batch, config.noise_width))
        if instrument is not None:
            instrument({
                "event": "noise_draw",
                "table": table,
                "epoch": current_epoch,
                "parent_versions": {p: stats_version[p] for p in names},
            })
        spec = ParentNoiseSpec(
            width=sum(len(stats[p].means) for p in names),
            parent_stats=tuple(stats[p] for p in names),
        )
        return sample_parent_noise(spec, batch, rng)

    def generate_batch(table: str, batch: int, grad: bool):
        conditions = samplers[table].sample_conditions(batch, rng)
        cond_np = build_cond_matrix(conditions, transformers[table])
        noise_np = draw_noise(table, batch)
        inputs = torch.cat(
            [torch.from_numpy(noise_np).float(), torch.from_numpy(cond_np).float()], dim=1
        )
        gumbel = gumbel_noise((batch, transformers[table].width), rng)
        if grad:
            raw = generators[table](inputs)
            fake = apply_output_activations(raw, transformers[table], config.temperature, gumbel)
        else:
            with torch.no_grad():
                raw = generators[table](inputs)
                fake = apply_output_activations(raw, transformers[table], config.temperature, gumbel)
        return fake, torch.from_numpy(cond_np).float(), conditions

    def refresh_stats(table: str, epoch: int) -> None:
        fake, _, _ = generate_batch(table, config.stats_rows, grad=False)
        values = fake.numpy().astype(float)
        if not np.isfinite(values).all():
            raise TrainingDivergenceError(
                f"non-finite generated batch for table {table!r} at epoch {epoch}"
            )
        stats[table] = compute_parent_stats(values, table)
        stats_version[table] = stats_version.get(table, 0) + 1
        if instrument is not None:
            instrument({
                "event": "stats_refresh",
                "table": table,
                "epoch": epoch,
                "version": stats_version[table],
            })

    batch = config.batch_size
    for epoch in range(config.epochs):
        current_epoch = epoch
        for table in order:
            transformer = transformers[table]
            sampler = samplers[table]
            data = encoded[table]
            steps = max(1, math.ceil(len(data) / batch))
            critic_losses = []
            generator_losses = []
            for _ in range(steps):
                for _ in range(config.critic_steps):
                    fake, cond_t, conditions = generate_batch(table, batch, grad=False)
                    real_idx = sampler.sample_matching_rows(conditions, rng)
                    real_cat = torch.cat([data[real_idx], cond_t], dim=1)
                    fake_cat = torch.cat([fake, cond_t], dim=1)
                    loss_c = critic_loss(critics[table], real_cat, fake_cat)
                    penalty = gradient_penalty(critics[table], real_cat, fake_cat, rng)
                    total_c = loss_c + config.gp_lambda * penalty
                    if not torch.isfinite(total_c):
                        raise TrainingDivergenceError(
                            f"non-finite critic loss for table {table!r} at epoch {epoch}"
                        )
                    critic_opt[table].zero_grad()
                    total_c.backward()
                    critic_opt[table].step()
                    critic_losses.append(float(loss_c.detach()))

                fake, cond_t, _ = generate_batch(table, batch, grad=True)
                fake_cat = torch.cat([fake, cond_t], dim=1)
                penalty_g = _cond_penalty_torch(fake, cond_t, transformer)
                loss_g = generator_loss(critics[table], fake_cat, penalty_g)
                if not torch.isfinite(loss_g):
                    raise TrainingDivergenceError(
                        f"non-finite generator loss for table {table!r} at epoch {epoch}"
                    )
                gen_opt[table].zero_grad()
                loss_g.backward()
                gen_opt[table].step()
                generator_losses.append(float(loss_g.detach()))

            refresh_stats(table, epoch)
            if progress is not None:
                progress({
                    "epoch": epoch,
                    "table": table,
                    "critic_loss": float(np.mean(critic_losses)),
                    "generator_loss": float(np.mean(generator_losses)),
                })

    models: dict[str, TableModel] = {}
    for table in order:
        names = parent_names[table]
        if names:
            noise_spec = ParentNoiseSpec(
                width=sum(len(stats[p].means) for p in names),
                parent_stats=tuple(stats[p] for p in names),
            )
        else:
            noise_spec = ParentNoiseSpec(width=config.noise_width)
        generators[table].eval()
        models[table] = TableModel(
            table=table,
            transformer=transformers[table],
            generator=generators[table],
            spec=specs[table],
            noise_spec=noise_spec,
        )

    from .sampler import fit_cardinality  # deferred: sampler imports this module

    cardinality = {
        (rel.parent, rel.child, rel.foreign_key_column): fit_cardinality(dataset, rel)
        for rel in schema.relationships
        if rel.kind == "one_to_many"
    }
    return ModelBundle(schema=schema, config=config, tables=models, cardinality=cardinality)


_TENSOR_DTYPES = {"f4": np.dtype("<f4"), "i8": np.dtype("<i8")}


def _dtype_code(tensor: torch.Tensor) -> str:
    if tensor.dtype == torch.float32:
        return "f4"
    if tensor.dtype == torch.int64:
        return "i8"
    raise BundleFormatError(f"unsupported parameter dtype {tensor.dtype}")


def save_bundle(bundle: ModelBundle, directory) -> None:
    """Write the bundle as metadata + manifest + one parameter blob per
    table. Byte-deterministic: identical bundles serialize identically."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "params").mkdir(exist_ok=True)
    (directory / METADATA_FILENAME).write_text(serialize_metadata(bundle.schema))

    tables_manifest: dict[str, dict] = {}
    for table, model in bundle.tables.items():
        state = model.generator.state_dict()
        tensors = []
        blob = bytearray()
        for name, tensor in state.items():
            code = _dtype_code(tensor)
            array = tensor.detach().numpy().astype(_TENSOR_DTYPES[code])
            tensors.append({"name": name, "shape": list(tensor.shape), "dtype": code})
            blob += array.tobytes()
        (directory / "params" / f"{table}.bin").write_bytes(bytes(blob))
        tables_manifest[table] = {
            "transformer": model.transformer.to_dict(),
            "noise": model.noise_spec.to_dict(),
            "network": {
                "data_width": model.spec.data_width,
                "cond_width": model.spec.cond_width,
                "noise_width": model.spec.noise_width,
                "generator_blocks": list(model.spec.generator_blocks),
                "critic_blocks": list(model.spec.critic_blocks),
                "leaky_slope": model.spec.leaky_slope,
                "dropout": model.spec.dropout,
                "pac": model.spec.pac,
            },
            "tensors": tensors,
            "params_file": f"params/{table}.bin",
        }

    cardinality_manifest = []
    for rel in bundle.schema.relationships:
        key = (rel.parent, rel.child, rel.foreign_key_column)
        entry = {
            "parent": rel.parent,
            "child": rel.child,
            "foreign_key": rel.foreign_key_column,
            "kind": rel.kind,
            "model": bundle.cardinality[key].to_dict() if key in bundle.cardinality else None,
        }
        cardinality_manifest.append(entry)

    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "config": bundle.config.to_dict(),
        "tables": tables_manifest,
        "cardinality": cardinality_manifest,
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (directory / MANIFEST_FILENAME).write_text(text)


def load_bundle(directory) -> ModelBundle:
    """Inverse of save_bundle; rejects unknown format versions."""
    from .sampler import CardinalityModel  # deferred: sampler imports this module

    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILENAME
    if not manifest_path.is_file():
        raise BundleFormatError(f"missing {MANIFEST_FILENAME} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"malformed manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise BundleFormatError(f"unsupported bundle format version {version!r}")

    schema = parse_metadata((directory / METADATA_FILENAME).read_text())
    config = TrainingConfig.from_dict(manifest["config"])

    tables: dict[str, TableModel] = {}
    for table, entry in manifest["tables"].items():
        transformer = TableTransformer.from_dict(entry["transformer"])
        net = entry["network"]
        spec = NetworkSpec(
            data_width=net["data_width"],
            cond_width=net["cond_width"],
            noise_width=net["noise_width"],
            generator_blocks=tuple(net["generator_blocks"]),
            critic_blocks=tuple(net["critic_blocks"]),
            leaky_slope=net["leaky_slope"],
            dropout=net["dropout"],
            pac=net["pac"],
        )
        generator = Generator(spec)
        blob = (directory / entry["params_file"]).read_bytes()
        state = {}
        offset = 0
        for tensor_entry in entry["tensors"]:
            dtype = _TENSOR_DTYPES[tensor_entry["dtype"]]
            shape = tuple(tensor_entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            size = count * dtype.itemsize
            chunk = blob[offset:offset + size]
            if len(chunk) != size:
                raise BundleFormatError(f"parameter blob for table {table!r} is truncated")
            array = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
            state[tensor_entry["name"]] = torch.from_numpy(array)
            offset += size
        if offset != len(blob):
            raise BundleFormatError(f"parameter blob for table {table!r} has trailing bytes")
        generator.load_state_dict(state)
        generator.eval()
        tables[table] = TableModel(
            table=table,
            transformer=transformer,
            generator=generator,
            spec=spec,
            noise_spec=ParentNoiseSpec.from_dict(entry["noise"]),
        )

    cardinality = {}
    for entry in manifest["cardinality"]:
        if entry["model"] is not None:
            key = (entry["parent"], entry["child"], entry["foreign_key"])
            cardinality[key] = CardinalityModel.from_dict(entry["model"])
    return ModelBundle(schema=schema, config=config, tables=tables, cardinality=cardinality)
