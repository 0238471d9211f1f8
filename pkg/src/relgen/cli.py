"""Command-line interface: fixture / train / sample / evaluate / report.

Every command is deterministic given its seed arguments. Exit codes are a
stable contract: 0 success, 2 usage or validation failure, 3 runtime
failure (training divergence, broken internal guarantee). The environment
variable RELGEN_NUM_THREADS caps kernel parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import dataio, gan, metrics, sampler
from .gan import TrainingConfig

THREADS_ENV_VAR = "RELGEN_NUM_THREADS"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

_CONFIG_FIELDS = tuple(f.name for f in fields(TrainingConfig))


@dataclass(frozen=True)
class RunConfig:
    """Validated arguments for one command invocation."""

    command: str
    out: Path | None = None
    dataset: Path | None = None
    model: Path | None = None
    report: Path | None = None
    synthetic: tuple[Path, ...] = ()
    shape: str | None = None
    rows: int | None = None
    n: int | None = None
    seeds: tuple[int, ...] = (0,)
    coefficient: str = "pearson"
    training: TrainingConfig | None = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for path in (self.dataset, self.model, self.report, *self.synthetic):
            if path is not None and not path.exists():
                raise ValueError(f"path does not exist: {path}")


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise ValueError(f"invalid seed list {text!r}; expected comma-separated integers") from None
    if not seeds:
        raise ValueError("seed list is empty")
    return seeds


def _merge_training_config(args: argparse.Namespace) -> TrainingConfig:
    """Defaults, then config-file values, then explicit flags (flags win)."""
    merged = {f: getattr(TrainingConfig(), f) for f in _CONFIG_FIELDS}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ValueError(f"config file does not exist: {path}")
        loaded = json.loads(path.read_text())
        unknown = set(loaded) - set(_CONFIG_FIELDS)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        merged.update(loaded)
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return TrainingConfig(**merged)


def _apply_thread_cap() -> None:
    value = os.environ.get(THREADS_ENV_VAR)
    if value is None:
        return
    try:
        threads = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be a positive integer, got {value!r}") from None
    if threads < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be a positive integer, got {value!r}")
    import torch

    torch.set_num_threads(threads)


def cmd_fixture(cfg: RunConfig) -> int:
    dataset = dataio.generate_fixture(cfg.shape, cfg.rows, cfg.seeds[0])
    dataio.write_dataset(dataset, cfg.out)
    counts = ", ".join(f"{t}={n}" for t, n in sorted(dataset.row_counts().items()))
    print(f"wrote fixture {cfg.shape!r} to {cfg.out} ({counts})")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    dataset = dataio.load_dataset(cfg.dataset)

    def progress(info: dict) -> None:
        print(
            f"epoch {info['epoch'] + 1}/{cfg.training.epochs} "
            f"table={info['table']} "
            f"critic_loss={info['critic_loss']:.4f} "
            f"generator_loss={info['generator_loss']:.4f}"
        )

    bundle = gan.train(dataset, cfg.training, progress=progress)
    gan.save_bundle(bundle, cfg.out)
    print(f"wrote model bundle to {cfg.out}")
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    bundle = gan.load_bundle(cfg.model)
    multi = len(cfg.seeds) > 1
    for seed in cfg.seeds:
        out_dir = cfg.out / f"seed-{seed}" if multi else cfg.out
        dataset = sampler.sample_database(bundle, cfg.n, seed)
        dataio.write_dataset(dataset, out_dir)
        report = dataio.check_referential_integrity(dataset)
        verdict = "ok" if report.referential_integrity else "FAILED"
        print(f"wrote {out_dir} (seed {seed}); referential integrity: {verdict}")
        if not report.referential_integrity:
            raise RuntimeError(f"sampled dataset failed the referential-integrity check: {report}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    real = dataio.load_dataset(cfg.dataset)
    runs = [dataio.load_dataset(path, provenance="synthetic") for path in cfg.synthetic]
    report = metrics.evaluate(real, runs, coefficient=cfg.coefficient)
    if cfg.out is not None:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        cfg.out.write_text(report.to_json())
        print(f"wrote report to {cfg.out}")
    print(metrics.render_report(report), end="")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    try:
        report = metrics.MetricReport.from_json(cfg.report.read_text())
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"malformed report {cfg.report}: {exc!r}") from exc
    print(metrics.render_report(report), end="")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relgen",
        description="Relational synthetic data: train, sample, and evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fixture = sub.add_parser("fixture", help="generate a synthetic-real fixture database")
    p_fixture.add_argument("shape", choices=dataio.FIXTURE_SHAPES)
    p_fixture.add_argument("--rows", type=int, default=100, help="root-table row count")
    p_fixture.add_argument("--seed", type=int, default=0)
    p_fixture.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train generators on a dataset directory")
    p_train.add_argument("dataset", help="dataset directory or metadata file")
    p_train.add_argument("--out", required=True, help="bundle output directory")
    p_train.add_argument("--config", help="JSON file with training-config fields")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_train.add_argument("--beta1", type=float)
    p_train.add_argument("--beta2", type=float)
    p_train.add_argument("--weight-decay", dest="weight_decay", type=float)
    p_train.add_argument("--gp-lambda", dest="gp_lambda", type=float)
    p_train.add_argument("--critic-steps", dest="critic_steps", type=int)
    p_train.add_argument("--temperature", type=float)
    p_train.add_argument("--pac", type=int)
    p_train.add_argument("--noise-width", dest="noise_width", type=int)
    p_train.add_argument("--max-modes", dest="max_modes", type=int)
    p_train.add_argument("--stats-rows", dest="stats_rows", type=int)
    p_train.add_argument("--seed", type=int)

    p_sample = sub.add_parser("sample", help="sample a synthetic database from a bundle")
    p_sample.add_argument("model", help="bundle directory")
    p_sample.add_argument("--n", type=int, required=True, help="rows per root table")
    seed_group = p_sample.add_mutually_exclusive_group()
    seed_group.add_argument("--seed", type=int)
    seed_group.add_argument("--seeds", help="comma-separated seeds; writes one run per seed")
    p_sample.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("evaluate", help="score synthetic runs against a real dataset")
    p_eval.add_argument("real", help="real dataset directory")
    p_eval.add_argument("synthetic", nargs="+", help="synthetic run directories")
    p_eval.add_argument("--out", help="path for the structured JSON report")
    p_eval.add_argument("--coefficient", choices=metrics.COEFFICIENTS, default="pearson")

    p_report = sub.add_parser("report", help="render a stored JSON report as a table")
    p_report.add_argument("report", help="report JSON path")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    if args.command == "fixture":
        if args.rows < 1:
            raise ValueError("--rows must be positive")
        return RunConfig(
            command="fixture", shape=args.shape, rows=args.rows,
            seeds=(args.seed,), out=Path(args.out),
        )
    if args.command == "train":
        return RunConfig(
            command="train", dataset=Path(args.dataset), out=Path(args.out),
            training=_merge_training_config(args),
        )
    if args.command == "sample":
        if args.n is None or args.n < 1:
            raise ValueError("--n must be positive")
        if args.seeds is not None:
            seeds = _parse_seeds(args.seeds)
        else:
            seeds = (args.seed if args.seed is not None else 0,)
        return RunConfig(command="sample", model=Path(args.model), n=args.n, seeds=seeds, out=Path(args.out))
    if args.command == "evaluate":
        return RunConfig(
            command="evaluate", dataset=Path(args.real),
            synthetic=tuple(Path(p) for p in args.synthetic),
            out=Path(args.out) if args.out else None,
            coefficient=args.coefficient,
        )
    if args.command == "report":
        return RunConfig(command="report", report=Path(args.report))
    raise ValueError(f"unknown command {args.command!r}")


_COMMANDS = {
    "fixture": cmd_fixture,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        cfg = _run_config(args)
        return _COMMANDS[cfg.command](cfg)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
