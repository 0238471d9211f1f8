"""relgen: relational synthetic data via hierarchical conditional GANs.

Train one conditional generator per table, sample whole databases whose
foreign keys are guaranteed to resolve, and score the result against the
real data with a nine-metric quality suite.
"""

from .dataio import (
    FIXTURE_SHAPES,
    RelationalDataset,
    check_referential_integrity,
    generate_fixture,
    load_dataset,
    write_dataset,
)
from .gan import ModelBundle, TrainingConfig, load_bundle, save_bundle, train
from .metrics import MetricReport, evaluate, render_report
from .sampler import sample_database
from .schema import SchemaMetadata, parse_metadata, serialize_metadata

__version__ = "0.1.0"

__all__ = [
    "FIXTURE_SHAPES",
    "MetricReport",
    "ModelBundle",
    "RelationalDataset",
    "SchemaMetadata",
    "TrainingConfig",
    "check_referential_integrity",
    "evaluate",
    "generate_fixture",
    "load_bundle",
    "load_dataset",
    "parse_metadata",
    "render_report",
    "sample_database",
    "save_bundle",
    "serialize_metadata",
    "train",
    "write_dataset",
    "__version__",
]
