"""Temporal-shift-robust twin-tower recommenders trained span by span."""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .augment import AugmentConfig, make_views  # noqa: E402
from .dataset import FeatureSchema, Manifest, MemoryManifest, SpanDataset, default_schema, read_manifest  # noqa: E402
from .generator import GeneratorConfig, generate_dataset, iter_spans  # noqa: E402
from .losses import LossWeights, prior_loss  # noqa: E402
from .metrics import auc, coefficient_of_variation, collapse_probe, gauc, jsd  # noqa: E402
from .model import TowerConfig, TwinTower  # noqa: E402
from .trainer import METHODS, RunLog, TrainConfig, Trainer, train_incremental  # noqa: E402

__all__ = [
    "BACKEND", "AugmentConfig", "make_views", "FeatureSchema", "Manifest", "MemoryManifest", "SpanDataset",
    "default_schema", "read_manifest", "GeneratorConfig", "generate_dataset", "iter_spans", "LossWeights",
    "prior_loss", "auc", "coefficient_of_variation", "collapse_probe", "gauc", "jsd", "TowerConfig",
    "TwinTower", "METHODS", "RunLog", "TrainConfig", "Trainer", "train_incremental",
]
