"""Multi-modal wind power forecasting with a LoRA-adapted miniature language backbone."""

from .backbone import Backbone, BackboneConfig, init_seeded
from .config import ModelConfig, RunConfig, TrainConfig, tiny_config
from .data import GeneratorConfig, WindDataset, generate_dataset, ingest_csv, split
from .errors import ConfigError, ContractError, CorruptionError, DimensionError, M2WError, SchemaError
from .model import ForecastModel, train
from .tensor import Tape, Tensor, no_grad, precision, set_precision

__version__ = "0.1.0"

__all__ = [
    "Backbone", "BackboneConfig", "ConfigError", "ContractError", "CorruptionError",
    "DimensionError", "ForecastModel", "GeneratorConfig", "M2WError", "ModelConfig", "RunConfig",
    "SchemaError", "Tape", "Tensor", "TrainConfig", "WindDataset", "generate_dataset",
    "ingest_csv", "init_seeded", "no_grad", "precision", "set_precision", "split", "tiny_config",
    "train",
]
