"""Joint pruning and fixed-point quantization for small networks, with an exact integer deploy path."""

from .config import (
    CompressionConfig,
    config_from_dict,
    config_hash,
    default_config,
    dump_config,
    load_config,
    load_preset,
    merge_layer_overrides,
    preset_names,
    update_config,
)
from .data import Dataset, load_data, load_hlf_csv, synth_dataset
from .deploy import DeployedModel, export_bundle, finalize_model, import_bundle, int_infer
from .errors import (
    BundleError,
    ConfigError,
    DataError,
    DeployError,
    PQForgeError,
    SearchError,
    ShapeError,
    StateError,
    UnsupportedArchitectureError,
)
from .fitcompress import apply_fitcompress, fitcompress_search
from .hpo import Study, Trial, pareto_front, run_study, sample_trial
from .model import (
    ModelGraph,
    PlainModel,
    hlf_mlp,
    hlf_mlp_description,
    load_checkpoint,
    replace_layers,
    save_checkpoint,
    template_layer_config,
)
from .report import metrics_report
from .tracking import RunTracker, log_run, read_jsonl
from .training import RunRecord, evaluate, train_model

__version__ = "0.1.0"

__all__ = [
    "BundleError", "CompressionConfig", "ConfigError", "DataError", "Dataset", "DeployError", "DeployedModel",
    "ModelGraph", "PQForgeError", "PlainModel", "RunRecord", "RunTracker", "SearchError", "ShapeError",
    "StateError", "Study", "Trial", "UnsupportedArchitectureError", "apply_fitcompress", "config_from_dict",
    "config_hash", "default_config", "dump_config", "evaluate", "export_bundle", "finalize_model",
    "fitcompress_search", "hlf_mlp", "hlf_mlp_description", "import_bundle", "int_infer", "load_checkpoint",
    "load_config", "load_data", "load_hlf_csv", "load_preset", "log_run", "merge_layer_overrides",
    "metrics_report", "pareto_front", "preset_names", "read_jsonl", "replace_layers", "run_study",
    "sample_trial", "save_checkpoint", "synth_dataset", "template_layer_config", "train_model",
    "update_config",
]
