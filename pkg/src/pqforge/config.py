"""The single validated configuration object and its YAML round trip.

Every block is a closed schema: unknown keys are errors, and errors name the
dotted key path (``quantization.round_mode``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .quantization.fixed import FixedPointSpec, OverflowMode, RoundMode, parse_round_mode

PRUNING_METHODS = ("activation", "autosparse", "cs", "dst", "mdmm", "pdp", "wanda")
REWIND_POLICIES = ("never", "every_round", "post_training_stage")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# quantization -----------------------------------------------------------------------------

class BitOverride(_Strict):
    keep_negatives: Optional[Literal[0, 1]] = None
    integer_bits: Optional[int] = None
    fractional_bits: Optional[int] = None


class LayerQuantOverride(_Strict):
    enable_quantization: Optional[bool] = None
    quantize_input: Optional[bool] = None
    quantize_output: Optional[bool] = None
    granularity: Optional[Literal["per_tensor", "per_channel", "per_weight"]] = None
    weight: Optional[BitOverride] = None
    bias: Optional[BitOverride] = None
    input: Optional[BitOverride] = None
    output: Optional[BitOverride] = None


class QuantizationConfig(_Strict):
    default_data_keep_negatives: Literal[0, 1] = 1
    default_data_integer_bits: int = 3
    default_data_fractional_bits: int = Field(4, ge=0)
    default_weight_keep_negatives: Literal[0, 1] = 1
    default_weight_integer_bits: int = 0
    default_weight_fractional_bits: int = Field(7, ge=0)
    granularity: Literal["per_tensor", "per_channel", "per_weight"] = "per_tensor"
    quantize_input: bool = True
    quantize_output: bool = False
    enable_quantization: bool = True
    hgq_beta: float = Field(1e-5, ge=0)
    hgq_gamma: float = Field(2e-4, ge=0)
    layer_specific: dict[str, LayerQuantOverride] = Field(default_factory=dict)
    use_high_granularity_quantization: bool = False
    use_real_tanh: bool = False
    overflow_mode_data: OverflowMode = OverflowMode.SAT
    overflow_mode_parameters: OverflowMode = OverflowMode.SAT
    round_mode: RoundMode = RoundMode.RND
    use_relu_multiplier: bool = False

    @field_validator("round_mode", mode="before")
    @classmethod
    def _alias_round_mode(cls, value):
        if isinstance(value, str):
            return parse_round_mode(value).value
        return value

    @model_validator(mode="after")
    def _widths(self):
        for kind in ("data", "weight"):
            k = getattr(self, f"default_{kind}_keep_negatives")
            i = getattr(self, f"default_{kind}_integer_bits")
            f = getattr(self, f"default_{kind}_fractional_bits")
            if k + i + f < 1:
                raise ValueError(f"default {kind} width k+i+f must be >= 1, got {k + i + f}")
        return self


# pruning ----------------------------------------------------------------------------------

class _PruningBase(_Strict):
    enable_pruning: bool = True
    disable_pruning_for_layers: list[str] = Field(default_factory=list)


class ActivationPruningConfig(_PruningBase):
    pruning_method: Literal["activation"] = "activation"
    threshold: float = Field(0.1, ge=0, le=1)
    t_delta: int = Field(100, ge=1)
    granularity: Literal["structured"] = "structured"


class AutoSparseConfig(_PruningBase):
    pruning_method: Literal["autosparse"] = "autosparse"
    alpha: float = Field(0.75, ge=0, le=1)
    alpha_decay: float = Field(0.8, ge=0, le=1)
    threshold_init: float = -5.0
    threshold_decay: float = Field(0.0, ge=0)
    granularity: Literal["unstructured"] = "unstructured"


class CSConfig(_PruningBase):
    pruning_method: Literal["cs"] = "cs"
    s_init: float = 0.5
    final_temp: float = Field(200.0, ge=1)
    threshold_decay: float = Field(1e-4, ge=0)
    granularity: Literal["unstructured"] = "unstructured"


class DSTConfig(_PruningBase):
    pruning_method: Literal["dst"] = "dst"
    alpha: float = Field(1e-4, ge=0)
    max_pruning_pct: float = Field(0.99, gt=0, le=1)
    threshold_init: float = Field(0.0, ge=0)
    granularity: Literal["unstructured"] = "unstructured"


class MDMMConfig(_PruningBase):
    pruning_method: Literal["mdmm"] = "mdmm"
    target_sparsity: float = Field(0.8, ge=0, lt=1)
    damping: float = Field(1.0, ge=0)
    epsilon: float = Field(1e-2, gt=0)
    lr_lambda_scale: float = Field(10.0, gt=0)
    granularity: Literal["unstructured", "structured"] = "unstructured"


class PDPConfig(_PruningBase):
    pruning_method: Literal["pdp"] = "pdp"
    sparsity: float = Field(0.8, ge=0, lt=1)
    temperature: float = Field(1e-2, gt=0)
    granularity: Literal["unstructured", "structured"] = "unstructured"


class WandaConfig(_PruningBase):
    pruning_method: Literal["wanda"] = "wanda"
    sparsity: float = Field(0.5, ge=0, lt=1)
    N: Optional[int] = Field(None, ge=1)
    M: Optional[int] = Field(None, ge=1)
    use_layer_budgets: bool = False
    calibration_batches: int = Field(8, ge=1)
    granularity: Optional[Literal["unstructured", "n_m"]] = None

    @model_validator(mode="after")
    def _n_m(self):
        if (self.N is None) != (self.M is None):
            raise ValueError("N and M must be given together")
        if self.N is not None:
            if self.N > self.M:
                raise ValueError(f"N must be <= M, got N={self.N}, M={self.M}")
            if self.granularity == "unstructured":
                raise ValueError("N:M values given with unstructured granularity")
            if self.use_layer_budgets:
                raise ValueError("use_layer_budgets cannot be combined with N:M pruning")
        elif self.granularity == "n_m":
            raise ValueError("n_m granularity needs N and M")
        return self


PruningConfig = Annotated[
    Union[ActivationPruningConfig, AutoSparseConfig, CSConfig, DSTConfig, MDMMConfig, PDPConfig, WandaConfig],
    Field(discriminator="pruning_method"),
]

_PRUNING_CLASSES = {
    "activation": ActivationPruningConfig, "autosparse": AutoSparseConfig, "cs": CSConfig,
    "dst": DSTConfig, "mdmm": MDMMConfig, "pdp": PDPConfig, "wanda": WandaConfig,
}

# keys of the pruning block that configure the method itself
PRUNING_COMMON_KEYS = ("enable_pruning", "disable_pruning_for_layers", "calibration_batches")


def _default_pruning():
    return DSTConfig(enable_pruning=False)


# training ---------------------------------------------------------------------------------

class TrainingConfig(_Strict):
    pretraining_epochs: int = Field(0, ge=0)
    epochs: int = Field(10, ge=0)
    fine_tuning_epochs: int = Field(0, ge=0)
    rounds: int = Field(1, ge=1)
    rewind: Literal["never", "every_round", "post_training_stage"] = "never"
    save_weights_epoch: int = Field(0, ge=0)
    pruning_first: bool = True
    optional_fine_tuning: bool = False
    batch_size: int = Field(1024, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    seed: int = 0

    @field_validator("rewind", mode="before")
    @classmethod
    def _hyphens(cls, value):
        return value.replace("-", "_") if isinstance(value, str) else value

    @model_validator(mode="after")
    def _snapshot_epoch(self):
        if self.rewind != "never" and self.epochs and self.save_weights_epoch >= self.epochs:
            raise ValueError(f"save_weights_epoch ({self.save_weights_epoch}) must be < epochs ({self.epochs})")
        return self


class FITCompressConfig(_Strict):
    enabled: bool = False
    compression_goal: float = Field(0.0075, gt=0, le=1)
    bit_floor: int = Field(2, ge=1)
    sparsity_step: float = Field(0.05, gt=0, lt=1)
    max_sparsity: float = Field(0.99, gt=0, lt=1)
    base_bits: int = Field(32, ge=1)
    calibration_batches: int = Field(16, ge=1)
    pretraining_weight_decay: float = Field(0.0, ge=0)


# hpo --------------------------------------------------------------------------------------

class UniformDim(_Strict):
    type: Literal["uniform"] = "uniform"
    low: float
    high: float

    @model_validator(mode="after")
    def _order(self):
        if not self.low < self.high:
            raise ValueError(f"low must be < high, got {self.low} >= {self.high}")
        return self


class LogUniformDim(UniformDim):
    type: Literal["log_uniform"] = "log_uniform"

    @model_validator(mode="after")
    def _positive(self):
        if self.low <= 0:
            raise ValueError(f"log_uniform needs low > 0, got {self.low}")
        return self


class IntStepDim(_Strict):
    type: Literal["int_step"] = "int_step"
    low: int
    high: int
    step: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if not self.low < self.high:
            raise ValueError(f"low must be < high, got {self.low} >= {self.high}")
        return self


class CategoricalDim(_Strict):
    type: Literal["categorical"] = "categorical"
    choices: list[Any] = Field(min_length=1)


Dimension = Annotated[Union[UniformDim, LogUniformDim, IntStepDim, CategoricalDim], Field(discriminator="type")]


class HPOConfig(_Strict):
    sampler: Literal["random", "tpe_lite"] = "tpe_lite"
    n_trials: int = Field(10, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)
    objectives: list[str] = Field(default_factory=lambda: ["accuracy"], min_length=1)
    directions: list[Literal["maximize", "minimize"]] = Field(default_factory=lambda: ["maximize"], min_length=1)
    search_space: dict[str, Dimension] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.objectives) != len(self.directions):
            raise ValueError(f"{len(self.objectives)} objectives but {len(self.directions)} directions")
        return self


# top level --------------------------------------------------------------------------------

class CompressionConfig(_Strict):
    quantization: QuantizationConfig = Field(default_factory=QuantizationConfig)
    pruning: PruningConfig = Field(default_factory=_default_pruning)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    fitcompress: FITCompressConfig = Field(default_factory=FITCompressConfig)
    hpo: HPOConfig = Field(default_factory=HPOConfig)

    @model_validator(mode="after")
    def _stage_rules(self):
        check_stage_rules(self)
        return self

    @property
    def pruning_method(self) -> str | None:
        return self.pruning.pruning_method if self.pruning.enable_pruning else None


class _StageRuleError(ValueError):
    pass


def check_stage_rules(config: "CompressionConfig"):
    """Which stages each pruning method may use.

    Pre-training only for methods that need a trained model before pruning
    starts (pdp, wanda), or when FITCompress runs, or when pruning is off.
    Fine-tuning for soft-mask and constraint methods (cs, mdmm, pdp); dst and
    activation pruning may fine-tune their fixed masks only when
    ``optional_fine_tuning`` is set.
    """
    from .pruning import ALLOWS_FINE_TUNING, ALLOWS_PRETRAINING, NEEDS_PRETRAINING, OPTIONAL_FINE_TUNING

    t = config.training
    method = config.pruning_method
    fit = config.fitcompress.enabled
    if method is None:
        return
    if method in NEEDS_PRETRAINING and t.pretraining_epochs < 1:
        raise _StageRuleError(f"training.pretraining_epochs: {method} needs at least one pre-training epoch")
    if t.pretraining_epochs > 0 and method not in ALLOWS_PRETRAINING and not fit:
        raise _StageRuleError(f"training.pretraining_epochs: {method} does not use a pre-training stage")
    if t.fine_tuning_epochs > 0 and method not in ALLOWS_FINE_TUNING:
        if not (method in OPTIONAL_FINE_TUNING and t.optional_fine_tuning):
            hint = " (set training.optional_fine_tuning to fine-tune its fixed mask)" \
                if method in OPTIONAL_FINE_TUNING else ""
            raise _StageRuleError(f"training.fine_tuning_epochs: {method} does not use a fine-tuning stage{hint}")


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = list(e["loc"])
        # drop discriminator tags pydantic inserts into union paths
        if len(loc) >= 2 and loc[0] == "pruning" and loc[1] in PRUNING_METHODS:
            del loc[1]
        if len(loc) >= 4 and loc[0] == "hpo" and loc[1] == "search_space" and loc[3] in (
                "uniform", "log_uniform", "int_step", "categorical"):
            del loc[3]
        path = ".".join(str(p) for p in loc)
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        if not path and ": " in msg and msg.split(": ", 1)[0].count(".") >= 1:
            path, msg = msg.split(": ", 1)
        lines.append(f"{path}: {msg}" if path else msg)
    return "; ".join(lines)


def _first_path(err: ValidationError) -> str | None:
    text = _format_errors(err)
    head = text.split(": ", 1)[0]
    return head if head != text else None


def config_from_dict(data: dict | None) -> CompressionConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a mapping at the top level, got {type(data).__name__}")
    try:
        return CompressionConfig.model_validate(data)
    except ValidationError as err:
        exc = ConfigError(_format_errors(err))  # message already leads with the key path
        exc.path = _first_path(err)
        raise exc from None


def load_config(path) -> CompressionConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", path=str(path)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", path=str(path)) from None
    return config_from_dict(data)


def config_to_dict(config: CompressionConfig) -> dict:
    return config.model_dump(mode="json")


def dump_config(config: CompressionConfig, path=None) -> str:
    text = yaml.safe_dump(config_to_dict(config), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


_STAGE_DEFAULTS = {
    # pretraining / epochs / fine-tuning, rounds, rewind
    "activation": (0, 100, 0, 1, "never"),
    "autosparse": (0, 100, 0, 1, "never"),
    "cs": (0, 50, 20, 2, "post_training_stage"),
    "dst": (0, 100, 0, 1, "never"),
    "mdmm": (0, 100, 20, 1, "never"),
    "pdp": (20, 100, 20, 1, "never"),
    "wanda": (20, 100, 0, 1, "never"),
}


def default_config(method: str | None = None) -> CompressionConfig:
    """Config with method-appropriate stages and hyperparameters.

    ``None`` (or ``"none"``) gives a quantization-only config.
    """
    if method in (None, "none"):
        return CompressionConfig()
    if method not in _PRUNING_CLASSES:
        raise ConfigError(f"unknown pruning method {method!r}; expected one of {list(PRUNING_METHODS)}")
    pre, epochs, fine, rounds, rewind = _STAGE_DEFAULTS[method]
    training = TrainingConfig(pretraining_epochs=pre, epochs=epochs, fine_tuning_epochs=fine,
                              rounds=rounds, rewind=rewind)
    return CompressionConfig(pruning=_PRUNING_CLASSES[method](), training=training)


def update_config(config: CompressionConfig, updates: dict) -> CompressionConfig:
    """Return a new validated config with dotted-path ``updates`` applied."""
    data = config_to_dict(config)
    for dotted, value in updates.items():
        node = data
        keys = dotted.split(".")
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"{dotted}: no such config block", path=None)
            node = node[key]
        node[keys[-1]] = value
    return config_from_dict(data)


# per-layer settings -----------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSettings:
    """Effective compression settings for one layer after overrides."""

    name: str
    quantize: bool
    granularity: str
    weight: FixedPointSpec
    bias: FixedPointSpec
    input: FixedPointSpec
    output: FixedPointSpec
    quantize_input: bool
    quantize_output: bool
    hgq: bool
    prune: bool
    use_real_tanh: bool
    use_relu_multiplier: bool


def _spec(base: tuple, override: BitOverride | None, round_mode, overflow_mode) -> FixedPointSpec:
    k, i, f = base
    if override is not None:
        k = override.keep_negatives if override.keep_negatives is not None else k
        i = override.integer_bits if override.integer_bits is not None else i
        f = override.fractional_bits if override.fractional_bits is not None else f
    return FixedPointSpec(k, i, f, round_mode, overflow_mode)


def merge_layer_overrides(config: CompressionConfig, layer_name: str) -> LayerSettings:
    """Per-layer values win over the global defaults, key by key."""
    q = config.quantization
    o = q.layer_specific.get(layer_name) or LayerQuantOverride()
    rm = q.round_mode
    weight_base = (q.default_weight_keep_negatives, q.default_weight_integer_bits, q.default_weight_fractional_bits)
    data_base = (q.default_data_keep_negatives, q.default_data_integer_bits, q.default_data_fractional_bits)
    weight = _spec(weight_base, o.weight, rm, q.overflow_mode_parameters)
    # biases follow the (possibly overridden) weight format unless given their own
    bias = _spec(weight.as_tuple(), o.bias, rm, q.overflow_mode_parameters)
    p = config.pruning
    prune = bool(p.enable_pruning) and layer_name not in p.disable_pruning_for_layers
    return LayerSettings(
        name=layer_name,
        quantize=q.enable_quantization if o.enable_quantization is None else o.enable_quantization,
        granularity=o.granularity or q.granularity,
        weight=weight,
        bias=bias,
        input=_spec(data_base, o.input, rm, q.overflow_mode_data),
        output=_spec(data_base, o.output, rm, q.overflow_mode_data),
        quantize_input=q.quantize_input if o.quantize_input is None else o.quantize_input,
        quantize_output=q.quantize_output if o.quantize_output is None else o.quantize_output,
        hgq=q.use_high_granularity_quantization,
        prune=prune,
        use_real_tanh=q.use_real_tanh,
        use_relu_multiplier=q.use_relu_multiplier,
    )


def config_hash(config: CompressionConfig) -> str:
    import hashlib
    import json

    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# bundled presets --------------------------------------------------------------------------

def preset_names() -> list[str]:
    from importlib.resources import files

    return sorted(p.name[:-5] for p in files("pqforge.presets").iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> CompressionConfig:
    """One of the bundled configs, by file stem (``dst_t``, ``pdp_c``, ...)."""
    from importlib.resources import as_file, files

    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    with as_file(files("pqforge.presets") / f"{name}.yaml") as path:
        return load_config(path)
