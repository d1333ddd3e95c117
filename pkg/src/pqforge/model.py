"""Sequential model container, plain-model descriptions and automatic layer replacement."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import yaml

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .config import CompressionConfig, config_to_dict, merge_layer_overrides
from .errors import ConfigError, ShapeError, UnsupportedArchitectureError
from .layers import (
    Flatten,
    Identity,
    Layer,
    PQActivation,
    PQAvgPool2d,
    PQBatchNorm,
    PQConv2d,
    PQDense,
    kaiming_uniform,
)
from .pruning import make_pruner
from .pruning.base import FixedMask
from .quantization.quantizer import HGQQuantizer

PASS_THROUGH_KINDS = ("dropout", "identity")
SUPPORTED_KINDS = ("dense", "conv2d", "activation", "batchnorm", "avgpool2d", "flatten") + PASS_THROUGH_KINDS
BRANCH_KINDS = ("add", "concat", "concatenate", "multiply", "residual", "split")


class ModelGraph:
    """An ordered list of layers applied one after the other."""

    def __init__(self, layers: list[Layer], input_shape, name: str = "model",
                 hgq_beta: float = 0.0, hgq_gamma: float = 0.0):
        self.layers = list(layers)
        self.name = name
        self.input_shape = tuple(int(d) for d in input_shape)
        self.hgq_beta = float(hgq_beta)
        self.hgq_gamma = float(hgq_gamma)
        self.training = True
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape)
        self.output_shape = shape
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"layer names must be unique, got {names}")
        seen = set()
        for p in self.parameters():
            if p.name in seen:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            seen.add(p.name)

    # structure ------------------------------------------------------------------------
    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def weight_layers(self) -> list:
        return [layer for layer in self.layers if layer.has_weights]

    def pruners(self) -> list:
        return [layer.pruner for layer in self.weight_layers() if layer.pruner is not None]

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    # execution ------------------------------------------------------------------------
    def forward(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.name}: expects inputs of shape (B, {', '.join(map(str, self.input_shape))}), "
                             f"got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def predict(self, X: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Logits in eval mode, without recording gradients."""
        was = self.training
        self.eval()
        dtype = self.parameters()[0].dtype if self.parameters() else ad.get_default_dtype()
        try:
            outs = []
            for start in range(0, len(X), batch_size):
                xb = ad.Tensor(np.asarray(X[start:start + batch_size], dtype=dtype))
                outs.append(self.forward(xb).data)
            return np.concatenate(outs) if outs else np.zeros((0,) + tuple(self.output_shape))
        finally:
            self.train(was)

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # compression hooks ----------------------------------------------------------------
    def set_pruning_active(self, flag: bool):
        for p in self.pruners():
            p.active = flag

    def set_quantization_enabled(self, flag: bool):
        for layer in self.layers:
            layer.set_quantization_enabled(flag)

    def compression_loss(self) -> Tensor | None:
        terms = [p.regularization() for p in self.pruners()]
        if self.uses_hgq() and (self.hgq_beta or self.hgq_gamma):
            terms.append(hgq_loss_terms(self, self.hgq_beta, self.hgq_gamma))
        return ad.concat_sum(terms)

    def uses_hgq(self) -> bool:
        return any(isinstance(q, HGQQuantizer) for layer in self.layers for q in layer.quantizers())

    def post_step(self):
        for p in self.pruners():
            p.post_step()

    def on_round_start(self, round_index: int):
        for p in self.pruners():
            p.on_round_start(round_index)

    def on_epoch_start(self, epoch: int, stage_epochs: int):
        for p in self.pruners():
            p.on_epoch_start(epoch, stage_epochs)

    def on_epoch_end(self, epoch: int, stage_epochs: int):
        for p in self.pruners():
            p.on_epoch_end(epoch, stage_epochs)

    def finalize_masks(self):
        for p in self.pruners():
            p.finalize()

    def mask_hashes(self) -> dict:
        return {layer.name: layer.pruner.state.mask_hash()
                for layer in self.weight_layers() if layer.pruner is not None}

    # metrics --------------------------------------------------------------------------
    def layer_ebops(self) -> dict:
        return {layer.name: layer.ebops() for layer in self.weight_layers()}

    def ebops(self) -> float:
        return float(sum(self.layer_ebops().values()))

    def layer_sparsity(self) -> dict:
        return {layer.name: layer.sparsity() for layer in self.weight_layers()}

    def sparsity(self) -> float:
        layers = self.weight_layers()
        total = sum(layer.weight.data.size for layer in layers)
        if not total:
            return 0.0
        zeros = sum(layer.sparsity() * layer.weight.data.size for layer in layers)
        return float(zeros / total)

    # state ----------------------------------------------------------------------------
    def state_dict(self, roles=None) -> dict:
        return {p.name: p.data.copy() for p in self.parameters() if roles is None or p.role in roles}

    def load_state_dict(self, state: dict, strict: bool = True):
        params = self.named_parameters()
        missing = [k for k in params if k not in state]
        if strict and missing:
            raise ConfigError(f"state dict is missing {missing}")
        for name, value in state.items():
            if name not in params:
                if strict:
                    raise ConfigError(f"unexpected parameter {name!r} in state dict")
                continue
            p = params[name]
            value = np.asarray(value, dtype=p.dtype)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def describe(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "layers": [layer.describe() for layer in self.layers]}


def hgq_loss_terms(model: ModelGraph, beta: float, gamma: float) -> Tensor:
    """``beta * EBOPs_cont + gamma * sum(relu(b_cont))`` over every HGQ layer."""
    total = ad.Tensor(np.zeros((), dtype=ad.get_default_dtype()))
    for layer in model.weight_layers():
        ebops, bits = layer.hgq_terms()
        if ebops is None:
            continue
        if beta:
            total = total + ebops * float(beta)
        if gamma:
            total = total + bits * float(gamma)
    return total


# plain descriptions -----------------------------------------------------------------------

def hlf_mlp_description(features: int = 16, hidden=(64, 32, 32), classes: int = 5) -> dict:
    """The jet-tagging MLP: dense layers with ReLU between them."""
    layers = []
    width = features
    for idx, h in enumerate(hidden, start=1):
        layers.append({"kind": "dense", "name": f"dense{idx}", "in_features": width, "out_features": h})
        layers.append({"kind": "activation", "name": f"relu{idx}", "activation": "relu"})
        width = h
    layers.append({"kind": "dense", "name": f"dense{len(hidden) + 1}", "in_features": width, "out_features": classes})
    return {"name": "hlf_mlp", "input_shape": [features], "layers": layers}


def load_description(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model description: {exc}", path=str(path)) from None
    validate_description(data)
    return data


def validate_description(desc: dict):
    if not isinstance(desc, dict) or "layers" not in desc or "input_shape" not in desc:
        raise ConfigError("model description needs 'input_shape' and 'layers'")
    names = set()
    previous = None
    for idx, spec in enumerate(desc["layers"]):
        kind = spec.get("kind")
        name = spec.get("name", f"layer{idx}")
        inputs = spec.get("inputs") or []
        if isinstance(inputs, str):
            inputs = [inputs]
        if kind in BRANCH_KINDS or len(inputs) > 1 or (inputs and inputs[0] != previous):
            raise UnsupportedArchitectureError(
                f"layer {name!r}: only sequential models are supported (found {kind!r} with explicit inputs)")
        if kind not in SUPPORTED_KINDS:
            raise UnsupportedArchitectureError(f"layer {name!r}: unsupported layer kind {kind!r}")
        if name in names:
            raise ConfigError(f"duplicate layer name {name!r}")
        names.add(name)
        previous = name


class PlainModel:
    """Uncompressed float model built directly from a description (numpy only).

    Serves as the source of weights for :func:`replace_layers` and as the
    reference it is compared against.
    """

    def __init__(self, description: dict, seed: int = 0, dtype=np.float64):
        validate_description(description)
        self.description = copy.deepcopy(description)
        self.dtype = dtype
        self.weights: dict[str, np.ndarray] = {}
        for idx, spec in enumerate(self.description["layers"]):
            name = spec.setdefault("name", f"layer{idx}")
            kind = spec["kind"]
            if kind == "dense":
                i, o = spec["in_features"], spec["out_features"]
                self.weights[f"{name}.weight"] = kaiming_uniform((i, o), i, seed, f"{name}.weight", dtype)
                if spec.get("bias", True):
                    self.weights[f"{name}.bias"] = np.zeros(o, dtype=dtype)
            elif kind == "conv2d":
                c, o, k = spec["in_channels"], spec["out_channels"], spec["kernel_size"]
                self.weights[f"{name}.weight"] = kaiming_uniform((o, c, k, k), c * k * k, seed, f"{name}.weight", dtype)
                if spec.get("bias", True):
                    self.weights[f"{name}.bias"] = np.zeros(o, dtype=dtype)
            elif kind == "batchnorm":
                f = spec["features"]
                self.weights[f"{name}.gamma"] = np.ones(f, dtype=dtype)
                self.weights[f"{name}.beta"] = np.zeros(f, dtype=dtype)
            for key in ("weight", "bias", "gamma", "beta"):
                if key in spec and spec[key] is not None and not isinstance(spec[key], bool):
                    self.weights[f"{name}.{key}"] = np.asarray(spec[key], dtype=dtype)

    def forward(self, X: np.ndarray) -> np.ndarray:
        x = np.asarray(X, dtype=self.dtype)
        for spec in self.description["layers"]:
            name, kind = spec["name"], spec["kind"]
            if kind == "dense":
                x = x @ self.weights[f"{name}.weight"]
                if f"{name}.bias" in self.weights:
                    x = x + self.weights[f"{name}.bias"]
            elif kind == "conv2d":
                W = self.weights[f"{name}.weight"]
                b = self.weights.get(f"{name}.bias")
                x = nn.conv2d_forward(ad.Tensor(x), ad.Tensor(W), None if b is None else ad.Tensor(b),
                                      spec.get("stride", 1), spec.get("padding", 0)).data
            elif kind == "activation":
                x = nn.activation_forward(ad.Tensor(x), spec.get("activation", "relu")).data
            elif kind == "batchnorm":
                g, b = self.weights[f"{name}.gamma"], self.weights[f"{name}.beta"]
                view = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
                x = x / np.sqrt(1.0 + nn.BATCHNORM_EPS) * g.reshape(view) + b.reshape(view)
            elif kind == "avgpool2d":
                x = nn.avg_pool2d_forward(ad.Tensor(x), spec.get("kernel_size", 2)).data
            elif kind == "flatten":
                x = x.reshape(x.shape[0], -1)
        return x


def _pruning_context(config: CompressionConfig | None) -> dict:
    if config is None:
        return {}
    return {"learning_rate": config.training.learning_rate}


def _make_layer(spec: dict, config: CompressionConfig | None, seed: int, dtype):
    kind, name = spec["kind"], spec["name"]
    settings = merge_layer_overrides(config, name) if config is not None else None
    pruning_first = config.training.pruning_first if config is not None else True
    if kind in ("dense", "conv2d"):
        pruner = None
        if settings is not None and settings.prune:
            pruner = make_pruner(config.pruning)
        ctx = _pruning_context(config)
        if kind == "dense":
            return PQDense(spec["in_features"], spec["out_features"], name, settings, pruner,
                           bias=spec.get("bias", True) is not False, seed=seed, pruning_first=pruning_first,
                           context=ctx, dtype=dtype)
        return PQConv2d(spec["in_channels"], spec["out_channels"], spec["kernel_size"], name, settings, pruner,
                        stride=spec.get("stride", 1), padding=spec.get("padding", 0),
                        bias=spec.get("bias", True) is not False, seed=seed, pruning_first=pruning_first,
                        context=ctx, dtype=dtype)
    if kind == "activation":
        return PQActivation(spec.get("activation", "relu"), name, settings, dtype=dtype)
    if kind == "batchnorm":
        return PQBatchNorm(spec["features"], name, settings, dtype=dtype)
    if kind == "avgpool2d":
        return PQAvgPool2d(spec.get("kernel_size", 2), name, settings)
    if kind == "flatten":
        return Flatten(name)
    return Identity(name, kind)


def replace_layers(source, config: CompressionConfig | None = None, seed: int | None = None,
                   dtype=None) -> ModelGraph:
    """Build the compressed counterpart of a plain model.

    ``source`` is a :class:`PlainModel` (its weights are copied verbatim) or a
    description dict (fresh initialisation).  ``config=None`` builds layers
    with every form of compression off.
    """
    dtype = dtype or ad.get_default_dtype()
    if isinstance(source, PlainModel):
        desc, weights = source.description, source.weights
    else:
        validate_description(source)
        desc, weights = copy.deepcopy(source), None
    if seed is None:
        seed = config.training.seed if config is not None else 0
    layers = []
    for idx, spec in enumerate(desc["layers"]):
        spec = dict(spec)
        spec.setdefault("name", f"layer{idx}")
        layers.append(_make_layer(spec, config, seed, dtype))
    if config is not None:
        known = {spec.get("name") for spec in desc["layers"]}
        unknown = sorted(set(config.quantization.layer_specific) - known)
        if unknown:
            raise ConfigError(f"quantization.layer_specific names unknown layers {unknown}")
    q = config.quantization if config is not None else None
    model = ModelGraph(layers, desc["input_shape"], desc.get("name", "model"),
                       hgq_beta=q.hgq_beta if q else 0.0, hgq_gamma=q.hgq_gamma if q else 0.0)
    if weights is not None:
        model.load_state_dict({k: v for k, v in weights.items() if k in model.named_parameters()}, strict=False)
    return model


def hlf_mlp(config: CompressionConfig | None = None, seed: int | None = None, dtype=None) -> ModelGraph:
    return replace_layers(hlf_mlp_description(), config, seed=seed, dtype=dtype)


def template_layer_config(model: ModelGraph, config: CompressionConfig | None = None) -> str:
    """YAML listing every weight layer under the pruning-disable and per-layer quantization fields."""
    from .config import CompressionConfig as _C

    base = config_to_dict(config if config is not None else _C())
    names = [layer.name for layer in model.weight_layers()]
    base["pruning"]["disable_pruning_for_layers"] = list(names)
    q = base["quantization"]
    entries = {}
    for name in names:
        entries[name] = {
            "weight": {"keep_negatives": q["default_weight_keep_negatives"],
                       "integer_bits": q["default_weight_integer_bits"],
                       "fractional_bits": q["default_weight_fractional_bits"]},
            "input": {"keep_negatives": q["default_data_keep_negatives"],
                      "integer_bits": q["default_data_integer_bits"],
                      "fractional_bits": q["default_data_fractional_bits"]},
        }
    q["layer_specific"] = entries
    return yaml.safe_dump(base, sort_keys=False)


def apply_fixed_masks(model: ModelGraph, masks: dict):
    """Attach externally chosen masks (e.g. from a compression search) to weight layers."""
    for layer in model.weight_layers():
        if layer.name not in masks:
            continue
        pruner = FixedMask(masks[layer.name])
        pruner.build(layer.weight, layer.out_axis, layer.name)
        layer.pruner = pruner


def save_checkpoint(model: ModelGraph, path):
    """Parameters, hard masks, widths and running statistics in one ``.npz``."""
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    for layer in model.layers:
        if layer.has_weights:
            p = layer.pruner
            if p is not None and p.state.hard_mask is not None:
                arrays[f"mask/{layer.name}"] = p.state.hard_mask
                arrays[f"frozen/{layer.name}"] = np.asarray(p.state.frozen)
            wq = layer.weight_quantizer
            if wq is not None and not isinstance(wq, HGQQuantizer):
                arrays[f"wbits/{layer.name}"] = np.asarray(wq.total_bits)
        for idx, q in enumerate(layer.quantizers()):
            if isinstance(q, HGQQuantizer) and q.running_max is not None:
                arrays[f"range/{layer.name}/{idx}"] = q.running_max
        if isinstance(layer, PQBatchNorm):
            arrays[f"bn_mean/{layer.name}"] = layer.running_mean
            arrays[f"bn_var/{layer.name}"] = layer.running_var
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.savez(handle, **arrays)
    return path


def load_checkpoint(model: ModelGraph, path) -> ModelGraph:
    try:
        data = np.load(Path(path))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}", path=str(path)) from None
    with data:
        params = {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith("param/")}
        model.load_state_dict(params, strict=False)
        for layer in model.layers:
            if layer.has_weights:
                key = f"wbits/{layer.name}"
                if key in data.files and layer.weight_quantizer is not None:
                    layer.weight_quantizer.set_total_bits(int(data[key]))
                key = f"mask/{layer.name}"
                if key in data.files:
                    mask = data[key]
                    if layer.pruner is None:
                        pruner = FixedMask(mask)
                        pruner.build(layer.weight, layer.out_axis, layer.name)
                        layer.pruner = pruner
                    else:
                        layer.pruner._set_hard(mask)
                        key = f"frozen/{layer.name}"
                        if key not in data.files or bool(data[key]):
                            layer.pruner.state.frozen = True
                            for p in layer.pruner.parameters():
                                p.trainable = False
            for idx, q in enumerate(layer.quantizers()):
                key = f"range/{layer.name}/{idx}"
                if isinstance(q, HGQQuantizer) and key in data.files:
                    q.running_max[...] = data[key]
            if isinstance(layer, PQBatchNorm) and f"bn_mean/{layer.name}" in data.files:
                layer.running_mean[...] = data[f"bn_mean/{layer.name}"]
                layer.running_var[...] = data[f"bn_var/{layer.name}"]
    return model
