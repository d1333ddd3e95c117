"""Compression-aware layers.

Every weight layer runs the same fixed sequence: quantize the input, mask the
weights, quantize the masked weights, apply the linear op, add the (quantized)
bias, quantize the output.  ``pruning_first=False`` swaps the middle two steps
on the weight path.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Parameter, Tensor, make_node, make_rng
from .config import LayerSettings
from .errors import ConfigError, ShapeError
from .pruning.base import PruningMethod, unit_view
from .quantization.ebops import ebops_conv, ebops_conv_tensor, ebops_dense, ebops_dense_tensor
from .quantization.fixed import FixedPointSpec
from .quantization.quantizer import HGQQuantizer, Quantizer

LN2 = float(np.log(2.0))
FLOAT_BITS = 32


def kaiming_uniform(shape, fan_in: int, seed: int, name: str, dtype=None) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    rng = make_rng(seed, name)
    return rng.uniform(-bound, bound, size=shape).astype(dtype or ad.get_default_dtype())


def scale_pow2(x: Tensor, m: Parameter, sign: int) -> Tensor:
    """``x * 2**(sign * round(m))`` with a straight-through gradient for ``m``."""
    x = ad.as_tensor(x)
    shift = sign * int(np.round(float(m.data)))
    out = np.ldexp(x.data, shift).astype(x.data.dtype)

    def _back(g):
        return np.ldexp(g, shift), np.asarray(np.sum(g * out) * LN2 * sign, dtype=m.data.dtype)

    return make_node(out, (x, m), _back)


def _feature_shape(shape) -> tuple:
    """Per-feature shape for data quantizers: last axis for dense, channels for NCHW."""
    if len(shape) == 1:
        return (shape[0],)
    if len(shape) == 3:
        return (shape[0], 1, 1)
    raise ShapeError(f"cannot place a per-feature quantizer on sample shape {shape}")


class Layer:
    kind = "layer"
    has_weights = False

    def __init__(self, name: str):
        self.name = name
        self.training = True
        self.input_shape: tuple | None = None
        self.output_shape: tuple | None = None

    def build(self, input_shape: tuple) -> tuple:
        """Check the per-sample input shape and return the output shape."""
        self.input_shape = tuple(input_shape)
        self.output_shape = self._infer(self.input_shape)
        return self.output_shape

    def _infer(self, shape):
        return shape

    def parameters(self) -> list:
        return []

    def quantizers(self) -> list:
        return []

    def train(self, mode: bool = True):
        self.training = mode
        for q in self.quantizers():
            if isinstance(q, HGQQuantizer):
                q.training = mode

    def set_quantization_enabled(self, flag: bool):
        for q in self.quantizers():
            q.enabled = flag

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(ad.as_tensor(x))

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind}


def _make_data_quantizer(settings: LayerSettings, spec: FixedPointSpec, name: str, shape=None):
    if settings.hgq:
        if shape is None:
            return None
        return HGQQuantizer(shape, spec.k, spec.f, name, kind="data", round_mode=spec.round_mode,
                            overflow_mode=spec.overflow_mode)
    return Quantizer(spec)


class _QuantizedLayer(Layer):
    """Holds the optional input/output quantizers shared by most layers."""

    def __init__(self, name: str, settings: LayerSettings | None):
        super().__init__(name)
        self.settings = settings
        self.input_quantizer = None
        self.output_quantizer = None

    @property
    def quantized(self) -> bool:
        return self.settings is not None and self.settings.quantize

    def _build_data_quantizers(self, in_shape, out_shape, force_output: bool = False):
        s = self.settings
        if not self.quantized:
            return
        if s.quantize_input and self.input_quantizer is None:
            self.input_quantizer = _make_data_quantizer(s, s.input, f"{self.name}.iq", _feature_shape(in_shape))
        if (s.quantize_output or force_output) and self.output_quantizer is None:
            self.output_quantizer = _make_data_quantizer(s, s.output, f"{self.name}.oq", _feature_shape(out_shape))

    def quantizers(self):
        return [q for q in (self.input_quantizer, self.output_quantizer) if q is not None]

    def parameters(self):
        return [p for q in self.quantizers() for p in q.parameters()]

    def _quantize_in(self, x):
        return self.input_quantizer(x) if self.input_quantizer is not None else x

    def _quantize_out(self, y):
        return self.output_quantizer(y) if self.output_quantizer is not None else y


class _WeightLayer(_QuantizedLayer):
    has_weights = True
    out_axis = 1

    def __init__(self, name, settings, pruner: PruningMethod | None, pruning_first: bool, context: dict | None):
        super().__init__(name, settings)
        self.pruner = pruner
        self.pruning_first = pruning_first
        self.context = dict(context or {})
        self.weight_quantizer = None
        self.bias_quantizer = None
        self._last_weight_source = None

    def _setup(self):
        s = self.settings
        if self.pruner is not None:
            self.pruner.build(self.weight, self.out_axis, self.name, self.context)
        if not self.quantized:
            return
        if s.hgq:
            self.weight_quantizer = HGQQuantizer(self.weight.shape, s.weight.k, s.weight.f, f"{self.name}.wq",
                                                 kind="weight", round_mode=s.weight.round_mode,
                                                 overflow_mode=s.weight.overflow_mode)
        else:
            self.weight_quantizer = Quantizer(s.weight, s.granularity, channel_axis=self.out_axis)
        if self.bias is not None:
            self.bias_quantizer = Quantizer(s.bias)

    def quantizers(self):
        extra = [q for q in (self.weight_quantizer, self.bias_quantizer) if q is not None]
        return super().quantizers() + extra

    def parameters(self):
        params = [self.weight] + ([self.bias] if self.bias is not None else [])
        if self.pruner is not None:
            params += self.pruner.parameters()
        return params + super().parameters()

    # weight path --------------------------------------------------------------------
    def _quantize_weight(self, W):
        return self.weight_quantizer(W) if self.weight_quantizer is not None else W

    def _mask_weight(self, W):
        return self.pruner(W) if self.pruner is not None else W

    def effective_weight_tensor(self) -> Tensor:
        if self.pruning_first:
            masked = self._mask_weight(self.weight)
            self._last_weight_source = masked.data
            return self._quantize_weight(masked)
        self._last_weight_source = self.weight.data
        return self._mask_weight(self._quantize_weight(self.weight))

    def effective_weight(self) -> np.ndarray:
        """The weight the forward pass multiplies with, as a plain array."""
        return self.effective_weight_tensor().data

    def weight_format(self):
        """``(k, i, f)`` arrays (broadcastable to the weight) of the last effective weight."""
        q = self.weight_quantizer
        if q is None:
            raise ConfigError(f"{self.name}: weights are not quantized")
        source = self._last_weight_source if self._last_weight_source is not None else self.weight.data
        if isinstance(q, HGQQuantizer):
            k, i, f = q.effective_bits(source)
            return k, i, f
        k, i, f = q.group_bits(source)
        return k, np.asarray(i), np.asarray(f)

    def _bias_tensor(self):
        if self.bias is None:
            return None
        b = self.bias_quantizer(self.bias) if self.bias_quantizer is not None else self.bias
        um = self.bias_unit_mask()
        if um is not None:
            b = b * um.astype(b.dtype)
        return b

    def bias_unit_mask(self):
        p = self.pruner
        if p is None or p.state.granularity != "structured" or p.state.hard_mask is None:
            return None
        return p.unit_mask()

    def effective_bias(self) -> np.ndarray | None:
        b = self._bias_tensor()
        return None if b is None else b.data

    # cost ----------------------------------------------------------------------------
    def mask(self) -> np.ndarray:
        if self.pruner is None:
            return np.ones(self.weight.shape)
        return np.asarray(self.pruner.current_mask(), dtype=np.float64)

    def weight_bits(self) -> np.ndarray:
        if self.weight_quantizer is None or not self.weight_quantizer.enabled:
            return np.full(self.weight.shape, float(FLOAT_BITS))
        source = self.weight.data
        if self.pruning_first and self.pruner is not None:
            source = source * self.mask()
        if isinstance(self.weight_quantizer, HGQQuantizer):
            return self.weight_quantizer.discrete_bits(source)
        return self.weight_quantizer.bits_like(source)

    def input_bits(self) -> np.ndarray:
        fan = self._fan_axis_size()
        q = self.input_quantizer
        if q is not None and q.enabled:
            if isinstance(q, HGQQuantizer):
                return q.discrete_bits().reshape(-1)
            return np.full(fan, float(q.total_bits))
        if self.quantized:
            return np.full(fan, float(self.settings.input.bits))
        return np.full(fan, float(FLOAT_BITS))

    def sparsity(self) -> float:
        m = self.mask()
        return float(np.count_nonzero(m == 0) / m.size)

    def hgq_terms(self):
        """Continuous EBOPs and the summed continuous bit-widths of this layer."""
        wq = self.weight_quantizer
        if not isinstance(wq, HGQQuantizer) or not wq.enabled:
            return None, None
        source = self.weight.data
        bw = wq.continuous_bits(source)
        iq = self.input_quantizer
        bx = iq.continuous_bits() if isinstance(iq, HGQQuantizer) and iq.enabled else self.input_bits()
        ebops = self._ebops_tensor(self.mask(), bw, bx)
        bits = ad.sum_(bw)
        for q in self.quantizers():
            if isinstance(q, HGQQuantizer) and q is not wq and q.enabled:
                bits = bits + ad.sum_(q.continuous_bits())
        return ebops, bits


class PQDense(_WeightLayer):
    kind = "dense"
    out_axis = 1

    def __init__(self, in_features: int, out_features: int, name: str = "dense",
                 settings: LayerSettings | None = None, pruner: PruningMethod | None = None, bias: bool = True,
                 seed: int = 0, pruning_first: bool = True, context: dict | None = None, dtype=None):
        super().__init__(name, settings, pruner, pruning_first, context)
        self.in_features, self.out_features = int(in_features), int(out_features)
        self.weight = Parameter(kaiming_uniform((in_features, out_features), in_features, seed, f"{name}.weight", dtype),
                                name=f"{name}.weight", role="weight")
        self.bias = Parameter(np.zeros(out_features, dtype=self.weight.dtype), name=f"{name}.bias",
                              role="bias") if bias else None
        self._setup()
        self._build_data_quantizers((in_features,), (out_features,))

    def _infer(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"{self.name}: expects inputs of shape ({self.in_features},), got {shape}")
        return (self.out_features,)

    def _fan_axis_size(self):
        return self.in_features

    def _ebops_tensor(self, mask, bw, bx):
        return ebops_dense_tensor(mask, bw, bx)

    def ebops(self) -> float:
        return ebops_dense(self.mask(), self.weight_bits(), self.input_bits())

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: input {x.shape} incompatible with weight {self.weight.shape}")
        x = self._quantize_in(x)
        if self.pruner is not None:
            self.pruner.observe_input(x.data)
        W = self.effective_weight_tensor()
        y = nn.dense_forward(x, W, self._bias_tensor())
        if self.pruner is not None:
            self.pruner.observe_output(y.data)
        return self._quantize_out(y)

    def describe(self):
        return {**super().describe(), "in_features": self.in_features, "out_features": self.out_features}


class PQConv2d(_WeightLayer):
    kind = "conv2d"
    out_axis = 0

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, name: str = "conv",
                 settings: LayerSettings | None = None, pruner: PruningMethod | None = None, stride: int = 1,
                 padding: int = 0, bias: bool = True, seed: int = 0, pruning_first: bool = True,
                 context: dict | None = None, dtype=None):
        super().__init__(name, settings, pruner, pruning_first, context)
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.kernel_size, self.stride, self.padding = int(kernel_size), int(stride), int(padding)
        if self.stride < 1 or self.padding < 0 or self.kernel_size < 1:
            raise ConfigError(f"{name}: invalid conv geometry k={kernel_size}, s={stride}, p={padding}")
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(shape, fan_in, seed, f"{name}.weight", dtype),
                                name=f"{name}.weight", role="weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=self.weight.dtype), name=f"{name}.bias",
                              role="bias") if bias else None
        self._out_positions = 1
        self._setup()

    def build(self, input_shape):
        out = super().build(input_shape)
        self._build_data_quantizers(self.input_shape, out)
        return out

    def _infer(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"{self.name}: expects ({self.in_channels}, H, W) inputs, got {shape}")
        oh = nn.conv_output_size(shape[1], self.kernel_size, self.stride, self.padding)
        ow = nn.conv_output_size(shape[2], self.kernel_size, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: kernel {self.kernel_size} does not fit input {shape[1:]}")
        self._out_positions = oh * ow
        return (self.out_channels, oh, ow)

    def _fan_axis_size(self):
        return self.in_channels

    def _ebops_tensor(self, mask, bw, bx):
        return ebops_conv_tensor(mask, bw, bx, self._out_positions)

    def ebops(self) -> float:
        return ebops_conv(self.mask(), self.weight_bits(), self.input_bits(), self._out_positions)

    def forward(self, x):
        if self.input_shape is None:
            self.build(x.shape[1:])
        x = self._quantize_in(x)
        p = self.pruner
        if p is not None and getattr(p, "calibrating", False):
            p.observe_input(nn.im2col(x.data, self.kernel_size, self.kernel_size, self.stride, self.padding))
        W = self.effective_weight_tensor()
        y = nn.conv2d_forward(x, W, self._bias_tensor(), self.stride, self.padding)
        self._out_positions = y.shape[2] * y.shape[3]
        if p is not None:
            p.observe_output(y.data)
        return self._quantize_out(y)

    def describe(self):
        return {**super().describe(), "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding}


class PQActivation(_QuantizedLayer):
    kind = "activation"

    def __init__(self, activation: str = "relu", name: str = "act", settings: LayerSettings | None = None,
                 features=None, dtype=None):
        super().__init__(name, settings)
        if activation not in nn.ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}; expected one of {nn.ACTIVATIONS}")
        if activation == "tanh" and settings is not None and not settings.use_real_tanh:
            activation = "hard_tanh"
        self.activation = activation
        self.multiplier = None
        if settings is not None and settings.quantize and settings.use_relu_multiplier and activation == "relu":
            self.multiplier = Parameter(np.zeros((), dtype=dtype or ad.get_default_dtype()),
                                        name=f"{name}.relu_shift", role="quant")
        if features is not None:
            shape = (features,) if np.isscalar(features) else tuple(features)
            self.build(shape)

    def build(self, input_shape):
        out = super().build(input_shape)
        self._build_data_quantizers(self.input_shape, out)
        return out

    def parameters(self):
        return super().parameters() + ([self.multiplier] if self.multiplier is not None else [])

    @property
    def shift(self) -> int:
        return 0 if self.multiplier is None else int(np.round(float(self.multiplier.data)))

    def forward(self, x):
        if self.input_shape is None:
            self.build(x.shape[1:])
        if self.multiplier is not None:
            x = scale_pow2(x, self.multiplier, +1)
        x = self._quantize_in(x)
        y = nn.activation_forward(x, self.activation)
        y = self._quantize_out(y)
        if self.multiplier is not None:
            y = scale_pow2(y, self.multiplier, -1)
        return y

    def describe(self):
        return {**super().describe(), "activation": self.activation}


class PQBatchNorm(_QuantizedLayer):
    kind = "batchnorm"

    def __init__(self, features: int, name: str = "bn", settings: LayerSettings | None = None,
                 momentum: float = nn.BATCHNORM_MOMENTUM, eps: float = nn.BATCHNORM_EPS, dtype=None):
        super().__init__(name, settings)
        dtype = dtype or ad.get_default_dtype()
        self.features = int(features)
        self.gamma = Parameter(np.ones(features, dtype=dtype), name=f"{name}.gamma", role="norm")
        self.beta = Parameter(np.zeros(features, dtype=dtype), name=f"{name}.beta", role="norm")
        self.running_mean = np.zeros(features, dtype=np.float64)
        self.running_var = np.ones(features, dtype=np.float64)
        self.momentum, self.eps = momentum, eps

    def build(self, input_shape):
        out = super().build(input_shape)
        self._build_data_quantizers(self.input_shape, out)
        return out

    def _infer(self, shape):
        if shape[0] != self.features:
            raise ShapeError(f"{self.name}: expects {self.features} features, got {shape}")
        return shape

    def parameters(self):
        return [self.gamma, self.beta] + super().parameters()

    def forward(self, x):
        if self.input_shape is None:
            self.build(x.shape[1:])
        x = self._quantize_in(x)
        y = nn.batchnorm_forward(x, self.gamma, self.beta, self.running_mean, self.running_var,
                                 self.training, self.momentum, self.eps)
        return self._quantize_out(y)


class PQAvgPool2d(_QuantizedLayer):
    """Average pooling in full precision, then quantized to the output format."""

    kind = "avgpool2d"

    def __init__(self, kernel_size: int = 2, name: str = "pool", settings: LayerSettings | None = None):
        super().__init__(name, settings)
        if kernel_size < 1:
            raise ConfigError(f"{name}: kernel size must be >= 1")
        self.kernel_size = int(kernel_size)

    def build(self, input_shape):
        out = super().build(input_shape)
        self._build_data_quantizers(self.input_shape, out, force_output=True)
        return out

    def _infer(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"{self.name}: expects (C, H, W) inputs, got {shape}")
        oh, ow = shape[1] // self.kernel_size, shape[2] // self.kernel_size
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: kernel {self.kernel_size} larger than input {shape[1:]}")
        return (shape[0], oh, ow)

    def forward(self, x):
        if self.input_shape is None:
            self.build(x.shape[1:])
        x = self._quantize_in(x)
        return self._quantize_out(nn.avg_pool2d_forward(x, self.kernel_size))

    def describe(self):
        return {**super().describe(), "kernel_size": self.kernel_size}


class Flatten(Layer):
    kind = "flatten"

    def _infer(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return ad.reshape(x, (x.shape[0], -1))


class Identity(Layer):
    """Pass-through for layer kinds with no effect at inference (dropout, identity)."""

    kind = "identity"

    def __init__(self, name: str, original_kind: str = "identity"):
        super().__init__(name)
        self.original_kind = original_kind

    def forward(self, x):
        return x

    def describe(self):
        return {**super().describe(), "original_kind": self.original_kind}
