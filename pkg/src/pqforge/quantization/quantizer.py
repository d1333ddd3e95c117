"""Differentiable quantizers used inside compression-aware layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter, Tensor, make_node
from ..errors import ConfigError
from .fixed import (
    FixedPointSpec,
    OverflowMode,
    RoundMode,
    derive_integer_bits,
    parse_overflow_mode,
    parse_round_mode,
    quantize_array,
    representable_range,
)

GRANULARITIES = ("per_tensor", "per_channel", "per_weight")
LN2 = float(np.log(2.0))


def ste_quantize(x: Tensor, k, i, f, round_mode, overflow_mode) -> Tensor:
    """Quantize with a clipped straight-through gradient.

    The gradient passes unchanged where ``x`` lies inside the representable
    range and is zero outside it.
    """
    x = ad.as_tensor(x)
    y = quantize_array(x.data, k, i, f, round_mode, overflow_mode)
    low, high = representable_range(k, i, f, overflow_mode)
    inside = (x.data >= low) & (x.data <= high)
    return make_node(y, (x,), lambda g: (g * inside,))


@dataclass
class QuantizerState:
    spec: FixedPointSpec
    granularity: str = "per_tensor"
    channel_axis: int | None = None
    enabled: bool = True
    derived_i: np.ndarray | None = None
    derived_f: np.ndarray | None = None


class Quantizer:
    """Fixed-point quantizer with a fixed total width.

    ``per_tensor`` keeps the configured ``(k, i, f)``.  ``per_channel`` and
    ``per_weight`` recompute ``i`` from the data on every call and hand the rest
    of the width to ``f``.
    """

    hgq = False

    def __init__(self, spec: FixedPointSpec, granularity: str = "per_tensor",
                 channel_axis: int | None = None, enabled: bool = True):
        if granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {granularity!r}")
        if granularity == "per_channel" and channel_axis is None:
            raise ConfigError("per_channel granularity needs a channel axis")
        self.state = QuantizerState(spec, granularity, channel_axis, enabled)

    @property
    def spec(self) -> FixedPointSpec:
        return self.state.spec

    @property
    def enabled(self) -> bool:
        return self.state.enabled

    @enabled.setter
    def enabled(self, value: bool):
        self.state.enabled = bool(value)

    @property
    def total_bits(self) -> int:
        return self.spec.bits

    def set_total_bits(self, bits: int):
        """Change the width, keeping ``k`` and (for per-tensor) ``i``."""
        s = self.spec
        if self.state.granularity == "per_tensor":
            f = bits - s.k - s.i
            if f < 0:
                raise ConfigError(f"{bits} bits cannot hold k={s.k}, i={s.i}")
            self.state.spec = FixedPointSpec(s.k, s.i, f, s.round_mode, s.overflow_mode)
        else:
            self.state.spec = FixedPointSpec(s.k, s.i, bits - s.k - s.i, s.round_mode, s.overflow_mode)

    def group_bits(self, x: np.ndarray):
        """Integer ``(k, i, f)`` arrays broadcastable against ``x``."""
        s = self.spec
        if self.state.granularity == "per_tensor":
            return s.k, np.asarray(s.i), np.asarray(s.f)
        i, f = derive_integer_bits(x, self.state.granularity, s.bits, s.k, self.state.channel_axis)
        self.state.derived_i, self.state.derived_f = i, f
        return s.k, i, f

    def quantize_numpy(self, x: np.ndarray) -> np.ndarray:
        if not self.enabled:
            return np.asarray(x)
        k, i, f = self.group_bits(np.asarray(x))
        return quantize_array(x, k, i, f, self.spec.round_mode, self.spec.overflow_mode)

    def __call__(self, x: Tensor) -> Tensor:
        if not self.enabled:
            return ad.as_tensor(x)
        x = ad.as_tensor(x)
        k, i, f = self.group_bits(x.data)
        return ste_quantize(x, k, i, f, self.spec.round_mode, self.spec.overflow_mode)

    def bits_like(self, x: np.ndarray) -> np.ndarray:
        """Per-element total bit-width for cost estimation."""
        k, i, f = self.group_bits(np.asarray(x))
        return np.broadcast_to(k + i + f, np.shape(x)).astype(np.float64)

    def parameters(self):
        return []


class HGQQuantizer:
    """Quantizer with a learnable fractional width per element (or per feature).

    Weight quantizers hold one ``f`` per weight and take ``i`` from each weight's
    own magnitude.  Data quantizers hold one ``f`` per feature and take ``i``
    from the running maximum magnitude seen in training.  The effective width
    is ``k + i + round(f)``; elements whose width is not positive output 0.

    Gradients: the rounding of ``f`` is straight-through; ``d q / d f`` uses
    ``ln2 * (x - q)`` (the quantization step shrinks by half per extra bit);
    ``d q / d x`` is 1 inside the representable range.
    """

    hgq = True

    def __init__(self, shape, k: int, f_init: float, name: str, kind: str = "weight",
                 round_mode=RoundMode.RND, overflow_mode=OverflowMode.SAT, dtype=None,
                 min_integer_bits: int = -16, lr_scale: float = 1.0):
        if kind not in ("weight", "data"):
            raise ConfigError(f"HGQ quantizer kind must be weight or data, got {kind!r}")
        self.kind = kind
        self.k = int(k)
        self.round_mode = parse_round_mode(round_mode)
        self.overflow_mode = parse_overflow_mode(overflow_mode)
        self.min_integer_bits = min_integer_bits
        self.f_cont = Parameter(np.full(shape, float(f_init)), name=f"{name}.f", role="quant",
                                lr_scale=lr_scale, dtype=dtype)
        self.running_max = np.zeros(shape, dtype=np.float64) if kind == "data" else None
        self.enabled = True
        self.training = True
        self._last_i = None

    def parameters(self):
        return [self.f_cont]

    def integer_bits(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "weight":
            a = np.abs(np.asarray(x, dtype=np.float64))
        else:
            a = self.running_max
        _, e = np.frexp(np.where(a > 0, a, 1.0))
        i = np.where(a > 0, e, 0).astype(np.int64)
        return np.maximum(i, self.min_integer_bits)

    def _update_range(self, x: np.ndarray):
        # reduce over every axis the range is shared across: batch, and H/W for (C, 1, 1) shapes
        padded = (1,) * (x.ndim - self.running_max.ndim) + self.running_max.shape
        axes = tuple(a for a, d in enumerate(padded) if d == 1 and x.shape[a] != 1)
        batch_max = np.abs(x).max(axis=axes, keepdims=True) if axes else np.abs(x)
        np.maximum(self.running_max, batch_max.reshape(self.running_max.shape), out=self.running_max)

    def effective_bits(self, x: np.ndarray):
        """Discrete ``(k, i, f)`` used by the forward pass for input ``x``."""
        i = self.integer_bits(x)
        f = np.round(self.f_cont.data).astype(np.int64)
        return self.k, i, f

    def quantize_numpy(self, x: np.ndarray) -> np.ndarray:
        k, i, f = self.effective_bits(x)
        q = quantize_array(x, k, i, f, self.round_mode, self.overflow_mode)
        return np.where(k + i + f > 0, q, 0.0).astype(q.dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        if not self.enabled:
            return x
        if self.kind == "data" and self.training:
            self._update_range(x.data)
        k, i, f = self.effective_bits(x.data)
        alive = (k + i + f) > 0
        q = quantize_array(x.data, k, i, f, self.round_mode, self.overflow_mode)
        q = np.where(alive, q, 0.0).astype(x.data.dtype)
        low, high = representable_range(k, i, f, self.overflow_mode)
        inside = (x.data >= low) & (x.data <= high)
        residual = x.data - q
        f_shape = self.f_cont.shape

        def _back(g):
            gx = g * inside
            gf = g * LN2 * residual
            if gf.shape != f_shape:
                gf = ad._unbroadcast(gf, f_shape)
            return gx, gf

        return make_node(q, (x, self.f_cont), _back)

    def continuous_bits(self, x: np.ndarray | None = None) -> Tensor:
        """``relu(k + i + f_cont)`` as a differentiable tensor (for the HGQ loss)."""
        i = self.integer_bits(x if x is not None else np.zeros(self.f_cont.shape))
        return ad.relu(self.f_cont + (i + self.k).astype(self.f_cont.dtype))

    def discrete_bits(self, x: np.ndarray | None = None) -> np.ndarray:
        k, i, f = self.effective_bits(x if x is not None else np.zeros(self.f_cont.shape))
        return np.maximum(k + i + f, 0).astype(np.float64)
