"""Shared pruning machinery: mask state, the method interface and helpers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter, Tensor, make_node
from ..errors import ConfigError, StateError

GRANULARITIES = ("unstructured", "n_m", "structured")


@dataclass
class MaskState:
    """Per-layer pruning state.

    ``hard_mask`` is weight-shaped (structured masks are broadcast from their
    unit masks) and holds only 0/1.  Once ``frozen`` it never changes.
    """

    method: str
    granularity: str = "unstructured"
    soft_mask: np.ndarray | None = None
    hard_mask: np.ndarray | None = None
    frozen: bool = False
    learnables: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    updates: int = 0

    def mask_hash(self) -> str:
        if self.hard_mask is None:
            return ""
        return hashlib.sha1(np.ascontiguousarray(self.hard_mask, dtype=np.uint8).tobytes()).hexdigest()


def sparsity(mask) -> float:
    mask = np.asarray(mask)
    if mask.size == 0:
        return 0.0
    return float(np.count_nonzero(mask == 0) / mask.size)


def unit_view(unit_mask: np.ndarray, weight_shape, out_axis: int) -> np.ndarray:
    """Broadcast a per-output-unit vector against a weight tensor."""
    shape = [1] * len(weight_shape)
    shape[out_axis] = weight_shape[out_axis]
    return np.asarray(unit_mask).reshape(shape)


def unit_norms(W: np.ndarray, out_axis: int) -> np.ndarray:
    axes = tuple(a for a in range(W.ndim) if a != out_axis)
    return np.sqrt(np.sum(np.square(W, dtype=np.float64), axis=axes))


def lowest_k_mask(scores: np.ndarray, count: int) -> np.ndarray:
    """Binary mask zeroing exactly ``count`` lowest scores (stable ties)."""
    flat = np.asarray(scores).ravel()
    mask = np.ones(flat.shape, dtype=np.float64)
    if count > 0:
        order = np.argsort(flat, kind="stable")
        mask[order[:count]] = 0.0
    return mask.reshape(np.shape(scores))


def apply_fixed_mask(W: Tensor, mask: np.ndarray) -> Tensor:
    m = mask.astype(W.dtype, copy=False)
    return make_node(W.data * m, (W,), lambda g: (g * m,))


class PruningMethod:
    """Interface every pruning method implements.

    A method is attached to one weight-bearing layer.  The layer calls
    :meth:`__call__` on its weight tensor in the forward pass; the training
    loop drives the hooks.  ``active`` is False during pre-training, in which
    case the weight passes through untouched.
    """

    name = "base"
    granularities: tuple = ("unstructured",)
    soft = False

    def __init__(self, granularity: str = "unstructured"):
        if granularity not in self.granularities:
            raise ConfigError(
                f"{self.name} supports granularity {', '.join(self.granularities)}; got {granularity!r}")
        self.state = MaskState(self.name, granularity)
        self.active = False
        self.weight: Parameter | None = None
        self.out_axis = 1
        self.layer_name = ""

    # construction ------------------------------------------------------------------
    def build(self, weight: Parameter, out_axis: int, layer_name: str, context: dict | None = None):
        self.weight = weight
        self.out_axis = out_axis
        self.layer_name = layer_name
        self._build(context or {})

    def _build(self, context: dict):
        pass

    def parameters(self) -> list:
        return [p for p in self.state.learnables.values() if isinstance(p, Parameter)]

    # forward -----------------------------------------------------------------------
    def __call__(self, W: Tensor) -> Tensor:
        if self.state.frozen and self.state.hard_mask is not None:
            return apply_fixed_mask(W, self.state.hard_mask)
        if not self.active:
            return W
        return self._apply(W)

    def _apply(self, W: Tensor) -> Tensor:
        return W

    def unit_mask(self) -> np.ndarray | None:
        """Per-output-unit mask for structured methods (used to mask biases)."""
        if self.state.granularity != "structured":
            return None
        mask = self.current_mask()
        axes = tuple(a for a in range(mask.ndim) if a != self.out_axis)
        return (mask.max(axis=axes) > 0).astype(np.float64)

    def regularization(self) -> Tensor | None:
        return None

    # bookkeeping -------------------------------------------------------------------
    def current_mask(self) -> np.ndarray:
        """Binary mask describing the weights that are currently pruned."""
        if self.state.hard_mask is not None:
            return self.state.hard_mask
        if not self.active:
            return np.ones(self.weight.shape)
        return self._estimate_mask()

    def _estimate_mask(self) -> np.ndarray:
        return np.ones(self.weight.shape)

    def sparsity(self) -> float:
        return sparsity(self.current_mask())

    # hooks -------------------------------------------------------------------------
    def observe_input(self, x: np.ndarray):
        pass

    def observe_output(self, y: np.ndarray):
        pass

    def post_step(self):
        pass

    def on_round_start(self, round_index: int):
        pass

    def on_epoch_start(self, epoch: int, stage_epochs: int):
        pass

    def on_epoch_end(self, epoch: int, stage_epochs: int):
        pass

    def after_pretraining(self):
        pass

    def finalize(self):
        """Round to a hard mask and freeze it.  Idempotent."""
        if self.state.frozen:
            return
        mask = self._final_mask()
        self._set_hard(mask)
        self.state.frozen = True
        for p in self.parameters():
            p.trainable = False

    def _final_mask(self) -> np.ndarray:
        return (self._estimate_mask() > 0).astype(np.float64)

    def _set_hard(self, mask: np.ndarray):
        mask = (np.asarray(mask) > 0).astype(np.float64)
        if self.state.hard_mask is None or not np.array_equal(mask, self.state.hard_mask):
            self.state.updates += 1
        self.state.hard_mask = mask

    def describe(self) -> dict:
        return {"method": self.name, "granularity": self.state.granularity,
                "frozen": self.state.frozen, "sparsity": self.sparsity()}


def require_fraction(value: float, name: str, upper_open: bool = True):
    if value is None or not np.isfinite(value) or value < 0 or (value >= 1 if upper_open else value > 1):
        bound = "[0, 1)" if upper_open else "[0, 1]"
        raise ConfigError(f"{name} must lie in {bound}, got {value}")


def as_param(value, name: str, dtype=None, role: str = "mask") -> Parameter:
    return Parameter(np.asarray(value, dtype=dtype or ad.get_default_dtype()), name=name, role=role)


class FixedMask(PruningMethod):
    """A mask decided outside training (global magnitude pruning), applied as is."""

    name = "fixed"
    granularities = ("unstructured", "structured")

    def __init__(self, mask: np.ndarray, granularity: str = "unstructured"):
        super().__init__(granularity)
        self._mask = (np.asarray(mask) > 0).astype(np.float64)

    def _build(self, context):
        if self._mask.shape != self.weight.shape:
            raise ConfigError(f"fixed mask {self._mask.shape} does not match weight {self.weight.shape}")
        self._set_hard(self._mask)
        self.state.frozen = True
