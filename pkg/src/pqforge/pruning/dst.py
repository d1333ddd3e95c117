"""Dynamic sparse training: a hard magnitude mask with a learnable per-layer threshold."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor, make_node
from ..errors import ConfigError
from .base import PruningMethod, as_param, sparsity

# beyond the window the step gets no gradient at all
_PEAK_HALF_WIDTH = 0.4
_TAIL_HALF_WIDTH = 1.0


def step_estimator(x: np.ndarray) -> np.ndarray:
    """Long-tailed surrogate for the derivative of the unit step.

    ``2 - 4|x|`` near zero, a constant 0.4 on ``0.4 < |x| <= 1`` and 0 beyond.
    """
    a = np.abs(x)
    return np.where(a <= _PEAK_HALF_WIDTH, 2.0 - 4.0 * a, np.where(a <= _TAIL_HALF_WIDTH, 0.4, 0.0))


def dst_mask(W: np.ndarray, T: float) -> np.ndarray:
    return (np.abs(np.asarray(W)) > T).astype(np.float64)


def dst_forward(W: Tensor, T: Tensor) -> Tensor:
    """``W * step(|W| - T)`` with the surrogate gradient for the step."""
    W, T = ad.as_tensor(W), ad.as_tensor(T)
    excess = np.abs(W.data) - T.data
    mask = (excess > 0).astype(W.data.dtype)
    d = step_estimator(excess).astype(W.data.dtype)

    def _back(g):
        gW = g * mask + g * W.data * d * np.sign(W.data)
        gT = -np.sum(g * W.data * d)
        return gW, np.asarray(gT, dtype=T.data.dtype).reshape(T.data.shape)

    return make_node(W.data * mask, (W, T), _back)


def dst_reset_check(layer_sparsity: float, limit: float) -> bool:
    return layer_sparsity > limit


class DynamicSparseTraining(PruningMethod):
    name = "dst"
    granularities = ("unstructured",)

    def __init__(self, alpha: float = 1e-4, max_pruning_pct: float = 0.99, threshold_init: float = 0.0,
                 granularity: str = "unstructured"):
        super().__init__(granularity)
        if alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {alpha}")
        if not 0.0 < max_pruning_pct <= 1.0:
            raise ConfigError(f"max_pruning_pct must lie in (0, 1], got {max_pruning_pct}")
        if threshold_init < 0:
            raise ConfigError(f"threshold_init must be >= 0, got {threshold_init}")
        self.alpha = float(alpha)
        self.limit = float(max_pruning_pct)
        self.threshold_init = float(threshold_init)

    def _build(self, context):
        self.state.learnables["T"] = as_param(self.threshold_init, f"{self.layer_name}.dst_T",
                                              dtype=self.weight.dtype)
        self.state.schedule["resets"] = 0

    @property
    def threshold(self) -> float:
        return float(self.state.learnables["T"].data)

    def _apply(self, W):
        return dst_forward(W, self.state.learnables["T"])

    def regularization(self):
        if not self.active or self.state.frozen or not self.alpha:
            return None
        return ad.exp(-self.state.learnables["T"]) * self.alpha

    def post_step(self):
        if not self.active or self.state.frozen:
            return
        T = self.state.learnables["T"]
        if T.data < 0:
            T.data = np.zeros_like(T.data)
        if dst_reset_check(sparsity(dst_mask(self.weight.data, self.threshold)), self.limit):
            T.data = np.zeros_like(T.data)
            self.state.schedule["resets"] += 1
            self.state.updates += 1

    def _estimate_mask(self):
        return dst_mask(self.weight.data, self.threshold)
