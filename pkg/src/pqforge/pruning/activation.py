"""Activation pruning: drop output units that are rarely active."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor
from ..errors import ConfigError
from .base import PruningMethod, apply_fixed_mask, require_fraction, unit_view


def ap_update(activity: np.ndarray, threshold: float, current: np.ndarray | None = None) -> np.ndarray:
    """Unit mask after one update: units active less often than ``threshold`` are removed.

    ``activity`` is each unit's fraction of non-zero outputs since the last
    update.  Removal is permanent, so an already-removed unit stays removed.
    """
    require_fraction(threshold, "threshold", upper_open=False)
    keep = (np.asarray(activity, dtype=np.float64) >= threshold).astype(np.float64)
    if current is not None:
        keep = keep * current
    return keep


class ActivationPruning(PruningMethod):
    name = "activation"
    granularities = ("structured",)

    def __init__(self, threshold: float = 0.1, t_delta: int = 100, granularity: str = "structured"):
        super().__init__(granularity)
        require_fraction(threshold, "threshold", upper_open=False)
        if t_delta < 1:
            raise ConfigError(f"t_delta must be >= 1, got {t_delta}")
        self.threshold = float(threshold)
        self.t_delta = int(t_delta)

    def _build(self, context):
        units = self.weight.shape[self.out_axis]
        self.state.schedule.update(step=0, seen=0)
        self._active_count = np.zeros(units)
        self._units = np.ones(units)
        self.state.hard_mask = np.ones(self.weight.shape)

    def _apply(self, W: Tensor) -> Tensor:
        return apply_fixed_mask(W, self.state.hard_mask)

    def observe_output(self, y: np.ndarray):
        if not self.active or self.state.frozen:
            return
        # y is [B, units] or [B, units, H, W]
        axes = tuple(a for a in range(y.ndim) if a != 1)
        self._active_count += np.count_nonzero(y > 0, axis=axes)
        self.state.schedule["seen"] += int(np.prod([y.shape[a] for a in axes]))

    def post_step(self):
        if not self.active or self.state.frozen:
            return
        self.state.schedule["step"] += 1
        if self.state.schedule["step"] % self.t_delta or not self.state.schedule["seen"]:
            return
        activity = self._active_count / self.state.schedule["seen"]
        self._units = ap_update(activity, self.threshold, self._units)
        self._set_hard(np.broadcast_to(unit_view(self._units, self.weight.shape, self.out_axis),
                                       self.weight.shape))
        self._active_count[:] = 0
        self.state.schedule["seen"] = 0

    def _estimate_mask(self):
        return self.state.hard_mask

    def _final_mask(self):
        return self.state.hard_mask
