"""Continuous sparsification: a sigmoid mask over learnable logits with a sharpening temperature."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError
from .base import PruningMethod, as_param


def cs_mask(s: np.ndarray, beta: float) -> np.ndarray:
    return ad._stable_sigmoid(np.asarray(beta * np.asarray(s, dtype=np.float64)))


def cs_schedule(epoch: int, stage_epochs: int, beta_max: float) -> float:
    """Geometric ramp from 1 at the first epoch to ``beta_max`` at the last."""
    if beta_max < 1:
        raise ConfigError(f"final_temp must be >= 1, got {beta_max}")
    if stage_epochs <= 1:
        return float(beta_max) if stage_epochs == 1 and epoch > 0 else 1.0
    return float(beta_max ** (min(epoch, stage_epochs - 1) / (stage_epochs - 1)))


def cs_rewind(s: np.ndarray, s_init: np.ndarray) -> np.ndarray:
    """Positive logits go back to their initial values; negative ones are kept."""
    s = np.asarray(s)
    return np.where(s > 0, s_init, s).astype(s.dtype)


def cs_finalize(s: np.ndarray) -> np.ndarray:
    return (np.asarray(s) > 0).astype(np.float64)


class ContinuousSparsification(PruningMethod):
    name = "cs"
    granularities = ("unstructured",)
    soft = True

    def __init__(self, s_init: float = 0.5, final_temp: float = 200.0, threshold_decay: float = 1e-4,
                 granularity: str = "unstructured"):
        super().__init__(granularity)
        if final_temp < 1:
            raise ConfigError(f"final_temp must be >= 1, got {final_temp}")
        self.s_init_value = float(s_init)
        self.final_temp = float(final_temp)
        self.threshold_decay = float(threshold_decay)

    def _build(self, context):
        s = as_param(np.full(self.weight.shape, self.s_init_value), f"{self.layer_name}.cs_s",
                     dtype=self.weight.dtype)
        self.state.learnables["s"] = s
        self.s_init = s.data.copy()
        self.state.schedule["beta"] = 1.0

    @property
    def beta(self) -> float:
        return self.state.schedule["beta"]

    def _mask_tensor(self):
        return ad.sigmoid(self.state.learnables["s"] * self.beta)

    def _apply(self, W):
        mask = self._mask_tensor()
        self.state.soft_mask = mask.data
        return W * mask

    def regularization(self):
        # L1 on the soft mask pushes logits negative
        if not self.active or self.state.frozen or not self.threshold_decay:
            return None
        return ad.sum_(self._mask_tensor()) * self.threshold_decay

    def on_epoch_start(self, epoch, stage_epochs):
        if self.active and not self.state.frozen:
            self.state.schedule["beta"] = cs_schedule(epoch, stage_epochs, self.final_temp)

    def on_round_start(self, round_index):
        if round_index > 0 and not self.state.frozen:
            self.rewind()

    def rewind(self):
        s = self.state.learnables["s"]
        s.data = cs_rewind(s.data, self.s_init)
        self.state.schedule["beta"] = 1.0

    def _estimate_mask(self):
        return cs_finalize(self.state.learnables["s"].data)
