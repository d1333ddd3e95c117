"""AutoSparse: soft magnitude thresholding with a learnable per-layer threshold."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor, make_node
from ..errors import ConfigError
from .base import PruningMethod, as_param


def autosparse_forward(W: Tensor, T: Tensor, alpha: float) -> Tensor:
    """``sign(W) * relu(|W| - sigmoid(T))``.

    The gradient reaching ``W`` is the upstream gradient where the weight
    survives and ``alpha`` times it where it is cut, so pruned weights can
    still recover while ``alpha`` is large.
    """
    W, T = ad.as_tensor(W), ad.as_tensor(T)
    thr = ad._stable_sigmoid(np.atleast_1d(T.data)).reshape(T.data.shape)
    excess = np.abs(W.data) - thr
    alive = excess > 0
    out = np.where(alive, np.sign(W.data) * excess, 0.0).astype(W.data.dtype)
    scale = np.where(alive, 1.0, alpha).astype(W.data.dtype)
    dthr_dT = thr * (1.0 - thr)

    def _back(g):
        gW = g * scale
        gT = -np.sum(g * np.sign(W.data) * alive) * dthr_dT
        return gW, np.asarray(gT, dtype=T.data.dtype).reshape(T.data.shape)

    return make_node(out, (W, T), _back)


class AutoSparse(PruningMethod):
    name = "autosparse"
    granularities = ("unstructured",)

    def __init__(self, alpha: float = 0.75, alpha_decay: float = 0.8, threshold_init: float = -5.0,
                 threshold_decay: float = 0.0, granularity: str = "unstructured"):
        super().__init__(granularity)
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
        if not 0.0 <= alpha_decay <= 1.0:
            raise ConfigError(f"alpha_decay must lie in [0, 1], got {alpha_decay}")
        self.alpha0 = float(alpha)
        self.alpha_decay = float(alpha_decay)
        self.threshold_init = float(threshold_init)
        self.threshold_decay = float(threshold_decay)

    def _build(self, context):
        self.state.learnables["T"] = as_param(self.threshold_init, f"{self.layer_name}.autosparse_T",
                                              dtype=self.weight.dtype)
        self.state.schedule["alpha"] = self.alpha0

    @property
    def alpha(self) -> float:
        return self.state.schedule["alpha"]

    @property
    def threshold(self) -> float:
        return float(ad._stable_sigmoid(np.atleast_1d(self.state.learnables["T"].data))[0])

    def _apply(self, W):
        return autosparse_forward(W, self.state.learnables["T"], self.alpha)

    def regularization(self):
        if not self.active or self.state.frozen or not self.threshold_decay:
            return None
        T = self.state.learnables["T"]
        return ad.square(T) * self.threshold_decay

    def on_epoch_end(self, epoch, stage_epochs):
        if self.active and not self.state.frozen:
            self.state.schedule["alpha"] *= self.alpha_decay

    def _estimate_mask(self):
        return (np.abs(self.weight.data) > self.threshold).astype(np.float64)

    def finalize(self):
        if self.state.frozen:
            return
        # bake the shrinkage so the deployed weight equals W * mask exactly
        if self.active:
            thr = self.threshold
            w = self.weight.data
            self.weight.data = np.where(np.abs(w) > thr, np.sign(w) * (np.abs(w) - thr), 0.0).astype(w.dtype)
        super().finalize()

    def _final_mask(self):
        return (self.weight.data != 0).astype(np.float64)
