"""Parameter-free differentiable pruning with budgets from a global magnitude ranking."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, StateError
from .base import PruningMethod, lowest_k_mask, require_fraction, unit_norms, unit_view


def pdp_budgets(weights: Sequence[np.ndarray], target: float) -> list[float]:
    """Per-layer sparsity budgets that together prune a ``target`` fraction.

    All magnitudes are ranked jointly and the ``round(target * N)`` smallest are
    assigned to be pruned; each layer's budget is the share of its own entries
    among them.  Ties are broken by layer order, then position, so the budgets
    always add up to the global count exactly.
    """
    require_fraction(target, "sparsity")
    mags = [np.abs(np.asarray(w, dtype=np.float64)).ravel() for w in weights]
    sizes = [m.size for m in mags]
    total = sum(sizes)
    if total == 0:
        return [0.0 for _ in mags]
    pooled = np.concatenate(mags)
    count = int(round(target * total))
    owner = np.repeat(np.arange(len(mags)), sizes)
    chosen = np.argsort(pooled, kind="stable")[:count]
    pruned = np.bincount(owner[chosen], minlength=len(mags))
    return [float(p / n) if n else 0.0 for p, n in zip(pruned, sizes)]


def pdp_threshold(scores: np.ndarray, budget: float) -> float:
    """Cut point between the pruned and kept scores for a layer budget."""
    a = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    k = int(round(budget * a.size))
    if k <= 0:
        return 0.0
    if k >= a.size:
        return float(a[-1]) * 1.0001 + 1e-12
    return float(0.5 * (a[k - 1] + a[k]))


def pdp_soft_mask(values: np.ndarray, t: float, tau: float) -> np.ndarray:
    """``exp(v^2/tau) / (exp(v^2/tau) + exp(t^2/tau))`` computed as a sigmoid."""
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    v = np.asarray(values, dtype=np.float64)
    return ad._stable_sigmoid(np.atleast_1d((v * v - t * t) / tau)).reshape(v.shape)


class PDP(PruningMethod):
    name = "pdp"
    granularities = ("unstructured", "structured")
    soft = True

    def __init__(self, sparsity: float = 0.8, temperature: float = 1e-2, granularity: str = "unstructured"):
        if granularity == "n_m":
            raise ConfigError("pdp does not support N:M granularity")
        super().__init__(granularity)
        require_fraction(sparsity, "sparsity")
        if temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {temperature}")
        self.target = float(sparsity)
        self.tau = float(temperature)

    def _build(self, context):
        self.state.schedule.update(budget=None, t=0.0)

    @property
    def structured(self) -> bool:
        return self.state.granularity == "structured"

    def scores(self) -> np.ndarray:
        """Magnitudes the budget is expressed in: |w| or per-unit RMS norms."""
        w = self.weight.data.astype(np.float64)
        if self.structured:
            per_unit = w.size // w.shape[self.out_axis]
            return unit_norms(w, self.out_axis) / np.sqrt(per_unit)
        return np.abs(w)

    @property
    def budget(self) -> float:
        b = self.state.schedule["budget"]
        if b is None:
            raise StateError(f"{self.layer_name}: PDP budget not set; budgets are computed after pre-training")
        return b

    def set_budget(self, budget: float):
        self.state.schedule["budget"] = float(budget)
        self.recompute_threshold()

    def recompute_threshold(self):
        self.state.schedule["t"] = pdp_threshold(self.scores(), self.budget)

    def on_epoch_start(self, epoch, stage_epochs):
        if self.active and not self.state.frozen and self.state.schedule["budget"] is not None:
            self.recompute_threshold()

    def _apply(self, W):
        t = self.state.schedule["t"]
        if self.structured:
            axes = tuple(a for a in range(W.ndim) if a != self.out_axis)
            per_unit = W.data.size // W.shape[self.out_axis]
            sq = ad.sum_(ad.square(W), axis=axes) * (1.0 / per_unit)
            m = ad.sigmoid((sq - t * t) * (1.0 / self.tau))
            m = ad.reshape(m, unit_view(np.zeros(W.shape[self.out_axis]), W.shape, self.out_axis).shape)
        else:
            m = ad.sigmoid((ad.square(W) - t * t) * (1.0 / self.tau))
        self.state.soft_mask = m.data
        return W * m

    def _estimate_mask(self):
        t = self.state.schedule["t"]
        keep = (self.scores() > t).astype(np.float64)
        return self._to_weight_shape(keep)

    def _to_weight_shape(self, mask):
        if self.structured:
            return np.broadcast_to(unit_view(mask, self.weight.shape, self.out_axis), self.weight.shape).copy()
        return mask

    def _final_mask(self):
        # rank-based so the pruned count equals the budget exactly
        scores = self.scores()
        self.recompute_threshold()
        keep = lowest_k_mask(scores, int(round(self.budget * scores.size)))
        return self._to_weight_shape(keep)
