"""Sparsity as a constrained problem solved with the modified differential method of multipliers.

The penalty added to the loss for a constraint ``C(theta) = 0`` is
``lambda * C + (damping / 2) * C**2``; after every step the multiplier is
moved by gradient ascent, ``lambda += lr_lambda * C``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter, Tensor
from ..errors import ConfigError, StateError
from .base import PruningMethod, require_fraction, unit_view


def smooth_density(values: Tensor, eps: float) -> Tensor:
    """Mean of ``tanh(|v| / eps)**2``: about 1 for large entries, 0 for zeros."""
    t = ad.tanh(ad.abs_(values) * (1.0 / eps))
    return ad.mean(ad.square(t))


def mdmm_penalty(constraint: Tensor, lam: float, damping: float) -> Tensor:
    return constraint * float(lam) + ad.square(constraint) * (0.5 * damping)


def mdmm_step(params: Sequence[Parameter], lambdas: np.ndarray,
              loss_fn: Callable[[], Tensor], constraint_fns: Sequence[Callable[[], Tensor]],
              damping: float, lr: float, lr_lambda: float) -> np.ndarray:
    """One plain-gradient MDMM step; returns the constraint values before the step.

    ``params`` descend ``L + sum_k lambda_k C_k + damping/2 C_k**2`` and
    ``lambdas`` (updated in place) ascend ``C``.
    """
    for p in params:
        p.zero_grad()
    constraints = [fn() for fn in constraint_fns]
    values = np.array([float(c.data) for c in constraints])
    if not np.all(np.isfinite(values)):
        raise StateError(f"non-finite constraint values {values.tolist()}")
    total = loss_fn()
    for lam, c in zip(lambdas, constraints):
        total = total + mdmm_penalty(c, lam, damping)
    ad.backward(total)
    for p in params:
        p.data = (p.data - lr * p.grad).astype(p.data.dtype, copy=False)
        p.zero_grad()
    lambdas += lr_lambda * values
    return values


class MDMM(PruningMethod):
    name = "mdmm"
    granularities = ("unstructured", "structured")

    def __init__(self, target_sparsity: float = 0.8, damping: float = 1.0, epsilon: float = 1e-2,
                 lr_lambda_scale: float = 10.0, granularity: str = "unstructured"):
        super().__init__(granularity)
        require_fraction(target_sparsity, "target_sparsity")
        if epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {epsilon}")
        if damping < 0:
            raise ConfigError(f"damping must be >= 0, got {damping}")
        self.target = float(target_sparsity)
        self.damping = float(damping)
        self.epsilon = float(epsilon)
        self.lr_lambda_scale = float(lr_lambda_scale)

    def _build(self, context):
        self.lr_lambda = self.lr_lambda_scale * float(context.get("learning_rate", 1e-3))
        self.state.schedule["lambda"] = 0.0
        self.state.schedule["constraint"] = 0.0

    def constraint(self, W: Tensor | None = None) -> Tensor:
        W = self.weight if W is None else W
        if self.state.granularity == "structured":
            axes = tuple(a for a in range(W.ndim) if a != self.out_axis)
            norms = ad.power(ad.sum_(ad.square(W), axis=axes) + 1e-12, 0.5)
            density = smooth_density(norms, self.epsilon)
        else:
            density = smooth_density(W, self.epsilon)
        return (1.0 - self.target) - density

    def regularization(self):
        if not self.active or self.state.frozen:
            return None
        c = self.constraint()
        if not np.isfinite(c.data):
            raise StateError(f"{self.layer_name}: MDMM constraint is not finite")
        self.state.schedule["constraint"] = float(c.data)
        return mdmm_penalty(c, self.state.schedule["lambda"], self.damping)

    def post_step(self):
        if not self.active or self.state.frozen:
            return
        self.state.schedule["lambda"] += self.lr_lambda * self.state.schedule["constraint"]

    def _estimate_mask(self):
        # a weight counts as alive once its smooth indicator passes one half
        w = self.weight.data.astype(np.float64)
        if self.state.granularity == "structured":
            norms = np.sqrt(np.sum(w * w, axis=tuple(a for a in range(w.ndim) if a != self.out_axis)))
            units = (np.tanh(norms / self.epsilon) ** 2 >= 0.5).astype(np.float64)
            return np.broadcast_to(unit_view(units, w.shape, self.out_axis), w.shape).copy()
        return (np.tanh(np.abs(w) / self.epsilon) ** 2 >= 0.5).astype(np.float64)
