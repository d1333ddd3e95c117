"""Pruning methods behind one interface, plus the rules for when each may run."""

from __future__ import annotations

from ..errors import ConfigError
from .activation import ActivationPruning, ap_update
from .autosparse import AutoSparse, autosparse_forward
from .base import FixedMask, MaskState, PruningMethod, sparsity
from .cs import ContinuousSparsification, cs_finalize, cs_mask, cs_rewind, cs_schedule
from .dst import DynamicSparseTraining, dst_forward, dst_mask, dst_reset_check, step_estimator
from .mdmm import MDMM, mdmm_step, smooth_density
from .pdp import PDP, pdp_budgets, pdp_soft_mask, pdp_threshold
from .wanda import Wanda, wanda_prune, wanda_scores

METHODS = {
    "activation": ActivationPruning,
    "autosparse": AutoSparse,
    "cs": ContinuousSparsification,
    "dst": DynamicSparseTraining,
    "mdmm": MDMM,
    "pdp": PDP,
    "wanda": Wanda,
}

# which stages each method may use beyond the main training stage
NEEDS_PRETRAINING = {"pdp", "wanda"}
ALLOWS_PRETRAINING = {"pdp", "wanda"}
ALLOWS_FINE_TUNING = {"cs", "mdmm", "pdp"}
OPTIONAL_FINE_TUNING = {"dst", "activation"}


def make_pruner(method_config) -> PruningMethod:
    """Instantiate a method from its config block (a pydantic model or a dict)."""
    if hasattr(method_config, "model_dump"):
        params = method_config.model_dump()
    else:
        params = dict(method_config)
    name = params.pop("pruning_method", None)
    for key in ("enable_pruning", "disable_pruning_for_layers", "calibration_batches"):
        params.pop(key, None)
    if name not in METHODS:
        raise ConfigError(f"unknown pruning method {name!r}; expected one of {sorted(METHODS)}")
    return METHODS[name](**params)


__all__ = [
    "METHODS", "NEEDS_PRETRAINING", "ALLOWS_PRETRAINING", "ALLOWS_FINE_TUNING", "OPTIONAL_FINE_TUNING",
    "ActivationPruning", "AutoSparse", "ContinuousSparsification", "DynamicSparseTraining", "FixedMask",
    "MDMM", "MaskState", "PDP", "PruningMethod", "Wanda",
    "ap_update", "autosparse_forward", "cs_finalize", "cs_mask", "cs_rewind", "cs_schedule",
    "dst_forward", "dst_mask", "dst_reset_check", "make_pruner", "mdmm_step", "pdp_budgets",
    "pdp_soft_mask", "pdp_threshold", "smooth_density", "sparsity", "step_estimator", "wanda_prune",
    "wanda_scores",
]
