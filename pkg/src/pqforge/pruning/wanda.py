"""One-shot pruning scored by weight magnitude times input activation norm."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, StateError
from .base import PruningMethod, lowest_k_mask, require_fraction


def wanda_scores(W2: np.ndarray, input_norms: np.ndarray) -> np.ndarray:
    """``|W[i, o]| * ||X_i||`` for a weight matrix laid out ``[inputs, outputs]``."""
    return np.abs(W2.astype(np.float64)) * np.asarray(input_norms, dtype=np.float64)[:, None]


def wanda_prune(W2: np.ndarray, input_norms: np.ndarray, sparsity: float | None = None,
                n: int | None = None, m: int | None = None) -> np.ndarray:
    """Binary mask for ``W2[inputs, outputs]``.

    Unstructured: in every output column the ``round(sparsity * inputs)`` lowest
    scores are removed.  N:M: in every run of ``m`` consecutive inputs of a
    column the ``n`` lowest scores are removed.
    """
    scores = wanda_scores(W2, input_norms)
    inputs, outputs = scores.shape
    if n is not None or m is not None:
        if n is None or m is None or not 0 < n <= m:
            raise ConfigError(f"N:M pruning needs 0 < N <= M, got N={n}, M={m}")
        if inputs % m:
            raise ConfigError(f"M={m} does not divide the input dimension {inputs}")
        groups = scores.T.reshape(outputs, inputs // m, m)
        order = np.argsort(groups, axis=-1, kind="stable")
        mask = np.ones_like(groups)
        np.put_along_axis(mask, order[..., :n], 0.0, axis=-1)
        return mask.reshape(outputs, inputs).T.copy()
    require_fraction(sparsity, "sparsity")
    count = int(round(sparsity * inputs))
    return np.stack([lowest_k_mask(scores[:, o], count) for o in range(outputs)], axis=1)


class Wanda(PruningMethod):
    name = "wanda"
    granularities = ("unstructured", "n_m")

    def __init__(self, sparsity: float = 0.5, N: int | None = None, M: int | None = None,
                 use_layer_budgets: bool = False, granularity: str | None = None):
        if granularity is None:
            granularity = "n_m" if (N is not None or M is not None) else "unstructured"
        super().__init__(granularity)
        if granularity == "n_m":
            if N is None or M is None or not 0 < N <= M:
                raise ConfigError(f"N:M granularity needs 0 < N <= M, got N={N}, M={M}")
            if use_layer_budgets:
                raise ConfigError("use_layer_budgets cannot be combined with N:M granularity")
        else:
            require_fraction(sparsity, "sparsity")
        self.target = float(sparsity)
        self.N, self.M = N, M
        self.use_layer_budgets = bool(use_layer_budgets)

    def _build(self, context):
        self.calibrating = False
        self._sq_sum = None
        self.state.schedule["samples"] = 0

    def _as_matrix(self, W: np.ndarray) -> np.ndarray:
        return W if W.ndim == 2 else W.reshape(W.shape[0], -1).T

    def _from_matrix(self, mask: np.ndarray) -> np.ndarray:
        shape = self.weight.shape
        return mask if len(shape) == 2 else mask.T.reshape(shape)

    def observe_input(self, x: np.ndarray):
        """Accumulate squared input norms.  ``x`` is ``[..., inputs]``."""
        if not self.calibrating:
            return
        flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
        if self._sq_sum is None:
            self._sq_sum = np.zeros(flat.shape[1])
        self._sq_sum += np.sum(flat * flat, axis=0)
        self.state.schedule["samples"] += flat.shape[0]

    def input_norms(self) -> np.ndarray:
        if self._sq_sum is None:
            raise StateError(f"{self.layer_name}: Wanda needs a calibration pass before pruning")
        return np.sqrt(self._sq_sum)

    def prune(self, sparsity: float | None = None):
        W2 = self._as_matrix(self.weight.data)
        if self.state.granularity == "n_m":
            mask = wanda_prune(W2, self.input_norms(), n=self.N, m=self.M)
        else:
            mask = wanda_prune(W2, self.input_norms(), sparsity=self.target if sparsity is None else sparsity)
        self._set_hard(self._from_matrix(mask))
        self.state.frozen = True

    def _final_mask(self):
        return self.state.hard_mask if self.state.hard_mask is not None else np.ones(self.weight.shape)
