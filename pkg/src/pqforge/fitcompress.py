"""Joint search over per-layer weight widths and global sparsity for a BOPs target.

The search is greedy.  From the current state it considers lowering one
layer's weight width by a bit and raising the global magnitude-pruning
sparsity by one step, scores each move by the Fisher-weighted weight
perturbation it adds per BOP it removes, and takes the cheapest one.  It stops
as soon as ``BOPs / BOPs_base`` falls to the goal.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import FITCompressConfig
from .errors import ConfigError, DataError, SearchError
from .model import ModelGraph, apply_fixed_masks
from .nn import softmax_ce_loss
from .pruning.base import lowest_k_mask
from .quantization.ebops import ebops_conv, ebops_dense
from .quantization.quantizer import Quantizer


@dataclass
class FITCompressResult:
    bits: dict
    sparsity: float
    masks: dict
    ratio: float
    base_bops: float
    bops: float
    history: list = field(default_factory=list)


def empirical_fisher(model: ModelGraph, data, batch_size: int = 1024, batches: int = 16) -> dict:
    """Mean squared mini-batch gradient of every weight tensor, keyed by layer name."""
    X, y = data.X if hasattr(data, "X") else data[0], data.y if hasattr(data, "y") else data[1]
    X, y = np.asarray(X), np.asarray(y)
    if len(X) == 0:
        raise DataError("empirical Fisher needs a non-empty calibration split")
    layers = model.weight_layers()
    acc = {layer.name: np.zeros(layer.weight.shape) for layer in layers}
    dtype = layers[0].weight.dtype
    count = 0
    for start in range(0, min(len(X), batches * batch_size), batch_size):
        model.zero_grad()
        logits = model(ad.Tensor(X[start:start + batch_size].astype(dtype, copy=False)))
        softmax_ce_loss(logits, y[start:start + batch_size]).backward()
        for layer in layers:
            acc[layer.name] += np.square(layer.weight.grad, dtype=np.float64)
        count += 1
    model.zero_grad()
    return {name: a / count for name, a in acc.items()}


class _LayerView:
    """What the search needs to know about one weight layer."""

    def __init__(self, layer, base_bits: int):
        self.name = layer.name
        self.theta = np.asarray(layer.weight.data, dtype=np.float64)
        q = layer.weight_quantizer
        if q is None:
            raise ConfigError(f"{layer.name}: the compression search needs quantized weights")
        if not isinstance(q, Quantizer):
            raise ConfigError(f"{layer.name}: the compression search needs fixed-width (non-HGQ) weight quantizers")
        self.quantizer = copy.deepcopy(q)
        self.quantizer.enabled = True
        iq = layer.input_quantizer
        fan = layer._fan_axis_size()
        self.xbits = np.full(fan, float(iq.total_bits if isinstance(iq, Quantizer) else base_bits))
        self.conv = layer.kind == "conv2d"
        self.positions = getattr(layer, "_out_positions", 1)

    def bops(self, mask, bits) -> float:
        if self.conv:
            return ebops_conv(mask, float(bits), self.xbits, self.positions)
        return ebops_dense(mask, float(bits), self.xbits)

    def perturbation(self, fisher, mask, bits) -> float:
        q = self.quantizer
        q.set_total_bits(int(bits))
        approx = q.quantize_numpy(self.theta * mask)
        return float(np.sum(fisher * np.square(self.theta - approx)))


def global_magnitude_masks(views, sparsity: float) -> dict:
    scores = np.concatenate([np.abs(v.theta).ravel() for v in views])
    flat = lowest_k_mask(scores, int(np.floor(sparsity * scores.size + 1e-9)))
    masks, start = {}, 0
    for v in views:
        n = v.theta.size
        masks[v.name] = flat[start:start + n].reshape(v.theta.shape)
        start += n
    return masks


def fitcompress_search(model: ModelGraph, data, cfg: FITCompressConfig | None = None, batch_size: int = 1024,
                       fisher: dict | None = None) -> FITCompressResult:
    cfg = cfg or FITCompressConfig(enabled=True)
    layers = model.weight_layers()
    if not layers:
        raise ConfigError("the compression search needs at least one weight layer")
    views = [_LayerView(layer, cfg.base_bits) for layer in layers]
    if fisher is None:
        fisher = empirical_fisher(model, data, batch_size, cfg.calibration_batches)
    base = sum(_dense_bops(v, cfg.base_bits) for v in views)

    bits = {v.name: int(cfg.base_bits) for v in views}
    sparsity = 0.0
    masks = {v.name: np.ones(v.theta.shape) for v in views}
    pert = {v.name: v.perturbation(fisher[v.name], masks[v.name], bits[v.name]) for v in views}
    cost = {v.name: v.bops(masks[v.name], bits[v.name]) for v in views}
    history = []

    def ratio():
        return sum(cost.values()) / base

    while ratio() > cfg.compression_goal:
        candidates = []
        current = sum(cost.values())
        for v in views:
            b = bits[v.name] - 1
            if b < cfg.bit_floor:
                continue
            new_cost = v.bops(masks[v.name], b)
            gain = cost[v.name] - new_cost
            if gain <= 0:
                continue
            new_pert = v.perturbation(fisher[v.name], masks[v.name], b)
            candidates.append(((new_pert - pert[v.name]) / gain, "bits", v.name, b, {v.name: new_pert},
                               {v.name: new_cost}))
        s = round(sparsity + cfg.sparsity_step, 10)
        if s <= cfg.max_sparsity + 1e-12:
            new_masks = global_magnitude_masks(views, s)
            new_costs = {v.name: v.bops(new_masks[v.name], bits[v.name]) for v in views}
            gain = current - sum(new_costs.values())
            if gain > 0:
                new_perts = {v.name: v.perturbation(fisher[v.name], new_masks[v.name], bits[v.name]) for v in views}
                delta = sum(new_perts.values()) - sum(pert.values())
                candidates.append((delta / gain, "sparsity", None, s, new_perts, new_costs, new_masks))
        if not candidates:
            raise SearchError(f"compression goal {cfg.compression_goal} is unreachable: best BOPs ratio "
                              f"{ratio():.6g} at bit floor {cfg.bit_floor} and sparsity {sparsity:.2f}",
                              best=ratio())
        best = min(candidates, key=lambda c: c[0])
        score, move, name, value, new_perts, new_costs = best[:6]
        if move == "bits":
            bits[name] = value
        else:
            sparsity = value
            masks = best[6]
        pert.update(new_perts)
        cost.update(new_costs)
        history.append({"move": move, "layer": name, "value": value, "score": float(score),
                        "bops": float(sum(cost.values())), "ratio": float(ratio())})
    return FITCompressResult(bits=bits, sparsity=sparsity, masks=masks, ratio=float(ratio()), base_bops=float(base),
                             bops=float(sum(cost.values())), history=history)


def _dense_bops(view: _LayerView, base_bits: int) -> float:
    """BOPs of the uncompressed reference: every multiply at ``base_bits x base_bits``."""
    n = view.theta.size * (view.positions if view.conv else 1)
    return float(n * base_bits * base_bits)


def apply_fitcompress(model: ModelGraph, result: FITCompressResult):
    """Write the chosen widths into the weight quantizers and the masks into the layers.

    A search that made no moves leaves the model untouched.  Layers without a
    pruning method get a fixed mask; layers that have one start it from the
    pruned weights instead.
    """
    if not result.history:
        return model
    fixed = {}
    for layer in model.weight_layers():
        layer.weight_quantizer.set_total_bits(result.bits[layer.name])
        mask = result.masks[layer.name]
        if layer.pruner is None:
            fixed[layer.name] = mask
        else:
            layer.weight.data = (layer.weight.data * mask).astype(layer.weight.dtype)
    apply_fixed_masks(model, fixed)
    return model
