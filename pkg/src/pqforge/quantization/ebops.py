"""Effective bit operations: a multiply-only cost proxy for FPGA resources.

For a dense layer with weight bits ``b_w[i, o]``, input bits ``b_x[i]`` and a
binary mask, ``EBOPs = sum over unpruned (i, o) of b_w[i, o] * b_x[i]``.
Accumulator terms are deliberately left out.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..errors import ShapeError


def ebops_dense(mask, weight_bits, input_bits) -> float:
    mask = np.asarray(mask, dtype=np.float64)
    weight_bits = np.broadcast_to(np.asarray(weight_bits, dtype=np.float64), mask.shape) \
        if np.ndim(weight_bits) == 0 else np.asarray(weight_bits, dtype=np.float64)
    if weight_bits.shape != mask.shape:
        raise ShapeError(f"weight bits {weight_bits.shape} do not match mask {mask.shape}")
    input_bits = np.asarray(input_bits, dtype=np.float64)
    if input_bits.ndim == 0:
        input_bits = np.full(mask.shape[0], float(input_bits))
    if input_bits.shape != (mask.shape[0],):
        raise ShapeError(f"input bits {input_bits.shape} do not match fan-in {mask.shape[0]}")
    return float(np.sum(mask * weight_bits * input_bits[:, None]))


def ebops_conv(mask, weight_bits, input_bits, output_positions: int) -> float:
    """Conv weights ``[O, C, kh, kw]``; input bits per input channel ``C``."""
    mask = np.asarray(mask, dtype=np.float64)
    weight_bits = np.broadcast_to(np.asarray(weight_bits, dtype=np.float64), mask.shape)
    input_bits = np.asarray(input_bits, dtype=np.float64)
    if input_bits.ndim == 0:
        input_bits = np.full(mask.shape[1], float(input_bits))
    if input_bits.shape != (mask.shape[1],):
        raise ShapeError(f"input bits {input_bits.shape} do not match channels {mask.shape[1]}")
    per_position = np.sum(mask * weight_bits * input_bits[None, :, None, None])
    return float(per_position * output_positions)


def ebops_dense_tensor(mask: np.ndarray, weight_bits: ad.Tensor, input_bits) -> ad.Tensor:
    """Differentiable EBOPs from continuous bit-widths (HGQ loss)."""
    mask = np.asarray(mask, dtype=weight_bits.dtype)
    if isinstance(input_bits, ad.Tensor):
        bx = ad.reshape(input_bits, (-1, 1))
    else:
        bx = np.broadcast_to(np.asarray(input_bits, dtype=weight_bits.dtype), (mask.shape[0],)).reshape(-1, 1)
    return ad.sum_(ad.mul(ad.mul(weight_bits, mask), bx))


def ebops_conv_tensor(mask: np.ndarray, weight_bits: ad.Tensor, input_bits, output_positions: int) -> ad.Tensor:
    mask = np.asarray(mask, dtype=weight_bits.dtype)
    if isinstance(input_bits, ad.Tensor):
        bx = ad.reshape(input_bits, (1, -1, 1, 1))
    else:
        bx = np.broadcast_to(np.asarray(input_bits, dtype=weight_bits.dtype),
                             (mask.shape[1],)).reshape(1, -1, 1, 1)
    return ad.sum_(ad.mul(ad.mul(weight_bits, mask), bx)) * float(output_positions)
