"""Independent reference implementations the package is checked against.

Nothing here imports pqforge.  Each oracle uses a different mechanism from
the code under test: integer shifts instead of float rounding, scalar loops
instead of vector ops, an O(n^2) scan instead of a sweep.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

ROUND_MODES = ("TRN", "TRN_ZERO", "RND", "RND_ZERO", "RND_INF", "RND_MIN_INF", "RND_CONV")
OVERFLOW_MODES = ("SAT", "SAT_SYM", "WRAP", "WRAP_SM")


# fixed point -------------------------------------------------------------------------------

def split_float(x: np.ndarray):
    """``x = M * 2**E`` with int64 ``M`` (|M| < 2**53) and int64 ``E``, exactly."""
    m, e = np.frexp(np.asarray(x, dtype=np.float64))
    M = np.ldexp(m, 53).astype(np.int64)
    return M, e.astype(np.int64) - 53


def round_exact(M: np.ndarray, E: np.ndarray, f: int, mode: str) -> np.ndarray:
    """Integer rounding of ``M * 2**(E + f)`` using shifts and remainders only."""
    s = -(E + f)
    if np.any(s <= 0):
        raise ValueError("inputs must have a fractional part below 2**-f resolution")
    s = np.minimum(s, 62)  # |M| < 2**53, so the sign of (r - half) is unchanged by the clip
    q = np.right_shift(M, s)
    r = M - np.left_shift(q, s)
    half = np.left_shift(np.int64(1), s - 1)
    above, tie = r > half, r == half
    if mode == "TRN":
        return q
    if mode == "TRN_ZERO":
        return q + ((r > 0) & (M < 0))
    if mode == "RND":
        return q + (above | tie)
    if mode == "RND_MIN_INF":
        return q + above
    if mode == "RND_ZERO":
        return q + (above | (tie & (M < 0)))
    if mode == "RND_INF":
        return q + (above | (tie & (M > 0)))
    if mode == "RND_CONV":
        return q + (above | (tie & (q % 2 == 1)))
    raise ValueError(mode)


def overflow_exact(n: np.ndarray, k: int, i: int, f: int, mode: str) -> np.ndarray:
    mag = 2 ** (i + f)
    lo, hi = (-mag if k else 0), mag - 1
    if mode == "SAT":
        return np.clip(n, lo, hi)
    if mode == "SAT_SYM":
        return np.clip(n, -hi if k else 0, hi)
    span = 2 ** (k + i + f)
    wrapped = np.mod(n - lo, span) + lo
    if mode == "WRAP" or not k:
        return wrapped
    if mode == "WRAP_SM":
        return np.sign(n) * np.mod(np.abs(n), mag)
    raise ValueError(mode)


def quantize_exact(x, k, i, f, round_mode, overflow_mode) -> np.ndarray:
    M, E = split_float(x)
    n = overflow_exact(round_exact(M, E, f, round_mode), k, i, f, overflow_mode)
    return np.ldexp(n.astype(np.float64), -f)


def quantize_scalar(x: float, k: int, i: int, f: int, round_mode: str, overflow_mode: str) -> float:
    """One value through Python fractions; slow, used to cross-check the vector oracle."""
    v = Fraction(x) * 2 ** f
    fl = math.floor(v)
    frac = v - fl
    half = Fraction(1, 2)
    if round_mode == "TRN":
        n = fl
    elif round_mode == "TRN_ZERO":
        n = math.trunc(v)
    else:
        n = fl + (frac > half)
        if frac == half:
            n = {"RND": fl + 1, "RND_MIN_INF": fl, "RND_ZERO": fl + (v < 0), "RND_INF": fl + (v > 0),
                 "RND_CONV": fl + (fl % 2)}[round_mode]
    n = int(overflow_exact(np.int64(n), k, i, f, overflow_mode))
    return float(Fraction(n, 2 ** f))


# autodiff ----------------------------------------------------------------------------------

def central_difference(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``fn`` at ``x`` (modified in place and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + eps
        up = fn()
        flat[j] = old - eps
        down = fn()
        flat[j] = old
        gflat[j] = (up - down) / (2 * eps)
    return g


def adam_scalar(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, weight_decay=0.0):
    """Adam on one float, step by step, in plain Python."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        g = g + weight_decay * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out


# layers ------------------------------------------------------------------------------------

def dense_loop(x, W, b=None):
    B, I = x.shape
    O = W.shape[1]
    y = np.zeros((B, O))
    for n in range(B):
        for o in range(O):
            acc = 0.0 if b is None else float(b[o])
            for i in range(I):
                acc += float(x[n, i]) * float(W[i, o])
            y[n, o] = acc
    return y


def conv_loop(x, W, b=None, stride=1, padding=0):
    B, C, H, Wd = x.shape
    O, _, K, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (H + 2 * padding - K) // stride + 1
    ow = (Wd + 2 * padding - K) // stride + 1
    y = np.zeros((B, O, oh, ow))
    for n in range(B):
        for o in range(O):
            for r in range(oh):
                for c in range(ow):
                    patch = xp[n, :, r * stride:r * stride + K, c * stride:c * stride + K]
                    y[n, o, r, c] = np.sum(patch * W[o]) + (0.0 if b is None else b[o])
    return y


def softmax_ce_scalar(logits, labels) -> float:
    total = 0.0
    for row, y in zip(logits, labels):
        top = max(row)
        lse = top + math.log(sum(math.exp(v - top) for v in row))
        total += lse - row[y]
    return total / len(labels)


# search ------------------------------------------------------------------------------------

def dominates(a, b, directions) -> bool:
    better = False
    for x, y, d in zip(a, b, directions):
        if d == "maximize":
            x, y = -x, -y
        if x > y:
            return False
        if x < y:
            better = True
    return better


def pareto_oracle(values, directions) -> list[int]:
    return [j for j, v in enumerate(values)
            if not any(dominates(w, v, directions) for m, w in enumerate(values) if m != j)]


def ebops_loop(mask, weight_bits, input_bits) -> float:
    total = 0.0
    I, O = mask.shape
    for i in range(I):
        for o in range(O):
            if mask[i, o]:
                total += float(weight_bits[i, o]) * float(input_bits[i])
    return total
