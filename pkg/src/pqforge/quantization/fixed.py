"""Fixed-point number formats and the scalar quantization rule.

A format is ``(k, i, f)``: ``k`` sign bit, ``i`` integer bits, ``f`` fractional
bits.  Values are integer multiples of ``2**-f``; the integer mantissa ``n`` lives
in ``[-2**(i+f), 2**(i+f) - 1]`` when signed and ``[0, 2**(i+f) - 1]`` otherwise.

Rounding is applied to ``x * 2**f`` and overflow handling to the resulting
integer mantissa.  Wrap modes, bit for bit:

* ``WRAP``: two's-complement wrap of the ``k+i+f`` bit word.
* ``WRAP_SM``: sign-magnitude wrap.  The sign of the mantissa is kept and its
  magnitude is reduced modulo ``2**(i+f)`` (the magnitude field width), so the
  representable set is the symmetric ``[-(2**(i+f) - 1), 2**(i+f) - 1]``.  For
  unsigned formats this coincides with ``WRAP``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError


class RoundMode(str, Enum):
    TRN = "TRN"                  # floor
    TRN_ZERO = "TRN_ZERO"        # truncate toward zero
    RND = "RND"                  # half toward +inf
    RND_CONV = "RND_CONV"        # half to even
    RND_ZERO = "RND_ZERO"        # half toward zero
    RND_MIN_INF = "RND_MIN_INF"  # half toward -inf
    RND_INF = "RND_INF"          # half away from zero


class OverflowMode(str, Enum):
    SAT = "SAT"
    SAT_SYM = "SAT_SYM"
    WRAP = "WRAP"
    WRAP_SM = "WRAP_SM"


# "RN_ZERO" appears in the published parameter table next to RND_ZERO; read as truncation toward zero.
ROUND_MODE_ALIASES = {"RN_ZERO": RoundMode.TRN_ZERO}


def parse_round_mode(value) -> RoundMode:
    if isinstance(value, RoundMode):
        return value
    if value in ROUND_MODE_ALIASES:
        return ROUND_MODE_ALIASES[value]
    try:
        return RoundMode(value)
    except ValueError:
        raise ConfigError(f"unknown round mode {value!r}") from None


def parse_overflow_mode(value) -> OverflowMode:
    if isinstance(value, OverflowMode):
        return value
    try:
        return OverflowMode(value)
    except ValueError:
        raise ConfigError(f"unknown overflow mode {value!r}") from None


@dataclass(frozen=True)
class FixedPointSpec:
    k: int
    i: int
    f: int
    round_mode: RoundMode = RoundMode.RND
    overflow_mode: OverflowMode = OverflowMode.SAT

    def __post_init__(self):
        if self.k not in (0, 1):
            raise ConfigError(f"sign bit k must be 0 or 1, got {self.k}")
        if self.k + self.i + self.f < 1:
            raise ConfigError(f"total width k+i+f must be >= 1, got ({self.k}, {self.i}, {self.f})")
        object.__setattr__(self, "round_mode", parse_round_mode(self.round_mode))
        object.__setattr__(self, "overflow_mode", parse_overflow_mode(self.overflow_mode))

    @property
    def bits(self) -> int:
        return self.k + self.i + self.f

    @property
    def max_value(self) -> float:
        return 2.0 ** self.i - 2.0 ** (-self.f)

    @property
    def min_value(self) -> float:
        return -(2.0 ** self.i) if self.k else 0.0

    @property
    def step(self) -> float:
        return 2.0 ** (-self.f)

    def as_tuple(self):
        return (self.k, self.i, self.f)


def round_scaled(v: np.ndarray, mode: RoundMode) -> np.ndarray:
    """Round already-scaled values ``v = x * 2**f`` to integers (as floats)."""
    mode = parse_round_mode(mode)
    if mode is RoundMode.TRN:
        return np.floor(v)
    if mode is RoundMode.TRN_ZERO:
        return np.trunc(v)
    fl = np.floor(v)
    frac = v - fl  # exact: the fractional part of a float is representable
    up = frac > 0.5
    tie = frac == 0.5
    if mode is RoundMode.RND:
        up |= tie
    elif mode is RoundMode.RND_CONV:
        up |= tie & (np.mod(fl, 2.0) != 0)
    elif mode is RoundMode.RND_ZERO:
        up |= tie & (v < 0)
    elif mode is RoundMode.RND_INF:
        up |= tie & (v > 0)
    # RND_MIN_INF: ties stay at the floor
    return fl + up


def mantissa_range(k, i, f):
    """Inclusive integer mantissa bounds (as floats) for arrays of formats."""
    width = np.asarray(i) + np.asarray(f)
    n_max = np.ldexp(1.0, width) - 1.0
    n_min = np.where(np.asarray(k) > 0, -np.ldexp(1.0, width), 0.0)
    return n_min, n_max


def overflow_scaled(n: np.ndarray, k, i, f, mode: OverflowMode) -> np.ndarray:
    mode = parse_overflow_mode(mode)
    n_min, n_max = mantissa_range(k, i, f)
    if mode is OverflowMode.SAT:
        return np.clip(n, n_min, n_max)
    if mode is OverflowMode.SAT_SYM:
        return np.clip(n, np.where(np.asarray(k) > 0, -n_max, 0.0), n_max)
    width = np.ldexp(1.0, np.asarray(k) + np.asarray(i) + np.asarray(f))
    wrapped = np.mod(n - n_min, width) + n_min
    if mode is OverflowMode.WRAP:
        return wrapped
    sign_magnitude = np.sign(n) * np.mod(np.abs(n), n_max + 1.0)
    return np.where(np.asarray(k) > 0, sign_magnitude, wrapped)


def quantize_array(x, k, i, f, round_mode=RoundMode.RND, overflow_mode=OverflowMode.SAT) -> np.ndarray:
    """Quantize ``x`` with per-element (broadcastable) ``k``, ``i``, ``f``.

    The result keeps ``x``'s floating dtype and lies exactly on the grid
    ``n * 2**-f``.  NaN input raises ``ValueError``.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot quantize NaN")
    f_arr = np.asarray(f)
    f_int = f_arr.astype(np.int64) if f_arr.dtype.kind == "f" else f_arr
    scaled = np.ldexp(x, f_int).astype(x.dtype, copy=False)
    n = round_scaled(scaled, round_mode)
    n = overflow_scaled(n, k, i, f_int, overflow_mode)
    # + 0.0 turns a negative zero into +0.0 so outputs compare bitwise
    return (np.ldexp(n, -f_int) + 0.0).astype(x.dtype, copy=False)


def quantize_fixed(x, spec: FixedPointSpec) -> np.ndarray:
    return quantize_array(x, spec.k, spec.i, spec.f, spec.round_mode, spec.overflow_mode)


def representable_range(k, i, f, overflow_mode=OverflowMode.SAT):
    """(low, high) real bounds of the format; SAT_SYM and WRAP_SM are symmetric."""
    n_min, n_max = mantissa_range(k, i, f)
    mode = parse_overflow_mode(overflow_mode)
    if mode in (OverflowMode.SAT_SYM, OverflowMode.WRAP_SM):
        n_min = np.where(np.asarray(k) > 0, -n_max, 0.0)
    f = np.asarray(f).astype(np.int64)
    return np.ldexp(n_min, -f), np.ldexp(n_max, -f)


def _frexp_exponent(m: np.ndarray) -> np.ndarray:
    """Smallest integer e with m < 2**e (m > 0); i.e. floor(log2 m) + 1."""
    _, e = np.frexp(m)
    return e.astype(np.int64)


def derive_integer_bits(W, granularity: str, total_bits: int, k: int, channel_axis: int | None = None,
                        min_integer_bits: int | None = None):
    """Integer bits per group so the group's largest magnitude fits without clipping.

    Groups are the whole tensor (``per_tensor``), every slice along
    ``channel_axis`` (``per_channel``) or single elements (``per_weight``).
    ``i`` starts at ``floor(log2 max|W_g|) + 1`` (exact powers of two get one
    more bit than their log) and is raised by one when rounding the maximum with
    the remaining ``f = b - k - i`` bits could still exceed the top mantissa.
    Negative ``i`` is allowed for sub-unit ranges; ``i`` is floored at
    ``min_integer_bits`` (default ``-total_bits``).  All-zero groups get ``i = 0``.
    Returns ``(i, f)`` as int arrays broadcastable against ``W``.
    """
    W = np.asarray(W)
    a = np.abs(W)
    if granularity == "per_tensor":
        m = np.asarray(a.max() if a.size else 0.0).reshape((1,) * W.ndim)
    elif granularity == "per_channel":
        if channel_axis is None:
            raise ConfigError("per_channel granularity needs a channel axis")
        axes = tuple(ax for ax in range(W.ndim) if ax != channel_axis % W.ndim)
        m = a.max(axis=axes, keepdims=True) if axes else a
    elif granularity == "per_weight":
        m = a
    else:
        raise ConfigError(f"unknown granularity {granularity!r}")
    floor = -total_bits if min_integer_bits is None else min_integer_bits
    m64 = m.astype(np.float64)
    i = np.where(m64 > 0, _frexp_exponent(np.where(m64 > 0, m64, 1.0)), 0)
    i = np.maximum(i, floor)
    f = np.maximum(total_bits - k - i, 0)
    top = np.ldexp(1.0, i + f) - 1.0
    bump = np.ldexp(m64, f) > top
    i = i + bump
    f = np.maximum(total_bits - k - i, 0)
    return i.astype(np.int64), f.astype(np.int64)
