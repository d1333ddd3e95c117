"""Lowering a trained model to integer arithmetic, and the bundle file format.

A deployed model is a flat list of integer ops.  Activations travel as
``(M, F)``: an int64 mantissa array and a per-element exponent array, the
value being ``M * 2**-F``.  Quantizers become ``quant`` ops that round and
overflow mantissas with integer shifts and floor division only; weight layers
align mantissas to a common exponent and run an exact integer MAC.

Bundle layout: one ASCII header line ``PQFORGE-BUNDLE <version> sha256=<hex>
bytes=<n>`` followed by ``n`` bytes of canonical JSON.  Integer arrays are
stored as ``{"shape": [...], "hex": "1f,-3,0,..."}``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleError, DeployError, ShapeError, StateError
from .layers import Flatten, Identity, PQActivation, PQAvgPool2d, PQBatchNorm, PQConv2d, PQDense
from .model import ModelGraph
from .nn import im2col
from .quantization.ebops import ebops_conv, ebops_dense
from .quantization.fixed import OverflowMode, RoundMode, parse_overflow_mode, parse_round_mode, quantize_array
from .quantization.quantizer import HGQQuantizer, Quantizer

BUNDLE_MAGIC = "PQFORGE-BUNDLE"
BUNDLE_VERSION = 1
EXACT_BITS = 52          # accumulators must stay below 2**52 to be exact in float64
SHIFT_LIMIT = 62
LUT_MAX_BITS = 20


# integer requantization -------------------------------------------------------------------

def requantize_int(M, F, k, i, f, round_mode=RoundMode.RND, overflow_mode=OverflowMode.SAT,
                   divisor: int = 1, zero_dead: bool = False) -> np.ndarray:
    """Mantissas of ``quantize(M * 2**-F / divisor)`` in format ``(k, i, f)``.

    Integer-only: the scaled value is ``num / den`` with ``num = M << max(f-F, 0)``
    and ``den = divisor << max(F-f, 0)``; rounding inspects the floor-division
    remainder.  Matches the floating-point quantizer on every exactly
    representable input.  ``zero_dead`` outputs 0 where ``k + i + f <= 0``.
    """
    rm, om = parse_round_mode(round_mode), parse_overflow_mode(overflow_mode)
    M = np.asarray(M, dtype=np.int64)
    k, i, f, F = (np.asarray(a, dtype=np.int64) for a in (k, i, f, F))
    s = F - f
    left = np.maximum(-s, 0)
    right = np.minimum(np.maximum(s, 0), SHIFT_LIMIT)  # exact while |M| < 2**61
    if np.any(left > 0):
        top = np.abs(M).max() if M.size else 0
        if int(top).bit_length() + int(left.max()) > SHIFT_LIMIT:
            raise DeployError("requantization shift overflows 64-bit mantissas")
    num = np.left_shift(M, left)
    den = np.left_shift(np.int64(divisor), right)
    q = np.floor_divide(num, den)
    r = num - q * den
    twice = 2 * r
    if rm is RoundMode.TRN:
        n = q
    elif rm is RoundMode.TRN_ZERO:
        n = q + ((r > 0) & (num < 0))
    else:
        up = twice > den
        tie = twice == den
        if rm is RoundMode.RND:
            up |= tie
        elif rm is RoundMode.RND_CONV:
            up |= tie & (q % 2 != 0)
        elif rm is RoundMode.RND_ZERO:
            up |= tie & (num < 0)
        elif rm is RoundMode.RND_INF:
            up |= tie & (num > 0)
        n = q + up
    n = overflow_int(n, k, i, f, om)
    if zero_dead:
        n = np.where(k + i + f > 0, n, 0)
    return n.astype(np.int64)


def overflow_int(n, k, i, f, mode=OverflowMode.SAT) -> np.ndarray:
    mode = parse_overflow_mode(mode)
    width = np.clip(np.asarray(i) + np.asarray(f), 0, SHIFT_LIMIT)
    n_max = np.left_shift(np.int64(1), width) - 1
    n_min = np.where(np.asarray(k) > 0, -(n_max + 1), 0)
    if mode is OverflowMode.SAT:
        return np.clip(n, n_min, n_max)
    if mode is OverflowMode.SAT_SYM:
        return np.clip(n, np.where(np.asarray(k) > 0, -n_max, 0), n_max)
    span = np.left_shift(np.int64(1), np.clip(np.asarray(k) + width, 0, SHIFT_LIMIT))
    wrapped = np.mod(n - n_min, span) + n_min
    if mode is OverflowMode.WRAP:
        return wrapped
    return np.where(np.asarray(k) > 0, np.sign(n) * np.mod(np.abs(n), n_max + 1), wrapped)


def accumulator_width(weight_bits: int, input_bits: int, fan_in: int) -> int:
    """``b_w + b_x + ceil(log2 fan_in)``: width that holds any sum of ``fan_in`` products."""
    return int(weight_bits) + int(input_bits) + int(math.ceil(math.log2(max(int(fan_in), 1))))


# the deployed model -----------------------------------------------------------------------

@dataclass(frozen=True)
class DeployedModel:
    """Immutable integer program: ``ops`` run in order on ``(M, F)`` pairs."""

    name: str
    input_shape: tuple
    ops: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for op in self.ops:
            for v in op.values():
                if isinstance(v, np.ndarray):
                    v.flags.writeable = False
            if op["op"] in ("dense", "conv2d"):
                _prepare_mac(op)

    def mac_ops(self) -> list:
        return [op for op in self.ops if op["op"] in ("dense", "conv2d")]

    def layer_ebops(self) -> dict:
        out = {}
        for op in self.mac_ops():
            if op["op"] == "dense":
                out[op["name"]] = ebops_dense(op["mask"], op["weight_bits"], op["input_bits"])
            else:
                out[op["name"]] = ebops_conv(op["mask"], op["weight_bits"], op["input_bits"], op["positions"])
        return out

    def ebops(self) -> float:
        return float(sum(self.layer_ebops().values()))

    def accumulator_widths(self) -> dict:
        return {op["name"]: op["acc_width"] for op in self.mac_ops()}

    def dequantized_weights(self) -> dict:
        return {op["name"]: np.ldexp(op["w_mant"].astype(np.float64), -op["w_exp"]) + 0.0 for op in self.mac_ops()}


def _prepare_mac(op):
    m, e = op["w_mant"], np.broadcast_to(op["w_exp"], op["w_mant"].shape)
    alive = m != 0
    fw = int(e[alive].max()) if alive.any() else 0
    shift = np.where(alive, fw - e, 0)
    if alive.any() and int(np.abs(m).max()).bit_length() + int(shift.max()) > SHIFT_LIMIT:
        raise DeployError(f"{op['name']}: weight exponents too far apart to align in 64 bits")
    aligned = np.where(alive, np.left_shift(m, shift), 0).astype(np.int64)
    if op["op"] == "conv2d":
        aligned = aligned.reshape(aligned.shape[0], -1).T.copy()
    aligned.flags.writeable = False
    op["_w_aligned"], op["_fw"] = aligned, fw


def _quant_op_from(q, name: str, sample_shape) -> dict:
    if isinstance(q, HGQQuantizer):
        k = np.asarray(q.k, dtype=np.int64)
        i = q.integer_bits(None).astype(np.int64)
        f = np.round(q.f_cont.data).astype(np.int64)
        rm, om, dead = q.round_mode, q.overflow_mode, True
    else:
        s = q.spec
        k, i, f = (np.asarray(v, dtype=np.int64) for v in (s.k, s.i, s.f))
        rm, om, dead = s.round_mode, s.overflow_mode, False
    shape = (1,) * (len(sample_shape) - np.ndim(i)) + np.shape(i)
    return {"op": "quant", "name": name, "k": k.reshape(()) if k.size == 1 else k,
            "i": i.reshape(shape), "f": f.reshape(shape), "round": rm.value, "overflow": om.value,
            "zero_dead": dead}


def _active(q):
    return q is not None and q.enabled


def _lower_mac(layer) -> dict:
    q = layer.weight_quantizer
    if not _active(q):
        raise DeployError(f"{layer.name}: weights are not quantized; integer deployment needs fixed-point weights")
    W = np.asarray(layer.effective_weight(), dtype=np.float64)
    k, i, f = layer.weight_format()
    f = np.asarray(f, dtype=np.int64)
    m = np.ldexp(W, np.broadcast_to(f, W.shape))
    if not np.array_equal(m, np.round(m)):
        raise DeployError(f"{layer.name}: quantized weights are off their fixed-point grid")
    mant = m.astype(np.int64)
    b_mant = b_exp = None
    b = layer.effective_bias()
    if b is not None:
        bq = layer.bias_quantizer
        if not _active(bq):
            raise DeployError(f"{layer.name}: bias is not quantized")
        b_exp = int(bq.spec.f)
        mb = np.ldexp(np.asarray(b, dtype=np.float64), b_exp)
        if not np.array_equal(mb, np.round(mb)):
            raise DeployError(f"{layer.name}: quantized bias is off its fixed-point grid")
        b_mant = mb.astype(np.int64)
    mask = (np.asarray(layer.mask()) > 0).astype(np.int64)
    wbits = np.rint(layer.weight_bits()).astype(np.int64)
    xbits = np.rint(layer.input_bits()).astype(np.int64)
    alive_bits = wbits[(mask > 0) & (mant != 0)]
    fan_in = W.shape[0] if layer.kind == "dense" else int(np.prod(W.shape[1:]))
    op = {"op": layer.kind, "name": layer.name, "w_mant": mant, "w_exp": f, "b_mant": b_mant, "b_exp": b_exp,
          "mask": mask, "weight_bits": wbits, "input_bits": xbits, "fan_in": fan_in,
          "acc_width": accumulator_width(alive_bits.max() if alive_bits.size else 0, xbits.max(), fan_in)}
    if layer.kind == "conv2d":
        op.update(stride=layer.stride, padding=layer.padding, kernel=layer.kernel_size,
                  positions=layer._out_positions)
    return op


def _lower(model: ModelGraph) -> list:
    ops = []
    shape = model.input_shape
    for layer in model.layers:
        out_shape = layer.output_shape
        if isinstance(layer, PQBatchNorm):
            raise DeployError(f"{layer.name}: batch normalization has no exact integer lowering; "
                              "fold it into the preceding layer before training")
        if isinstance(layer, (PQDense, PQConv2d)):
            if _active(layer.input_quantizer):
                ops.append(_quant_op_from(layer.input_quantizer, f"{layer.name}.in", shape))
            ops.append(_lower_mac(layer))
            if _active(layer.output_quantizer):
                ops.append(_quant_op_from(layer.output_quantizer, f"{layer.name}.out", out_shape))
        elif isinstance(layer, PQActivation):
            if layer.shift:
                ops.append({"op": "shift", "name": f"{layer.name}.scale", "amount": layer.shift})
            if _active(layer.input_quantizer):
                ops.append(_quant_op_from(layer.input_quantizer, f"{layer.name}.in", shape))
            ops.append({"op": "act", "name": layer.name, "kind": layer.activation})
            if _active(layer.output_quantizer):
                ops.append(_quant_op_from(layer.output_quantizer, f"{layer.name}.out", out_shape))
            if layer.shift:
                ops.append({"op": "shift", "name": f"{layer.name}.unscale", "amount": -layer.shift})
        elif isinstance(layer, PQAvgPool2d):
            if _active(layer.input_quantizer):
                ops.append(_quant_op_from(layer.input_quantizer, f"{layer.name}.in", shape))
            ops.append({"op": "avgpool2d", "name": layer.name, "kernel": layer.kernel_size})
            if _active(layer.output_quantizer):
                ops.append(_quant_op_from(layer.output_quantizer, f"{layer.name}.out", out_shape))
        elif isinstance(layer, Flatten):
            ops.append({"op": "flatten", "name": layer.name})
        elif isinstance(layer, Identity):
            continue
        else:
            raise DeployError(f"{layer.name}: layer kind {layer.kind!r} cannot be deployed")
        shape = out_shape
    return _fuse_tanh(ops)


def _uniform(a):
    a = np.asarray(a)
    if a.size and not np.all(a == a.reshape(-1)[0]):
        return None
    return int(a.reshape(-1)[0])


def _fuse_tanh(ops: list) -> list:
    """Replace quant -> tanh -> (flatten)* -> quant with a lookup table."""
    out = []
    idx = 0
    while idx < len(ops):
        op = ops[idx]
        if op["op"] == "act" and op["kind"] == "tanh":
            prev = out[-1] if out else None
            j = idx + 1
            while j < len(ops) and ops[j]["op"] == "flatten":
                j += 1
            nxt = ops[j] if j < len(ops) else None
            if prev is None or prev["op"] != "quant" or nxt is None or nxt["op"] != "quant":
                raise DeployError(f"{op['name']}: tanh needs quantized input and a quantizer after it "
                                  "to become a lookup table")
            kin, iin, fin = _uniform(prev["k"]), _uniform(prev["i"]), _uniform(prev["f"])
            kout, iout, fout = _uniform(nxt["k"]), _uniform(nxt["i"]), _uniform(nxt["f"])
            if None in (kin, iin, fin, kout, iout, fout):
                raise DeployError(f"{op['name']}: tanh tables need one format per tensor")
            width = kin + iin + fin
            if width > LUT_MAX_BITS or width <= 0:
                raise DeployError(f"{op['name']}: {width}-bit tanh input is outside the table size limit")
            n_min = -(1 << (iin + fin)) if kin else 0
            n = np.arange(n_min, (1 << (iin + fin)), dtype=np.int64)
            y = np.tanh(np.ldexp(n.astype(np.float64), -fin))
            q = quantize_array(y, kout, iout, fout, nxt["round"], nxt["overflow"])
            if nxt["zero_dead"] and kout + iout + fout <= 0:
                q = np.zeros_like(q)
            table = np.ldexp(q, fout).astype(np.int64)
            out.append({"op": "lut", "name": op["name"], "offset": int(n_min), "table": table,
                        "f_out": int(fout), "i_out": int(iout)})
            out.extend(ops[idx + 1:j])
            idx = j + 1
            continue
        out.append(op)
        idx += 1
    return out


# static exactness check -------------------------------------------------------------------

def _check_exactness(input_shape, ops):
    """Walk the program once with exponent arrays and magnitude bounds; refuse anything inexact."""
    F = None          # None: raw float values, not yet quantized
    bound = math.inf
    divisor = 1
    shape = tuple(input_shape)
    for pos, op in enumerate(ops):
        kind = op["op"]
        if divisor != 1 and kind != "quant":
            raise DeployError(f"{op['name']}: average pooling must be followed by a quantizer")
        if kind == "quant":
            F = np.broadcast_to(op["f"], shape).astype(np.int64)
            bound = float(np.max(np.ldexp(1.0, np.broadcast_to(op["i"], shape))))
            divisor = 1
        elif kind == "shift":
            if F is not None:
                F = F - op["amount"]
                bound = math.ldexp(bound, op["amount"])
        elif kind == "act":
            if op["kind"] == "hard_tanh":
                bound = min(bound, 1.0)
                if F is not None:
                    F = np.maximum(F, 0)
            elif op["kind"] == "tanh":
                raise DeployError(f"{op['name']}: tanh is only deployable as a lookup table")
        elif kind == "lut":
            F = np.full(shape, op["f_out"], dtype=np.int64)
            bound = math.ldexp(1.0, op["i_out"])
        elif kind in ("dense", "conv2d"):
            if F is None:
                raise DeployError(f"{op['name']}: receives unquantized values; quantize the model input")
            fx = int(F.max())
            w = np.abs(op["_w_aligned"]).astype(np.float64)
            col = float(w.sum(axis=0).max()) if w.size else 0.0
            facc = fx + op["_fw"]
            b_top = 0.0
            if op["b_mant"] is not None:
                facc = max(facc, op["b_exp"])
                b_top = float(np.max(np.abs(op["b_mant"]))) * math.ldexp(1.0, facc - op["b_exp"]) \
                    if op["b_mant"].size else 0.0
            x_top = bound * math.ldexp(1.0, fx)
            acc_top = x_top * col * math.ldexp(1.0, facc - fx - op["_fw"]) + b_top
            if acc_top >= math.ldexp(1.0, EXACT_BITS):
                raise DeployError(f"{op['name']}: accumulator may reach {math.log2(acc_top):.1f} bits, "
                                  f"above the exact limit of {EXACT_BITS}")
            op["exact_bits"] = int(math.ceil(math.log2(acc_top + 1)))
            if kind == "dense":
                shape = (op["w_mant"].shape[1],)
            else:
                c, h, w_ = shape
                oh = (h + 2 * op["padding"] - op["kernel"]) // op["stride"] + 1
                ow = (w_ + 2 * op["padding"] - op["kernel"]) // op["stride"] + 1
                shape = (op["w_mant"].shape[0], oh, ow)
            F = np.full(shape, facc, dtype=np.int64)
            bound = acc_top * math.ldexp(1.0, -facc)
        elif kind == "avgpool2d":
            if F is None:
                raise DeployError(f"{op['name']}: receives unquantized values")
            kk = op["kernel"]
            c, h, w_ = shape
            oh, ow = h // kk, w_ // kk
            blocks = F[:, :oh * kk, :ow * kk].reshape(c, oh, kk, ow, kk)
            if not np.all(blocks == blocks[:, :, :1, :, :1]):
                raise DeployError(f"{op['name']}: pooling window mixes exponents")
            F = blocks[:, :, 0, :, 0].copy()
            shape = (c, oh, ow)
            nxt = ops[pos + 1]["op"] if pos + 1 < len(ops) else None
            if nxt == "quant":
                divisor = kk * kk
            elif (kk & (kk - 1)) == 0:
                F = F + 2 * int(math.log2(kk))
            else:
                raise DeployError(f"{op['name']}: unquantized pooling by {kk}x{kk} is not exact")
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
            if F is not None:
                F = F.reshape(shape)
    return True


# finalize / infer -------------------------------------------------------------------------

def finalize_model(model: ModelGraph) -> DeployedModel:
    """Freeze a trained model into an integer program.

    Every pruning mask must already be hard and frozen.  Raises
    :class:`DeployError` for layers with no exact integer form and for
    accumulators that could leave the exact range.
    """
    for layer in model.weight_layers():
        p = layer.pruner
        if p is not None and not (p.state.frozen and p.state.hard_mask is not None):
            raise StateError(f"{layer.name}: pruning mask is still soft; round and freeze masks "
                             "(fine-tuning or finalize_masks) before deployment")
    was = model.training
    model.eval()
    try:
        ops = _lower(model)
    finally:
        model.train(was)
    deployed = DeployedModel(model.name, tuple(model.input_shape), tuple(ops),
                             {"ebops": model.ebops(), "sparsity": model.sparsity()})
    _check_exactness(deployed.input_shape, deployed.ops)
    return deployed


def _run_quant(op, state):
    kind, val, F, divisor = state
    zero = op["zero_dead"]
    if kind == "float":
        q = quantize_array(val, op["k"], op["i"], op["f"], op["round"], op["overflow"])
        if zero:
            q = np.where(op["k"] + op["i"] + op["f"] > 0, q, 0.0)
        f = np.broadcast_to(op["f"], q.shape)
        return "int", np.ldexp(q, f).astype(np.int64), np.broadcast_to(op["f"], q.shape[1:]), 1
    M = requantize_int(val, F, op["k"], op["i"], op["f"], op["round"], op["overflow"], divisor, zero)
    return "int", M, np.broadcast_to(op["f"], M.shape[1:]), 1


def _run_mac(op, M, F):
    fx = int(np.max(F))
    x = np.left_shift(M, fx - F)
    W = op["_w_aligned"]
    if op["op"] == "dense":
        acc = x @ W
    else:
        cols = im2col(x, op["kernel"], op["kernel"], op["stride"], op["padding"])
        acc = cols @ W
    facc = fx + op["_fw"]
    if op["b_mant"] is not None:
        if op["b_exp"] > facc:
            acc = np.left_shift(acc, op["b_exp"] - facc)
            facc = op["b_exp"]
        acc = acc + np.left_shift(op["b_mant"], facc - op["b_exp"])
    if op["op"] == "conv2d":
        acc = acc.transpose(0, 3, 1, 2)
    return acc, np.full(acc.shape[1:], facc, dtype=np.int64)


def int_infer(deployed: DeployedModel, X, return_mantissa: bool = False):
    """Run the integer program on raw float inputs.

    Returns float64 scores ``M * 2**-F`` (exact), or ``(M, F)`` when
    ``return_mantissa`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    if tuple(X.shape[1:]) != deployed.input_shape:
        raise ShapeError(f"expected inputs of shape (B, {', '.join(map(str, deployed.input_shape))}), got {X.shape}")
    state = ("float", X, None, 1)
    for op in deployed.ops:
        kind, val, F, divisor = state
        name = op["op"]
        if name == "quant":
            state = _run_quant(op, state)
        elif name == "shift":
            if kind == "float":
                state = (kind, np.ldexp(val, op["amount"]), None, 1)
            else:
                state = (kind, val, F - op["amount"], 1)
        elif name == "act":
            if kind == "float":
                from .nn import activation_forward

                state = (kind, activation_forward(val, op["kind"]).data, None, 1)
            elif op["kind"] == "relu":
                state = (kind, np.maximum(val, 0), F, 1)
            elif op["kind"] == "hard_tanh":
                F2 = np.maximum(F, 0)
                M = np.left_shift(val, F2 - F)
                one = np.left_shift(np.int64(1), F2)
                state = (kind, np.clip(M, -one, one), F2, 1)
        elif name == "lut":
            state = (kind, op["table"][val - op["offset"]], np.full(val.shape[1:], op["f_out"], dtype=np.int64), 1)
        elif name in ("dense", "conv2d"):
            M, F2 = _run_mac(op, val, F)
            state = (kind, M, F2, 1)
        elif name == "avgpool2d":
            kk = op["kernel"]
            b, c, h, w = val.shape
            oh, ow = h // kk, w // kk
            S = val[:, :, :oh * kk, :ow * kk].reshape(b, c, oh, kk, ow, kk).sum(axis=(3, 5))
            F2 = np.ascontiguousarray(F[:, :oh * kk:kk, :ow * kk:kk])
            if (kk & (kk - 1)) == 0:
                state = (kind, S, F2 + 2 * int(math.log2(kk)), 1)
            else:
                state = (kind, S, F2, kk * kk)
        elif name == "flatten":
            F2 = None if F is None else np.broadcast_to(F, val.shape[1:]).reshape(-1)
            state = (kind, val.reshape(val.shape[0], -1), F2, 1)
    kind, val, F, _ = state
    if kind == "float":
        return val
    if return_mantissa:
        return val, np.broadcast_to(F, val.shape[1:])
    return np.ldexp(val.astype(np.float64), np.broadcast_to(-F, val.shape)) + 0.0


# bundle -----------------------------------------------------------------------------------

_ARRAY_KEYS = ("k", "i", "f", "w_mant", "w_exp", "b_mant", "mask", "weight_bits", "input_bits", "table")


def _encode_array(a) -> dict:
    a = np.asarray(a, dtype=np.int64)
    return {"shape": list(a.shape), "hex": ",".join(format(int(v), "x") for v in a.reshape(-1))}


def _decode_array(d) -> np.ndarray:
    vals = [int(v, 16) for v in d["hex"].split(",")] if d["hex"] else []
    return np.asarray(vals, dtype=np.int64).reshape(d["shape"])


def _payload(deployed: DeployedModel) -> dict:
    ops = []
    for op in deployed.ops:
        entry = {}
        for key, value in op.items():
            if key.startswith("_"):
                continue
            if key in _ARRAY_KEYS and value is not None:
                entry[key] = _encode_array(value)
            else:
                entry[key] = value.item() if isinstance(value, np.generic) else value
        ops.append(entry)
    return {"format": BUNDLE_MAGIC, "name": deployed.name, "input_shape": list(deployed.input_shape),
            "ops": ops, "meta": deployed.meta}


def bundle_bytes(deployed: DeployedModel) -> bytes:
    body = json.dumps(_payload(deployed), sort_keys=True, separators=(",", ":")).encode()
    digest = hashlib.sha256(body).hexdigest()
    header = f"{BUNDLE_MAGIC} {BUNDLE_VERSION} sha256={digest} bytes={len(body)}\n".encode()
    return header + body


def export_bundle(deployed: DeployedModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bundle_bytes(deployed))
    return path


def load_bundle_bytes(raw: bytes) -> DeployedModel:
    head, sep, body = raw.partition(b"\n")
    parts = head.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 4 or parts[0] != BUNDLE_MAGIC:
        raise BundleError("not a pqforge bundle (bad header)")
    try:
        version = int(parts[1])
    except ValueError:
        raise BundleError(f"bad bundle version field {parts[1]!r}") from None
    if version != BUNDLE_VERSION:
        raise BundleError(f"bundle version {version} is not supported (expected {BUNDLE_VERSION})")
    digest = parts[2].removeprefix("sha256=")
    length = int(parts[3].removeprefix("bytes=")) if parts[3].removeprefix("bytes=").isdigit() else -1
    if len(body) != length or hashlib.sha256(body).hexdigest() != digest:
        raise BundleError(f"bundle checksum mismatch: file is truncated or corrupted "
                          f"({len(body)} of {length} payload bytes)")
    data = json.loads(body)
    ops = []
    for entry in data["ops"]:
        op = {}
        for key, value in entry.items():
            op[key] = _decode_array(value) if key in _ARRAY_KEYS and value is not None else value
        ops.append(op)
    try:
        deployed = DeployedModel(data["name"], tuple(data["input_shape"]), tuple(ops), data.get("meta", {}))
    except (KeyError, ValueError, TypeError) as exc:
        raise BundleError(f"malformed bundle payload: {exc}") from None
    _check_exactness(deployed.input_shape, deployed.ops)
    return deployed


def import_bundle(path) -> DeployedModel:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise BundleError(f"cannot read bundle: {exc}") from None
    return load_bundle_bytes(raw)
