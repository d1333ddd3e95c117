"""Fixed-point formats, trainable quantizers and the EBOPs cost model."""

from .ebops import ebops_conv, ebops_conv_tensor, ebops_dense, ebops_dense_tensor
from .fixed import (
    FixedPointSpec,
    OverflowMode,
    RoundMode,
    derive_integer_bits,
    mantissa_range,
    overflow_scaled,
    parse_overflow_mode,
    parse_round_mode,
    quantize_array,
    quantize_fixed,
    representable_range,
    round_scaled,
)
from .quantizer import GRANULARITIES, HGQQuantizer, Quantizer, QuantizerState, ste_quantize

__all__ = [
    "FixedPointSpec", "GRANULARITIES", "HGQQuantizer", "OverflowMode", "Quantizer", "QuantizerState",
    "RoundMode", "derive_integer_bits", "ebops_conv", "ebops_conv_tensor", "ebops_dense",
    "ebops_dense_tensor", "mantissa_range", "overflow_scaled", "parse_overflow_mode", "parse_round_mode",
    "quantize_array", "quantize_fixed", "representable_range", "round_scaled", "ste_quantize",
]
