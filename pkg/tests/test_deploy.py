import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import OVERFLOW_MODES, ROUND_MODES, quantize_exact
from pqforge.config import config_from_dict, default_config, merge_layer_overrides
from pqforge.deploy import (
    accumulator_width,
    bundle_bytes,
    export_bundle,
    finalize_model,
    import_bundle,
    int_infer,
    load_bundle_bytes,
    requantize_int,
)
from pqforge.errors import BundleError, DeployError, ShapeError, StateError
from pqforge.layers import PQDense
from pqforge.model import ModelGraph, apply_fixed_masks, hlf_mlp, replace_layers


def _single_neuron(w=0.5):
    settings = merge_layer_overrides(default_config(None), "d")
    layer = PQDense(1, 1, "d", settings, bias=True, dtype=np.float64)
    layer.weight.data[...] = w
    return ModelGraph([layer], (1,))


def test_single_neuron():
    deployed = finalize_model(_single_neuron())
    out = int_infer(deployed, np.array([[0.25]]))
    assert out.tolist() == [[0.125]]
    M, F = int_infer(deployed, np.array([[0.25]]), return_mantissa=True)
    assert M[0, 0] * 2.0 ** -F[0] == 0.125


def test_all_zero_input_gives_quantized_bias():
    model = _single_neuron()
    model.layer("d").bias.data[...] = 0.3
    out = int_infer(finalize_model(model), np.zeros((2, 1)))
    assert out.tolist() == [[0.296875], [0.296875]]  # bias format (1, 0, 7): 0.3 * 128 = 38.4 -> 38/128


def test_accumulator_width():
    assert accumulator_width(8, 8, 16) == 20
    assert accumulator_width(8, 8, 17) == 21
    assert accumulator_width(4, 6, 1) == 10


def test_reported_accumulator_widths():
    deployed = finalize_model(hlf_mlp(default_config(None), dtype=np.float64))
    widths = deployed.accumulator_widths()
    assert widths["dense1"] == 8 + 8 + 4 and widths["dense2"] == 8 + 8 + 6


def test_pruned_half_gives_zero_mantissas(rng):
    model = hlf_mlp(default_config(None), dtype=np.float64)
    mask = np.zeros(16 * 64)
    mask[rng.permutation(mask.size)[: mask.size // 2]] = 1
    apply_fixed_masks(model, {"dense1": mask.reshape(16, 64)})
    model.layer("dense1").pruner.active = True
    deployed = finalize_model(model)
    w = deployed.dequantized_weights()["dense1"]
    assert np.mean(w == 0) >= 0.5
    assert deployed.ebops() == pytest.approx(model.ebops())


def test_soft_masks_are_refused():
    cfg = config_from_dict({"pruning": {"pruning_method": "dst"}})
    model = hlf_mlp(cfg, dtype=np.float64)
    with pytest.raises(StateError, match="soft"):
        finalize_model(model)
    model.finalize_masks()
    finalize_model(model)


def test_unquantized_weights_are_refused():
    with pytest.raises(DeployError, match="not quantized"):
        finalize_model(hlf_mlp(None, dtype=np.float64))


def test_batchnorm_is_refused():
    desc = {"input_shape": [4], "layers": [
        {"kind": "dense", "name": "d", "in_features": 4, "out_features": 4},
        {"kind": "batchnorm", "name": "bn", "features": 4},
    ]}
    with pytest.raises(DeployError, match="batch normalization"):
        finalize_model(replace_layers(desc, default_config(None), dtype=np.float64))


def test_matches_float_model_bit_for_bit(rng):
    model = hlf_mlp(default_config(None), seed=5, dtype=np.float64)
    X = rng.normal(scale=2.0, size=(500, 16))
    assert np.array_equal(int_infer(finalize_model(model), X), model.predict(X))


def test_wrong_input_shape():
    with pytest.raises(ShapeError):
        int_infer(finalize_model(_single_neuron()), np.zeros((2, 3)))


def test_bundle_round_trip(tmp_path, rng):
    deployed = finalize_model(hlf_mlp(default_config(None), seed=2, dtype=np.float64))
    path = export_bundle(deployed, tmp_path / "m.pqb")
    again = import_bundle(path)
    X = rng.normal(size=(64, 16))
    assert np.array_equal(int_infer(again, X), int_infer(deployed, X))
    assert bundle_bytes(again) == bundle_bytes(deployed)


def test_truncated_or_corrupted_bundle(tmp_path):
    raw = bundle_bytes(finalize_model(_single_neuron()))
    with pytest.raises(BundleError, match="truncated"):
        load_bundle_bytes(raw[:-10])
    flipped = bytearray(raw)
    flipped[-5] ^= 1
    with pytest.raises(BundleError):
        load_bundle_bytes(bytes(flipped))
    with pytest.raises(BundleError, match="header"):
        load_bundle_bytes(b"hello")
    with pytest.raises(BundleError, match="version"):
        load_bundle_bytes(raw.replace(b"PQFORGE-BUNDLE 1", b"PQFORGE-BUNDLE 9", 1))
    with pytest.raises(BundleError):
        import_bundle(tmp_path / "missing.pqb")


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2 ** 20), 2 ** 20), st.integers(0, 12), st.integers(0, 1), st.integers(-2, 4),
       st.integers(0, 6), st.sampled_from(ROUND_MODES), st.sampled_from(OVERFLOW_MODES))
def test_integer_requantization_matches_exact_quantizer(m, F, k, i, f, rm, om):
    if k + i + f < 1:
        return
    want = quantize_exact(np.array([m * 2.0 ** -F]), k, i, f, rm, om)[0]
    got = requantize_int(np.array([m]), F, k, i, f, rm, om)[0]
    assert got * 2.0 ** -f == want
