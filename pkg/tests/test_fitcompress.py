import numpy as np
import pytest

from pqforge.config import FITCompressConfig, config_from_dict, default_config
from pqforge.data import synth_dataset
from pqforge.errors import ConfigError, SearchError
from pqforge.fitcompress import apply_fitcompress, empirical_fisher, fitcompress_search, global_magnitude_masks
from pqforge.model import hlf_mlp


@pytest.fixture(scope="module")
def data():
    return synth_dataset(300, seed=1)


def _model():
    return hlf_mlp(default_config(None), seed=0, dtype=np.float64)


def _fisher(model, value=1.0):
    return {layer.name: np.full(layer.weight.shape, value) for layer in model.weight_layers()}


def test_goal_already_met_makes_no_moves(data):
    model = _model()
    before = model.state_dict()
    result = fitcompress_search(model, data.train, FITCompressConfig(enabled=True, compression_goal=1.0))
    assert result.history == [] and result.sparsity == 0.0
    assert set(result.bits.values()) == {32}
    apply_fitcompress(model, result)
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())
    assert all(layer.pruner is None for layer in model.weight_layers())


def test_zero_fisher_layer_is_compressed_first():
    model = _model()
    fisher = _fisher(model)
    fisher["dense3"][...] = 0.0
    result = fitcompress_search(model, None, FITCompressConfig(enabled=True, compression_goal=0.2), fisher=fisher)
    assert result.history[0] == {**result.history[0], "move": "bits", "layer": "dense3", "value": 31}
    assert result.history[0]["score"] == 0.0


def test_reaches_goal_with_falling_bops(data):
    model = _model()
    cfg = FITCompressConfig(enabled=True, compression_goal=0.01)
    result = fitcompress_search(model, data.train, cfg, batch_size=100)
    bops = [h["bops"] for h in result.history]
    assert result.ratio <= 0.01 and result.bops == pytest.approx(result.ratio * result.base_bops)
    assert all(b < a for a, b in zip([result.base_bops] + bops, bops))
    assert all(b >= cfg.bit_floor for b in result.bits.values())


def test_unreachable_goal_reports_best(data):
    model = _model()
    cfg = FITCompressConfig(enabled=True, compression_goal=1e-4, bit_floor=6, max_sparsity=0.1)
    with pytest.raises(SearchError, match="unreachable") as info:
        fitcompress_search(model, None, cfg, fisher=_fisher(model))
    assert info.value.best > 1e-4


def test_hgq_weights_are_refused():
    model = hlf_mlp(config_from_dict({"quantization": {"use_high_granularity_quantization": True}}))
    with pytest.raises(ConfigError, match="HGQ"):
        fitcompress_search(model, None, fisher={})
    with pytest.raises(ConfigError, match="quantized"):
        fitcompress_search(hlf_mlp(None), None, fisher={})


def test_global_magnitude_masks_prune_smallest_across_layers():
    class V:
        def __init__(self, name, theta):
            self.name, self.theta = name, np.asarray(theta, dtype=float)

    masks = global_magnitude_masks([V("a", [0.1, 5.0]), V("b", [0.2, 0.05, 3.0])], 0.4)
    assert masks["a"].tolist() == [0, 1] and masks["b"].tolist() == [1, 0, 1]


def test_fisher_is_mean_squared_gradient(data):
    model = _model()
    f = empirical_fisher(model, data.train, batch_size=100, batches=2)
    assert set(f) == {"dense1", "dense2", "dense3", "dense4"}
    assert all(np.all(v >= 0) for v in f.values()) and f["dense1"].shape == (16, 64)


def test_apply_writes_widths_and_masks(data):
    model = _model()
    result = fitcompress_search(model, data.train, FITCompressConfig(enabled=True, compression_goal=0.01),
                                batch_size=100)
    apply_fitcompress(model, result)
    for layer in model.weight_layers():
        layer.pruner.active = True
        assert layer.weight_quantizer.total_bits == result.bits[layer.name]
        assert np.array_equal(layer.mask(), result.masks[layer.name])
    assert model.ebops() == pytest.approx(result.bops)
