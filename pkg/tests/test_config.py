import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from pqforge.config import (
    config_from_dict,
    config_hash,
    config_to_dict,
    default_config,
    dump_config,
    load_config,
    load_preset,
    merge_layer_overrides,
    preset_names,
    update_config,
)
from pqforge.errors import ConfigError

METHODS = ("activation", "autosparse", "cs", "dst", "mdmm", "pdp", "wanda")


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_config(path)
    q = cfg.quantization
    assert q.default_weight_keep_negatives + q.default_weight_integer_bits + q.default_weight_fractional_bits == 8
    assert q.default_data_keep_negatives + q.default_data_integer_bits + q.default_data_fractional_bits == 8
    assert q.quantize_input is True and cfg.pruning_method is None


@pytest.mark.parametrize("mode", ["TRN", "RND", "RND_CONV", "RND_ZERO", "RND_INF", "RND_MIN_INF", "TRN_ZERO"])
def test_round_modes_accepted(mode):
    assert config_from_dict({"quantization": {"round_mode": mode}}).quantization.round_mode.value == mode


def test_rn_zero_spelling_is_accepted_as_truncation():
    assert config_from_dict({"quantization": {"round_mode": "RN_ZERO"}}).quantization.round_mode.value == "TRN_ZERO"


def test_bad_enum_names_key_path():
    with pytest.raises(ConfigError, match=r"^quantization\.round_mode") as info:
        config_from_dict({"quantization": {"round_mode": "BANANA"}})
    assert info.value.path == "quantization.round_mode"


def test_unknown_key_names_key_path():
    with pytest.raises(ConfigError, match=r"^training\.epoch:") as info:
        config_from_dict({"training": {"epoch": 3}})
    assert "bogus: bogus" not in str(info.value)


def test_wrong_type_names_key_path():
    with pytest.raises(ConfigError, match=r"training\.batch_size"):
        config_from_dict({"training": {"batch_size": "large"}})


def test_pruning_block_is_discriminated_by_method():
    cfg = config_from_dict({"pruning": {"pruning_method": "pdp", "sparsity": 0.9},
                            "training": {"pretraining_epochs": 1}})
    assert cfg.pruning.sparsity == 0.9
    with pytest.raises(ConfigError, match=r"pruning\.alpha"):
        config_from_dict({"pruning": {"pruning_method": "pdp", "alpha": 0.1}, "training": {"pretraining_epochs": 1}})


@pytest.mark.parametrize("method", METHODS)
def test_default_configs_round_trip(method, tmp_path):
    cfg = default_config(method)
    path = tmp_path / "c.yaml"
    dump_config(cfg, path)
    assert load_config(path) == cfg
    assert config_hash(load_config(path)) == config_hash(cfg)


def test_default_config_stage_shapes():
    assert default_config("cs").training.fine_tuning_epochs > 0
    assert default_config("activation").training.pretraining_epochs == 0
    assert default_config("pdp").training.pretraining_epochs > 0
    with pytest.raises(ConfigError):
        default_config("magic")


def test_stage_rules():
    with pytest.raises(ConfigError, match="pretraining"):
        config_from_dict({"pruning": {"pruning_method": "dst"}, "training": {"pretraining_epochs": 5}})
    with pytest.raises(ConfigError, match="pre-training"):
        config_from_dict({"pruning": {"pruning_method": "wanda"}})
    with pytest.raises(ConfigError, match="optional_fine_tuning"):
        config_from_dict({"pruning": {"pruning_method": "dst"}, "training": {"fine_tuning_epochs": 5}})
    ok = config_from_dict({"pruning": {"pruning_method": "dst"},
                           "training": {"fine_tuning_epochs": 5, "optional_fine_tuning": True}})
    assert ok.training.fine_tuning_epochs == 5
    # pre-training is allowed for any method once the compression search runs
    config_from_dict({"pruning": {"pruning_method": "dst"}, "training": {"pretraining_epochs": 5},
                      "fitcompress": {"enabled": True}})


def test_wanda_n_m_validation():
    base = {"training": {"pretraining_epochs": 1}}
    with pytest.raises(ConfigError, match="N and M"):
        config_from_dict({**base, "pruning": {"pruning_method": "wanda", "N": 2}})
    with pytest.raises(ConfigError, match="N must be <= M"):
        config_from_dict({**base, "pruning": {"pruning_method": "wanda", "N": 4, "M": 2}})


def test_hpo_space_validation():
    cfg = config_from_dict({"hpo": {"search_space": {"training.learning_rate": {
        "type": "log_uniform", "low": 1e-4, "high": 1e-2}}}})
    assert cfg.hpo.search_space["training.learning_rate"].type == "log_uniform"
    with pytest.raises(ConfigError, match="low"):
        config_from_dict({"hpo": {"search_space": {"x": {"type": "log_uniform", "low": 0.0, "high": 1.0}}}})
    with pytest.raises(ConfigError, match="directions"):
        config_from_dict({"hpo": {"objectives": ["accuracy", "ebops"], "directions": ["maximize"]}})


def test_layer_overrides_win_key_by_key():
    cfg = config_from_dict({"quantization": {"layer_specific": {"dense2": {"weight": {"fractional_bits": 5}}}},
                            "pruning": {"pruning_method": "dst", "disable_pruning_for_layers": ["dense4"]}})
    assert merge_layer_overrides(cfg, "dense2").weight.as_tuple() == (1, 0, 5)
    assert merge_layer_overrides(cfg, "dense1").weight.as_tuple() == (1, 0, 7)
    assert merge_layer_overrides(cfg, "dense2").bias.as_tuple() == (1, 0, 5)
    assert merge_layer_overrides(cfg, "dense4").prune is False
    assert merge_layer_overrides(cfg, "dense1").prune is True


def test_empty_layer_specific_is_pure_defaults():
    cfg = default_config(None)
    s = merge_layer_overrides(cfg, "anything")
    assert s.weight.as_tuple() == (1, 0, 7) and s.input.as_tuple() == (1, 3, 4)


def test_update_config_revalidates():
    cfg = update_config(default_config("dst"), {"pruning.alpha": 0.5, "training.epochs": 3})
    assert cfg.pruning.alpha == 0.5 and cfg.training.epochs == 3
    with pytest.raises(ConfigError, match=r"pruning\.nope"):
        update_config(cfg, {"pruning.nope": 1})


def test_config_hash_tracks_content():
    a, b = default_config("dst"), update_config(default_config("dst"), {"pruning.alpha": 0.3})
    assert config_hash(a) == config_hash(default_config("dst")) != config_hash(b)


def test_unreadable_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("training: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("3\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(scalar)


@pytest.mark.parametrize("name", preset_names())
def test_presets_load(name):
    cfg = load_preset(name)
    assert config_from_dict(yaml.safe_load(dump_config(cfg))) == cfg


def test_preset_values():
    assert load_preset("pdp_t").pruning.sparsity == 0.94
    assert load_preset("fitcompress_c").fitcompress.compression_goal == 0.0075
    assert load_preset("hgq").quantization.use_high_granularity_quantization is True
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("nope")


def _paths(tree, prefix=()):
    for key, value in tree.items():
        yield prefix + (key,), value
        if isinstance(value, dict):
            yield from _paths(value, prefix + (key,))


_VALID = config_to_dict(default_config("dst"))
_BLOCK_PATHS = [p for p, v in _paths(_VALID) if isinstance(v, dict)]


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(_BLOCK_PATHS), st.text("abcdefghijklmnopqrstuvwxyz_", min_size=3, max_size=12))
def test_unknown_keys_anywhere_are_rejected_with_path(block, key):
    node = _VALID
    for part in block:
        node = node[part]
    if key in node:
        return
    data = config_to_dict(default_config("dst"))
    target = data
    for part in block:
        target = target[part]
    target[key] = 1
    path = ".".join(block + (key,))
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert path in str(info.value)


def test_numeric_ranges():
    with pytest.raises(ConfigError, match="pruning.sparsity"):
        config_from_dict({"pruning": {"pruning_method": "pdp", "sparsity": 1.0}, "training": {"pretraining_epochs": 1}})
    with pytest.raises(ConfigError, match="default weight width"):
        config_from_dict({"quantization": {"default_weight_keep_negatives": 0, "default_weight_integer_bits": -3,
                                           "default_weight_fractional_bits": 0}})
    assert np.isclose(config_from_dict({"quantization": {"hgq_beta": 3e-6}}).quantization.hgq_beta, 3e-6)
