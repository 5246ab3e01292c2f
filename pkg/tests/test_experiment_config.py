import json

import pytest

from experiment_config import (
    ConfigError, ExperimentConfig, apply_overrides, config_from_dict, config_schema, config_to_dict, dumps_config,
    load_config, resolve_config, save_config,
)


def test_defaults_are_valid():
    cfg = resolve_config({})
    assert cfg == ExperimentConfig()
    assert (cfg.alpha1, cfg.alpha2, cfg.beta, cfg.gamma) == (0.5, 0.5, 0.2, 0.55)
    assert cfg.relation_mask == ("r1", "r2", "r3")
    assert cfg.resolved_oks().area == 256.0


def test_partial_dict_fills_defaults():
    cfg = config_from_dict({"beta": 0.3, "kernel": {"kernel_count": 3}})
    assert cfg.beta == 0.3
    assert cfg.kernel.kernel_count == 3
    assert cfg.kernel.bandwidth_multiplier == 2.0


def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"kernel": {"kernel_cnt": 3}})
    assert info.value.key_path == "kernel.kernel_cnt"


def test_type_mismatch_names_its_path():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"optim": {"momentum": "fast"}})
    assert info.value.key_path == "optim.momentum"
    with pytest.raises(ConfigError) as info:
        config_from_dict({"batch_size": True})
    assert info.value.key_path == "batch_size"


@pytest.mark.parametrize("override,key", [
    ("beta=-0.1", "beta"),
    ("variant=triple", "variant"),
    ("dl_variant=l1", "dl_variant"),
    ('relation_mask=[]', "relation_mask"),
    ('relation_mask=["r1","r1"]', "relation_mask"),
    ("maximization=clip", "maximization"),
    ("ground_false_temperature=0", "ground_false_temperature"),
    ("codec.heatmap_size=[32,32]", "codec.heatmap_size"),
    ("keypoint_groups.Hip=[9]", "keypoint_groups.Hip"),
    ("oks.falloff=[0.1,0.1]", "oks.falloff"),
])
def test_invariants_are_enforced(override, key):
    with pytest.raises(ConfigError) as info:
        resolve_config({}, [override])
    assert info.value.key_path == key


def test_empty_mask_allowed_when_discrepancy_disabled():
    cfg = resolve_config({}, ["dl_terms=none", "relation_mask=[]"])
    assert not cfg.dl_enabled


def test_nested_value_errors_become_config_errors():
    with pytest.raises(ConfigError) as info:
        resolve_config({}, ["codec.sigma=0"])
    assert info.value.key_path == "codec"
    with pytest.raises(ConfigError):
        resolve_config({}, ["kernel.bandwidth_multiplier=1.0"])


def test_overrides():
    base = config_to_dict(ExperimentConfig())
    data = apply_overrides(base, ["gamma=0.45", 'relation_mask=["r1"]', "variant=aidf", "kernel.base_bandwidth=0.5"])
    cfg = config_from_dict(data)
    assert cfg.gamma == 0.45
    assert cfg.relation_mask == ("r1",)
    assert cfg.variant == "aidf"
    assert cfg.kernel.base_bandwidth == 0.5
    assert base["gamma"] == 0.55
    with pytest.raises(ConfigError) as info:
        apply_overrides(base, ["kernel.no_such_key=1"])
    assert info.value.key_path == "kernel.no_such_key"
    with pytest.raises(ConfigError):
        apply_overrides(base, ["gamma"])


def test_file_and_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"beta": 0.25, "seed": 7}))
    cfg = load_config(str(path), ["beta=0.1"])
    assert cfg.beta == 0.1
    assert cfg.seed == 7
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "broken.json"))


def test_snapshot_round_trip_is_byte_stable(tmp_path):
    cfg = resolve_config({}, ["variant=baseline", "oks.falloff=[0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.2]"])
    first = save_config(cfg, tmp_path / "a.json")
    again = load_config(first)
    assert again == cfg
    save_config(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert dumps_config(cfg) == (tmp_path / "a.json").read_text()


def test_schema_describes_every_field():
    schema = config_schema()
    properties = schema["properties"]
    assert set(properties) == set(config_to_dict(ExperimentConfig()))
    assert properties["variant"]["enum"] == ["baseline", "aidf", "idf"]
    assert properties["relation_mask"]["items"]["enum"] == ["r1", "r2", "r3"]
    assert properties["kernel"]["properties"]["kernel_count"]["default"] == 5
    assert properties["beta"]["default"] == 0.2
    json.dumps(schema)
