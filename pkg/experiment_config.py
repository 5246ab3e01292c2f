"""
Experiment Configuration Module

This module handles:
- ExperimentConfig: every hyperparameter of one experiment in one record
  (loss weights, kernel/OKS/codec settings, optimizer schedules, data sizes)
- Strict construction from plain dicts (unknown keys and wrong types are
  reported with their dotted key path)
- Dotted-key overrides ("kernel.kernel_count=3")
- Validation of cross-field invariants
- A JSON-schema-style description of every field
- JSON load/save with sorted keys so resolved snapshots are byte-stable
"""

import copy
import dataclasses
import json
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

from discrepancy import (
    DL_TERMS, DL_VARIANTS, RELATIONS, DiscrepancyConfig, KernelConfig, OksConfig,
)
from heatmap_codec import CodecConfig
from model_zoo import VARIANTS, BackboneSpec, HEAD_UPSAMPLES, ModelSpecError


MAXIMIZATION_MODES = ("ground_false", "negation")

DEFAULT_KEYPOINT_GROUPS = {
    "Head": [0, 1],
    "Elb": [2, 4],
    "Wri": [3, 5],
    "Hip": [6],
    "Ank": [7],
}


class ConfigError(ValueError):
    """Invalid configuration; `key_path` names the offending dotted key."""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


@dataclass
class DataConfig:
    """Synthetic dataset sizes and domain presets."""
    root: str = "data"
    image_size: int = 64
    num_joints: int = 8
    source_count: int = 2000
    target_count: int = 2000
    source_val_count: int = 200
    target_test_count: int = 500
    unseen_test_count: int = 500
    source_shift: str = "source"
    target_shift: str = "target"
    unseen_shift: str = "unseen"


@dataclass
class OptimConfig:
    """
    Optimizer schedules.

    Pretraining: Adam at pretrain_lr, multiplied by pretrain_gamma at each
    epoch in pretrain_milestones.
    Adaptation: momentum SGD with lr_t = lr_0 * (1 + lr_gamma * t) ** -lr_decay.
    """
    pretrain_lr: float = 1e-3
    pretrain_milestones: Tuple[int, ...] = (6, 9)
    pretrain_gamma: float = 0.1
    adapt_lr_backbone: float = 1e-3
    adapt_lr_heads: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_gamma: float = 1e-4
    lr_decay: float = 0.75


@dataclass
class ExperimentConfig:
    """All hyperparameters of one experiment."""
    alpha1: float = 0.5
    alpha2: float = 0.5
    beta: float = 0.2
    gamma: float = 0.55
    pretrain_epochs: int = 10
    pretrain_iters_per_epoch: int = 0
    adapt_epochs: int = 5
    adapt_iters_per_epoch: int = 100
    batch_size: int = 32
    seed: int = 0
    variant: str = "idf"
    dl_variant: str = "mmd"
    dl_terms: str = "dl"
    relation_mask: Tuple[str, ...] = RELATIONS
    symmetric_r2: bool = False
    maximization: str = "ground_false"
    ground_false_temperature: float = 0.1
    stage_c_anchor: bool = True
    eval_every: int = 100
    checkpoint_every: int = 100
    threshold_ratio: float = 0.05
    num_threads: int = 0
    keypoint_groups: Dict[str, List[int]] = field(default_factory=lambda: copy.deepcopy(DEFAULT_KEYPOINT_GROUPS))
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    codec: CodecConfig = field(default_factory=CodecConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    oks: OksConfig = field(default_factory=OksConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def dl_enabled(self) -> bool:
        return self.dl_terms != "none"

    def discrepancy_config(self) -> DiscrepancyConfig:
        return DiscrepancyConfig(kernel=self.kernel, variant=self.dl_variant,
                                 relation_mask=self.relation_mask, terms=self.dl_terms,
                                 symmetric_r2=self.symmetric_r2)

    def resolved_oks(self) -> OksConfig:
        return self.oks.resolve(self.codec.heatmap_size)


# ---------------------------------------------------------------------------
# dict <-> dataclass
# ---------------------------------------------------------------------------

def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _type_name(hint) -> str:
    return getattr(hint, "__name__", None) or str(hint).replace("typing.", "")


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        for option in args:
            if option is type(None):
                continue
            try:
                return _coerce(value, option, path)
            except ConfigError:
                continue
        raise ConfigError(path, f"expected {_type_name(hint)}, got {value!r}")
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
            items = [_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args))]
        else:
            item_hint = args[0] if args else Any
            items = [_coerce(v, item_hint, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {value!r}")
        key_hint, value_hint = args if args else (Any, Any)
        return {_coerce(k, key_hint, path): _coerce(v, value_hint, _join(path, str(k))) for k, v in value.items()}
    if hint is Any:
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {_type_name(hint)}")


def _build(cls, data, path: str = ""):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(_join(path, key), "unknown key")
    kwargs = {key: _coerce(value, hints[key], _join(path, key)) for key, value in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(path, str(e))


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """
    Build and validate an ExperimentConfig from a (possibly partial) dict.

    Missing keys take their defaults.

    Args:
        data: Nested dict as found in a JSON config file

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: On unknown keys, wrong types or violated invariants
    """
    cfg = _build(ExperimentConfig, data)
    validate(cfg)
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Plain JSON-ready dict (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


# ---------------------------------------------------------------------------
# Overrides
# ---------------------------------------------------------------------------

def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dotted-key overrides to a fully resolved config dict.

    Values are parsed as JSON, falling back to the raw string, so
    "beta=0.3", "relation_mask=[\"r1\"]" and "variant=aidf" all work.

    Args:
        data: Resolved config dict (every key present)
        overrides: Strings of the form "a.b=value"

    Returns:
        A new dict with the overrides applied

    Raises:
        ConfigError: On a malformed override or a key that does not exist
    """
    result = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key_path, raw = item.split("=", 1)
        key_path = key_path.strip()
        parts = key_path.split(".")
        node = result
        for depth, part in enumerate(parts):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(key_path, "unknown key")
            if depth == len(parts) - 1:
                node[part] = _parse_value(raw)
            else:
                node = node[part]
    return result


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _require(condition: bool, key_path: str, message: str):
    if not condition:
        raise ConfigError(key_path, message)


def validate(cfg: ExperimentConfig):
    """
    Check cross-field invariants.

    Raises:
        ConfigError: Naming the first offending key
    """
    for name in ("alpha1", "alpha2", "beta", "gamma"):
        _require(getattr(cfg, name) >= 0, name, f"must be >= 0, got {getattr(cfg, name)}")
    _require(cfg.variant in VARIANTS, "variant", f"must be one of {VARIANTS}, got {cfg.variant!r}")
    _require(cfg.dl_variant in DL_VARIANTS, "dl_variant", f"must be one of {DL_VARIANTS}, got {cfg.dl_variant!r}")
    _require(cfg.dl_terms in DL_TERMS, "dl_terms", f"must be one of {DL_TERMS}, got {cfg.dl_terms!r}")
    _require(cfg.maximization in MAXIMIZATION_MODES, "maximization",
             f"must be one of {MAXIMIZATION_MODES}, got {cfg.maximization!r}")
    _require(cfg.ground_false_temperature > 0, "ground_false_temperature",
             f"must be > 0, got {cfg.ground_false_temperature}")
    unknown = set(cfg.relation_mask) - set(RELATIONS)
    _require(not unknown, "relation_mask", f"unknown relations {sorted(unknown)}")
    _require(len(set(cfg.relation_mask)) == len(cfg.relation_mask), "relation_mask", "duplicate relations")
    if cfg.dl_enabled:
        _require(len(cfg.relation_mask) > 0, "relation_mask", "must not be empty when the discrepancy loss is enabled")

    for name in ("pretrain_epochs", "pretrain_iters_per_epoch", "adapt_epochs", "adapt_iters_per_epoch",
                 "eval_every", "checkpoint_every", "num_threads"):
        _require(getattr(cfg, name) >= 0, name, f"must be >= 0, got {getattr(cfg, name)}")
    _require(cfg.batch_size >= 1, "batch_size", f"must be >= 1, got {cfg.batch_size}")
    _require(cfg.threshold_ratio > 0, "threshold_ratio", f"must be > 0, got {cfg.threshold_ratio}")

    optim = cfg.optim
    for name in ("pretrain_lr", "adapt_lr_backbone", "adapt_lr_heads"):
        _require(getattr(optim, name) > 0, f"optim.{name}", f"must be > 0, got {getattr(optim, name)}")
    for name in ("pretrain_gamma", "momentum", "weight_decay", "lr_gamma", "lr_decay"):
        _require(getattr(optim, name) >= 0, f"optim.{name}", f"must be >= 0, got {getattr(optim, name)}")
    _require(list(optim.pretrain_milestones) == sorted(optim.pretrain_milestones),
             "optim.pretrain_milestones", "must be increasing")

    data = cfg.data
    _require(data.image_size >= 1, "data.image_size", f"must be >= 1, got {data.image_size}")
    _require(data.num_joints >= 1, "data.num_joints", f"must be >= 1, got {data.num_joints}")
    for name in ("source_count", "target_count", "source_val_count", "target_test_count", "unseen_test_count"):
        _require(getattr(data, name) >= 0, f"data.{name}", f"must be >= 0, got {getattr(data, name)}")

    expected_input = (cfg.backbone.input_shape[0], data.image_size, data.image_size)
    _require(tuple(cfg.backbone.input_shape) == expected_input, "backbone.input_shape",
             f"must match data.image_size: expected {list(expected_input)}, got {list(cfg.backbone.input_shape)}")
    try:
        feature = cfg.backbone.feature_size()
    except ModelSpecError as e:
        raise ConfigError("backbone.depth", str(e))
    upsampled = tuple(s * 2 ** HEAD_UPSAMPLES for s in feature)
    _require(upsampled == tuple(cfg.codec.heatmap_size), "codec.heatmap_size",
             f"heads produce {list(upsampled)} maps for this backbone, got {list(cfg.codec.heatmap_size)}")

    if isinstance(cfg.oks.falloff, tuple):
        _require(len(cfg.oks.falloff) == data.num_joints, "oks.falloff",
                 f"needs {data.num_joints} values, got {len(cfg.oks.falloff)}")
    for group, joints in cfg.keypoint_groups.items():
        _require(len(joints) > 0, f"keypoint_groups.{group}", "must not be empty")
        bad = [j for j in joints if not 0 <= j < data.num_joints]
        _require(not bad, f"keypoint_groups.{group}", f"joint indices {bad} are outside 0..{data.num_joints - 1}")


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

def _schema_for(hint) -> Dict[str, Any]:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if dataclasses.is_dataclass(hint):
        hints = typing.get_type_hints(hint)
        properties = {}
        for f in dataclasses.fields(hint):
            entry = _schema_for(hints[f.name])
            if f.default is not dataclasses.MISSING:
                entry["default"] = json.loads(json.dumps(f.default))
            elif f.default_factory is not dataclasses.MISSING and not dataclasses.is_dataclass(hints[f.name]):
                entry["default"] = json.loads(json.dumps(f.default_factory()))
            properties[f.name] = entry
        return {"type": "object", "properties": properties, "additionalProperties": False}
    if origin is typing.Union:
        return {"anyOf": [_schema_for(a) for a in args]}
    if origin in (tuple, list):
        if origin is tuple and args and args[-1] is not Ellipsis:
            return {"type": "array", "items": [_schema_for(a) for a in args],
                    "minItems": len(args), "maxItems": len(args)}
        return {"type": "array", "items": _schema_for(args[0]) if args else {}}
    if origin is dict:
        return {"type": "object", "additionalProperties": _schema_for(args[1]) if args else {}}
    simple = {bool: "boolean", int: "integer", float: "number", str: "string", type(None): "null"}
    return {"type": simple.get(hint, "string")}


def config_schema() -> Dict[str, Any]:
    """JSON-schema-style description of ExperimentConfig."""
    schema = _schema_for(ExperimentConfig)
    schema["title"] = "ExperimentConfig"
    properties = schema["properties"]
    properties["variant"]["enum"] = list(VARIANTS)
    properties["dl_variant"]["enum"] = list(DL_VARIANTS)
    properties["dl_terms"]["enum"] = list(DL_TERMS)
    properties["maximization"]["enum"] = list(MAXIMIZATION_MODES)
    properties["relation_mask"]["items"]["enum"] = list(RELATIONS)
    return schema


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def resolve_config(data: Dict[str, Any], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Defaults + `data` + overrides, validated."""
    base = config_to_dict(_build(ExperimentConfig, data))
    return config_from_dict(apply_overrides(base, overrides))


def load_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Load a JSON config file (or defaults when path is None) and apply overrides.

    Args:
        path: JSON file path, or None for defaults
        overrides: Dotted-key overrides

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: On a missing/unparsable file or invalid content
    """
    data = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError("", f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError("", f"config file {path} is not valid JSON: {str(e)}")
    return resolve_config(data, overrides)


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n"


def save_config(cfg: ExperimentConfig, path) -> str:
    """Write the resolved config as sorted-key JSON; returns the path."""
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps_config(cfg))
    return str(path)


# Example usage and testing
if __name__ == "__main__":
    print("Testing configuration...")

    cfg = resolve_config({}, ["gamma=0.45", "relation_mask=[\"r1\"]", "variant=aidf"])
    print(f"\ngamma={cfg.gamma} relation_mask={cfg.relation_mask} variant={cfg.variant}")

    if cfg.gamma == 0.45 and cfg.relation_mask == ("r1",):
        print("\n✅ Override test PASSED")
    else:
        print("\n❌ Override test FAILED")

    try:
        resolve_config({}, ["kernel.no_such_key=1"])
        print("❌ Unknown-key test FAILED (should have raised exception)")
    except ConfigError as e:
        print(f"✅ Unknown-key test PASSED (correctly rejected): {e}")
