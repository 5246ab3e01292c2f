"""
Checkpoint Archive Module

This module handles:
- Packing model parameters (keyed by group / layer name) and the
  ExperimentConfig that produced them into a CBOR envelope
- zstd compression of the envelope
- Parsing and validating archives
- Rebuilding a model from an archive, or loading selected groups into an
  existing model

Archive structure (CBOR, then zstd):
{
    "version": 1,
    "format": "poseadapt-checkpoint",
    "compression": "zstd",
    "variant": "idf",
    "config": {...},                       # resolved ExperimentConfig
    "metadata": {...},                     # free-form (stage, iteration)
    "parameters": {
        "G": {"layers.0.weight": {"shape": [...], "dtype": "float32", "data": <bytes>}, ...},
        "F": {...}, ...
    }
}
"""

import logging
import os
import tempfile
from typing import Any, Dict, Iterable, Optional, Tuple

import cbor2
import numpy as np
import torch
import zstandard as zstd

from experiment_config import ExperimentConfig, config_from_dict, config_to_dict
from model_zoo import GROUPS, PoseAdaptNet, build_model
from utils import format_bytes, get_file_size


logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_FORMAT = "poseadapt-checkpoint"
COMPRESSION_ZSTD = "zstd"


class CheckpointError(ValueError):
    """Malformed, unsupported or mismatching checkpoint archive."""


def _group_prefix(group: str) -> str:
    return "backbone." if group == "G" else f"heads.{group}."


def encode_parameters(model: PoseAdaptNet) -> Dict[str, Dict[str, Dict[str, Any]]]:
    """
    Model state as {group: {layer_name: {shape, dtype, data}}}.

    Args:
        model: PoseAdaptNet

    Returns:
        Nested dict of raw little-endian arrays
    """
    parameters: Dict[str, Dict[str, Dict[str, Any]]] = {}
    for name, tensor in model.state_dict().items():
        group = model.group_of(name)
        layer = name[len(_group_prefix(group)):]
        array = tensor.detach().cpu().numpy()
        array = array.astype(array.dtype.newbyteorder('<'), copy=False)
        parameters.setdefault(group, {})[layer] = {
            "shape": list(array.shape),
            "dtype": array.dtype.name,
            "data": array.tobytes(),
        }
    return parameters


def _decode_array(entry: Dict[str, Any], where: str) -> torch.Tensor:
    for key in ("shape", "dtype", "data"):
        if key not in entry:
            raise CheckpointError(f"{where}: missing {key!r}")
    if not isinstance(entry["data"], bytes):
        raise CheckpointError(f"{where}: data must be bytes")
    try:
        dtype = np.dtype(entry["dtype"]).newbyteorder('<')
        array = np.frombuffer(entry["data"], dtype=dtype).reshape(entry["shape"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{where}: cannot decode array: {str(e)}")
    return torch.from_numpy(array.astype(dtype.newbyteorder('='), copy=True))


def create_archive(model: PoseAdaptNet, cfg: ExperimentConfig, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    """
    Serialize a model and its config to compressed archive bytes.

    Raises:
        CheckpointError: If encoding or compression fails
    """
    envelope = {
        "version": CHECKPOINT_VERSION,
        "format": CHECKPOINT_FORMAT,
        "compression": COMPRESSION_ZSTD,
        "variant": model.variant,
        "config": config_to_dict(cfg),
        "metadata": dict(metadata or {}),
        "parameters": encode_parameters(model),
    }
    try:
        cbor_data = cbor2.dumps(envelope)
        return zstd.ZstdCompressor(level=3).compress(cbor_data)
    except Exception as e:
        raise CheckpointError(f"Failed to encode checkpoint: {str(e)}")


def parse_archive(archive: bytes) -> Dict[str, Any]:
    """
    Decompress and validate archive bytes.

    Returns:
        The envelope dict

    Raises:
        CheckpointError: On corrupt data, missing fields or an unsupported version/format
    """
    if not isinstance(archive, bytes) or len(archive) == 0:
        raise CheckpointError("checkpoint archive must be non-empty bytes")
    try:
        cbor_data = zstd.ZstdDecompressor().decompress(archive)
    except Exception as e:
        raise CheckpointError(f"zstd decompression failed: {str(e)}")
    try:
        envelope = cbor2.loads(cbor_data)
    except Exception as e:
        raise CheckpointError(f"Failed to parse CBOR data: {str(e)}")
    if not isinstance(envelope, dict):
        raise CheckpointError("checkpoint envelope must be a map")

    for key in ("version", "format", "compression", "variant", "config", "parameters"):
        if key not in envelope:
            raise CheckpointError(f"Missing required field in checkpoint: {key}")
    if envelope["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version: {envelope['version']}")
    if envelope["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"Unsupported checkpoint format: {envelope['format']!r}")
    if envelope["compression"] != COMPRESSION_ZSTD:
        raise CheckpointError(f"Unsupported compression: {envelope['compression']!r}")
    if not isinstance(envelope["config"], dict) or not isinstance(envelope["parameters"], dict):
        raise CheckpointError("config and parameters must be maps")
    unknown = set(envelope["parameters"]) - set(GROUPS)
    if unknown:
        raise CheckpointError(f"Unknown parameter groups in checkpoint: {sorted(unknown)}")
    return envelope


def save_checkpoint(model: PoseAdaptNet, cfg: ExperimentConfig, path,
                    metadata: Optional[Dict[str, Any]] = None) -> str:
    """
    Write a checkpoint archive atomically.

    Args:
        model: Model to save
        cfg: The config that produced it
        path: Destination file
        metadata: Optional extra fields (stage, iteration, ...)

    Returns:
        The path written
    """
    archive = create_archive(model, cfg, metadata)
    path = str(path)
    # one temp file per writer
    with tempfile.NamedTemporaryFile(dir=os.path.dirname(os.path.abspath(path)), prefix=os.path.basename(path) + ".",
                                     suffix=".tmp", delete=False) as f:
        f.write(archive)
        tmp_path = f.name
    try:
        os.replace(tmp_path, path)
    except OSError:
        os.remove(tmp_path)
        raise
    logger.debug("saved checkpoint %s (%s)", path, format_bytes(len(archive)))
    return path


def load_checkpoint(path) -> Tuple[Dict[str, Dict[str, torch.Tensor]], Dict[str, Any]]:
    """
    Read a checkpoint archive.

    Args:
        path: Archive file

    Returns:
        Tuple: (parameters {group: {layer: tensor}}, config dict)

    Raises:
        CheckpointError: If the file is missing or invalid
    """
    try:
        with open(path, 'rb') as f:
            archive = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {str(e)}")
    envelope = parse_archive(archive)
    parameters = {
        group: {layer: _decode_array(entry, f"{group}/{layer}") for layer, entry in layers.items()}
        for group, layers in envelope["parameters"].items()
    }
    return parameters, envelope["config"]


def load_parameters_into(model: PoseAdaptNet, parameters: Dict[str, Dict[str, torch.Tensor]],
                         groups: Iterable[str]):
    """
    Copy the given groups from decoded parameters into `model`.

    Raises:
        CheckpointError: If a requested group or layer is missing or has a different shape
    """
    state = model.state_dict()
    updates = {}
    for group in groups:
        expected = {name[len(_group_prefix(group)):] for name in state if model.group_of(name) == group}
        if not expected:
            continue
        if group not in parameters:
            raise CheckpointError(f"checkpoint has no parameters for group {group!r}")
        stored = parameters[group]
        missing = expected - set(stored)
        if missing:
            raise CheckpointError(f"group {group!r} is missing layers {sorted(missing)}")
        for layer in expected:
            name = _group_prefix(group) + layer
            if tuple(stored[layer].shape) != tuple(state[name].shape):
                raise CheckpointError(
                    f"{group}/{layer}: shape {tuple(stored[layer].shape)} != model {tuple(state[name].shape)}"
                )
            updates[name] = stored[layer].to(state[name].dtype)
    model.load_state_dict(updates, strict=False)


def restore_model(path) -> Tuple[PoseAdaptNet, ExperimentConfig]:
    """
    Rebuild a model from its archive.

    Returns:
        Tuple: (model, ExperimentConfig)

    Raises:
        CheckpointError: On an invalid archive or embedded config
    """
    parameters, config = load_checkpoint(path)
    try:
        cfg = config_from_dict(config)
    except ValueError as e:
        raise CheckpointError(f"embedded config is invalid: {str(e)}")
    model = build_model(cfg.backbone, cfg.variant, cfg.data.num_joints, cfg.codec.heatmap_size, cfg.seed)
    load_parameters_into(model, parameters, GROUPS)
    return model, cfg


# Example usage and testing
if __name__ == "__main__":
    import tempfile

    print("Testing checkpoint save/restore...")
    cfg = ExperimentConfig()
    model = build_model(cfg.backbone, cfg.variant, cfg.data.num_joints, cfg.codec.heatmap_size, seed=3)

    with tempfile.TemporaryDirectory() as tmp:
        path = save_checkpoint(model, cfg, os.path.join(tmp, "model.ckpt"))
        print(f"\nCheckpoint size: {format_bytes(get_file_size(path))}")
        restored, restored_cfg = restore_model(path)

    same = all(torch.equal(a, b) for a, b in zip(model.state_dict().values(), restored.state_dict().values()))
    if same and restored_cfg == cfg:
        print("\n✅ Checkpoint round-trip test PASSED")
    else:
        print("\n❌ Checkpoint round-trip test FAILED")
