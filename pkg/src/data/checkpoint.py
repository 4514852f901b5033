"""
Self-describing checkpoint container.

Layout: 8-byte magic ``EAFMCKPT``, little-endian uint32 format version,
uint64 header length, UTF-8 JSON header, then every parameter as a
little-endian float32 array in header order.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from src.exceptions import CheckpointError, ConfigError
from src.models.models import TrainConfig
from src.network.model import EntityAlignmentModel

logger = logging.getLogger(__name__)

MAGIC = b"EAFMCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def checkpoint_header(model: EntityAlignmentModel, metadata: Optional[Dict[str, Any]] = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model_version": model.version,
        "config": model.config.to_dict(),
        "rng_seed": model.config.rng_seed,
        "parameters": [{"name": name, "shape": list(p.shape)} for name, p in model.parameter_groups()],
        "metadata": metadata or {},
    }


def save_checkpoint(model: EntityAlignmentModel, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if model.dtype != torch.float32:
        logger.warning("storing %s parameters as float32", model.config.dtype)
    header = json.dumps(checkpoint_header(model, metadata), sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        handle.write(header)
        for _, param in model.parameter_groups():
            handle.write(param.detach().cpu().numpy().astype("<f4").tobytes())
    logger.info("saved checkpoint %s (%d parameters)", path, model.num_parameters())
    return path


def read_checkpoint(path):
    """(header, {name: float32 array}) without building a model"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    magic, version, header_length = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    offset = _PREFIX.size
    try:
        header = json.loads(data[offset:offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from e
    offset += header_length

    arrays = {}
    for entry in header["parameters"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path} is truncated inside {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path} has {len(data) - offset} trailing bytes")
    return header, arrays


def load_checkpoint(path) -> EntityAlignmentModel:
    header, arrays = read_checkpoint(path)
    try:
        config = TrainConfig.from_dict(header["config"]).validate()
    except (ConfigError, KeyError) as e:
        raise CheckpointError(f"checkpoint configuration is invalid: {e}") from e
    model = EntityAlignmentModel(config)
    expected = [(name, list(p.shape)) for name, p in model.parameter_groups()]
    stored = [(entry["name"], list(entry["shape"])) for entry in header["parameters"]]
    if expected != stored:
        raise CheckpointError("checkpoint parameter layout does not match its configuration")
    with torch.no_grad():
        for name, param in model.parameter_groups():
            param.copy_(torch.from_numpy(arrays[name].astype(np.float32)).to(param.dtype))
    model.version = header.get("model_version", model.version)
    model.eval()
    logger.info("loaded checkpoint %s", path)
    return model
