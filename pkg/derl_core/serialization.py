"""Self-describing binary model files.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header
(config, config hash, ordered parameter names and shapes, metadata), then the
parameters as contiguous little-endian float64 in header order.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .config import ConfigError, ModelConfig, config_hash, model_config_dict, model_config_from_dict
from .model import DerlModel
from .tensor import ConformanceError

logger = logging.getLogger("derl_core.serialization")

MAGIC = b"DERLMDL1"
_LEN = struct.Struct("<I")


class ModelFormatError(Exception):
    """Model file is truncated, has a bad magic, or a malformed header."""


class ConfigMismatchError(Exception):
    """Model file was written for a different architecture than the one requested."""


def encode_model(model: DerlModel, metadata: Optional[Mapping[str, Any]] = None) -> bytes:
    params = list(model.named_parameters())
    header = {
        "config": model_config_dict(model.config),
        "config_hash": config_hash(model.config),
        "params": [[name, list(p.shape)] for name, p in params],
        "metadata": dict(metadata or {}),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for _, p in params)
    return MAGIC + _LEN.pack(len(head)) + head + body


def save_model(model: DerlModel, path: Path | str, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(model, metadata))
    logger.info("Saved model to %s (%d parameters)", path, model.num_parameters())
    return path


def read_header(blob: bytes, source: str = "<bytes>") -> Tuple[Dict[str, Any], int]:
    if len(blob) < len(MAGIC) + _LEN.size or blob[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{source}: not a DERL model file (bad magic)")
    (length,) = _LEN.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + length > len(blob):
        raise ModelFormatError(f"{source}: header length {length} exceeds file size {len(blob)}")
    try:
        header = json.loads(blob[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{source}: malformed header: {exc}") from exc
    for key in ("config", "config_hash", "params"):
        if key not in header:
            raise ModelFormatError(f"{source}: header is missing '{key}'")
    return header, start + length


def decode_model(blob: bytes, expected: Optional[ModelConfig] = None, source: str = "<bytes>") -> Tuple[DerlModel, Dict[str, Any]]:
    header, offset = read_header(blob, source)
    try:
        config = model_config_from_dict(header["config"])
    except (ConfigError, TypeError) as exc:
        raise ModelFormatError(f"{source}: header config is invalid: {exc}") from exc
    if config_hash(config) != header["config_hash"]:
        raise ModelFormatError(f"{source}: stored config hash does not match stored config")
    if expected is not None and config_hash(expected) != header["config_hash"]:
        raise ConfigMismatchError(
            f"{source}: model was built for config {header['config_hash'][:12]}, "
            f"but the requested config hashes to {config_hash(expected)[:12]}"
        )

    state: Dict[str, np.ndarray] = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise ModelFormatError(f"{source}: data for '{name}' {tuple(shape)} runs past end of file")
        state[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise ModelFormatError(f"{source}: {len(blob) - offset} trailing bytes after parameter data")

    model = DerlModel(config)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError, ConformanceError) as exc:
        raise ModelFormatError(f"{source}: parameters do not fit the architecture: {exc}") from exc
    return model, header.get("metadata", {})


def load_model(path: Path | str, expected: Optional[ModelConfig] = None) -> Tuple[DerlModel, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    model, metadata = decode_model(path.read_bytes(), expected, source=str(path))
    logger.info("Loaded model from %s", path)
    return model, metadata
