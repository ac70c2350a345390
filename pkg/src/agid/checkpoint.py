"""Single-file tensor container for model weights.

Layout: an 8-byte little-endian unsigned length, a UTF-8 JSON header of that
length, then the raw float32 little-endian tensor payloads back to back. The
header carries the format tag, the model config, and for every tensor its
shape, byte offset into the payload region, and byte count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .model import ModelConfig, build_model

FORMAT_TAG = "agid-tensors-v1"


class CheckpointError(RuntimeError):
    pass


class CheckpointMismatch(CheckpointError):
    def __init__(self, message: str, tensor_name: str | None = None):
        super().__init__(message)
        self.tensor_name = tensor_name


def save_checkpoint(model: nn.Module, config: ModelConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    index = {}
    payloads = []
    offset = 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes()
        index[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format": FORMAT_TAG, "config": config.to_dict(), "tensors": index},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)
    return path


def _read_raw(path: str | Path) -> tuple[dict, int, bytes]:
    """Return (header, payload base offset, whole file blob)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from exc
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated header length")
    (length,) = struct.unpack("<Q", blob[:8])
    if len(blob) < 8 + length:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(blob[8:8 + length].decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    return header, 8 + length, blob


def read_header(path: str | Path) -> dict:
    return _read_raw(path)[0]


def _read_tensors(path: Path, header: dict, base: int, blob: bytes) -> dict[str, torch.Tensor]:
    tensors = {}
    for name, meta in header["tensors"].items():
        start = base + meta["offset"]
        stop = start + meta["nbytes"]
        if stop > len(blob):
            raise CheckpointError(f"{path}: payload truncated at tensor {name}")
        arr = np.frombuffer(blob[start:stop], dtype="<f4").reshape(meta["shape"])
        tensors[name] = torch.from_numpy(arr.copy())
    return tensors


def load_checkpoint(path: str | Path,
                    expected_config: ModelConfig | None = None) -> tuple[nn.Module, ModelConfig]:
    """Rebuild the stored model. Every tensor must match in name and shape."""
    path = Path(path)
    header, base, blob = _read_raw(path)
    config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and config != replace(
            expected_config, pretrained_checkpoint=None):
        raise CheckpointMismatch(
            f"{path}: stored config {config.to_dict()} does not match the expected one")
    tensors = _read_tensors(path, header, base, blob)
    model = build_model(replace(config, pretrained_checkpoint=None))
    state = model.state_dict()
    for name in sorted(set(state) | set(tensors)):
        if name not in tensors:
            raise CheckpointMismatch(f"{path}: missing tensor {name}", tensor_name=name)
        if name not in state:
            raise CheckpointMismatch(f"{path}: unexpected tensor {name}", tensor_name=name)
        if tuple(tensors[name].shape) != tuple(state[name].shape):
            raise CheckpointMismatch(
                f"{path}: tensor {name} has shape {tuple(tensors[name].shape)}, "
                f"model expects {tuple(state[name].shape)}", tensor_name=name)
    model.load_state_dict(tensors)
    model.eval()
    return model, config


def load_pretrained(config: ModelConfig, path: str | Path,
                    seed: int | None = None) -> nn.Module:
    """Initialise a model from a backbone checkpoint, classifier head fresh.

    Every non-head tensor of the new model must be present in the checkpoint
    with an identical shape; head.* tensors keep their fresh initialisation.
    """
    path = Path(path)
    header, base, blob = _read_raw(path)
    stored = _read_tensors(path, header, base, blob)
    if seed is not None:
        torch.manual_seed(seed)
    model = build_model(replace(config, pretrained_checkpoint=None))
    state = model.state_dict()
    merged = {}
    for name in sorted(state):
        if name.startswith("head."):
            merged[name] = state[name]
            continue
        if name not in stored:
            raise CheckpointMismatch(f"{path}: missing tensor {name}", tensor_name=name)
        if tuple(stored[name].shape) != tuple(state[name].shape):
            raise CheckpointMismatch(
                f"{path}: tensor {name} has shape {tuple(stored[name].shape)}, "
                f"model expects {tuple(state[name].shape)}", tensor_name=name)
        merged[name] = stored[name]
    model.load_state_dict(merged)
    return model
