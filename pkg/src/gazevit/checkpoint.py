"""Checkpoint directories: ``manifest.json`` plus a ``weights.bin`` tensor blob.

``weights.bin`` layout: u64 LE index length, UTF-8 JSON index
``[{name, shape, offset, nbytes}, ...]``, then float32 LE row-major tensor
data concatenated in index order.  Offsets are relative to the data section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .vit import GazeViT, ModelConfig

FORMAT_VERSION = 1
WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.json"


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_weights(path: str | Path, state: dict[str, torch.Tensor]) -> None:
    index, blobs, offset = [], [], 0
    for name, tensor in state.items():
        data = tensor.detach().cpu().numpy().astype("<f4", copy=False).tobytes(order="C")
        index.append({"name": name, "shape": [int(s) for s in tensor.shape], "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(index, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_weights(path: str | Path) -> dict[str, torch.Tensor]:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    index = json.loads(raw[8 : 8 + n].decode("utf-8"))
    base = 8 + n
    state = {}
    for rec in index:
        arr = np.frombuffer(raw, dtype="<f4", count=rec["nbytes"] // 4, offset=base + rec["offset"])
        state[rec["name"]] = torch.from_numpy(arr.astype(np.float32).reshape(rec["shape"]))
    return state


def save_checkpoint(directory: str | Path, model: GazeViT, **meta) -> Path:
    """Write weights and a manifest; ``meta`` (epoch, seed, history, ...) is merged in."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(directory / WEIGHTS_FILE, model.state_dict())
    manifest = {"format_version": FORMAT_VERSION, "config": model.config.to_dict(), **meta}
    dump_json(directory / MANIFEST_FILE, manifest)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[GazeViT, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    model = GazeViT(ModelConfig.from_dict(manifest["config"]))
    model.load_state_dict(load_weights(directory / WEIGHTS_FILE), strict=True)
    model.eval()
    return model, manifest
