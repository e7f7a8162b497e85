"""Checkpoint files: a JSON manifest next to a flat little-endian float32 blob.

The manifest lists every tensor as ``{"name", "shape", "offset"}`` where
``offset`` counts float32 elements from the start of the blob; tensors are
stored row-major, one after another, in manifest order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def blob_path(path) -> Path:
    return Path(str(path) + ".bin")


def save_checkpoint(path, manifest: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.reshape(-1))
        offset += a.size
    manifest = dict(manifest)
    manifest["tensors"] = entries
    manifest["blob"] = blob_path(path).name
    manifest["dtype"] = "float32-le"
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    blob_path(path).write_bytes(flat.astype("<f4").tobytes())
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    flat = np.frombuffer(Path(path).with_name(manifest["blob"]).read_bytes(), dtype="<f4")
    tensors = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + n > len(flat):
            raise ValueError(f"{path}: blob too short for tensor {e['name']!r}")
        tensors[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return manifest, tensors
