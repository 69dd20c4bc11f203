"""Checkpoint files: a JSON manifest plus a little-endian float32 payload.

``model.json`` holds the format version, the model configuration and a tensor
index ``name -> {shape, dtype, offset, length}`` (offset/length in bytes of
``model.bin``). The manifest carries a SHA-256 of the payload and of its own
canonical content, so any edit to either file is caught on load.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .model import CaptionerModel, ModelConfig

FORMAT = "avcap-checkpoint"
VERSION = 1
MANIFEST = "model.json"
PAYLOAD = "model.bin"


class CheckpointError(ValueError):
    """Unreadable, corrupted or incompatible checkpoint."""


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(model, path, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name, tensor in model.named_parameters():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(tensor.shape), "dtype": "f32", "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    body = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "tensors": index,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    manifest = dict(body, manifest_sha256=hashlib.sha256(_canonical(body).encode()).hexdigest())
    (path / PAYLOAD).write_bytes(payload)
    (path / MANIFEST).write_text(_canonical(manifest) + "\n", encoding="utf-8")
    return path


def read_manifest(path):
    path = Path(path)
    try:
        text = (path / MANIFEST).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError(f"no {MANIFEST} in {path}") from None
    except UnicodeDecodeError:
        raise CheckpointError(f"{MANIFEST} is not valid UTF-8") from None
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted manifest: {exc.msg}") from None
    if not isinstance(manifest, dict) or text != _canonical(manifest) + "\n":
        raise CheckpointError("corrupted manifest: content is not in canonical form")
    claimed = manifest.pop("manifest_sha256", None)
    if claimed != hashlib.sha256(_canonical(manifest).encode()).hexdigest():
        raise CheckpointError("corrupted manifest: checksum mismatch")
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"not an {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r} (expected {VERSION})")
    return manifest


def load_checkpoint(path, expect_config=None):
    """Rebuild the model stored at ``path``.

    With ``expect_config`` the stored tensors must also match the shapes that
    configuration would produce; the first mismatch is reported by name.
    """
    path = Path(path)
    manifest = read_manifest(path)
    config = ModelConfig.from_dict(manifest["config"])
    model = CaptionerModel(config)
    try:
        payload = (path / PAYLOAD).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"no {PAYLOAD} in {path}") from None
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"{PAYLOAD} is truncated or corrupted (checksum mismatch)")

    entries = {e["name"]: e for e in manifest["tensors"]}
    params = dict(model.named_parameters())
    if set(entries) != set(params):
        missing = sorted(set(params) - set(entries))
        unexpected = sorted(set(entries) - set(params))
        raise CheckpointError(f"tensor set mismatch: missing {missing}, unexpected {unexpected}")
    for name, tensor in params.items():
        e = entries[name]
        if tuple(e["shape"]) != tensor.shape:
            raise CheckpointError(f"tensor {name}: stored shape {tuple(e['shape'])} != configured {tensor.shape}")
        if e["dtype"] != "f32" or e["length"] != 4 * tensor.size or e["offset"] + e["length"] > len(payload):
            raise CheckpointError(f"tensor {name}: bad index entry")
        raw = np.frombuffer(payload, dtype="<f4", count=tensor.size, offset=e["offset"])
        tensor.data = raw.astype(np.float64).reshape(tensor.shape)
    if expect_config is not None:
        check_compatible(model, expect_config)
    return model


def check_compatible(model, config):
    """Raise naming the first tensor whose shape differs under ``config``."""
    reference = dict(CaptionerModel(config).named_parameters())
    for name, tensor in model.named_parameters():
        if name not in reference:
            raise CheckpointError(f"tensor {name} has no counterpart in the requested configuration")
        if reference[name].shape != tensor.shape:
            raise CheckpointError(
                f"incompatible tensor {name}: checkpoint {tensor.shape} vs required {reference[name].shape}"
            )
    missing = set(reference) - {n for n, _ in model.named_parameters()}
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
