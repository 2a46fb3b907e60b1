"""Bit-exact model and tensor file I/O.

A model is stored as ``<base>.json`` (UTF-8 manifest, stable key order) plus
``<base>.bin`` (all tensors concatenated in manifest order, little-endian
IEEE-754 float32, row-major). Single tensors use ``<base>.tns.json`` (a
one-line JSON header holding the shape) plus ``<base>.tns.bin``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import (
    BlobLengthError,
    ShapeError,
    ManifestError,
    NonFiniteError,
    TensorLayoutError,
    VersionError,
)
from .netgraph import CED, LED, Activation, Conv, Flatten, Layer, Linear, Model

__all__ = [
    "FORMAT_VERSION",
    "save_model",
    "load_model",
    "save_tensor",
    "load_tensor",
    "model_paths",
    "tensor_paths",
]

FORMAT_VERSION = 1


def _base(path, suffixes) -> str:
    s = os.fspath(path)
    for suf in suffixes:
        if s.endswith(suf):
            return s[: -len(suf)]
    return s


def model_paths(path) -> tuple[Path, Path]:
    base = _base(path, (".json", ".bin"))
    return Path(base + ".json"), Path(base + ".bin")


def tensor_paths(path) -> tuple[Path, Path]:
    base = _base(path, (".tns.json", ".tns.bin"))
    return Path(base + ".tns.json"), Path(base + ".tns.bin")


def _tensor_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _layer_tensors(layer: Layer) -> list[tuple[str, np.ndarray]]:
    if isinstance(layer, Linear):
        out = [("weight", layer.weight)]
        if layer.bias is not None:
            out.append(("bias", layer.bias))
        return out
    if isinstance(layer, Conv):
        out = [("weight", layer.weight)]
        if layer.bias is not None:
            out.append(("bias", layer.bias))
        return out
    if isinstance(layer, (LED, CED)):
        out = [("encoder", layer.encoder), ("decoder", layer.decoder)]
        if layer.bias is not None:
            out.append(("bias", layer.bias))
        return out
    return []


def _layer_descriptor(layer: Layer, offset: int):
    tensors = []
    for role, arr in _layer_tensors(layer):
        length = 4 * int(arr.size)
        tensors.append(
            {
                "role": role,
                "shape": [int(d) for d in arr.shape],
                "byte_offset": offset,
                "byte_length": length,
            }
        )
        offset += length
    desc: dict = {"name": layer.name, "tensors": tensors}
    if isinstance(layer, Linear):
        desc["kind"] = "linear"
    elif isinstance(layer, Conv):
        desc["kind"] = "conv"
        desc["stride"] = list(layer.stride)
        desc["padding"] = list(layer.padding)
        desc["dilation"] = list(layer.dilation)
    elif isinstance(layer, LED):
        desc["kind"] = "led"
        desc["rank"] = layer.rank
    elif isinstance(layer, CED):
        desc["kind"] = "ced"
        desc["rank"] = layer.rank
        desc["stride"] = list(layer.stride)
        desc["padding"] = list(layer.padding)
        desc["dilation"] = list(layer.dilation)
    elif isinstance(layer, Activation):
        desc["kind"] = "relu"
    elif isinstance(layer, Flatten):
        desc["kind"] = "flatten"
    else:
        raise TypeError(f"cannot serialize layer type {type(layer)!r}")
    return desc, offset


def save_model(model: Model, path) -> None:
    """Write ``<base>.json`` and ``<base>.bin`` for the model."""
    json_path, bin_path = model_paths(path)
    layers = []
    blobs = []
    offset = 0
    for layer in model.layers:
        desc, offset = _layer_descriptor(layer, offset)
        layers.append(desc)
        blobs.extend(_tensor_bytes(arr) for _, arr in _layer_tensors(layer))
    manifest = {
        "format_version": FORMAT_VERSION,
        "name": model.name,
        "input_shape": [int(d) for d in model.input_shape],
        "layers": layers,
    }
    try:
        json_path.write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        bin_path.write_bytes(b"".join(blobs))
    except OSError as exc:
        raise OSError(f"cannot write model to {json_path} / {bin_path}: {exc}") from exc


def _read_tensor(blob: bytes, entry, what: str) -> np.ndarray:
    shape = entry["shape"]
    off, length = entry["byte_offset"], entry["byte_length"]
    arr = np.frombuffer(blob[off : off + length], dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what}: tensor contains non-finite values")
    return arr.copy()


def _validate_entries(manifest, blob_len: int) -> None:
    offset = 0
    for desc in manifest["layers"]:
        for entry in desc.get("tensors", []):
            shape = entry.get("shape")
            if not shape or any(int(d) < 1 for d in shape):
                raise ManifestError(f"layer {desc.get('name')!r}: bad tensor shape {shape}")
            expected = 4 * int(np.prod(shape))
            if entry.get("byte_length") != expected:
                raise TensorLayoutError(
                    f"layer {desc.get('name')!r}: byte_length {entry.get('byte_length')} "
                    f"!= 4*prod(shape) = {expected}"
                )
            if entry.get("byte_offset") != offset:
                raise TensorLayoutError(
                    f"layer {desc.get('name')!r}: tensor entries must tile the blob "
                    f"in order (expected offset {offset}, got {entry.get('byte_offset')})"
                )
            offset += expected
    if offset != blob_len:
        raise BlobLengthError(f"blob length mismatch: manifest expects {offset} bytes, file has {blob_len}")


def _build_layer(desc, blob) -> Layer:
    name = desc.get("name")
    kind = desc.get("kind")
    if not isinstance(name, str) or not name:
        raise ManifestError(f"layer descriptor missing a name: {desc!r}")
    if desc.get("groups", 1) != 1:
        raise ManifestError(f"layer {name!r}: grouped convolutions are unsupported")
    tensors = {e["role"]: _read_tensor(blob, e, f"layer {name!r} ({e['role']})") for e in desc.get("tensors", [])}
    try:
        if kind == "linear":
            return Linear(name=name, weight=tensors["weight"], bias=tensors.get("bias"))
        if kind == "conv":
            return Conv(
                name=name,
                weight=tensors["weight"],
                bias=tensors.get("bias"),
                stride=tuple(desc.get("stride", ())),
                padding=tuple(desc.get("padding", ())),
                dilation=tuple(desc.get("dilation", ())),
            )
        if kind == "led":
            return LED(name=name, encoder=tensors["encoder"], decoder=tensors["decoder"], bias=tensors.get("bias"))
        if kind == "ced":
            return CED(
                name=name,
                encoder=tensors["encoder"],
                decoder=tensors["decoder"],
                bias=tensors.get("bias"),
                stride=tuple(desc.get("stride", ())),
                padding=tuple(desc.get("padding", ())),
                dilation=tuple(desc.get("dilation", ())),
            )
        if kind == "relu":
            return Activation(name=name, fn="relu")
        if kind == "flatten":
            return Flatten(name=name)
    except KeyError as exc:
        raise ManifestError(f"layer {name!r}: missing tensor role {exc}") from exc
    except (ValueError, ShapeError) as exc:
        raise ManifestError(f"layer {name!r}: {exc}") from exc
    raise ManifestError(f"layer {name!r}: unknown kind {kind!r}")


def load_model(path) -> Model:
    """Read and validate a model written by :func:`save_model`."""
    json_path, bin_path = model_paths(path)
    try:
        manifest = json.loads(json_path.read_text(encoding="utf-8"))
        blob = bin_path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read model at {json_path} / {bin_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{json_path}: invalid JSON: {exc}") from exc

    if not isinstance(manifest, dict):
        raise ManifestError(f"{json_path}: manifest must be a JSON object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(
            f"unsupported format_version {manifest.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    for key in ("name", "input_shape", "layers"):
        if key not in manifest:
            raise ManifestError(f"{json_path}: manifest missing {key!r}")
    _validate_entries(manifest, len(blob))
    layers = [_build_layer(desc, blob) for desc in manifest["layers"]]
    try:
        return Model(name=manifest["name"], input_shape=tuple(manifest["input_shape"]), layers=tuple(layers))
    except (ValueError, TypeError) as exc:
        raise ManifestError(f"{json_path}: invalid model: {exc}") from exc


def save_tensor(arr: np.ndarray, path) -> None:
    """Write ``<base>.tns.json`` + ``<base>.tns.bin`` for one tensor."""
    json_path, bin_path = tensor_paths(path)
    arr = np.asarray(arr, dtype=np.float32)
    header = json.dumps({"format_version": FORMAT_VERSION, "shape": [int(d) for d in arr.shape]}, sort_keys=True)
    json_path.write_text(header + "\n", encoding="utf-8")
    bin_path.write_bytes(_tensor_bytes(arr))


def load_tensor(path) -> np.ndarray:
    """Read and validate a tensor written by :func:`save_tensor`."""
    json_path, bin_path = tensor_paths(path)
    try:
        header = json.loads(json_path.read_text(encoding="utf-8"))
        payload = bin_path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor at {json_path} / {bin_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{json_path}: invalid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(
            f"unsupported format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    shape = header.get("shape")
    if not isinstance(shape, list) or any(int(d) < 1 for d in shape):
        raise ManifestError(f"{json_path}: bad tensor shape {shape!r}")
    expected = 4 * int(np.prod(shape))
    if len(payload) != expected:
        raise BlobLengthError(f"blob length mismatch: shape {shape} needs {expected} bytes, file has {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{bin_path}: tensor contains non-finite values")
    return arr.copy()
