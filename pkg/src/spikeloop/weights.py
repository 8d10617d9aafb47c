"""Binary weight container shared by the decoder and encoder models.

Layout (all integers little-endian):

    magic   4 bytes  b"JNKW"
    version u32      currently 1
    count   u32      number of sections
    section, repeated:
        u32 name length, name utf-8
        u32 dtype length, dtype string (numpy dtype like "<f8", or "json")
        u32 ndim, then ndim u64 dims
        u64 payload length, payload bytes

Array payloads are C-order little-endian. The manifest travels as a section
named "__manifest__" with dtype "json"; it records the model kind (e.g.
"decoder-mlp-v1") and the full config the model was built with.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"JNKW"
VERSION = 1
MANIFEST_SECTION = "__manifest__"

DECODER_KIND = "decoder-mlp-v1"
ENCODER_KIND = "encoder-transformer-v1"


class WeightFormatError(ValueError):
    """Raised when a weight file is not a valid container."""


def _write_section(f, name: str, dtype: str, shape: tuple, payload: bytes) -> None:
    name_b = name.encode("utf-8")
    dtype_b = dtype.encode("utf-8")
    f.write(struct.pack("<I", len(name_b)))
    f.write(name_b)
    f.write(struct.pack("<I", len(dtype_b)))
    f.write(dtype_b)
    f.write(struct.pack("<I", len(shape)))
    for dim in shape:
        f.write(struct.pack("<Q", dim))
    f.write(struct.pack("<Q", len(payload)))
    f.write(payload)


def save_weights(path, manifest: dict, arrays: dict) -> None:
    """Write a manifest plus named arrays; `kind` is required in the manifest."""
    if "kind" not in manifest:
        raise ValueError("manifest must carry a 'kind' entry")
    if MANIFEST_SECTION in arrays:
        raise ValueError(f"{MANIFEST_SECTION!r} is a reserved section name")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(arrays) + 1))
        _write_section(f, MANIFEST_SECTION, "json", (),
                       json.dumps(manifest, sort_keys=True).encode("utf-8"))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name])
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            _write_section(f, name, le.dtype.str, arr.shape,
                           np.ascontiguousarray(le).tobytes())


def _read_exact(f, n: int, path, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise WeightFormatError(f"{path}: truncated while reading {what}")
    return buf


def load_weights(path):
    """Read a container back as (manifest, {name: array})."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, path, "magic") != MAGIC:
            raise WeightFormatError(f"{path}: bad magic, not a weight container")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != VERSION:
            raise WeightFormatError(f"{path}: unsupported container version {version}")
        (count,) = struct.unpack("<I", _read_exact(f, 4, path, "section count"))
        manifest = None
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, path, "name length"))
            name = _read_exact(f, name_len, path, "name").decode("utf-8")
            (dtype_len,) = struct.unpack("<I", _read_exact(f, 4, path, "dtype length"))
            dtype = _read_exact(f, dtype_len, path, "dtype").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, path, "rank"))
            shape = tuple(struct.unpack("<Q", _read_exact(f, 8, path, "dim"))[0]
                          for _ in range(ndim))
            (size,) = struct.unpack("<Q", _read_exact(f, 8, path, "payload length"))
            payload = _read_exact(f, size, path, f"section {name!r}")
            if dtype == "json":
                if name != MANIFEST_SECTION:
                    raise WeightFormatError(f"{path}: unexpected json section {name!r}")
                manifest = json.loads(payload.decode("utf-8"))
                continue
            try:
                dt = np.dtype(dtype)
            except TypeError:
                raise WeightFormatError(
                    f"{path}: section {name!r} has unknown dtype {dtype!r}") from None
            expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if expected != size:
                raise WeightFormatError(
                    f"{path}: section {name!r} payload is {size} bytes, "
                    f"shape {shape} needs {expected}")
            if name in arrays:
                raise WeightFormatError(f"{path}: duplicate section {name!r}")
            arrays[name] = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
        if f.read(1):
            raise WeightFormatError(f"{path}: trailing bytes after last section")
    if manifest is None:
        raise WeightFormatError(f"{path}: missing manifest section")
    if "kind" not in manifest:
        raise WeightFormatError(f"{path}: manifest lacks a model kind")
    return manifest, arrays


def peek_kind(path) -> str:
    """Model kind without materializing arrays (they are loaded then dropped)."""
    manifest, _ = load_weights(path)
    return manifest["kind"]
