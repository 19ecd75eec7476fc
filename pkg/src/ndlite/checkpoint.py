"""Versioned weight files: JSON header plus raw float32 payload.

Layout: magic ``NDWF``, little-endian uint32 header length, UTF-8 JSON
header, then every tensor's float32 little-endian bytes concatenated in
header declaration order. The header records tensor names and shapes,
arbitrary JSON metadata (quantization stage, step sizes, model config),
and a sha256 checksum over the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

_MAGIC = b"NDWF"
_VERSION = 1


def save_weights(path, tensors, meta=None):
    """Write named arrays (dict, order preserved) and JSON-able metadata."""
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes() for a in tensors.values())
    header = {
        "version": _VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.shape(a))}
                    for n, a in tensors.items()],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def load_weights(path):
    """Returns (tensors: dict name -> float32 array, meta: dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a weight file")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + hlen:
        raise ValueError(f"{path}: truncated header")
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    if header.get("version") != _VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    payload = raw[8 + hlen:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise ValueError(f"{path}: payload checksum mismatch")
    tensors = {}
    off = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 4 * count
        if end > len(payload):
            raise ValueError(f"{path}: payload shorter than declared tensors")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        tensors[entry["name"]] = arr.reshape(shape).copy()
        off = end
    if off != len(payload):
        raise ValueError(f"{path}: {len(payload) - off} trailing payload bytes")
    return tensors, header["meta"]
