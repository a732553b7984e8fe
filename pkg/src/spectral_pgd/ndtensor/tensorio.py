"""Flat binary tensor serialization with a JSON sidecar.

A tensor is stored as ``<base>.bin`` holding the raw little-endian
row-major element bytes, plus ``<base>.json`` describing dtype, shape,
byte order, and a CRC32 checksum of the binary payload. Loading
verifies the checksum before reconstructing the array.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

__all__ = ["IntegrityError", "save_tensor", "load_tensor"]

_SUPPORTED = {"float32", "float64", "int64"}


class IntegrityError(ValueError):
    """Stored bytes do not match the sidecar checksum."""


def save_tensor(base_path, array) -> tuple[Path, Path]:
    """Write ``<base>.bin`` and ``<base>.json``; returns both paths."""
    data = np.asarray(getattr(array, "data", array))
    name = data.dtype.name
    if name not in _SUPPORTED:
        raise TypeError(f"unsupported dtype {name}; expected one of {sorted(_SUPPORTED)}")
    base = Path(base_path)
    payload = np.ascontiguousarray(data).astype(data.dtype.newbyteorder("<"), copy=False).tobytes()
    meta = {
        "dtype": name,
        "shape": list(data.shape),
        "byte_order": "little",
        "checksum": f"{zlib.crc32(payload) & 0xFFFFFFFF:08x}",
    }
    # append rather than with_suffix: base names may contain dots
    bin_path = base.parent / (base.name + ".bin")
    json_path = base.parent / (base.name + ".json")
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(payload)
    json_path.write_text(json.dumps(meta, indent=2) + "\n")
    return bin_path, json_path


def load_tensor(base_path) -> np.ndarray:
    """Read a tensor written by ``save_tensor``; verifies the checksum."""
    base = Path(base_path)
    meta = json.loads((base.parent / (base.name + ".json")).read_text())
    payload = (base.parent / (base.name + ".bin")).read_bytes()
    found = f"{zlib.crc32(payload) & 0xFFFFFFFF:08x}"
    if found != meta["checksum"]:
        raise IntegrityError(
            f"checksum mismatch for {base}: sidecar {meta['checksum']}, bytes {found}")
    dtype = np.dtype(meta["dtype"]).newbyteorder("<")
    arr = np.frombuffer(payload, dtype=dtype).reshape(meta["shape"])
    return arr.astype(np.dtype(meta["dtype"]), copy=True)
