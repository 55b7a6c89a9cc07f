"""Parameter checkpoint files.

Layout: 4-byte magic ``GLT1``, a little-endian uint32 with the manifest
length, the JSON manifest (list of {name, shape, dtype} in payload order),
then the raw little-endian parameter payload, concatenated in that order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"GLT1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: dict[str, Tensor | np.ndarray]) -> None:
    entries = []
    blobs = []
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"parameter {name!r} has unsupported dtype {dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    manifest = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (mlen,) = struct.unpack("<I", f.read(4))
        entries = json.loads(f.read(mlen).decode("utf-8"))
        out: dict[str, np.ndarray] = {}
        for e in entries:
            dtype = _DTYPES.get(e["dtype"])
            if dtype is None:
                raise CheckpointError(f"{path}: unsupported dtype {e['dtype']!r} in manifest")
            count = int(np.prod(e["shape"])) if e["shape"] else 1
            raw = f.read(count * int(dtype[-1]))
            if len(raw) != count * int(dtype[-1]):
                raise CheckpointError(f"{path}: truncated payload for {e['name']!r}")
            out[e["name"]] = np.frombuffer(raw, dtype=dtype).reshape(e["shape"]).astype(e["dtype"])
        return out
