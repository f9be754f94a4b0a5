"""Independent writer for the cnx weight-container byte format.

Deliberately shares no code with the engine's reader: files written here are
the handoff contract, and the engine loading them back is the cross-check.

Format (integers little-endian): 8-byte magic ``CNXW0001``, u64 header
length, UTF-8 JSON header {"metadata", "payload_nbytes", "entries": [{"name",
"dtype": "f32"|"f64", "shape", "offset", "nbytes"}]}, zero padding to a
64-byte boundary, then raw little-endian payload with payload-relative,
packed entry offsets.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CNXW0001"
PAYLOAD_ALIGN = 64
_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def write_container(path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _TAGS:
            raise ValueError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": _TAGS[arr.dtype], "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"metadata": metadata, "payload_nbytes": offset, "entries": entries},
                        sort_keys=True).encode("utf-8")
    head = MAGIC + struct.pack("<Q", len(header)) + header
    with open(path, "wb") as f:
        f.write(head)
        f.write(b"\x00" * ((-len(head)) % PAYLOAD_ALIGN))
        for raw in blobs:
            f.write(raw)


def write_fixture(path, input_array: np.ndarray, probes: dict[str, np.ndarray], metadata: dict) -> None:
    arrays = {"fixture/input": np.asarray(input_array)}
    for name, value in probes.items():
        arrays[f"fixture/probe/{name}"] = np.asarray(value)
    write_container(path, arrays, metadata)


def lint_container(path) -> None:
    """Validate an exported file against the engine's reader and invariants."""
    from cnx import weights_io

    store = weights_io.load(path)  # raises ContainerError subtypes on violation
    for name, arr in store.arrays.items():
        if arr.dtype not in (np.float32, np.float64):
            raise ValueError(f"{path}: entry {name!r} has non-float payload")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{path}: entry {name!r} holds non-finite values")
