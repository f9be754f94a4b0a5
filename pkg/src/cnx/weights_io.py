"""Portable binary container for named tensors, and binding against a spec.

File layout (all integers little-endian):

    bytes 0..7    magic ``CNXW0001``
    bytes 8..15   u64 header length in bytes
    header        UTF-8 JSON text: {"metadata": {...}, "payload_nbytes": N,
                  "entries": [{"name", "dtype": "f32"|"f64", "shape": [...],
                               "offset": int, "nbytes": int}, ...]}
    padding       zero bytes up to the next 64-byte boundary
    payload       raw little-endian array data, entry offsets relative to
                  payload start, packed in entry order

Entry names are unique, offsets non-overlapping and in-bounds, and
``prod(shape) * itemsize == nbytes`` for every entry. Round trips are
bitwise exact. Fixture files reuse the format with the reserved name
prefixes ``fixture/input`` and ``fixture/probe/<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ModelSpec, ModelWeights, parameter_shapes

MAGIC = b"CNXW0001"
PAYLOAD_ALIGN = 64

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

FIXTURE_INPUT = "fixture/input"
FIXTURE_PROBE_PREFIX = "fixture/probe/"


class ContainerError(Exception):
    """Base class for malformed container files."""


class BadMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class HeaderMismatchError(ContainerError):
    pass


class DuplicateNameError(ContainerError):
    pass


class EntryBoundsError(ContainerError):
    pass


class BindError(ValueError):
    """Store does not close under the spec's parameter plan."""


@dataclass
class WeightStore:
    """Ordered named arrays plus a free-form JSON metadata map."""

    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, a in self.arrays.items():
            if a.dtype not in _DTYPE_TAGS:
                raise ValueError(f"entry {name!r} has unsupported dtype {a.dtype}; use float32/float64")

    def names(self) -> list[str]:
        return list(self.arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays


def save(store: WeightStore, path) -> None:
    """Write the container; the inverse of :func:`load`, bitwise."""
    entries = []
    offset = 0
    blobs = []
    for name, a in store.arrays.items():
        a = np.ascontiguousarray(a)
        raw = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": _DTYPE_TAGS[a.dtype],
            "shape": list(a.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"metadata": store.metadata, "payload_nbytes": offset, "entries": entries},
        sort_keys=True,
    ).encode("utf-8")
    head = MAGIC + struct.pack("<Q", len(header)) + header
    pad = (-len(head)) % PAYLOAD_ALIGN
    with open(path, "wb") as f:
        f.write(head)
        f.write(b"\x00" * pad)
        for raw in blobs:
            f.write(raw)


def load(path) -> WeightStore:
    """Read and validate a container file."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a CNXW container (bad magic)")
    (header_len,) = struct.unpack_from("<Q", data, len(MAGIC))
    header_start = len(MAGIC) + 8
    if header_start + header_len > len(data):
        raise TruncatedPayloadError(f"{path}: header extends past end of file")
    try:
        header = json.loads(data[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatchError(f"{path}: malformed header: {exc}") from exc
    payload_start = header_start + header_len
    payload_start += (-payload_start) % PAYLOAD_ALIGN
    payload = data[payload_start:]
    declared = header.get("payload_nbytes")
    if not isinstance(declared, int):
        raise HeaderMismatchError(f"{path}: header lacks payload_nbytes")
    if len(payload) < declared:
        raise TruncatedPayloadError(
            f"{path}: payload truncated: header declares {declared} bytes, file holds {len(payload)}"
        )
    if len(payload) > declared:
        raise HeaderMismatchError(
            f"{path}: header/payload length mismatch: declared {declared}, file holds {len(payload)}"
        )

    arrays: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for e in header.get("entries", []):
        name = e["name"]
        if name in arrays:
            raise DuplicateNameError(f"{path}: duplicate entry name {name!r}")
        if e["dtype"] not in _DTYPES:
            raise HeaderMismatchError(f"{path}: entry {name!r} has unknown dtype tag {e['dtype']!r}")
        dt = _DTYPES[e["dtype"]]
        shape = tuple(int(s) for s in e["shape"])
        nbytes = int(e["nbytes"])
        offset = int(e["offset"])
        expect = int(np.prod(shape)) * dt.itemsize if shape else dt.itemsize
        if expect != nbytes:
            raise HeaderMismatchError(
                f"{path}: entry {name!r}: shape {shape} x {dt.itemsize}B = {expect} != nbytes {nbytes}"
            )
        if offset < 0 or offset + nbytes > declared:
            raise EntryBoundsError(
                f"{path}: entry {name!r} spans [{offset}, {offset + nbytes}) beyond payload of {declared} bytes"
            )
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(payload, dtype=dt, count=expect // dt.itemsize, offset=offset)
        arrays[name] = arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise EntryBoundsError(f"{path}: entries {n0!r} and {n1!r} overlap")
    return WeightStore(arrays, header.get("metadata", {}))


# ---------------------------------------------------------------------------
# Spec binding
# ---------------------------------------------------------------------------


def store_from_model(weights: ModelWeights) -> WeightStore:
    return WeightStore(dict(weights.arrays), dict(weights.metadata))


def bind(store: WeightStore, spec: ModelSpec) -> ModelWeights:
    """Total bijection between spec-required names and store entries."""
    expected = parameter_shapes(spec)
    missing = sorted(set(expected) - set(store.arrays))
    extra = sorted(n for n in store.arrays if n not in expected and not n.startswith("fixture/"))
    if missing:
        raise BindError(f"missing entries: {', '.join(missing)}")
    if extra:
        raise BindError(f"unexpected entries: {', '.join(extra)}")
    for name, shape in expected.items():
        got = tuple(store.arrays[name].shape)
        if got != shape:
            raise BindError(f"extent mismatch for {name!r}: spec expects {shape}, store holds {got}")
    arrays = {n: store.arrays[n].astype(np.float32, copy=False) for n in expected}
    return ModelWeights(spec, arrays, dict(store.metadata))


# ---------------------------------------------------------------------------
# Activation fixtures
# ---------------------------------------------------------------------------


@dataclass
class Fixture:
    input: np.ndarray
    probes: dict[str, np.ndarray]
    metadata: dict


def save_fixture(path, input_array: np.ndarray, probes: dict[str, np.ndarray], metadata: dict) -> None:
    arrays = {FIXTURE_INPUT: np.asarray(input_array)}
    for name, value in probes.items():
        arrays[f"{FIXTURE_PROBE_PREFIX}{name}"] = np.asarray(value)
    save(WeightStore(arrays, metadata), path)


def load_fixture(path) -> Fixture:
    """Load input plus per-probe expected outputs from a fixture container."""
    store = load(path)
    if FIXTURE_INPUT not in store.arrays:
        raise ContainerError(f"{path}: fixture lacks the {FIXTURE_INPUT!r} entry")
    probes = {
        name[len(FIXTURE_PROBE_PREFIX):]: arr
        for name, arr in store.arrays.items()
        if name.startswith(FIXTURE_PROBE_PREFIX)
    }
    if not probes:
        raise ContainerError(f"{path}: fixture has an empty probe set")
    return Fixture(store.arrays[FIXTURE_INPUT], probes, store.metadata)


def validate_fixture(fixture: Fixture, spec: ModelSpec) -> None:
    """Check probe extents against the spec-derived shapes for this input."""
    from .arch import probe_shapes

    n, h, w, _c = fixture.input.shape
    if h != w:
        raise ValueError(f"fixture input must be square, got {h}x{w}")
    expected = probe_shapes(spec, h)
    for name, arr in fixture.probes.items():
        if name not in expected:
            raise ValueError(f"unknown probe {name!r}; expected one of {sorted(expected)}")
        want = (n,) + tuple(expected[name][1:])
        if tuple(arr.shape) != want:
            raise ValueError(f"probe {name!r} extent mismatch: expected {want}, got {tuple(arr.shape)}")
