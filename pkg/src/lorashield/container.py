"""Bit-exact reader/writer for the safetensors tensor container.

File layout:

    [ 8 bytes ]  header length N, little-endian unsigned 64-bit
    [ N bytes ]  UTF-8 JSON header: name -> {dtype, shape, data_offsets},
                 plus an optional "__metadata__" string map
    [ rest    ]  contiguous data buffer; data_offsets are [begin, end)
                 byte ranges relative to the start of this buffer

Supported dtypes are F16, F32 and F64. Tensors keep their on-disk dtype
through a read/write roundtrip; any widening for computation happens in
the adapter layer, never here.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MalformedHeaderError,
    NameCollisionError,
    OverlappingOffsetsError,
    UnsupportedDtypeError,
)

DTYPE_TO_NUMPY = {
    "F16": np.dtype("<f2"),
    "F32": np.dtype("<f4"),
    "F64": np.dtype("<f8"),
}
NUMPY_TO_DTYPE = {v: k for k, v in DTYPE_TO_NUMPY.items()}

_HEADER_LEN_FMT = "<Q"


def dtype_name(array: np.ndarray) -> str:
    """Container dtype string ("F16"/"F32"/"F64") for a numpy array."""
    key = array.dtype.newbyteorder("<")
    if key not in NUMPY_TO_DTYPE:
        raise UnsupportedDtypeError(f"unsupported array dtype {array.dtype}")
    return NUMPY_TO_DTYPE[key]


@dataclass
class TensorMap:
    """Ordered name -> tensor mapping, the unit of container I/O.

    Arrays are row-major with dtype float16/32/64; iteration order is
    the on-disk layout order. `metadata` is an optional str -> str map.
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] | None = None

    @classmethod
    def from_pairs(
        cls,
        pairs: list[tuple[str, np.ndarray]],
        metadata: dict[str, str] | None = None,
    ) -> "TensorMap":
        tensors: dict[str, np.ndarray] = {}
        for name, arr in pairs:
            if name in tensors:
                raise NameCollisionError(f"duplicate tensor name {name!r}")
            tensors[name] = arr
        return cls(tensors=tensors, metadata=metadata)

    def validate(self) -> None:
        for name, arr in self.tensors.items():
            if not name:
                raise MalformedHeaderError("tensor names must be non-empty")
            dtype_name(arr)  # raises UnsupportedDtypeError
        if self.metadata is not None:
            for k, v in self.metadata.items():
                if not isinstance(k, str) or not isinstance(v, str):
                    raise MalformedHeaderError("metadata must map strings to strings")

    def names(self) -> list[str]:
        return list(self.tensors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.names() != other.names():
            return False
        if (self.metadata or None) != (other.metadata or None):
            return False
        for name in self.tensors:
            a, b = self.tensors[name], other.tensors[name]
            if a.dtype != b.dtype or a.shape != b.shape:
                return False
            if a.tobytes() != b.tobytes():
                return False
        return True


def _reject_duplicate_keys(pairs):
    d = {}
    for k, v in pairs:
        if k in d:
            raise MalformedHeaderError(f"duplicate header key {k!r}")
        d[k] = v
    return d


def read_container(data: bytes) -> TensorMap:
    """Parse a container byte string into a TensorMap.

    Raises MalformedHeaderError, OverlappingOffsetsError or
    UnsupportedDtypeError on invalid input; never silently clamps.
    """
    if len(data) < 8:
        raise MalformedHeaderError("input shorter than the 8-byte length prefix")
    (header_len,) = struct.unpack(_HEADER_LEN_FMT, data[:8])
    if 8 + header_len > len(data):
        raise MalformedHeaderError(
            f"header length {header_len} exceeds input of {len(data)} bytes"
        )
    try:
        header = json.loads(
            data[8 : 8 + header_len].decode("utf-8"),
            object_pairs_hook=_reject_duplicate_keys,
        )
    except MalformedHeaderError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError("header JSON must be an object")

    metadata = header.pop("__metadata__", None)
    if metadata is not None:
        if not isinstance(metadata, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
        ):
            raise MalformedHeaderError("__metadata__ must map strings to strings")

    buffer = data[8 + header_len :]
    entries: list[tuple[str, str, tuple[int, ...], int, int]] = []
    for name, info in header.items():
        if not name:
            raise MalformedHeaderError("tensor names must be non-empty")
        if not isinstance(info, dict):
            raise MalformedHeaderError(f"entry for {name!r} is not an object")
        try:
            dtype = info["dtype"]
            shape = info["shape"]
            offsets = info["data_offsets"]
        except (KeyError, TypeError) as exc:
            raise MalformedHeaderError(f"entry for {name!r} misses {exc}") from exc
        if dtype not in DTYPE_TO_NUMPY:
            raise UnsupportedDtypeError(f"tensor {name!r} has dtype {dtype!r}")
        if not isinstance(shape, list) or any(
            not isinstance(d, int) or d < 0 for d in shape
        ):
            raise MalformedHeaderError(f"tensor {name!r} has invalid shape {shape!r}")
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) for o in offsets)
        ):
            raise MalformedHeaderError(f"tensor {name!r} has invalid data_offsets")
        begin, end = offsets
        nbytes = math.prod(shape) * DTYPE_TO_NUMPY[dtype].itemsize
        if begin < 0 or end < begin or end > len(buffer):
            raise OverlappingOffsetsError(
                f"tensor {name!r} range [{begin}, {end}) exceeds data buffer "
                f"of {len(buffer)} bytes"
            )
        if end - begin != nbytes:
            raise MalformedHeaderError(
                f"tensor {name!r} spans {end - begin} bytes but shape/dtype "
                f"require {nbytes}"
            )
        entries.append((name, dtype, tuple(shape), begin, end))

    # Ranges must exactly tile the data buffer: no gaps, no overlap.
    cursor = 0
    for name, _, _, begin, end in sorted(entries, key=lambda e: (e[3], e[4])):
        if begin != cursor:
            raise OverlappingOffsetsError(
                f"tensor {name!r} begins at {begin}, expected {cursor} "
                "(offsets must be contiguous and non-overlapping)"
            )
        cursor = end
    if cursor != len(buffer):
        raise OverlappingOffsetsError(
            f"data buffer has {len(buffer)} bytes but offsets cover {cursor}"
        )

    tensors: dict[str, np.ndarray] = {}
    for name, dtype, shape, begin, end in entries:
        arr = np.frombuffer(buffer[begin:end], dtype=DTYPE_TO_NUMPY[dtype])
        tensors[name] = arr.reshape(shape).copy()
    return TensorMap(tensors=tensors, metadata=dict(metadata) if metadata else None)


def write_container(tmap: TensorMap) -> bytes:
    """Serialize a TensorMap; byte-deterministic for a given map.

    Tensor data is laid out gap-free in map iteration order and the
    header keys follow that same order. The header is space-padded so
    the data buffer starts on an 8-byte boundary.
    """
    tmap.validate()
    header: dict[str, object] = {}
    if tmap.metadata:
        header["__metadata__"] = dict(tmap.metadata)
    chunks: list[bytes] = []
    offset = 0
    for name, arr in tmap.tensors.items():
        raw = np.ascontiguousarray(arr).tobytes()
        header[name] = {
            "dtype": dtype_name(arr),
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)

    header_json = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )
    pad = -(8 + len(header_json)) % 8
    header_json += b" " * pad
    return (
        struct.pack(_HEADER_LEN_FMT, len(header_json))
        + header_json
        + b"".join(chunks)
    )


def read_container_file(path) -> TensorMap:
    with open(path, "rb") as fh:
        return read_container(fh.read())


def write_container_file(tmap: TensorMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_container(tmap))
