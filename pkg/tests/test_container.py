"""Container format: byte-level fixtures, roundtrips, malformed inputs."""

import json
import struct

import numpy as np
import pytest

from lorashield import TensorMap, read_container, write_container
from lorashield.errors import (
    MalformedHeaderError,
    NameCollisionError,
    OverlappingOffsetsError,
    UnsupportedDtypeError,
)


def frame(header: bytes, data: bytes = b"") -> bytes:
    return struct.pack("<Q", len(header)) + header + data


def test_hand_constructed_file_parses():
    # 8-byte LE length, header for one F32 [1,2] tensor, 8 data bytes.
    header = b'{"t":{"dtype":"F32","shape":[1,2],"data_offsets":[0,8]}}'
    pad = b" " * (-(8 + len(header)) % 8)
    payload = frame(header + pad, struct.pack("<ff", 1.0, 2.0))
    tmap = read_container(payload)
    assert list(tmap.tensors) == ["t"]
    arr = tmap.tensors["t"]
    assert arr.shape == (1, 2)
    assert arr.dtype == np.float32
    np.testing.assert_array_equal(arr, [[1.0, 2.0]])
    assert tmap.metadata is None


def test_f64_scalar_data_region_is_exact_ieee754():
    tmap = TensorMap(tensors={"s": np.asarray(3.5, dtype=np.float64)})
    payload = write_container(tmap)
    (hlen,) = struct.unpack("<Q", payload[:8])
    data = payload[8 + hlen :]
    assert data == struct.pack("<d", 3.5)
    assert len(data) == 8


def test_roundtrip_identity():
    rng = np.random.default_rng(0)
    tmap = TensorMap.from_pairs(
        [
            ("a/w", rng.normal(size=(3, 4)).astype(np.float32)),
            ("b", rng.normal(size=(2, 2, 2)).astype(np.float64)),
            ("c/half", rng.normal(size=(5,)).astype(np.float16)),
            ("empty", np.zeros((0, 7), dtype=np.float32)),
            ("scalar", np.asarray(1.25, dtype=np.float16)),
        ],
        metadata={"concept": "x", "k": "5"},
    )
    assert read_container(write_container(tmap)) == tmap


def test_write_is_deterministic():
    tmap = TensorMap(tensors={"t": np.ones((2, 2), dtype=np.float32)}, metadata={"a": "b"})
    assert write_container(tmap) == write_container(tmap)


def test_empty_map_produces_header_only_file():
    payload = write_container(TensorMap())
    (hlen,) = struct.unpack("<Q", payload[:8])
    assert payload[8 + hlen :] == b""
    assert json.loads(payload[8 : 8 + hlen]) == {}
    assert read_container(payload) == TensorMap()


def test_header_key_order_matches_tensor_order():
    tmap = TensorMap.from_pairs(
        [("z", np.ones(1, dtype=np.float32)), ("a", np.ones(1, dtype=np.float32))]
    )
    payload = write_container(tmap)
    (hlen,) = struct.unpack("<Q", payload[:8])
    keys = list(json.loads(payload[8 : 8 + hlen]))
    assert keys == ["z", "a"]
    assert read_container(payload).names() == ["z", "a"]


def test_data_layout_contiguous_in_map_order():
    tmap = TensorMap.from_pairs(
        [("x", np.ones(3, dtype=np.float32)), ("y", np.ones(2, dtype=np.float64))]
    )
    payload = write_container(tmap)
    (hlen,) = struct.unpack("<Q", payload[:8])
    header = json.loads(payload[8 : 8 + hlen])
    assert header["x"]["data_offsets"] == [0, 12]
    assert header["y"]["data_offsets"] == [12, 28]


def test_truncated_data_region_rejected():
    header = b'{"t":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}}'
    payload = frame(header, b"\x00" * 8)  # 8 bytes instead of 16
    with pytest.raises(OverlappingOffsetsError):
        read_container(payload)


def test_overlapping_offsets_rejected():
    header = (
        b'{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},'
        b'"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}'
    )
    with pytest.raises(OverlappingOffsetsError):
        read_container(frame(header, b"\x00" * 12))


def test_gap_between_tensors_rejected():
    header = (
        b'{"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},'
        b'"b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}}'
    )
    with pytest.raises(OverlappingOffsetsError):
        read_container(frame(header, b"\x00" * 12))


def test_header_length_exceeding_input_rejected():
    payload = struct.pack("<Q", 1 << 20) + b"{}"
    with pytest.raises(MalformedHeaderError):
        read_container(payload)


def test_invalid_json_rejected():
    with pytest.raises(MalformedHeaderError):
        read_container(frame(b"not json at all!"))


def test_unsupported_dtype_rejected():
    header = b'{"t":{"dtype":"I8","shape":[4],"data_offsets":[0,4]}}'
    with pytest.raises(UnsupportedDtypeError):
        read_container(frame(header, b"\x00" * 4))


def test_span_inconsistent_with_shape_rejected():
    header = b'{"t":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}}'
    with pytest.raises(MalformedHeaderError):
        read_container(frame(header, b"\x00" * 4))


def test_duplicate_names_rejected_on_read_and_build():
    header = (
        b'{"t":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},'
        b'"t":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}'
    )
    with pytest.raises(MalformedHeaderError):
        read_container(frame(header, b"\x00" * 8))
    with pytest.raises(NameCollisionError):
        TensorMap.from_pairs(
            [("t", np.ones(1, dtype=np.float32)), ("t", np.ones(1, dtype=np.float32))]
        )


def test_metadata_must_be_string_map():
    header = b'{"__metadata__":{"k":1}}'
    with pytest.raises(MalformedHeaderError):
        read_container(frame(header))


def test_f16_survives_roundtrip_bit_exactly():
    values = np.array([0.1, -2.5, 65504.0, 6e-8], dtype=np.float16)
    tmap = TensorMap(tensors={"h": values})
    out = read_container(write_container(tmap))
    assert out.tensors["h"].dtype == np.float16
    assert out.tensors["h"].tobytes() == values.tobytes()


def test_random_roundtrip_corpus():
    rng = np.random.default_rng(7)
    dtypes = [np.float16, np.float32, np.float64]
    for trial in range(25):
        pairs = []
        for t in range(rng.integers(0, 6)):
            shape = tuple(rng.integers(0, 5, size=rng.integers(0, 4)))
            dtype = dtypes[rng.integers(0, 3)]
            pairs.append((f"t{trial}/{t}", rng.normal(size=shape).astype(dtype)))
        meta = {"i": str(trial)} if trial % 2 else None
        tmap = TensorMap.from_pairs(pairs, metadata=meta)
        assert read_container(write_container(tmap)) == tmap
