import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlgseg import tensorio
from vlgseg.tensorio import (
    BadMagicError,
    ShapeMismatchError,
    TruncatedError,
    VersionError,
    read_tensor,
    write_tensor,
)

DATA = Path(__file__).parent / "data"

GOLDEN_F32 = bytes.fromhex(
    "544e53520100000031000000000000007b226474797065223a22663332222c2273"
    "68617065223a5b322c325d2c226f72646572223a22726f772d6d616a6f72227d00"
    "00803f000000400000404000008040"
)
GOLDEN_I32 = bytes.fromhex(
    "544e5352010000002f000000000000007b226474797065223a22693332222c2273"
    "68617065223a5b335d2c226f72646572223a22726f772d6d616a6f72227dffffff"
    "ff00000000ff000000"
)


def test_roundtrip_small(tmp_path):
    p = tmp_path / "t.tnsr"
    write_tensor(p, "f32", [2, 2], [1, 2, 3, 4])
    t = read_tensor(p)
    assert t.dtype == "f32" and t.shape == (2, 2)
    np.testing.assert_array_equal(t.to_numpy(), [[1, 2], [3, 4]])
    assert t.data == struct.pack("<4f", 1, 2, 3, 4)


def test_empty_tensor(tmp_path):
    p = tmp_path / "e.tnsr"
    write_tensor(p, "f32", [0], b"")
    t = read_tensor(p)
    assert t.shape == (0,) and t.data == b""


def test_length_mismatch(tmp_path):
    with pytest.raises(ShapeMismatchError):
        write_tensor(tmp_path / "x.tnsr", "f32", [2], [1.0, 2.0, 3.0])


def test_rank_zero_rejected(tmp_path):
    with pytest.raises(ShapeMismatchError):
        write_tensor(tmp_path / "x.tnsr", "f32", [], [1.0])


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.tnsr"
    p.write_bytes(b"XXXX" + GOLDEN_F32[4:])
    with pytest.raises(BadMagicError):
        read_tensor(p)


def test_version_mismatch(tmp_path):
    p = tmp_path / "v2.tnsr"
    p.write_bytes(GOLDEN_F32[:4] + struct.pack("<I", 2) + GOLDEN_F32[8:])
    with pytest.raises(VersionError):
        read_tensor(p)


@pytest.mark.parametrize("cut", [3, 12, 30, len(GOLDEN_F32) - 1])
def test_truncation(tmp_path, cut):
    p = tmp_path / "trunc.tnsr"
    p.write_bytes(GOLDEN_F32[:cut])
    with pytest.raises(TruncatedError):
        read_tensor(p)


def test_golden_files_parse_and_reencode():
    f = read_tensor(DATA / "golden_f32_2x2.tnsr")
    assert (DATA / "golden_f32_2x2.tnsr").read_bytes() == GOLDEN_F32
    np.testing.assert_array_equal(f.to_numpy(), np.array([[1, 2], [3, 4]], dtype=np.float32))
    assert tensorio.encode_tensor("f32", [2, 2], [1, 2, 3, 4]) == GOLDEN_F32

    i = read_tensor(DATA / "golden_i32_3.tnsr")
    np.testing.assert_array_equal(i.to_numpy(), [-1, 0, 255])
    assert tensorio.encode_tensor("i32", [3], [-1, 0, 255]) == GOLDEN_I32


def test_header_is_documented_json():
    header_len = struct.unpack_from("<Q", GOLDEN_F32, 8)[0]
    header = json.loads(GOLDEN_F32[16 : 16 + header_len])
    assert header == {"dtype": "f32", "shape": [2, 2], "order": "row-major"}


def test_save_load_array_picks_dtype(tmp_path):
    tensorio.save_array(tmp_path / "b.tnsr", np.array([True, False]))
    assert read_tensor(tmp_path / "b.tnsr").dtype == "i32"
    tensorio.save_array(tmp_path / "f.tnsr", np.zeros((2, 3), dtype=np.float64))
    assert read_tensor(tmp_path / "f.tnsr").dtype == "f32"


shapes = st.lists(st.integers(0, 5), min_size=1, max_size=4)


@settings(max_examples=200, deadline=None)
@given(dtype=st.sampled_from(["f32", "i32"]), shape=shapes, seed=st.integers(0, 2**32 - 1))
def test_fuzzed_roundtrip_bit_exact(tmp_path_factory, dtype, shape, seed):
    rng = np.random.default_rng(seed)
    n = int(np.prod(shape))
    raw = rng.bytes(4 * n)  # arbitrary bit patterns, NaN payloads included
    blob = tensorio.encode_tensor(dtype, shape, raw)
    t = tensorio.decode_tensor(blob)
    assert t.dtype == dtype and list(t.shape) == shape and t.data == raw
    assert tensorio.encode_tensor(t.dtype, t.shape, t.data) == blob
