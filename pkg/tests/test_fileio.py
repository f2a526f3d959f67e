"""Binary tensor, map, and checkpoint formats."""

import struct

import numpy as np
import pytest

from stereokd.errors import ContractError, FormatError
from stereokd.fileio import (ftc_bytes, load_checkpoint, parse_ftc, read_pfm,
                             read_pgm, read_ftc, save_checkpoint, write_ftc,
                             write_pfm, write_pgm)

EDGE_VALUES = np.array([0.0, -0.0, 1.0, -1.0, 1e-38, -1e-38, 1e38, -1e38,
                        np.float32(2 ** -149), 3.14159, 65504.0, 1e-45],
                       dtype=np.float32)


def test_ftc_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((4,), (2, 3), (2, 3, 4, 5)):
        arr = rng.standard_normal(shape).astype(np.float32)
        path = str(tmp_path / "t.ftc")
        write_ftc(path, arr)
        back = read_ftc(path)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_ftc_format_errors(tmp_path):
    arr = np.ones((2, 2), dtype=np.float32)
    blob = ftc_bytes(arr)
    with pytest.raises(FormatError, match="magic"):
        parse_ftc(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="ndim"):
        parse_ftc(blob[:4] + struct.pack("<I", 9) + blob[8:])
    with pytest.raises(FormatError, match="truncated"):
        parse_ftc(blob[:-2])
    path = str(tmp_path / "t.ftc")
    with open(path, "wb") as f:
        f.write(blob + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        read_ftc(path)
    with pytest.raises(ContractError, match="dims"):
        ftc_bytes(np.float32(1.0))


def test_ftc_error_carries_offset():
    with pytest.raises(FormatError, match="byte offset 0"):
        parse_ftc(b"NOPE")


def test_pfm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    path = str(tmp_path / "m.pfm")
    for trial in range(20):
        arr = (rng.standard_normal((5, 7))
               * 10.0 ** float(rng.integers(-6, 6))).astype(np.float32)
        arr[0, :EDGE_VALUES.size % 7] = EDGE_VALUES[:EDGE_VALUES.size % 7]
        write_pfm(path, arr)
        back = read_pfm(path)
        assert back.dtype == np.float32
        assert np.array_equal(back.view(np.uint32), arr.view(np.uint32))


def test_pfm_edge_values_survive(tmp_path):
    path = str(tmp_path / "edge.pfm")
    arr = np.tile(EDGE_VALUES, 2).reshape(2, -1)
    write_pfm(path, arr)
    back = read_pfm(path)
    assert np.array_equal(back.view(np.uint32), arr.astype(np.float32).view(np.uint32))


def test_pfm_big_endian_payload(tmp_path):
    arr = np.arange(6.0, dtype=np.float32).reshape(2, 3)
    header = b"Pf\n3 2\n1.0\n"
    payload = np.ascontiguousarray(np.flipud(arr), dtype=">f4").tobytes()
    path = tmp_path / "be.pfm"
    path.write_bytes(header + payload)
    assert np.array_equal(read_pfm(str(path)), arr)


def test_pfm_format_errors(tmp_path):
    path = tmp_path / "bad.pfm"
    path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
    with pytest.raises(FormatError, match="color"):
        read_pfm(str(path))
    path.write_bytes(b"Pf\n2 2\n0.0\n" + b"\x00" * 16)
    with pytest.raises(FormatError, match="zero PFM scale"):
        read_pfm(str(path))
    path.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 8)
    with pytest.raises(FormatError, match="truncated"):
        read_pfm(str(path))
    path.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 20)
    with pytest.raises(FormatError, match="trailing"):
        read_pfm(str(path))
    path.write_bytes(b"Pf\nx 2\n-1.0\n")
    with pytest.raises(FormatError, match="non-integer"):
        read_pfm(str(path))
    with pytest.raises(ContractError, match="finite"):
        write_pfm(str(path), np.full((2, 2), np.inf))
    with pytest.raises(ContractError, match="2-d"):
        write_pfm(str(path), np.zeros(4))


def test_pgm_round_trip_and_quantization(tmp_path):
    path = str(tmp_path / "i.pgm")
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)
    # floats in [0, 1] quantize to rounded 8-bit levels
    write_pgm(path, np.array([[0.0, 0.5, 1.0, 2.0]]))
    assert np.array_equal(read_pgm(path), [[0, 128, 255, 255]])


def test_pgm_format_errors(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 4)
    with pytest.raises(FormatError, match="magic"):
        read_pgm(str(path))
    path.write_bytes(b"P5\n2 2\n999\n" + b"\x00" * 4)
    with pytest.raises(FormatError, match="maxval"):
        read_pgm(str(path))
    path.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(FormatError, match="truncated"):
        read_pgm(str(path))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"param.a": rng.standard_normal((2, 3)).astype(np.float32),
              "opt.m.a": rng.standard_normal((2, 3)).astype(np.float32)}
    meta = {"step": 7, "mode": "full", "seed": 0}
    path = str(tmp_path / "c.ftcc")
    save_checkpoint(path, arrays, meta)
    back, meta_back = load_checkpoint(path)
    assert meta_back == meta
    for name, arr in arrays.items():
        assert np.array_equal(back[name], arr)


def test_checkpoint_save_load_save_is_byte_identical(tmp_path):
    arrays = {"w": np.linspace(0, 1, 6, dtype=np.float32).reshape(2, 3)}
    p1, p2 = str(tmp_path / "a.ftcc"), str(tmp_path / "b.ftcc")
    save_checkpoint(p1, arrays, {"step": 1})
    back, meta = load_checkpoint(p1)
    save_checkpoint(p2, back, meta)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_format_errors(tmp_path):
    path = tmp_path / "bad.ftcc"
    path.write_bytes(b"NOPE")
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(str(path))
    path.write_bytes(b"FTCC" + struct.pack("<I", 100))
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(str(path))
    path.write_bytes(b"FTCC" + struct.pack("<I", 2) + b"{]")
    with pytest.raises(FormatError, match="unreadable"):
        load_checkpoint(str(path))
