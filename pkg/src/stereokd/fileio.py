"""Binary artifact formats.

FTC: "FTC1" magic, u32 LE ndim, ndim u32 LE dims, f32 LE payload, one
tensor per file. PFM: grayscale "Pf" maps, negative scale = little-endian,
rows bottom-to-top. PGM: binary "P5". Checkpoints: "FTCC" magic, u32 LE
header length, canonical-JSON index, then concatenated FTC records.
"""

import json
import os
import struct

import numpy as np

from .errors import ContractError, FormatError

FTC_MAGIC = b"FTC1"
CONTAINER_MAGIC = b"FTCC"


def ftc_bytes(arr):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 0 or arr.ndim > 8:
        raise ContractError(f"FTC supports 1..8 dims, got shape {arr.shape}")
    parts = [FTC_MAGIC, struct.pack("<I", arr.ndim),
             struct.pack(f"<{arr.ndim}I", *arr.shape),
             np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    return b"".join(parts)


def parse_ftc(buf, base=0):
    """Decode one FTC record at the start of buf; returns (array, end offset)."""
    if len(buf) < 4 or buf[:4] != FTC_MAGIC:
        raise FormatError("bad FTC magic", offset=base)
    if len(buf) < 8:
        raise FormatError("truncated FTC header", offset=base + len(buf))
    ndim = struct.unpack_from("<I", buf, 4)[0]
    if ndim == 0 or ndim > 8:
        raise FormatError(f"implausible FTC ndim {ndim}", offset=base + 4)
    dims_end = 8 + 4 * ndim
    if len(buf) < dims_end:
        raise FormatError("truncated FTC dims", offset=base + len(buf))
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    count = 1
    for d in dims:
        count *= d
    end = dims_end + 4 * count
    if len(buf) < end:
        raise FormatError("truncated FTC payload", offset=base + len(buf))
    arr = np.frombuffer(buf[dims_end:end], dtype="<f4").reshape(dims).astype(np.float32)
    return arr, end


def write_ftc(path, arr):
    with open(path, "wb") as f:
        f.write(ftc_bytes(arr))


def read_ftc(path):
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = parse_ftc(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after FTC payload", offset=end)
    return arr


def _token(data, pos, what):
    while pos < len(data) and data[pos:pos + 1] in b" \t\r\n":
        pos += 1
    start = pos
    while pos < len(data) and data[pos:pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise FormatError(f"missing {what} in header", offset=start)
    return data[start:pos], start, pos


def write_pfm(path, arr):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise ContractError(f"PFM writer expects a 2-d map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("PFM writer requires finite values")
    h, w = arr.shape
    header = b"Pf\n" + f"{w} {h}\n".encode("ascii") + b"-1.0\n"
    payload = np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + payload)


def read_pfm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, m_start, pos = _token(data, 0, "PFM magic")
    if magic == b"PF":
        raise FormatError("color PFM not supported, expected grayscale 'Pf'", offset=m_start)
    if magic != b"Pf":
        raise FormatError("bad PFM magic", offset=m_start)
    wtok, w_start, pos = _token(data, pos, "PFM width")
    htok, h_start, pos = _token(data, pos, "PFM height")
    stok, s_start, pos = _token(data, pos, "PFM scale")
    try:
        w, h = int(wtok), int(htok)
    except ValueError:
        raise FormatError("non-integer PFM dimensions", offset=w_start) from None
    try:
        scale = float(stok)
    except ValueError:
        raise FormatError("non-numeric PFM scale", offset=s_start) from None
    if w <= 0 or h <= 0:
        raise FormatError(f"non-positive PFM dimensions {w}x{h}", offset=w_start)
    if scale == 0.0:
        raise FormatError("zero PFM scale", offset=s_start)
    if pos >= len(data):
        raise FormatError("missing whitespace before PFM payload", offset=len(data))
    pos += 1  # exactly one whitespace byte separates header from payload
    expected = 4 * w * h
    if len(data) - pos < expected:
        raise FormatError("truncated PFM payload", offset=len(data))
    if len(data) - pos > expected:
        raise FormatError("trailing bytes after PFM payload", offset=pos + expected)
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dt, count=w * h, offset=pos).reshape(h, w)
    return np.ascontiguousarray(np.flipud(arr)).astype(np.float32)


def write_pgm(path, arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ContractError(f"PGM writer expects a 2-d image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        # float images in [0,1] quantize to 8 bits
        arr = np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header + arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, m_start, pos = _token(data, 0, "PGM magic")
    if magic != b"P5":
        raise FormatError("bad PGM magic, expected binary 'P5'", offset=m_start)
    wtok, w_start, pos = _token(data, pos, "PGM width")
    htok, h_start, pos = _token(data, pos, "PGM height")
    mtok, mv_start, pos = _token(data, pos, "PGM maxval")
    try:
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except ValueError:
        raise FormatError("non-integer PGM header field", offset=w_start) from None
    if w <= 0 or h <= 0:
        raise FormatError(f"non-positive PGM dimensions {w}x{h}", offset=w_start)
    if not 1 <= maxval <= 255:
        raise FormatError(f"unsupported PGM maxval {maxval}", offset=mv_start)
    if pos >= len(data):
        raise FormatError("missing whitespace before PGM payload", offset=len(data))
    pos += 1
    if len(data) - pos < w * h:
        raise FormatError("truncated PGM payload", offset=len(data))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def save_checkpoint(path, arrays, meta):
    """arrays: name -> float32 ndarray; meta: JSON-serializable dict."""
    names = sorted(arrays)
    blobs = []
    entries = []
    off = 0
    for name in names:
        blob = ftc_bytes(arrays[name])
        entries.append({"name": name, "offset": off, "length": len(blob)})
        blobs.append(blob)
        off += len(blob)
    header = json.dumps({"version": 1, "meta": meta, "entries": entries},
                        sort_keys=True, separators=(",", ":")).encode("ascii")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CONTAINER_MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs))
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != CONTAINER_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    if len(data) < 8:
        raise FormatError("truncated checkpoint header length", offset=len(data))
    hlen = struct.unpack_from("<I", data, 4)[0]
    if len(data) < 8 + hlen:
        raise FormatError("truncated checkpoint header", offset=len(data))
    try:
        header = json.loads(data[8:8 + hlen].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}", offset=8) from None
    if header.get("version") != 1:
        raise FormatError(f"unsupported checkpoint version {header.get('version')}", offset=8)
    base = 8 + hlen
    arrays = {}
    for entry in header["entries"]:
        start = base + entry["offset"]
        arr, end = parse_ftc(data[start:start + entry["length"]], base=start)
        if end != entry["length"]:
            raise FormatError(f"checkpoint entry {entry['name']!r} length mismatch", offset=start + end)
        arrays[entry["name"]] = arr
    return arrays, header["meta"]
