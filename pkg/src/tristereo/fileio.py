"""Netpbm (P5/P6) images, PFM disparity maps and raw little-endian float dumps."""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .geometry import DisparityMap, Image


class FormatError(ValueError):
    pass


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_header(buf: bytes, count: int) -> tuple[list[bytes], int]:
    pos, tokens = 0, []
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise FormatError("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise FormatError("header must end with a single whitespace byte")
    return tokens, pos + 1


def load_image(path, channels: int | None = None) -> Image:
    """Read a binary PGM/PPM; values are divided by the file's maxval."""
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _read_header(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    if not (0 < maxval < 65536) or w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad dimensions or maxval")
    nch = 1 if magic == b"P5" else 3
    if channels is not None and channels != nch:
        raise FormatError(f"{path}: expected {channels} channels, file has {nch}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * nch
    if len(buf) - offset < n * dtype.itemsize:
        raise FormatError(f"{path}: pixel data truncated")
    raw = np.frombuffer(buf, dtype=dtype, count=n, offset=offset)
    if raw.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds maxval")
    data = raw.astype(np.float32) / np.float32(maxval)
    return Image(data.reshape(h, w, nch))


def save_image(img: Image, path, bits: int = 8) -> None:
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    magic = b"P5" if img.channels == 1 else b"P6"
    q = np.round(img.data.astype(np.float64) * maxval)
    q = q.astype(">u2" if bits == 16 else "u1")
    header = b"%s\n%d %d\n%d\n" % (magic, img.width, img.height, maxval)
    _atomic_write(path, header + q.tobytes())


def save_mask(mask: np.ndarray, path) -> None:
    save_image(Image(np.asarray(mask, dtype=np.float32)), path)


def load_mask(path) -> np.ndarray:
    return load_image(path, channels=1).data[:, :, 0] > 0.5


def load_disparity(path) -> DisparityMap:
    """Read a single-channel little-endian PFM; non-finite or negative entries are invalid."""
    buf = Path(path).read_bytes()
    try:
        (magic, w, h, scale), offset = _read_header(buf, 4)
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PFM header ({exc})") from None
    if magic != b"Pf":
        raise FormatError(f"{path}: expected single-channel 'Pf', got {magic!r}")
    if scale >= 0:
        raise FormatError(f"{path}: big-endian PFM (positive scale) is not supported")
    n = w * h
    if len(buf) - offset < 4 * n:
        raise FormatError(f"{path}: pixel data truncated")
    vals = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(h, w)[::-1]
    vals = vals.astype(np.float32)
    valid = np.isfinite(vals) & (vals >= 0)
    return DisparityMap(vals, valid)


def save_disparity(dm: DisparityMap, path) -> None:
    """Write PFM (scale -1, bottom-up rows); invalid entries are stored as +inf."""
    vals = np.where(dm.valid, dm.values, np.float32(np.inf)).astype("<f4")
    header = b"Pf\n%d %d\n-1.0\n" % (dm.width, dm.height)
    _atomic_write(path, header + vals[::-1].tobytes())


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# ------------------------------------------------------------- raw float dumps

MAGIC_VOLUME = 0x54534356  # "TSCV"
MAGIC_ARRAY = 0x54534152  # "TSAR"
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}


def dump_arrays(path, arrays: dict[str, np.ndarray], meta: dict[str, int] | None = None) -> None:
    """Write named arrays as records: 8 int32 header words, name, little-endian data.

    Header words: magic, ndim, shape[0..3] (padded with 1), dtype code, name length.
    """
    chunks = []
    records = {f"meta.{k}": np.array([v], dtype="<f8") for k, v in sorted((meta or {}).items())}
    records.update(arrays)
    for name, arr in records.items():
        arr = np.asarray(arr)
        arr = arr.astype("<f8" if arr.dtype == np.float64 else "<f4")
        if arr.ndim > 4:
            raise ValueError(f"{name}: at most 4 dimensions")
        shape = list(arr.shape) + [1] * (4 - arr.ndim)
        nm = name.encode()
        hdr = np.array([MAGIC_ARRAY, arr.ndim, *shape, DTYPE_CODES[arr.dtype], len(nm)], dtype="<i4")
        chunks += [hdr.tobytes(), nm, arr.tobytes()]
    _atomic_write(path, b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    out, pos = {}, 0
    codes = {v: k for k, v in DTYPE_CODES.items()}
    while pos < len(buf):
        hdr = np.frombuffer(buf, dtype="<i4", count=8, offset=pos)
        if hdr[0] != MAGIC_ARRAY:
            raise FormatError(f"{path}: bad record magic at byte {pos}")
        ndim, shape, code, nlen = int(hdr[1]), tuple(int(s) for s in hdr[2:6]), int(hdr[6]), int(hdr[7])
        pos += 32
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        dtype = codes[code]
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape[:ndim])
        pos += count * dtype.itemsize
        out[name] = arr.copy()
    return out
