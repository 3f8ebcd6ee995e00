"""Raster files.

DTR1 (raw 16-bit scans)::

    b"DTR1", uint32 LE height, uint32 LE width, h*w int16 LE values (row-major)

P5 (netpbm binary graymap): ``P5\\n<w> <h>\\n<maxval>\\n`` followed by pixels.
maxval 255 holds the 8-bit exports. maxval 65535 holds raw scans as unsigned
big-endian samples with a +32768 offset (stored = raw + 32768).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

DTR_MAGIC = b"DTR1"


class RasterError(ValueError):
    pass


def write_dtr(path, scan: np.ndarray) -> None:
    scan = np.asarray(scan)
    if scan.ndim != 2:
        raise RasterError(f"DTR1 holds 2-D scans, got shape {scan.shape}")
    h, w = scan.shape
    with open(path, "wb") as f:
        f.write(DTR_MAGIC + struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(scan, dtype="<i2").tobytes())


def read_dtr(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DTR_MAGIC:
        raise RasterError(f"{path}: not a DTR1 file")
    if len(raw) < 12:
        raise RasterError(f"{path}: truncated header")
    h, w = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 2 * h * w:
        raise RasterError(f"{path}: expected {2 * h * w} payload bytes, found {len(raw) - 12}")
    return np.frombuffer(raw, dtype="<i2", offset=12).reshape(h, w).astype(np.int16)


def _pgm_header(raw: bytes, path) -> tuple[int, int, int, int]:
    if raw[:2] != b"P5":
        raise RasterError(f"{path}: not a P5 file")
    fields: list[int] = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise RasterError(f"{path}: malformed P5 header")
        fields.append(int(raw[start:pos]))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise RasterError(f"{path}: malformed P5 header")
    w, h, maxval = fields
    return w, h, maxval, pos + 1


def write_pgm(path, image: np.ndarray) -> None:
    """uint8 image -> maxval 255; int16 scan -> maxval 65535 (offset binary)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise RasterError(f"P5 holds 2-D images, got shape {image.shape}")
    h, w = image.shape
    if image.dtype == np.uint8:
        body = image.tobytes()
        maxval = 255
    elif image.dtype == np.int16:
        body = (image.astype(np.int32) + 32768).astype(">u2").tobytes()
        maxval = 65535
    else:
        raise RasterError(f"unsupported raster dtype {image.dtype}")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(body)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, maxval, start = _pgm_header(raw, path)
    if maxval == 255:
        need, dtype = w * h, np.uint8
    elif maxval == 65535:
        need, dtype = 2 * w * h, ">u2"
    else:
        raise RasterError(f"{path}: unsupported maxval {maxval}")
    if len(raw) - start != need:
        raise RasterError(f"{path}: expected {need} payload bytes, found {len(raw) - start}")
    arr = np.frombuffer(raw, dtype=dtype, offset=start).reshape(h, w)
    if maxval == 255:
        return arr.astype(np.uint8)
    return (arr.astype(np.int32) - 32768).astype(np.int16)


def read_raster(path) -> np.ndarray:
    """Read any supported raster by sniffing its magic bytes."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == DTR_MAGIC:
        return read_dtr(path)
    if magic[:2] == b"P5":
        return read_pgm(path)
    raise RasterError(f"{path}: unrecognized raster format")
