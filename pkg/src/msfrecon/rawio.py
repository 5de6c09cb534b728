"""Bit-exact raw image files and 8-bit previews.

Layout of a ``.tsimg`` file::

    8 bytes   magic  b"TSIMG\\0\\0\\1"
    4 bytes   header length n, uint32 little-endian
    n bytes   UTF-8 JSON header {"height", "width", "depth", "dtype", "endianness"}
    payload   little-endian values, x fastest, then y, then d
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"TSIMG\x00\x00\x01"
DTYPES = {"f32": "<f4", "f64": "<f8"}


def write_image(path, tensor, dtype: str = "f64") -> None:
    arr = np.asarray(tensor)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DataError(f"raw images are (H, W, D); got shape {arr.shape}")
    if dtype not in DTYPES:
        raise DataError(f"dtype must be one of {sorted(DTYPES)}")
    h, w, d = arr.shape
    header = json.dumps({"height": h, "width": w, "depth": d, "dtype": dtype,
                         "endianness": "LE"}, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=DTYPES[dtype]).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_image(path) -> np.ndarray:
    """Read a ``.tsimg`` file as an (H, W, D) array of its stored precision."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: bad magic, not a TSIMG file")
    (n,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + n].decode("utf-8"))
        h, w, d = header["height"], header["width"], header["depth"]
        dt = DTYPES[header["dtype"]]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed header ({exc})") from exc
    if header.get("endianness") != "LE":
        raise DataError(f"{path}: only little-endian payloads are supported")
    payload = blob[12 + n:]
    if len(payload) != h * w * d * np.dtype(dt).itemsize:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected "
                        f"{h * w * d * np.dtype(dt).itemsize}")
    arr = np.frombuffer(payload, dtype=dt).reshape(d, h, w).transpose(1, 2, 0)
    return arr.astype(dt[1:], copy=True)


def write_pgm(path, image, vmin: float | None = None, vmax: float | None = None) -> None:
    """8-bit binary PGM preview of a depth-1 image, linearly windowed."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[:, :, 0]
    lo = img.min() if vmin is None else vmin
    hi = img.max() if vmax is None else vmax
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    px = np.clip(np.round((img - lo) * scale), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode("ascii"))
        fh.write(px.tobytes())
