"""Portable Float Map reader/writer (little-endian, bottom-to-top rows)."""

from __future__ import annotations

import re

import numpy as np

_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[0-9.eE+-]+)\s", re.DOTALL)


def write_pfm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError("PFM holds H x W or H x W x 3 images")
    h, w = img.shape[:2]
    data = np.ascontiguousarray(np.flipud(img), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    """Return a float32 array, ``H x W x 3`` for colour files."""
    with open(path, "rb") as fh:
        raw = fh.read()
    m = _HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    body = raw[m.end():]
    if len(body) < 4 * count:
        raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).copy()
