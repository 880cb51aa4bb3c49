"""Minimal portable image writers: 16-bit PGM for renders, PFM for floats."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .diffmap import Array
from .errors import ParameterError


def write_pgm16(path: str | Path, img: Array) -> None:
    """Write a [0, 1]-valued grayscale image as big-endian 16-bit PGM.

    Values are clamped to [0, 1] before quantization.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm16(path: str | Path) -> Array:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ParameterError(f"{path}: not a binary PGM")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ParameterError(f"{path}: expected 16-bit PGM, maxval={maxval}")
        data = np.frombuffer(fh.read(w * h * 2), dtype=">u2")
    return data.reshape(h, w).astype(float) / 65535.0


def write_pfm(path: str | Path, img: Array) -> None:
    """Write a float map as grayscale little-endian PFM (stored bottom-up)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path: str | Path) -> Array:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ParameterError(f"{path}: not a grayscale PFM")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype)
    return data.reshape(h, w)[::-1].astype(float)
