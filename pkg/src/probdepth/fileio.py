"""Netpbm (PPM/PGM) and PFM readers and writers.

PFM files are always written little-endian (scale ``-1.0``) with rows stored
bottom-to-top as the format requires. Grids that are not fully valid get a
``<stem>.valid.pgm`` sidecar where 255 marks a valid pixel.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .grid import ContractError, Grid


def _read_netpbm_header(data: bytes, n_fields: int):
    """Return the header tokens and the offset of the raster."""
    tokens = []
    pos = 0
    while len(tokens) < n_fields:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(data, pos)
        if m is None:
            raise ContractError("truncated netpbm header")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an ``(H, W, 3)`` uint8 array (or floats in [0, 1]) as binary P6."""
    rgb = _to_uint8(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractError(f"PPM needs (H, W, 3), got {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _read_netpbm_header(data, 4)
    if tokens[0] != b"P6":
        raise ContractError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PPM is supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return raster.reshape(h, w, 3).copy()


def write_pgm(path, gray: np.ndarray) -> None:
    gray = _to_uint8(gray)
    if gray.ndim != 2:
        raise ContractError(f"PGM needs (H, W), got {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(gray).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _read_netpbm_header(data, 4)
    if tokens[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PGM is supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return raster.reshape(h, w).copy()


def write_pfm(path, array: np.ndarray) -> None:
    """Write a float map; ``(H, W)`` becomes ``Pf`` and ``(H, W, 3)`` becomes ``PF``."""
    array = np.asarray(array)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    if array.ndim == 2:
        tag = b"Pf"
    elif array.ndim == 3 and array.shape[2] == 3:
        tag = b"PF"
    else:
        raise ContractError(f"PFM holds 1 or 3 channels, got shape {array.shape}")
    h, w = array.shape[:2]
    raster = np.flipud(array).astype("<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(raster).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float64, top row first."""
    data = Path(path).read_bytes()
    header = []
    pos = 0
    for _ in range(3):
        end = data.index(b"\n", pos)
        header.append(data[pos:end].strip())
        pos = end + 1
    tag = header[0]
    if tag == b"Pf":
        channels = 1
    elif tag == b"PF":
        channels = 3
    else:
        raise ContractError(f"{path}: not a PFM file")
    w, h = (int(t) for t in header[1].split())
    scale = float(header[2])
    dtype = "<f4" if scale < 0 else ">f4"
    raster = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=pos)
    raster = raster.reshape(h, w, channels) if channels == 3 else raster.reshape(h, w)
    return np.flipud(raster).astype(np.float64)


def _to_uint8(array) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype == np.uint8:
        return array
    if array.dtype == bool:
        return array.astype(np.uint8) * 255
    return np.clip(np.round(array * 255.0), 0, 255).astype(np.uint8)


def validity_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".valid.pgm")


def save_grid(path, grid: Grid) -> list[Path]:
    """Write a 1- or 3-channel grid as PFM plus a validity sidecar when needed.

    Returns the list of files written.
    """
    path = Path(path)
    write_pfm(path, grid.values)
    written = [path]
    side = validity_path(path)
    if not grid.valid.all():
        write_pgm(side, grid.valid)
        written.append(side)
    elif side.exists():
        side.unlink()
    return written


def load_grid(path) -> Grid:
    path = Path(path)
    values = read_pfm(path)
    side = validity_path(path)
    valid = read_pgm(side) > 127 if side.exists() else None
    return Grid.from_array(values, valid)


def save_image(path, grid: Grid) -> None:
    """Write an intensity grid in [0, 1] as 8-bit PPM (gray replicated to RGB)."""
    values = grid.values
    if grid.channels == 1:
        values = np.repeat(values, 3, axis=2)
    write_ppm(path, values)


def load_image(path) -> Grid:
    """Read a PPM as a single-channel luminance grid in [0, 1]."""
    rgb = read_ppm(path).astype(np.float64) / 255.0
    return Grid.from_array(rgb.mean(axis=2))
