"""Mask serialization and keep/prune visualizations.

Binary layout (little endian): ``b"EVMK"``, version u32, T u32, H u32, W u32,
then ``T*H`` rows, each ``W`` bits packed MSB-first into ``ceil(W/8)`` bytes.
Token-indexed masks (temporal, combined) are stored with ``H = 1, W = N``
unless a grid shape is given.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .grid import CombinedMask, SpatialMask, TemporalMask

MASK_MAGIC = b"EVMK"
MASK_VERSION = 1
_HEADER = struct.Struct("<4s4I")


def _mask_cube(mask, grid_shape=None) -> np.ndarray:
    if isinstance(mask, SpatialMask):
        return mask.bits
    if isinstance(mask, (TemporalMask, CombinedMask)):
        bits = mask.bits
    else:
        bits = np.asarray(mask, dtype=bool)
        if bits.ndim == 3:
            return bits
    if grid_shape is None:
        return bits.reshape(bits.shape[0], 1, bits.shape[1])
    h, w = grid_shape
    if h * w != bits.shape[1]:
        raise InvalidInputError(f"grid {h}x{w} does not hold {bits.shape[1]} tokens")
    return bits.reshape(bits.shape[0], h, w)


def encode_mask(mask, grid_shape=None) -> bytes:
    cube = _mask_cube(mask, grid_shape)
    t, h, w = cube.shape
    packed = np.packbits(cube.reshape(t * h, w), axis=1)
    return _HEADER.pack(MASK_MAGIC, MASK_VERSION, t, h, w) + packed.tobytes()


def decode_mask(raw: bytes) -> np.ndarray:
    """Return the ``(T, H, W)`` boolean cube stored in ``raw``."""
    if len(raw) < _HEADER.size:
        raise InvalidInputError("truncated mask header")
    magic, version, t, h, w = _HEADER.unpack_from(raw)
    if magic != MASK_MAGIC or version != MASK_VERSION:
        raise InvalidInputError(f"not a mask file (magic={magic!r}, version={version})")
    row_bytes = (w + 7) // 8
    body = raw[_HEADER.size:]
    if len(body) != t * h * row_bytes:
        raise InvalidInputError("mask payload size does not match header")
    rows = np.frombuffer(body, dtype=np.uint8).reshape(t * h, row_bytes)
    return np.unpackbits(rows, axis=1, count=w).astype(bool).reshape(t, h, w)


def write_mask(path, mask, grid_shape=None) -> None:
    Path(path).write_bytes(encode_mask(mask, grid_shape))


def read_mask(path) -> np.ndarray:
    return decode_mask(Path(path).read_bytes())


def mask_image(mask, grid_shape=None, scale: int = 8, gap: int = 2) -> Image.Image:
    """Frames side by side, white = keep, black = prune, grey separators."""
    cube = _mask_cube(mask, grid_shape)
    t, h, w = cube.shape
    scale = max(1, int(scale))
    canvas = np.full((h * scale, t * w * scale + (t - 1) * gap), 128, dtype=np.uint8)
    for k in range(t):
        tile = np.where(cube[k], 255, 0).astype(np.uint8)
        tile = np.kron(tile, np.ones((scale, scale), dtype=np.uint8))
        x0 = k * (w * scale + gap)
        canvas[:, x0:x0 + w * scale] = tile
    return Image.fromarray(canvas, mode="L")


def save_mask_image(path, mask, grid_shape=None, scale: int = 8) -> None:
    """Save as PNG or binary PGM depending on the file extension."""
    img = mask_image(mask, grid_shape, scale=scale)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img.save(path, format="PPM")
    else:
        img.save(path, format="PNG")
