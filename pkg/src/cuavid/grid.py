"""Feature grids, keep-masks and the numeric primitives shared by the pruners.

A :class:`FeatureGrid` holds a ``(T, H', W', D)`` array of patch features for a
keyframe video. Tokens are addressed as ``(t, i * W' + j)``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

GRID_MAGIC = b"EVGR"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4s5I")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _as_vector_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise InvalidInputError(f"vector shapes differ: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("vectors must be finite")
    return a, b


def l2_distance(a, b) -> float:
    """Euclidean distance between two equal-length vectors (float64)."""
    a, b = _as_vector_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def cosine_similarity_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two ``(N, D)`` arrays, in float64.

    Zero rows: zero vs zero gives 1.0, zero vs nonzero gives 0.0. Bitwise
    identical nonzero rows give exactly 1.0 and results are clipped to
    [-1, 1] so rounding can never push a value past the ceiling.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInputError(f"row arrays differ: {a.shape} vs {b.shape}")
    na = np.sqrt(np.sum(a * a, axis=1))
    nb = np.sqrt(np.sum(b * b, axis=1))
    dot = np.sum(a * b, axis=1)
    denom = na * nb
    out = np.zeros(a.shape[0], dtype=np.float64)
    nz = denom > 0
    out[nz] = dot[nz] / denom[nz]
    np.clip(out, -1.0, 1.0, out=out)
    a_zero = na == 0
    b_zero = nb == 0
    out[a_zero & b_zero] = 1.0
    out[a_zero ^ b_zero] = 0.0
    same = np.all(a == b, axis=1) & ~a_zero
    out[same] = 1.0
    return out


def cosine_similarity(a, b) -> float:
    a, b = _as_vector_pair(a, b)
    return float(cosine_similarity_rows(a[None, :], b[None, :])[0])


def flatten_index(i: int, j: int, width: int, height: int | None = None) -> int:
    """Row-major token index of grid cell ``(i, j)``."""
    if width < 1 or j < 0 or j >= width or i < 0 or (height is not None and i >= height):
        raise InvalidInputError(f"cell ({i}, {j}) outside grid of width {width}")
    return i * width + j


def unflatten_index(k: int, width: int, height: int | None = None) -> tuple[int, int]:
    if width < 1 or k < 0 or (height is not None and k >= height * width):
        raise InvalidInputError(f"token index {k} outside grid of width {width}")
    return divmod(k, width)


# ---------------------------------------------------------------------------
# feature grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureGrid:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or min(data.shape) < 1:
            raise InvalidInputError(f"feature grid must be (T, H, W, D) with all sizes >= 1, got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("feature grid contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def grid_height(self) -> int:
        return self.data.shape[1]

    @property
    def grid_width(self) -> int:
        return self.data.shape[2]

    @property
    def dim(self) -> int:
        return self.data.shape[3]

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def tokens(self) -> np.ndarray:
        """``(T, N, D)`` view of the grid."""
        return self.data.reshape(self.frames, self.tokens_per_frame, self.dim)

    def frame(self, t: int) -> np.ndarray:
        return self.data[t]

    @classmethod
    def from_tokens(cls, tokens, height: int, width: int) -> "FeatureGrid":
        tokens = np.asarray(tokens)
        if tokens.ndim != 3 or tokens.shape[1] != height * width:
            raise InvalidInputError(f"cannot view {tokens.shape} as a {height}x{width} grid")
        return cls(tokens.reshape(tokens.shape[0], height, width, tokens.shape[2]))


def write_grid(path, grid: FeatureGrid) -> None:
    """Write the ``EVGR`` binary format: header then little-endian float32 payload."""
    t, h, w, d = grid.shape
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, t, h, w, d))
        fh.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())


def read_grid(path) -> FeatureGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _GRID_HEADER.size:
        raise InvalidInputError(f"{path}: truncated grid header")
    magic, version, t, h, w, d = _GRID_HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise InvalidInputError(f"{path}: unsupported grid version {version}")
    count = t * h * w * d
    payload = raw[_GRID_HEADER.size:]
    if len(payload) != 4 * count:
        raise InvalidInputError(f"{path}: expected {count} floats, found {len(payload) // 4}")
    data = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, d).astype(np.float32)
    return FeatureGrid(data)


def write_grid_manifest(path, grid: FeatureGrid) -> None:
    """JSON manifest plus a raw float32 sidecar (``<name>.raw``)."""
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    t, h, w, d = grid.shape
    raw_path.write_bytes(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())
    manifest = {
        "format": "EVGR",
        "version": GRID_VERSION,
        "frames": t,
        "grid_height": h,
        "grid_width": w,
        "dim": d,
        "dtype": "float32-le",
        "layout": "t,i,j,d",
        "data": raw_path.name,
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def read_grid_manifest(path) -> FeatureGrid:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        shape = tuple(int(manifest[k]) for k in ("frames", "grid_height", "grid_width", "dim"))
        raw_path = path.parent / manifest["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: bad grid manifest ({exc})") from exc
    if manifest.get("dtype", "float32-le") != "float32-le":
        raise InvalidInputError(f"{path}: unsupported dtype {manifest['dtype']}")
    payload = raw_path.read_bytes()
    if len(payload) != 4 * int(np.prod(shape)):
        raise InvalidInputError(f"{raw_path}: size does not match manifest shape {shape}")
    return FeatureGrid(np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32))


def load_grid(path) -> FeatureGrid:
    """Read either grid format, chosen by extension (``.json`` = manifest)."""
    if str(path).endswith(".json"):
        return read_grid_manifest(path)
    return read_grid(path)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def _as_bits(bits, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{what} must have {ndim} dimensions, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise InvalidInputError(f"{what} bits must be 0 or 1")
        arr = arr.astype(bool)
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpatialMask:
    """Per-frame keep bits on the patch grid, shape ``(T, H', W')``; True = keep."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _as_bits(self.bits, 3, "spatial mask"))

    @property
    def frames(self) -> int:
        return self.bits.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.bits.shape[1], self.bits.shape[2]

    def flat(self) -> np.ndarray:
        """``(T, H'*W')`` view indexed by flatten_index."""
        return self.bits.reshape(self.frames, -1)

    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class TemporalMask:
    """Keep bits per (frame, token), shape ``(T, N)``. Frame 0 is always kept."""

    bits: np.ndarray

    def __post_init__(self):
        bits = _as_bits(self.bits, 2, "temporal mask")
        if not bits[0].all():
            raise InvalidInputError("temporal mask must keep every frame-0 token")
        object.__setattr__(self, "bits", bits)

    @property
    def frames(self) -> int:
        return self.bits.shape[0]

    @property
    def tokens_per_frame(self) -> int:
        return self.bits.shape[1]

    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class CombinedMask:
    """Keep bits per (frame, token) after AND-ing spatial and temporal masks."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _as_bits(self.bits, 2, "combined mask"))

    @property
    def frames(self) -> int:
        return self.bits.shape[0]

    @property
    def tokens_per_frame(self) -> int:
        return self.bits.shape[1]

    def popcount(self) -> int:
        return int(self.bits.sum())

    def per_frame(self) -> list[int]:
        return [int(c) for c in self.bits.sum(axis=1)]
