"""Spatial token pruning.

Each frame becomes a 4-connected graph whose edges join neighbouring patches
with feature distance strictly below ``tau_s``. Patches that belong to a
connected component with more than ``tau_large`` members are pruned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grid import FeatureGrid, SpatialMask

DEFAULT_TAU_S = 0.3
DEFAULT_TAU_LARGE = 40


@dataclass(frozen=True)
class StpConfig:
    tau_s: float = DEFAULT_TAU_S
    tau_large: int = DEFAULT_TAU_LARGE

    def __post_init__(self):
        if not np.isfinite(self.tau_s):
            raise InvalidInputError(f"tau_s must be finite, got {self.tau_s}")
        if self.tau_s < 0:
            raise InvalidInputError(f"tau_s must be nonnegative, got {self.tau_s}")
        if int(self.tau_large) != self.tau_large or self.tau_large < 1:
            raise InvalidInputError(f"tau_large must be an integer >= 1, got {self.tau_large}")


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Component label per patch; a label is the smallest flat index in its component."""

    labels: np.ndarray  # (H', W') int64
    sizes: dict[int, int]

    @property
    def count(self) -> int:
        return len(self.sizes)

    def component_sizes(self) -> np.ndarray:
        """Size of the component containing each patch, shape ``(H', W')``."""
        lut = np.zeros(self.labels.size, dtype=np.int64)
        for label, n in self.sizes.items():
            lut[label] = n
        return lut[self.labels]


def _check_frame(frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or min(frame.shape) < 1:
        raise InvalidInputError(f"frame must be (H, W, D), got {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise InvalidInputError("frame contains NaN or Inf")
    return frame


def neighbor_distances(frame) -> tuple[np.ndarray, np.ndarray]:
    """L2 distance to the right neighbour ``(H, W-1)`` and to the one below ``(H-1, W)``."""
    frame = _check_frame(frame)
    horizontal = np.sqrt(np.sum((frame[:, :-1] - frame[:, 1:]) ** 2, axis=-1))
    vertical = np.sqrt(np.sum((frame[:-1, :] - frame[1:, :]) ** 2, axis=-1))
    return horizontal, vertical


def build_components(frame, tau_s: float) -> ComponentLabeling:
    frame = _check_frame(frame)
    if not np.isfinite(tau_s):
        raise InvalidInputError(f"tau_s must be finite, got {tau_s}")
    h, w, _ = frame.shape
    d_h, d_v = neighbor_distances(frame)
    uf = UnionFind(h * w)
    for i, j in zip(*np.nonzero(d_h < tau_s)):
        uf.union(int(i) * w + int(j), int(i) * w + int(j) + 1)
    for i, j in zip(*np.nonzero(d_v < tau_s)):
        uf.union(int(i) * w + int(j), (int(i) + 1) * w + int(j))

    roots = np.fromiter((uf.find(k) for k in range(h * w)), dtype=np.int64, count=h * w)
    # canonical label = first flat index seen for each root
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    labels = first[inverse].astype(np.int64)
    counts = np.bincount(inverse)
    sizes = {int(first[k]): int(counts[k]) for k in range(len(first))}
    return ComponentLabeling(labels.reshape(h, w), sizes)


def frame_keep_bits(frame, cfg: StpConfig) -> np.ndarray:
    """Keep bits ``(H', W')`` for one frame."""
    labeling = build_components(frame, cfg.tau_s)
    return labeling.component_sizes() <= cfg.tau_large


def spatial_mask(grid: FeatureGrid, cfg: StpConfig | None = None) -> SpatialMask:
    cfg = cfg or StpConfig()
    bits = np.empty((grid.frames, grid.grid_height, grid.grid_width), dtype=bool)
    for t in range(grid.frames):
        bits[t] = frame_keep_bits(grid.frame(t), cfg)
    return SpatialMask(bits)
