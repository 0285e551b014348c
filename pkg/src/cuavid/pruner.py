"""Mask combination, packing and the end-to-end pruning pipeline."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .grid import CombinedMask, FeatureGrid, SpatialMask, TemporalMask
from .stp import StpConfig, spatial_mask
from .ttp import TtpConfig, temporal_mask

_PACK_HEADER = struct.Struct("<2I")


@dataclass(frozen=True, eq=False)
class PrunedTokenSequence:
    tokens: np.ndarray  # (K, D)
    provenance: np.ndarray  # (K, 2) rows of (frame, token index)

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.provenance.shape != (self.tokens.shape[0], 2):
            raise InvalidInputError("tokens and provenance lengths differ")

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class PruningReport:
    total_tokens: int
    kept_tokens: int
    per_frame_kept: list[int]
    reduction_ratio: float  # kept / total
    variant: str
    thresholds: dict = field(default_factory=dict)
    merge_adjacent: bool = False
    frames: int = 0
    tokens_per_frame: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def combine(spatial: SpatialMask, temporal: TemporalMask) -> CombinedMask:
    flat = spatial.flat()
    if flat.shape != temporal.bits.shape:
        raise InvalidInputError(
            f"spatial mask {spatial.bits.shape} does not align with temporal mask {temporal.bits.shape}"
        )
    return CombinedMask(flat & temporal.bits)


def merge_adjacent_frame_masks(spatial: SpatialMask) -> SpatialMask:
    """Pair frames (0,1), (2,3), ...; a merged patch is kept only if kept in both.

    With an odd frame count the last frame passes through unchanged.
    """
    bits = spatial.bits
    n_pairs = bits.shape[0] // 2
    merged = bits[0:2 * n_pairs:2] & bits[1:2 * n_pairs:2]
    if bits.shape[0] % 2:
        merged = np.concatenate([merged, bits[-1:]], axis=0)
    return SpatialMask(merged)


def merge_adjacent_frames(tokens: np.ndarray) -> np.ndarray:
    """Average token features over the same frame pairs as merge_adjacent_frame_masks."""
    tokens = np.asarray(tokens, dtype=np.float64)
    n_pairs = tokens.shape[0] // 2
    merged = 0.5 * (tokens[0:2 * n_pairs:2] + tokens[1:2 * n_pairs:2])
    if tokens.shape[0] % 2:
        merged = np.concatenate([merged, tokens[-1:]], axis=0)
    return merged


def pack(tokens, mask: CombinedMask) -> PrunedTokenSequence:
    """Drop pruned tokens; survivors keep their original (t, i) order."""
    if isinstance(tokens, FeatureGrid):
        tokens = tokens.tokens()
    tokens = np.asarray(tokens)
    if tokens.ndim != 3 or tokens.shape[:2] != mask.bits.shape:
        raise InvalidInputError(f"tokens {tokens.shape} do not match mask {mask.bits.shape}")
    frames, idx = np.nonzero(mask.bits)
    provenance = np.stack([frames, idx], axis=1).astype(np.int64)
    return PrunedTokenSequence(tokens[frames, idx].copy(), provenance)


def scatter_back(seq: PrunedTokenSequence, frames: int, tokens_per_frame: int, fill: float = 0.0) -> np.ndarray:
    """Inverse of pack: ``(T, N, D)`` array with pruned slots set to ``fill``."""
    out = np.full((frames, tokens_per_frame, seq.dim), fill, dtype=seq.tokens.dtype)
    out[seq.provenance[:, 0], seq.provenance[:, 1]] = seq.tokens
    return out


@dataclass(frozen=True, eq=False)
class PruningMasks:
    tokens: np.ndarray  # (T, N, D) tokens the masks address (pair-averaged when merged)
    spatial: SpatialMask
    temporal: TemporalMask
    combined: CombinedMask


def compute_masks(
    grid: FeatureGrid,
    stp_cfg: StpConfig | None = None,
    ttp_cfg: TtpConfig | None = None,
    merge_adjacent: bool = False,
) -> PruningMasks:
    """Spatial, temporal and combined masks; a missing variant contributes all-keep.

    With ``merge_adjacent`` the spatial mask is computed on the original frames
    and merged pairwise, and TTP runs on pairwise-averaged tokens.
    """
    if stp_cfg is None and ttp_cfg is None:
        raise InvalidInputError("at least one of stp_cfg / ttp_cfg is required")

    tokens = grid.tokens()
    if merge_adjacent:
        tokens = merge_adjacent_frames(tokens)
    n_frames, n_tokens = tokens.shape[:2]

    if stp_cfg is not None:
        spatial = spatial_mask(grid, stp_cfg)
        if merge_adjacent:
            spatial = merge_adjacent_frame_masks(spatial)
    else:
        spatial = SpatialMask(np.ones((n_frames, grid.grid_height, grid.grid_width), dtype=bool))

    if ttp_cfg is not None:
        temporal = temporal_mask(tokens, ttp_cfg)
    else:
        temporal = TemporalMask(np.ones((n_frames, n_tokens), dtype=bool))

    return PruningMasks(tokens, spatial, temporal, combine(spatial, temporal))


def prune_pipeline(
    grid: FeatureGrid,
    stp_cfg: StpConfig | None = None,
    ttp_cfg: TtpConfig | None = None,
    merge_adjacent: bool = False,
) -> tuple[PrunedTokenSequence, PruningReport]:
    """Run STP and/or TTP, AND the masks, pack the survivors and report counts."""
    masks = compute_masks(grid, stp_cfg, ttp_cfg, merge_adjacent)
    combined = masks.combined
    n_frames, n_tokens = combined.bits.shape
    seq = pack(masks.tokens, combined)

    if stp_cfg is not None and ttp_cfg is not None:
        variant = "both"
    else:
        variant = "stp-only" if stp_cfg is not None else "ttp-only"
    thresholds = {}
    if stp_cfg is not None:
        thresholds.update(tau_s=float(stp_cfg.tau_s), tau_large=int(stp_cfg.tau_large))
    if ttp_cfg is not None:
        thresholds["tau_t"] = float(ttp_cfg.tau_t)
    total = n_frames * n_tokens
    kept = combined.popcount()
    report = PruningReport(
        total_tokens=total,
        kept_tokens=kept,
        per_frame_kept=combined.per_frame(),
        reduction_ratio=kept / total,
        variant=variant,
        thresholds=thresholds,
        merge_adjacent=merge_adjacent,
        frames=n_frames,
        tokens_per_frame=n_tokens,
    )
    return seq, report


def encode_packed(seq: PrunedTokenSequence) -> bytes:
    """``{count u32, D u32}`` + ``count`` (u32, u32) provenance pairs + float32 payload."""
    head = _PACK_HEADER.pack(len(seq), seq.dim)
    prov = np.ascontiguousarray(seq.provenance, dtype="<u4").tobytes()
    payload = np.ascontiguousarray(seq.tokens, dtype="<f4").tobytes()
    return head + prov + payload


def decode_packed(raw: bytes) -> PrunedTokenSequence:
    if len(raw) < _PACK_HEADER.size:
        raise InvalidInputError("truncated packed-sequence header")
    count, dim = _PACK_HEADER.unpack_from(raw)
    off = _PACK_HEADER.size
    expected = off + count * 8 + count * dim * 4
    if len(raw) != expected:
        raise InvalidInputError(f"packed sequence: expected {expected} bytes, got {len(raw)}")
    prov = np.frombuffer(raw, dtype="<u4", count=2 * count, offset=off).reshape(count, 2).astype(np.int64)
    toks = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=off + 8 * count)
    return PrunedTokenSequence(toks.reshape(count, dim).astype(np.float32), prov)


def write_packed(path, seq: PrunedTokenSequence) -> None:
    Path(path).write_bytes(encode_packed(seq))


def read_packed(path) -> PrunedTokenSequence:
    return decode_packed(Path(path).read_bytes())

