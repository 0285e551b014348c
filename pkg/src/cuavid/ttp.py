"""Temporal token pruning.

Every spatial location keeps a reference token, initialised from frame 0. A
later token is dropped when its cosine similarity to the reference is strictly
above ``tau_t``; otherwise it is kept and becomes the new reference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grid import FeatureGrid, TemporalMask, cosine_similarity_rows

DEFAULT_TAU_T = 0.9999


@dataclass(frozen=True)
class TtpConfig:
    tau_t: float = DEFAULT_TAU_T

    def __post_init__(self):
        if not np.isfinite(self.tau_t):
            raise InvalidInputError(f"tau_t must be finite, got {self.tau_t}")


def _as_tokens(tokens) -> np.ndarray:
    if isinstance(tokens, FeatureGrid):
        tokens = tokens.tokens()
    tokens = np.asarray(tokens)
    if tokens.ndim != 3 or min(tokens.shape) < 1:
        raise InvalidInputError(f"tokens must be (T, N, D) with all sizes >= 1, got {tokens.shape}")
    if not np.all(np.isfinite(tokens)):
        raise InvalidInputError("tokens contain NaN or Inf")
    return tokens.astype(np.float64, copy=False)


def temporal_mask(tokens, cfg: TtpConfig | None = None) -> TemporalMask:
    """Keep mask ``(T, N)`` for a ``(T, N, D)`` token tensor or a FeatureGrid.

    Locations are processed together but each one only ever sees its own
    reference, so the result equals running every location on its own.
    """
    cfg = cfg or TtpConfig()
    tokens = _as_tokens(tokens)
    n_frames, n_tokens, _ = tokens.shape
    keep = np.ones((n_frames, n_tokens), dtype=bool)
    reference = tokens[0].copy()
    for t in range(1, n_frames):
        sim = cosine_similarity_rows(reference, tokens[t])
        kept = ~(sim > cfg.tau_t)
        keep[t] = kept
        reference[kept] = tokens[t][kept]
    return TemporalMask(keep)


def reference_trace(mask: TemporalMask) -> np.ndarray:
    """Frame index of the reference in force at each (t, i), replayed from kept tokens."""
    trace = np.zeros(mask.bits.shape, dtype=np.int64)
    for t in range(1, mask.frames):
        trace[t] = np.where(mask.bits[t - 1], t - 1, trace[t - 1])
    return trace
