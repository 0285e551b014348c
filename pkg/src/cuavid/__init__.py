"""Spatiotemporal token pruning and evaluation tools for computer-use execution videos."""

__version__ = "0.1.0"

from .errors import (
    CuavidError,
    IngestionError,
    InvalidInputError,
    ResponseValidationError,
    SchemaError,
    StateError,
    TransportError,
)
from .grid import (
    CombinedMask,
    FeatureGrid,
    SpatialMask,
    TemporalMask,
    cosine_similarity,
    flatten_index,
    l2_distance,
    unflatten_index,
)
from .metrics import Interval, aggregate, binary_metrics, tiou
from .pruner import PrunedTokenSequence, PruningReport, combine, merge_adjacent_frame_masks, pack, prune_pipeline
from .stp import StpConfig, build_components, neighbor_distances, spatial_mask
from .trajectory import TrajectoryRecord, build_keyframe_video, extract_grid, uniform_sample
from .ttp import TtpConfig, temporal_mask
