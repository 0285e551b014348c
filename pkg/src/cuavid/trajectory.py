"""Trajectory records, keyframe videos and feature-grid extraction.

A trajectory is an instruction plus one post-action screenshot per step,
played back at 1 FPS, so the timestamp of step ``k`` is ``k`` seconds.

Manifest format (JSON, a list of trajectories or a single one)::

    {"instruction": ..., "platform": ...,
     "steps": [{"index": 0, "image": "shots/0.png", "action": "click", "t": 0}],
     "label": {"success": true, "error_interval": [2, 3], "justification": "..."}}

Image paths are relative to the manifest's directory. ``image_b64`` may be used
instead of ``image`` to embed the bytes.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import math
import os
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError, InvalidInputError
from .grid import FeatureGrid

PLATFORMS = ("ubuntu-agent", "ubuntu-human", "mac-win", "android", "other")
DEFAULT_MAX_FRAMES = 100
RES_720P = (1280, 720)

FeatureExtractor = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    keyframe: str | bytes  # path (relative to the record's base_dir) or raw image bytes
    timestamp: float
    action_summary: str | None = None


@dataclass(frozen=True)
class JudgmentLabel:
    success: bool
    error_interval: tuple[float, float] | None = None
    justification: str | None = None


@dataclass(frozen=True)
class TrajectoryRecord:
    instruction: str
    steps: tuple[StepRecord, ...]
    platform: str = "other"
    label: JudgmentLabel | None = None
    record_id: str | None = None
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    @property
    def duration(self) -> float:
        """Video length in seconds; each keyframe is shown for one second."""
        return float(self.steps[-1].timestamp) + 1.0 if self.steps else 0.0

    def keyframe_bytes(self, step: StepRecord) -> bytes:
        if isinstance(step.keyframe, bytes):
            return step.keyframe
        path = Path(step.keyframe)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        try:
            return path.read_bytes()
        except OSError as exc:
            raise IngestionError(f"step {step.step_index}: cannot read keyframe {path} ({exc.strerror})") from exc

    def fingerprint(self) -> str:
        """Stable content id: instruction plus keyframe bytes."""
        h = hashlib.sha256(self.instruction.encode("utf-8"))
        for step in self.steps:
            h.update(hashlib.sha256(self.keyframe_bytes(step)).digest())
        return h.hexdigest()[:16]


def decode_image(raw: bytes, what: str = "keyframe") -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise IngestionError(f"{what}: undecodable image ({exc})") from exc


def load_keyframe(record: TrajectoryRecord, step: StepRecord) -> np.ndarray:
    return decode_image(record.keyframe_bytes(step), f"step {step.step_index}")


def validate_record(record: TrajectoryRecord, check_images: bool = True) -> None:
    """Raise IngestionError / InvalidInputError if the record breaks an invariant."""
    if not record.steps:
        raise IngestionError("trajectory has no steps")
    if record.platform not in PLATFORMS:
        raise InvalidInputError(f"unknown platform {record.platform!r}")
    prev = None
    for step in record.steps:
        if prev is not None and step.step_index <= prev:
            raise IngestionError(f"step {step.step_index}: step indices must strictly increase")
        prev = step.step_index
        if check_images:
            load_keyframe(record, step)
    label = record.label
    if label is not None and label.error_interval is not None:
        t_s, t_e = label.error_interval
        if not (0 <= t_s <= t_e <= record.duration):
            raise IngestionError(
                f"error interval [{t_s}, {t_e}] outside video of {record.duration:g} s"
            )


def build_keyframe_video(
    raw_steps: Iterable[Mapping],
    instruction: str = "",
    platform: str = "other",
    label: JudgmentLabel | None = None,
    base_dir=None,
) -> TrajectoryRecord:
    """One keyframe per raw step, in order, at 1 FPS.

    Each raw step needs a ``screenshot`` (path or bytes); ``action`` is optional.
    """
    steps = []
    for k, raw in enumerate(raw_steps):
        shot = raw.get("screenshot", raw.get("image"))
        if shot is None or shot == b"" or shot == "":
            raise IngestionError(f"step {k}: missing screenshot")
        if isinstance(shot, os.PathLike):
            shot = os.fspath(shot)
        steps.append(StepRecord(step_index=k, keyframe=shot, timestamp=k, action_summary=raw.get("action")))
    if not steps:
        raise IngestionError("trajectory has no steps")
    return TrajectoryRecord(
        instruction=instruction,
        steps=tuple(steps),
        platform=platform,
        label=label,
        base_dir=Path(base_dir) if base_dir is not None else None,
    )


def uniform_sample_indices(length: int, max_frames: int = DEFAULT_MAX_FRAMES) -> list[int]:
    """Endpoint-inclusive, evenly spaced indices (round half up)."""
    if max_frames < 2:
        raise InvalidInputError(f"max_frames must be >= 2, got {max_frames}")
    if length <= max_frames:
        return list(range(length))
    step = (length - 1) / (max_frames - 1)
    return [int(math.floor(k * step + 0.5)) for k in range(max_frames)]


def uniform_sample(record: TrajectoryRecord, max_frames: int = DEFAULT_MAX_FRAMES) -> TrajectoryRecord:
    idx = uniform_sample_indices(len(record.steps), max_frames)
    if len(idx) == len(record.steps):
        return record
    return replace(record, steps=tuple(record.steps[k] for k in idx))


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def pad_to_multiple(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Replicate edge pixels so both sides are multiples of ``patch_size``."""
    h, w = image.shape[:2]
    pad_h = -h % patch_size
    pad_w = -w % patch_size
    if not pad_h and not pad_w:
        return image
    pads = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pads, mode="edge")


def mean_rgb_extractor(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Mean colour per patch in [0, 1]; ``image`` sides must be multiples of the patch."""
    h, w, c = image.shape
    blocks = image.reshape(h // patch_size, patch_size, w // patch_size, patch_size, c)
    return blocks.astype(np.float64).mean(axis=(1, 3)) / 255.0


def extract_frame(
    image: np.ndarray,
    patch_size: int = 16,
    extractor: FeatureExtractor = mean_rgb_extractor,
) -> np.ndarray:
    if patch_size < 1:
        raise InvalidInputError(f"patch_size must be >= 1, got {patch_size}")
    padded = pad_to_multiple(image, patch_size)
    feats = np.asarray(extractor(padded, patch_size), dtype=np.float64)
    expected = (padded.shape[0] // patch_size, padded.shape[1] // patch_size)
    if feats.ndim != 3 or feats.shape[:2] != expected:
        raise InvalidInputError(f"extractor returned {feats.shape}, expected {expected} x D")
    return feats


def extract_grid(
    record: TrajectoryRecord,
    extractor: FeatureExtractor = mean_rgb_extractor,
    patch_size: int = 16,
    resize_720p: bool = False,
) -> FeatureGrid:
    frames = []
    shape = None
    for step in record.steps:
        image = load_keyframe(record, step)
        if resize_720p:
            image = np.asarray(Image.fromarray(image).resize(RES_720P, Image.BILINEAR))
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise InvalidInputError(
                f"step {step.step_index}: resolution {image.shape[1]}x{image.shape[0]} "
                f"differs from {shape[1]}x{shape[0]}"
            )
        frames.append(extract_frame(image, patch_size, extractor))
    return FeatureGrid(np.stack(frames))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _keyframe_ref(record: TrajectoryRecord, step: StepRecord, relative_to: Path | None) -> dict:
    if isinstance(step.keyframe, bytes):
        return {"image_b64": base64.b64encode(step.keyframe).decode("ascii")}
    path = Path(step.keyframe)
    if relative_to is not None and record.base_dir is not None:
        if not path.is_absolute():
            path = Path(os.path.abspath(record.base_dir / path))
        path = Path(os.path.relpath(path, os.path.abspath(relative_to)))
    return {"image": path.as_posix()}


def record_to_dict(record: TrajectoryRecord, relative_to=None) -> dict:
    """Manifest dict; paths are rewritten relative to ``relative_to`` when given."""
    out = {}
    if record.record_id is not None:
        out["id"] = record.record_id
    out["instruction"] = record.instruction
    out["platform"] = record.platform
    steps = []
    for step in record.steps:
        entry = {"index": step.step_index}
        entry.update(_keyframe_ref(record, step, Path(relative_to) if relative_to is not None else None))
        if step.action_summary is not None:
            entry["action"] = step.action_summary
        entry["t"] = step.timestamp
        steps.append(entry)
    out["steps"] = steps
    if record.label is not None:
        label = {"success": record.label.success}
        if record.label.error_interval is not None:
            label["error_interval"] = list(record.label.error_interval)
        if record.label.justification is not None:
            label["justification"] = record.label.justification
        out["label"] = label
    return out


def _require(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise IngestionError(f"{where}: missing field {key!r}")
    return obj[key]


def record_from_dict(obj: Mapping, base_dir=None, where: str = "trajectory") -> TrajectoryRecord:
    if not isinstance(obj, Mapping):
        raise IngestionError(f"{where}: expected an object")
    instruction = _require(obj, "instruction", where)
    platform = obj.get("platform", "other")
    raw_steps = _require(obj, "steps", where)
    if not isinstance(raw_steps, list) or not raw_steps:
        raise IngestionError(f"{where}: steps must be a nonempty list")
    steps = []
    for k, raw in enumerate(raw_steps):
        swhere = f"{where} step {raw.get('index', k) if isinstance(raw, Mapping) else k}"
        if not isinstance(raw, Mapping):
            raise IngestionError(f"{swhere}: expected an object")
        if "image_b64" in raw:
            try:
                keyframe = base64.b64decode(raw["image_b64"], validate=True)
            except ValueError as exc:
                raise IngestionError(f"{swhere}: bad base64 image") from exc
        elif raw.get("image"):
            keyframe = str(raw["image"])
        else:
            raise IngestionError(f"{swhere}: missing screenshot")
        steps.append(StepRecord(
            step_index=int(raw.get("index", k)),
            keyframe=keyframe,
            timestamp=raw.get("t", k),
            action_summary=raw.get("action"),
        ))
    label = None
    if obj.get("label") is not None:
        raw_label = obj["label"]
        interval = raw_label.get("error_interval")
        if interval is not None:
            if len(interval) != 2:
                raise IngestionError(f"{where}: error_interval must be [t_s, t_e]")
            interval = (interval[0], interval[1])
        label = JudgmentLabel(
            success=bool(_require(raw_label, "success", f"{where} label")),
            error_interval=interval,
            justification=raw_label.get("justification"),
        )
    return TrajectoryRecord(
        instruction=str(instruction),
        steps=tuple(steps),
        platform=platform,
        label=label,
        record_id=obj.get("id"),
        base_dir=Path(base_dir) if base_dir is not None else None,
    )


def parse_manifest(text: str, base_dir=None, validate: bool = True) -> list[TrajectoryRecord]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"manifest is not valid JSON ({exc})") from exc
    if isinstance(payload, Mapping) and "trajectories" in payload:
        payload = payload["trajectories"]
    items = payload if isinstance(payload, list) else [payload]
    records = []
    for n, obj in enumerate(items):
        where = f"trajectory {n}"
        if isinstance(obj, Mapping) and obj.get("id"):
            where = f"trajectory {obj['id']}"
        record = record_from_dict(obj, base_dir, where)
        if validate:
            try:
                validate_record(record)
            except (IngestionError, InvalidInputError) as exc:
                raise type(exc)(f"{where}: {exc}") from exc
        records.append(record)
    return records


def load_manifest(path, validate: bool = True) -> list[TrajectoryRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read manifest {path} ({exc.strerror})") from exc
    return parse_manifest(text, base_dir=path.parent, validate=validate)


def manifest_text(records: Iterable[TrajectoryRecord], relative_to=None) -> str:
    items = [record_to_dict(r, relative_to) for r in records]
    return json.dumps(items, indent=2, ensure_ascii=False) + "\n"


def write_manifest(path, records: Iterable[TrajectoryRecord]) -> None:
    path = Path(path)
    path.write_text(manifest_text(records, relative_to=path.parent), encoding="utf-8")
