"""Deterministic synthetic GUI-like videos at the feature-grid level.

A scene is a uniform background, static regions (constant or per-patch
textured, identical in every frame) and dynamic regions whose feature follows
a per-frame schedule and which may move by a fixed velocity, bouncing off the
grid edges. Coordinates are in patches.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .grid import FeatureGrid


@dataclass(frozen=True)
class StaticRegion:
    top: int
    left: int
    height: int
    width: int
    feature: tuple[float, ...] | None = None  # None: seeded per-patch texture


@dataclass(frozen=True)
class DynamicRegion:
    top: int
    left: int
    height: int
    width: int
    schedule: tuple[tuple[float, ...], ...] | None = None  # cycled per frame; None: fresh random feature per frame
    velocity: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class SceneSpec:
    grid_height: int
    grid_width: int
    frames: int
    background: tuple[float, ...]
    static_regions: tuple[StaticRegion, ...] = ()
    dynamic_regions: tuple[DynamicRegion, ...] = ()
    seed: int = 0
    patch_size: int = 16  # pixels per patch when rendering

    def __post_init__(self):
        if self.frames < 1 or self.grid_height < 1 or self.grid_width < 1:
            raise InvalidInputError("frames and grid sides must be >= 1")
        if len(self.background) < 1:
            raise InvalidInputError("background feature must have at least one dimension")
        for region in (*self.static_regions, *self.dynamic_regions):
            self._check_region(region)

    @property
    def dim(self) -> int:
        return len(self.background)

    def _check_region(self, r) -> None:
        if r.height < 1 or r.width < 1:
            raise InvalidInputError(f"empty region {r}")
        if r.top < 0 or r.left < 0 or r.top + r.height > self.grid_height or r.left + r.width > self.grid_width:
            raise InvalidInputError(f"region {r} outside {self.grid_height}x{self.grid_width} grid")
        features = [r.feature] if isinstance(r, StaticRegion) else list(r.schedule or [])
        for f in features:
            if f is not None and len(f) != self.dim:
                raise InvalidInputError(f"region feature has dim {len(f)}, expected {self.dim}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneSpec":
        try:
            statics = tuple(
                StaticRegion(**{**r, "feature": _tuple_or_none(r.get("feature"))})
                for r in obj.get("static_regions", ())
            )
            dynamics = tuple(
                DynamicRegion(**{
                    **r,
                    "schedule": None if r.get("schedule") is None else tuple(tuple(f) for f in r["schedule"]),
                    "velocity": tuple(r.get("velocity", (0, 0))),
                })
                for r in obj.get("dynamic_regions", ())
            )
            return cls(
                grid_height=int(obj["grid_height"]),
                grid_width=int(obj["grid_width"]),
                frames=int(obj["frames"]),
                background=tuple(obj["background"]),
                static_regions=statics,
                dynamic_regions=dynamics,
                seed=int(obj.get("seed", 0)),
                patch_size=int(obj.get("patch_size", 16)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"bad scene spec ({exc})") from exc


def _tuple_or_none(v):
    return None if v is None else tuple(v)


def _bounce(start: int, velocity: int, t: int, span: int) -> int:
    """Position after ``t`` steps moving back and forth over ``0..span``."""
    if span == 0 or velocity == 0:
        return start
    period = 2 * span
    p = (start + velocity * t) % period
    return p if p <= span else period - p


def region_position(spec: SceneSpec, r: DynamicRegion, t: int) -> tuple[int, int]:
    top = _bounce(r.top, r.velocity[0], t, spec.grid_height - r.height)
    left = _bounce(r.left, r.velocity[1], t, spec.grid_width - r.width)
    return top, left


def dynamic_footprint(spec: SceneSpec) -> np.ndarray:
    """``(H', W')`` boolean map of every location any dynamic region ever covers."""
    covered = np.zeros((spec.grid_height, spec.grid_width), dtype=bool)
    for r in spec.dynamic_regions:
        for t in range(spec.frames):
            top, left = region_position(spec, r, t)
            covered[top:top + r.height, left:left + r.width] = True
    return covered


def static_fraction(spec: SceneSpec) -> float:
    return 1.0 - dynamic_footprint(spec).mean()


def generate(spec: SceneSpec) -> FeatureGrid:
    rng = np.random.default_rng(spec.seed)
    base = np.empty((spec.grid_height, spec.grid_width, spec.dim), dtype=np.float64)
    base[:] = np.asarray(spec.background, dtype=np.float64)
    for r in spec.static_regions:
        if r.feature is None:
            base[r.top:r.top + r.height, r.left:r.left + r.width] = rng.random((r.height, r.width, spec.dim))
        else:
            base[r.top:r.top + r.height, r.left:r.left + r.width] = np.asarray(r.feature, dtype=np.float64)

    data = np.repeat(base[None], spec.frames, axis=0)
    for r in spec.dynamic_regions:
        for t in range(spec.frames):
            if r.schedule:
                feature = np.asarray(r.schedule[t % len(r.schedule)], dtype=np.float64)
            else:
                feature = rng.random(spec.dim)
            top, left = region_position(spec, r, t)
            data[t, top:top + r.height, left:left + r.width] = feature
    return FeatureGrid(data)


def render_frames(spec: SceneSpec, grid: FeatureGrid | None = None) -> list[np.ndarray]:
    """RGB uint8 frames, each patch filled with its feature colour (needs dim 3, values in [0, 1])."""
    if spec.dim != 3:
        raise InvalidInputError(f"rendering needs 3-dim colour features, scene has {spec.dim}")
    if grid is None:
        grid = generate(spec)
    colours = np.clip(np.rint(grid.data * 255.0), 0, 255).astype(np.uint8)
    block = np.ones((spec.patch_size, spec.patch_size, 1), dtype=np.uint8)
    return [np.kron(colours[t], block) for t in range(grid.frames)]


def write_rendered_trajectory(spec: SceneSpec, out_dir, instruction: str = "", platform: str = "other",
                              success: bool | None = None) -> Path:
    """Render frames to PNGs and write a one-trajectory manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = []
    for t, frame in enumerate(render_frames(spec)):
        name = f"frame_{t:04d}.png"
        Image.fromarray(frame).save(out_dir / name)
        steps.append({"index": t, "image": name, "t": t})
    record = {"instruction": instruction, "platform": platform, "steps": steps}
    if success is not None:
        record["label"] = {"success": success}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps([record], indent=2) + "\n")
    return path


def load_scene(path) -> SceneSpec:
    return SceneSpec.from_dict(json.loads(Path(path).read_text()))


def static_background_suite(
    frames: int,
    grid_side: int = 16,
    seed: int = 0,
) -> SceneSpec:
    """Wallpaper + textured title bar and sidebar + a sliding block and a blinking block.

    At the default 16x16 grid about 86% of locations never change.
    """
    if grid_side < 8:
        raise InvalidInputError("grid_side must be >= 8")
    g = grid_side
    return SceneSpec(
        grid_height=g,
        grid_width=g,
        frames=frames,
        background=(0.90, 0.91, 0.94),
        static_regions=(
            StaticRegion(0, 0, 1, g),          # title bar
            StaticRegion(1, 0, g - 1, 2),      # sidebar
        ),
        dynamic_regions=(
            DynamicRegion(g // 2, 2, 2, 2, schedule=((0.10, 0.30, 0.80),), velocity=(0, 1)),
            DynamicRegion(2, g - 4, 2, 2, schedule=((0.95, 0.20, 0.20), (0.20, 0.75, 0.25))),
        ),
        seed=seed,
    )


def scene_to_json(spec: SceneSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2)

