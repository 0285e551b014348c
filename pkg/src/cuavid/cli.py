"""Command-line entry point: ``cuavid {ingest,prune,eval,bench,synth,synth-neg,review}``.

Exit codes: 0 success, 1 input/config error, 2 processing error,
3 external-service error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .errors import CuavidError, IngestionError, InvalidInputError, SchemaError, StateError, TransportError
from .grid import FeatureGrid, load_grid, write_grid
from .maskio import save_mask_image, write_mask
from .metrics import aggregate, read_eval_jsonl
from .negsynth import (
    DEFAULT_TEMPLATE,
    HttpTransport,
    MockTranslationService,
    TranslationClient,
    VerificationQueue,
    emit_approved,
    synthesize,
)
from .pruner import compute_masks, prune_pipeline, write_packed
from .stp import DEFAULT_TAU_LARGE, DEFAULT_TAU_S, StpConfig
from .synth import generate, load_scene, static_background_suite, static_fraction, write_rendered_trajectory
from .trajectory import DEFAULT_MAX_FRAMES, extract_grid, load_manifest, uniform_sample, write_manifest
from .ttp import DEFAULT_TAU_T, TtpConfig

log = logging.getLogger("cuavid")

EXIT_OK, EXIT_INPUT, EXIT_PROCESSING, EXIT_SERVICE = 0, 1, 2, 3
VARIANTS = ("stp", "ttp", "both")
ENV_ENDPOINT = "CUAVID_ENDPOINT"
ENV_API_KEY = "CUAVID_API_KEY"


@dataclass
class RunConfig:
    tau_s: float = DEFAULT_TAU_S
    tau_t: float = DEFAULT_TAU_T
    tau_large: int = DEFAULT_TAU_LARGE
    patch_size: int = 16
    max_frames: int = DEFAULT_MAX_FRAMES
    merge_adjacent: bool = False
    variant: str = "both"
    workers: int = 1
    seed: int = 0
    resize_720p: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.patch_size < 1:
            raise InvalidInputError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.max_frames < 2:
            raise InvalidInputError(f"max_frames must be >= 2, got {self.max_frames}")
        if self.workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {self.workers}")
        self.stp_config()
        self.ttp_config()

    def stp_config(self) -> StpConfig | None:
        return StpConfig(self.tau_s, self.tau_large) if self.variant in ("stp", "both") else None

    def ttp_config(self) -> TtpConfig | None:
        return TtpConfig(self.tau_t) if self.variant in ("ttp", "both") else None


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        return kind(raw.strip())
    except ValueError as exc:
        raise InvalidInputError(f"config key {name}: cannot parse {raw!r}") from exc


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Keys use RunConfig field names."""
    kinds = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path} ({exc.strerror})") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in kinds:
            raise InvalidInputError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, kinds[key])
    return out


def build_run_config(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    records = load_manifest(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out, records)
    steps = sum(len(r.steps) for r in records)
    platforms = sorted({r.platform for r in records})
    print(f"{len(records)} trajectories, {steps} steps, platforms: {', '.join(platforms)}")
    return EXIT_OK


def _is_grid_manifest(path: Path) -> bool:
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(obj, dict) and obj.get("format") == "EVGR"


def _load_prune_inputs(paths, cfg: RunConfig) -> list[tuple[str, FeatureGrid]]:
    items = []
    for raw in paths:
        path = Path(raw)
        if not path.exists():
            raise InvalidInputError(f"input {path} does not exist")
        if path.suffix == ".json" and not _is_grid_manifest(path):
            records = load_manifest(path)
            for k, rec in enumerate(records):
                name = path.stem if len(records) == 1 else f"{path.stem}_{k:03d}"
                sampled = uniform_sample(rec, cfg.max_frames)
                items.append((name, extract_grid(sampled, patch_size=cfg.patch_size, resize_720p=cfg.resize_720p)))
        else:
            items.append((path.stem, load_grid(path)))
    return items


def prune_one(grid: FeatureGrid, cfg: RunConfig):
    return prune_pipeline(grid, cfg.stp_config(), cfg.ttp_config(), merge_adjacent=cfg.merge_adjacent)


def write_visualizations(out: Path, name: str, grid: FeatureGrid, cfg: RunConfig) -> None:
    masks = compute_masks(grid, cfg.stp_config(), cfg.ttp_config(), merge_adjacent=cfg.merge_adjacent)
    shape = (grid.grid_height, grid.grid_width)
    for kind, mask in (("spatial", masks.spatial), ("temporal", masks.temporal), ("combined", masks.combined)):
        write_mask(out / f"{name}.{kind}.evmk", mask, shape)
        save_mask_image(out / f"{name}.{kind}.png", mask, shape)


def cmd_prune(args) -> int:
    cfg = build_run_config(args)
    items = _load_prune_inputs(args.inputs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(item):
        name, grid = item
        seq, report = prune_one(grid, cfg)
        write_packed(out / f"{name}.evpk", seq)
        (out / f"{name}.report.json").write_text(report.to_json() + "\n")
        if args.visualize:
            write_visualizations(out, name, grid, cfg)
        return name, report

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(work, items))
    for name, report in results:
        print(f"{name}: kept {report.kept_tokens}/{report.total_tokens} "
              f"({100 * report.reduction_ratio:.1f}%) variant={report.variant}")
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.predictions)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path} ({exc.strerror})") from exc
    report = aggregate(read_eval_jsonl(lines))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json() + "\n")
    print(report.table())
    return EXIT_OK


def parse_frame_list(text: str) -> list[int]:
    try:
        counts = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InvalidInputError(f"bad frame list {text!r}") from exc
    if not counts:
        raise InvalidInputError("frame list is empty")
    if any(c < 1 for c in counts):
        raise InvalidInputError("frame counts must be >= 1")
    return counts


def run_bench(frame_counts, cfg: RunConfig, grid_side: int = 16) -> list[dict]:
    """Kept-token counts and runtimes per variant on the static-background suite."""
    rows = []
    stp_cfg = StpConfig(cfg.tau_s, cfg.tau_large)
    ttp_cfg = TtpConfig(cfg.tau_t)
    variants = {"stp": (stp_cfg, None), "ttp": (None, ttp_cfg), "both": (stp_cfg, ttp_cfg)}
    for frames in frame_counts:
        spec = static_background_suite(frames, grid_side=grid_side, seed=cfg.seed)
        grid = generate(spec)
        for name, (s_cfg, t_cfg) in variants.items():
            start = time.perf_counter()
            _, report = prune_pipeline(grid, s_cfg, t_cfg, merge_adjacent=cfg.merge_adjacent)
            elapsed = time.perf_counter() - start
            rows.append({
                "frames": frames,
                "variant": name,
                "total_tokens": report.total_tokens,
                "kept_tokens": report.kept_tokens,
                "reduction_ratio": report.reduction_ratio,
                "static_fraction": static_fraction(spec),
                "seconds": elapsed,
            })
    return rows


def cmd_bench(args) -> int:
    cfg = build_run_config(args)
    counts = parse_frame_list(args.frames)
    rows = run_bench(counts, cfg, grid_side=args.grid_side)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps({"config": asdict(cfg), "rows": rows}, indent=2) + "\n")
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"T={row['frames']:>4} {row['variant']:>4}: kept {row['kept_tokens']:>7}/{row['total_tokens']:<7} "
              f"ratio={row['reduction_ratio']:.3f} {1000 * row['seconds']:.1f} ms")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_scene(args.scene)
    grid = generate(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_grid(args.out, grid)
    if args.render:
        write_rendered_trajectory(spec, args.render)
    print(f"{grid.frames} frames, {grid.grid_height}x{grid.grid_width} grid, dim {grid.dim}")
    return EXIT_OK


def _make_transport(args):
    endpoint = args.endpoint or os.environ.get(ENV_ENDPOINT)
    if not endpoint:
        raise InvalidInputError(f"no endpoint given (use --endpoint or ${ENV_ENDPOINT}; 'mock' for the mock service)")
    if endpoint == "mock":
        return MockTranslationService(seed=args.seed)
    return HttpTransport(endpoint, api_key=os.environ.get(ENV_API_KEY))


def cmd_synth_neg(args) -> int:
    records = load_manifest(args.records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    queue = VerificationQueue(out / "queue.jsonl")
    client = TranslationClient(_make_transport(args), max_retries=args.retries, backoff=args.backoff)
    results = synthesize(records, client, queue, template_id=args.template, workers=args.workers)
    for res in results:
        line = f"{res.source_id}: {res.status}"
        print(line + (f" ({res.detail})" if res.detail else ""))
    negatives = emit_approved(records, queue)
    write_manifest(out / "negatives.json", negatives)
    pending = sum(1 for e in queue.entries() if e.state.status == "pending")
    print(f"queue: {len(queue)} entries, {pending} pending; {len(negatives)} negatives emitted")
    if any(r.status == "transport-error" for r in results):
        return EXIT_SERVICE
    if any(r.status == "schema-error" for r in results):
        return EXIT_PROCESSING
    return EXIT_OK


def cmd_review(args) -> int:
    queue = VerificationQueue(args.queue)
    status = {"approve": "approved", "reject": "rejected"}[args.decision]
    ids = [e.entry_id for e in queue.entries()] if args.entry == "all-pending" else [args.entry]
    for entry_id in ids:
        if queue.get(entry_id).state.status != "pending" and args.entry == "all-pending":
            continue
        queue.review(entry_id, status, args.note)
        print(f"{entry_id}: {status}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--tau-s", dest="tau_s", type=float)
    p.add_argument("--tau-t", dest="tau_t", type=float)
    p.add_argument("--tau-large", dest="tau_large", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--max-frames", dest="max_frames", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--merge-adjacent", dest="merge_adjacent", action="store_true", default=None)
    p.add_argument("--resize-720p", dest="resize_720p", action="store_true", default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuavid", description="Prune, prepare and score computer-use execution videos.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a trajectory manifest and write a normalized store")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("prune", help="prune feature grids or trajectory manifests")
    p.add_argument("inputs", nargs="+", help=".evgr grids, grid manifests, or trajectory manifests")
    p.add_argument("--out", required=True)
    p.add_argument("--visualize", action="store_true", help="also write spatial/temporal/combined masks (.evmk, .png)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="score JSON-lines predictions")
    p.add_argument("predictions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="token-count scaling on the synthetic static-background suite")
    p.add_argument("--frames", default="5,10,20,50", help="comma-separated frame counts")
    p.add_argument("--grid-side", dest="grid_side", type=int, default=16)
    p.add_argument("--out", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a feature grid from a scene spec")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--render", help="directory for rendered PNG frames + manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-neg", help="request adversarial translations and emit approved negatives")
    p.add_argument("records")
    p.add_argument("--endpoint", help=f"service URL or 'mock' (default ${ENV_ENDPOINT})")
    p.add_argument("--out", required=True)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=0.5)
    p.set_defaults(func=cmd_synth_neg)

    p = sub.add_parser("review", help="approve or reject a queued translation")
    p.add_argument("queue")
    p.add_argument("entry", help="entry id, or 'all-pending'")
    p.add_argument("decision", choices=("approve", "reject"))
    p.add_argument("--note")
    p.set_defaults(func=cmd_review)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (InvalidInputError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SchemaError, StateError, CuavidError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
