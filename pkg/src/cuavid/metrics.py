"""Scoring of success judgments and temporal attribution.

The positive class is ``success = True``. Precision or recall with a zero
denominator is reported as ``None``.
"""
from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .errors import InvalidInputError
from .trajectory import PLATFORMS

PLATFORM_TITLES = {
    "ubuntu-agent": "Ubuntu (Agent)",
    "ubuntu-human": "Ubuntu (Human)",
    "mac-win": "Mac/Win",
    "android": "Android",
    "other": "Other",
}


@dataclass(frozen=True)
class Interval:
    start: float
    end: float

    def __post_init__(self):
        try:
            start, end = float(self.start), float(self.end)
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"interval bounds must be numbers: {self.start!r}, {self.end!r}") from exc
        if not (0 <= start <= end < float("inf")):
            raise InvalidInputError(f"invalid interval [{self.start}, {self.end}]")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @classmethod
    def coerce(cls, value) -> "Interval":
        if isinstance(value, Interval):
            return value
        try:
            start, end = value
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"interval must be a [start, end] pair, got {value!r}") from exc
        return cls(start, end)


def tiou(pred, gt) -> float:
    """Temporal IoU of two closed intervals.

    Two identical zero-length intervals score 1.0; any other pair with an
    empty union scores 0.0.
    """
    a = Interval.coerce(pred)
    b = Interval.coerce(gt)
    union = max(a.end, b.end) - min(a.start, b.start)
    if union == 0:
        return 1.0 if a == b else 0.0
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    return inter / union


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, pred: bool, label: bool) -> None:
        if pred and label:
            self.tp += 1
        elif pred:
            self.fp += 1
        elif label:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def precision(self) -> float | None:
        denom = self.tp + self.fp
        return self.tp / denom if denom else None

    @property
    def recall(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom else None


def binary_metrics(preds: Sequence[bool], labels: Sequence[bool]) -> tuple[float, float | None, float | None]:
    """(accuracy, precision, recall) with success as the positive class."""
    if len(preds) != len(labels):
        raise InvalidInputError(f"{len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise InvalidInputError("no predictions to score")
    cm = Confusion()
    for p, y in zip(preds, labels):
        cm.add(bool(p), bool(y))
    return cm.accuracy, cm.precision, cm.recall


@dataclass(frozen=True)
class EvalRecord:
    platform: str
    pred_success: bool
    gt_success: bool
    pred_interval: Interval | None = None
    gt_interval: Interval | None = None
    record_id: str | None = None


@dataclass
class GroupMetrics:
    confusion: Confusion = field(default_factory=Confusion)
    tiou_sum: float = 0.0
    tiou_count: int = 0

    @property
    def mean_tiou(self) -> float | None:
        return self.tiou_sum / self.tiou_count if self.tiou_count else None

    def to_dict(self) -> dict:
        cm = self.confusion
        return {
            "accuracy": cm.accuracy,
            "precision": cm.precision,
            "recall": cm.recall,
            "counts": {"TP": cm.tp, "FP": cm.fp, "TN": cm.tn, "FN": cm.fn},
            "n": cm.total,
            "mean_tiou": self.mean_tiou,
            "tiou_n": self.tiou_count,
        }


@dataclass
class EvalReport:
    platforms: dict[str, GroupMetrics]
    overall: GroupMetrics

    def to_dict(self) -> dict:
        columns = [p for p in PLATFORMS if p in self.platforms]
        return {
            "columns": columns + ["overall"],
            "platforms": {p: self.platforms[p].to_dict() for p in columns},
            "overall": self.overall.to_dict(),
            "averaging": "micro",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        """Plain-text table, metrics as rows and platforms as columns."""
        columns = [p for p in PLATFORMS if p in self.platforms]
        groups = [self.platforms[p] for p in columns] + [self.overall]
        titles = [PLATFORM_TITLES[p] for p in columns] + ["Overall"]
        width = max(14, *(len(t) + 2 for t in titles))

        def fmt(v):
            return "-" if v is None else f"{100 * v:.1f}"

        lines = ["Metric".ljust(10) + "".join(t.rjust(width) for t in titles)]
        for name in ("accuracy", "precision", "recall"):
            cells = [fmt(getattr(g.confusion, name)) for g in groups]
            lines.append(name.capitalize().ljust(10) + "".join(c.rjust(width) for c in cells))
        cells = [fmt(g.mean_tiou) for g in groups]
        lines.append("tIoU".ljust(10) + "".join(c.rjust(width) for c in cells))
        return "\n".join(lines)


def _update(group: GroupMetrics, rec: EvalRecord) -> None:
    group.confusion.add(rec.pred_success, rec.gt_success)
    if rec.pred_interval is not None and rec.gt_interval is not None:
        group.tiou_sum += tiou(rec.pred_interval, rec.gt_interval)
        group.tiou_count += 1


def aggregate(records: Iterable[EvalRecord]) -> EvalReport:
    """Per-platform metrics plus overall metrics pooled over all records."""
    platforms: dict[str, GroupMetrics] = {}
    overall = GroupMetrics()
    n = 0
    for rec in records:
        if rec.platform not in PLATFORMS:
            raise InvalidInputError(f"unknown platform {rec.platform!r}")
        _update(platforms.setdefault(rec.platform, GroupMetrics()), rec)
        _update(overall, rec)
        n += 1
    if n == 0:
        raise InvalidInputError("no records to aggregate")
    return EvalReport(platforms, overall)


def _opt_interval(obj, key):
    value = obj.get(key)
    return None if value is None else Interval.coerce(value)


def parse_eval_record(obj) -> EvalRecord:
    if not isinstance(obj, dict):
        raise InvalidInputError("record must be a JSON object")
    for key in ("platform", "pred_success", "gt_success"):
        if key not in obj:
            raise InvalidInputError(f"missing field {key!r}")
    for key in ("pred_success", "gt_success"):
        if not isinstance(obj[key], bool):
            raise InvalidInputError(f"{key} must be true or false")
    return EvalRecord(
        platform=obj["platform"],
        pred_success=obj["pred_success"],
        gt_success=obj["gt_success"],
        pred_interval=_opt_interval(obj, "pred_interval"),
        gt_interval=_opt_interval(obj, "gt_interval"),
        record_id=obj.get("id"),
    )


def read_eval_jsonl(lines: Iterable[str]) -> list[EvalRecord]:
    """Parse JSON-lines predictions; errors name the 1-based line number."""
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(parse_eval_record(json.loads(line)))
        except (json.JSONDecodeError, InvalidInputError) as exc:
            raise InvalidInputError(f"line {lineno}: {exc}") from exc
    return out
