"""Hard-negative synthesis by adversarial instruction translation.

A successful trajectory is sent to a vision-language service that proposes a
plausible instruction the trajectory does *not* satisfy, a justification, and
the step where the mismatch first shows. Responses wait in a verification
queue; only approved ones become negative records.

Wire format, request::

    {"template": str, "source_instruction": str, "frames": [ref, ...],
     "steps": [int, ...], "actions": [str | null, ...], "params": {...}}

response::

    {"instruction": str, "justification": str, "reference_step": int}
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import random
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import requests

from .errors import InvalidInputError, ResponseValidationError, SchemaError, StateError, TransportError
from .trajectory import JudgmentLabel, TrajectoryRecord, validate_record

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "adversarial-translation-v1"
STATUSES = ("pending", "approved", "rejected")
RESPONSE_FIELDS = ("instruction", "justification", "reference_step")


@dataclass(frozen=True)
class TranslationRequest:
    source_id: str
    source_instruction: str
    frames: tuple[str, ...]
    steps: tuple[int, ...]
    actions: tuple[str | None, ...]
    template: str = DEFAULT_TEMPLATE
    params: dict = field(default_factory=dict)

    def body(self) -> dict:
        return {
            "template": self.template,
            "source_instruction": self.source_instruction,
            "frames": list(self.frames),
            "steps": list(self.steps),
            "actions": list(self.actions),
            "params": dict(self.params),
        }

    def to_bytes(self) -> bytes:
        """Canonical encoding; equal requests give equal bytes."""
        return json.dumps(self.body(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class TranslationResponse:
    unpaired_instruction: str
    justification: str
    reference_step: int

    def to_dict(self) -> dict:
        return {
            "instruction": self.unpaired_instruction,
            "justification": self.justification,
            "reference_step": self.reference_step,
        }


@dataclass(frozen=True)
class VerificationState:
    status: str = "pending"
    note: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise InvalidInputError(f"unknown verification status {self.status!r}")

    @property
    def approved(self) -> bool:
        return self.status == "approved"


def source_id(record: TrajectoryRecord) -> str:
    return record.record_id or record.fingerprint()


def _frame_ref(record: TrajectoryRecord, step, embed: bool) -> str:
    if embed or isinstance(step.keyframe, bytes):
        raw = record.keyframe_bytes(step)
        if embed:
            return "data:application/octet-stream;base64," + base64.b64encode(raw).decode("ascii")
        return "sha256:" + hashlib.sha256(raw).hexdigest()
    path = Path(step.keyframe)
    if not path.is_absolute() and record.base_dir is not None:
        path = (record.base_dir / path).resolve()
    return path.as_posix()


def build_request(
    record: TrajectoryRecord,
    template_id: str = DEFAULT_TEMPLATE,
    params: dict | None = None,
    embed_images: bool = False,
) -> TranslationRequest:
    """Request for one positive trajectory segment; negatives are never inputs."""
    if record.label is None or not record.label.success:
        raise InvalidInputError("source trajectory must carry a positive (success) label")
    if not record.steps:
        raise InvalidInputError("source trajectory has no keyframes")
    return TranslationRequest(
        source_id=source_id(record),
        source_instruction=record.instruction,
        frames=tuple(_frame_ref(record, s, embed_images) for s in record.steps),
        steps=tuple(s.step_index for s in record.steps),
        actions=tuple(s.action_summary for s in record.steps),
        template=template_id,
        params=dict(params or {}),
    )


def parse_response(raw: str | bytes, step_indices: Sequence[int]) -> TranslationResponse:
    """Strictly parse a service reply and check the step lies in the segment."""
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"response is not JSON ({exc})", raw=text) from exc
    if not isinstance(obj, dict):
        raise SchemaError("response must be a JSON object", raw=text)
    missing = [k for k in RESPONSE_FIELDS if k not in obj]
    if missing:
        raise SchemaError(f"response missing field(s): {', '.join(missing)}", raw=text)
    extra = sorted(set(obj) - set(RESPONSE_FIELDS))
    if extra:
        raise SchemaError(f"response has unexpected field(s): {', '.join(extra)}", raw=text)
    for key in ("instruction", "justification"):
        if not isinstance(obj[key], str) or not obj[key].strip():
            raise SchemaError(f"{key} must be a nonempty string", raw=text)
    step = obj["reference_step"]
    if isinstance(step, bool) or not isinstance(step, int):
        raise SchemaError("reference_step must be an integer", raw=text)
    if step not in set(step_indices):
        lo, hi = (min(step_indices), max(step_indices)) if step_indices else (None, None)
        raise ResponseValidationError(f"reference_step {step} outside segment steps [{lo}, {hi}]", raw=text)
    return TranslationResponse(obj["instruction"].strip(), obj["justification"].strip(), step)


def emit_negative(
    source: TrajectoryRecord,
    resp: TranslationResponse,
    verification: VerificationState,
) -> TrajectoryRecord:
    """Negative record sharing the source's keyframes, labelled with the mismatch step."""
    if not verification.approved:
        raise StateError(f"cannot emit a negative from a {verification.status} response")
    if resp.unpaired_instruction == source.instruction:
        raise ResponseValidationError("unpaired instruction equals the source instruction")
    step = next((s for s in source.steps if s.step_index == resp.reference_step), None)
    if step is None:
        raise ResponseValidationError(f"reference_step {resp.reference_step} not in source trajectory")
    label = JudgmentLabel(
        success=False,
        error_interval=(step.timestamp, step.timestamp),
        justification=resp.justification,
    )
    return replace(
        source,
        instruction=resp.unpaired_instruction,
        label=label,
        record_id=f"{source_id(source)}-neg",
    )


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

class Transport(Protocol):
    def send(self, body: dict) -> str: ...


class HttpTransport:
    """POSTs the request body as JSON and returns the response text."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 120.0, session=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = session or requests.Session()
        self.headers = {"Content-Type": "application/json"}
        if api_key:
            self.headers["Authorization"] = f"Bearer {api_key}"

    def send(self, body: dict) -> str:
        try:
            resp = self.session.post(self.endpoint, json=body, headers=self.headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if resp.status_code != 200:
            retryable = resp.status_code >= 500 or resp.status_code in (408, 429)
            raise TransportError(f"{self.endpoint} answered HTTP {resp.status_code}", retryable=retryable)
        return resp.text


_MOCK_ACTIONS = ("Delete", "Rename", "Archive", "Share", "Export", "Duplicate", "Print", "Move")
_MOCK_TARGETS = ("the opened file", "the current tab", "the selected item", "the draft",
                 "the settings page", "the last downloaded document", "the active window")
_MOCK_SUFFIXES = ("to the desktop", "as a PDF", "with a new name", "to the shared folder",
                  "and confirm the change", "before closing the application")


class MockTranslationService:
    """Deterministic stand-in for the external model.

    The reply depends only on ``seed`` and the request body. ``fail_first``
    makes the first N calls raise TransportError, for retry tests.
    """

    def __init__(self, seed: int = 0, fail_first: int = 0):
        self.seed = seed
        self.fail_first = fail_first
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, body: dict) -> str:
        with self._lock:
            self.calls += 1
            if self.calls <= self.fail_first:
                raise TransportError("mock transport failure")
        canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(f"{self.seed}:{canonical}".encode("utf-8")).hexdigest()
        rng = random.Random(digest)
        steps = body.get("steps") or [0]
        source = body.get("source_instruction", "")
        instruction = source
        while instruction == source:
            instruction = f"{rng.choice(_MOCK_ACTIONS)} {rng.choice(_MOCK_TARGETS)} {rng.choice(_MOCK_SUFFIXES)}"
        ref = rng.choice(list(steps))
        reply = {
            "instruction": instruction,
            "justification": f"At step {ref} the interface shows an action unrelated to: {instruction.lower()}.",
            "reference_step": ref,
        }
        return json.dumps(reply)


class TranslationClient:
    """Sends requests with retry on transport failure; schema errors are not retried."""

    def __init__(
        self,
        transport: Transport,
        max_retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep

    def translate(self, request: TranslationRequest) -> TranslationResponse:
        body = request.body()
        attempt = 0
        while True:
            try:
                raw = self.transport.send(body)
                break
            except TransportError as exc:
                if not exc.retryable:
                    raise TransportError(f"{request.source_id}: {exc}", retryable=False) from exc
                if attempt >= self.max_retries:
                    raise TransportError(f"{request.source_id}: giving up after {attempt + 1} attempts ({exc})") from exc
                delay = self.backoff * (2 ** attempt)
                log.warning("transport failure for %s (%s); retrying in %.2fs", request.source_id, exc, delay)
                self.sleep(delay)
                attempt += 1
        return parse_response(raw, request.steps)


# ---------------------------------------------------------------------------
# verification queue
# ---------------------------------------------------------------------------

@dataclass
class QueueEntry:
    entry_id: str
    source_id: str
    template: str
    response: TranslationResponse
    state: VerificationState = field(default_factory=VerificationState)


class VerificationQueue:
    """Append-only JSON-lines log of enqueued responses and review decisions.

    Current state is the replay of the log. Writes are serialized by a lock.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, QueueEntry] = {}
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    self._apply(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError, InvalidInputError) as exc:
                    raise SchemaError(f"{self.path}:{lineno}: bad queue event ({exc})", raw=line) from exc

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "enqueued":
            r = event["response"]
            self._entries[event["id"]] = QueueEntry(
                entry_id=event["id"],
                source_id=event["source"],
                template=event["template"],
                response=TranslationResponse(r["instruction"], r["justification"], int(r["reference_step"])),
            )
        elif kind == "reviewed":
            entry = self._entries[event["id"]]
            entry.state = VerificationState(event["status"], event.get("note"))
        else:
            raise InvalidInputError(f"unknown event {kind!r}")

    def _append(self, event: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._apply(event)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, entry_id: str) -> QueueEntry:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise InvalidInputError(f"no queue entry {entry_id!r}") from None

    def entries(self) -> list[QueueEntry]:
        return list(self._entries.values())

    def enqueue(self, request: TranslationRequest, response: TranslationResponse) -> QueueEntry:
        entry_id = f"{request.source_id}:{request.template}"
        with self._lock:
            if entry_id in self._entries:
                raise StateError(f"entry {entry_id} already queued")
            self._append({
                "event": "enqueued",
                "id": entry_id,
                "source": request.source_id,
                "template": request.template,
                "response": response.to_dict(),
            })
            return self._entries[entry_id]

    def review(self, entry_id: str, status: str, note: str | None = None) -> QueueEntry:
        state = VerificationState(status, note)
        with self._lock:
            entry = self.get(entry_id)
            if entry.state.status != "pending":
                raise StateError(f"entry {entry_id} already {entry.state.status}")
            event = {"event": "reviewed", "id": entry_id, "status": state.status}
            if note is not None:
                event["note"] = note
            self._append(event)
            return entry


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class SynthesisResult:
    source_id: str
    status: str  # queued | skipped | exists | transport-error | schema-error
    detail: str = ""


def synthesize(
    records: Iterable[TrajectoryRecord],
    client: TranslationClient,
    queue: VerificationQueue,
    template_id: str = DEFAULT_TEMPLATE,
    params: dict | None = None,
    workers: int = 4,
) -> list[SynthesisResult]:
    """Request translations for every positive record not yet queued.

    Requests run on up to ``workers`` threads; results and queue order follow
    input order regardless of the worker count.
    """
    records = list(records)
    jobs: list[tuple[int, TranslationRequest]] = []
    results: list[SynthesisResult | None] = [None] * len(records)
    for n, rec in enumerate(records):
        if rec.label is None or not rec.label.success:
            results[n] = SynthesisResult(source_id(rec), "skipped", "not a positive trajectory")
            continue
        req = build_request(rec, template_id, params)
        if f"{req.source_id}:{req.template}" in queue:
            results[n] = SynthesisResult(req.source_id, "exists")
            continue
        jobs.append((n, req))

    def run(req):
        try:
            return client.translate(req), None
        except (TransportError, SchemaError) as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(lambda job: run(job[1]), jobs))

    for (n, req), (resp, exc) in zip(jobs, outcomes):
        if resp is not None:
            queue.enqueue(req, resp)
            results[n] = SynthesisResult(req.source_id, "queued")
        elif isinstance(exc, TransportError):
            results[n] = SynthesisResult(req.source_id, "transport-error", str(exc))
        else:
            results[n] = SynthesisResult(req.source_id, "schema-error", str(exc))
    return results


def emit_approved(records: Iterable[TrajectoryRecord], queue: VerificationQueue) -> list[TrajectoryRecord]:
    """Negatives for every approved queue entry whose source is in ``records``."""
    by_id = {source_id(r): r for r in records}
    negatives = []
    for entry in queue.entries():
        if not entry.state.approved or entry.source_id not in by_id:
            continue
        neg = emit_negative(by_id[entry.source_id], entry.response, entry.state)
        validate_record(neg)
        negatives.append(neg)
    return negatives

