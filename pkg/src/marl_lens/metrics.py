"""Run metrics as line-delimited JSON.

A metrics file starts with a header line ``{"schema": "marl_lens.metrics",
"version": 1}`` followed by one event per line, tagged by ``"type"``.
"""

from __future__ import annotations

import dataclasses
import json
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError

SCHEMA = "marl_lens.metrics"
VERSION = 1
METRICS_FILE = "metrics.jsonl"


@dataclass
class EvalPoint:
    step: int
    index: int
    agent_returns: list
    team_return: float


@dataclass
class DiagnosticsRecord:
    step: int
    entropy: list
    divergence: list
    mean_entropy: float
    mean_divergence: float


@dataclass
class TaskSwitchEvent:
    step: int
    index: int
    mode: str
    counts: list
    probs: list
    n_steps: list = field(default_factory=list)


@dataclass
class TrainLoss:
    step: int
    loss: float
    epsilon: float | None = None


EVENT_TYPES = {
    "EvalPoint": EvalPoint,
    "DiagnosticsRecord": DiagnosticsRecord,
    "TaskSwitchProfile": TaskSwitchEvent,
    "TrainLoss": TrainLoss,
}
_TYPE_NAMES = {cls: name for name, cls in EVENT_TYPES.items()}


def encode_event(event) -> str:
    d = {"type": _TYPE_NAMES[type(event)]}
    d.update(dataclasses.asdict(event))
    return json.dumps(d, allow_nan=False, separators=(",", ":"))


def decode_event(line: str, lineno=None):
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
    if not isinstance(d, dict) or d.get("type") not in EVENT_TYPES:
        raise ParseError(f"unknown event type {d.get('type') if isinstance(d, dict) else d!r}",
                         lineno)
    cls = EVENT_TYPES[d.pop("type")]
    try:
        return cls(**d)
    except TypeError as exc:
        raise ParseError(f"bad {cls.__name__} fields ({exc})", lineno) from exc


def _header():
    return json.dumps({"schema": SCHEMA, "version": VERSION}, separators=(",", ":"))


def _path(run_dir):
    p = Path(run_dir)
    return p if p.suffix == ".jsonl" else p / METRICS_FILE


def write_metrics(run_dir, events):
    path = _path(run_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_header() + "\n")
        for ev in events:
            f.write(encode_event(ev) + "\n")
    return path


def read_metrics(run_dir):
    path = _path(run_dir)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    lines = text.split("\n")
    if not text:
        raise ParseError(f"{path}: empty metrics file", 1)
    if not text.endswith("\n"):
        raise ParseError("file is truncated (last line has no newline)", len(lines))
    lines = lines[:-1]
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header ({exc.msg})", 1) from exc
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise ParseError("missing marl_lens.metrics header", 1)
    if header.get("version") != VERSION:
        raise ParseError(f"unsupported metrics version {header.get('version')}", 1)
    return [decode_event(line, i) for i, line in enumerate(lines[1:], start=2)]


class MetricsWriter:
    """Appends events from the training loop on a background thread.

    The queue is bounded, so a slow disk applies back-pressure to the
    producer rather than growing memory.
    """

    _STOP = object()

    def __init__(self, run_dir, maxsize=1024):
        self.path = _path(run_dir)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._queue = queue.Queue(maxsize=maxsize)
        self._file = open(self.path, "w", encoding="utf-8", newline="\n")
        self._file.write(_header() + "\n")
        self._error = None
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self):
        while True:
            item = self._queue.get()
            if item is self._STOP:
                break
            try:
                self._file.write(item + "\n")
            except Exception as exc:  # surfaced on close()
                self._error = exc

    def emit(self, event):
        self._queue.put(encode_event(event))

    def close(self):
        self._queue.put(self._STOP)
        self._thread.join()
        self._file.close()
        if self._error is not None:
            raise self._error

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
