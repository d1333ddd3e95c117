"""Append-only JSON Lines run log.

Every line is one self-contained JSON object.  Appends take a process-level
lock and an exclusive ``flock`` on the file, so concurrent writers (threads
or processes) never interleave partial lines.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import threading
from pathlib import Path

import numpy as np

_LOCK = threading.Lock()


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__} to JSON")


def to_json_line(event: dict) -> str:
    line = json.dumps(event, default=_default, sort_keys=True, allow_nan=True)
    return line + "\n"


def bundle_hash(path) -> str:
    """Git-style content hash (``sha1("blob <n>\\0" + bytes)``) of a file."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class RunTracker:
    """Appends events to one JSONL file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, event: dict):
        data = to_json_line(event).encode()
        with _LOCK:
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                fcntl.flock(fd, fcntl.LOCK_EX)
                try:
                    view = memoryview(data)
                    while view:
                        written = os.write(fd, view)
                        view = view[written:]
                finally:
                    fcntl.flock(fd, fcntl.LOCK_UN)
            finally:
                os.close(fd)

    def read(self) -> list[dict]:
        return read_jsonl(self.path)


def read_jsonl(path) -> list[dict]:
    out = []
    with Path(path).open() as handle:
        for n, line in enumerate(handle, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}: line {n} is not valid JSON: {exc}") from None
    return out


def log_run(record, stream, bundle_path=None, extra: dict | None = None):
    """Write a finished run (or a trial) as JSON lines.

    ``record`` is a :class:`~pqforge.training.RunRecord` or anything with a
    ``lines()`` method or a ``to_dict()``; ``stream`` is a path or a
    :class:`RunTracker`.  The bundle's content hash is attached when given.
    """
    tracker = stream if isinstance(stream, RunTracker) else RunTracker(stream)
    if hasattr(record, "lines"):
        lines = record.lines()
    elif hasattr(record, "to_dict"):
        lines = [record.to_dict()]
    else:
        lines = [dict(record)]
    bhash = bundle_hash(bundle_path) if bundle_path is not None else None
    for line in lines:
        line = dict(line)
        if bhash is not None:
            line["bundle_hash"] = bhash
            line.setdefault("artifact", str(bundle_path))
            if line.get("artifact") is None:
                line["artifact"] = str(bundle_path)
        if extra:
            line.update(extra)
        tracker.log(line)
    return tracker
