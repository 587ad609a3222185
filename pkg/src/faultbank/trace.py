"""Append-only JSON-lines event trace, readable by the fault harness."""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path


class EventLog:
    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path else None
        self.events: list[dict] = []
        self._lock = threading.Lock()

    def emit(self, kind: str, **fields) -> dict:
        event = {"t": time.time(), "kind": kind, **fields}
        with self._lock:
            self.events.append(event)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event) + "\n")
        return event

    def of_kind(self, kind: str) -> list[dict]:
        with self._lock:
            return [e for e in self.events if e["kind"] == kind]


def read_events(path: str | os.PathLike) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            # a line without its newline is still being written
            return [json.loads(line) for line in fh if line.endswith("\n") and line.strip()]
    except FileNotFoundError:
        return []
