"""Line-delimited JSON metrics, flushed per line so a crash never corrupts
earlier records. Deterministic runs write a null wall timestamp so two runs
with the same seeds produce byte-identical files.
"""

from __future__ import annotations

import json
import time


class MetricsWriter:
    def __init__(self, path: str, deterministic: bool):
        self._file = open(path, "w", encoding="utf-8")
        self._deterministic = deterministic
        self._logical = 0

    def write(self, event: dict) -> None:
        record = dict(event)
        record["logical"] = self._logical
        record["wall"] = None if self._deterministic else time.time()
        self._logical += 1
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: str) -> list[dict]:
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events
