"""Session trace: the append-only JSON-lines event log.

One event per line: ``{seq, t_rel_ms, kind, ...}`` with kinds ``tool_call``,
``tool_result``, ``console``, ``model_usage``, ``lifecycle``, ``mutation``.
Sequence numbers are gapless within a session.
"""

import json
import time
from typing import Iterator, List

from .errors import MalformedTrace

EVENT_KINDS = ("tool_call", "tool_result", "console", "model_usage",
               "lifecycle", "mutation")


class Trace:
    def __init__(self):
        self.events: List[dict] = []
        self._t0 = time.monotonic()
        self._seq = 0

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def t_rel_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def record(self, kind: str, **fields) -> dict:
        if kind not in EVENT_KINDS:
            raise ValueError("unknown event kind %r" % kind)
        event = {
            "seq": self.next_seq(),
            "t_rel_ms": int((time.monotonic() - self._t0) * 1000),
            "kind": kind,
        }
        event.update(fields)
        self.events.append(event)
        return event

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


def read_trace(path: str) -> List[dict]:
    events = []
    last_seq = 0
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedTrace("line %d: %s" % (lineno, exc))
                if not isinstance(event, dict) or "seq" not in event \
                        or "kind" not in event:
                    raise MalformedTrace("line %d: not a trace event" % lineno)
                if event["seq"] != last_seq + 1:
                    raise MalformedTrace(
                        "line %d: sequence gap (%d after %d)"
                        % (lineno, event["seq"], last_seq))
                last_seq = event["seq"]
                events.append(event)
    except OSError as exc:
        raise MalformedTrace(str(exc))
    return events


def iter_console_lines(events) -> Iterator[tuple]:
    """Yield (transcript_index, seq, line) over all console events in order."""
    idx = 0
    for event in events:
        if event["kind"] != "console":
            continue
        for line in event.get("lines", []):
            yield idx, event["seq"], line
            idx += 1
