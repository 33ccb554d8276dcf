"""Debugger bridge over the MI protocol.

Owns the breakpoint table, the interaction gate (console tools are suspended
while the debuggee is halted), and the mutation ledger used downstream for
cheat detection.  The wire side is abstracted behind a stub object so the
same session logic runs against a hypervisor debug port or the scripted
responder the fixtures use.
"""

import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from . import mi
from .errors import (
    AlreadyAttached,
    NotStopped,
    StubError,
    StubUnavailable,
    UnknownBreakpoint,
    UnresolvableLocation,
)
from .guestvm import DebugGate, GuestHandle

MUTATION_CATEGORIES = (
    "memory_write", "register_write", "function_call", "expression_assignment")

# A single "=" that is not part of ==, !=, <=, >= marks an assignment
# expression.
_ASSIGN_RE = re.compile(r"(?<![=!<>])=(?!=)")


def classify_mutation(command_text: str) -> Optional[str]:
    """Pure classifier: does this debugger command alter guest state?

    The table is deliberately explicit so the cheat-detection ledger can be
    replayed from any transcript.
    """
    text = command_text.strip()
    low = text.lower()
    if low.startswith("call ") or low.startswith("-exec-call"):
        return "function_call"
    if low.startswith("-data-write-memory"):
        return "memory_write"
    if low.startswith("-data-write-register"):
        return "register_write"
    if low.startswith("-exec-return") or low.startswith("-exec-jump") \
            or low.startswith("jump "):
        return "register_write"
    if low.startswith("set "):
        target = text[4:].strip()
        if target.startswith("variable "):
            target = target[len("variable "):].strip()
        if target.startswith("$"):
            return "register_write"
        if _ASSIGN_RE.search(target):
            return "memory_write"
        return None
    if low.startswith("-data-evaluate-expression") or low.startswith("p ") \
            or low.startswith("print ") or low.startswith("expression:"):
        body = text.split(None, 1)[1] if " " in text else ""
        if _ASSIGN_RE.search(body):
            return "expression_assignment"
        return None
    return None


@dataclass
class MutationEvent:
    seq: int
    command_text: str
    category: str
    stopped_episode: Optional[str] = None  # bp id active when issued


@dataclass
class Breakpoint:
    bp_id: str
    location: str
    enabled: bool = True
    hit_count: int = 0


class DebugSession:
    """Single MI session against one guest; at most one per guest."""

    _counter = 0

    def __init__(self, handle: GuestHandle, stub, seq_source: Optional[Callable[[], int]] = None):
        DebugSession._counter += 1
        self.session_id = "dbg-%d" % DebugSession._counter
        self.handle = handle
        self.stub = stub
        self.gate: DebugGate = handle.gate
        self.breakpoints: Dict[str, Breakpoint] = {}
        self.mutation_ledger: List[MutationEvent] = []
        self.transcript: List[str] = []  # raw MI lines, append-only
        self._seq = 0
        self.seq_source = seq_source or self._next_seq
        self.on_mutation: Optional[Callable[[MutationEvent], None]] = None

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    # wire ------------------------------------------------------------------

    def _send(self, command: str) -> List[mi.MiRecord]:
        self.transcript.append(command)
        try:
            lines = self.stub.send(command)
        except StubUnavailable:
            raise
        except Exception as exc:  # stub transport died
            raise StubError(str(exc))
        records = []
        for line in lines:
            self.transcript.append(line)
            if mi.is_terminator(line):
                continue
            rec = mi.parse_mi_record(line)
            records.append(rec)
            self._apply_async(rec)
        return records

    def _apply_async(self, rec: mi.MiRecord):
        if rec.cls != mi.EXEC_ASYNC:
            return
        if rec.kind == "stopped":
            reason = rec.get("reason", default="")
            if reason == "breakpoint-hit":
                bpno = rec.get("bkptno", default=None)
                self.gate.stop_breakpoint(bpno)
                if bpno in self.breakpoints:
                    self.breakpoints[bpno].hit_count += 1
            else:
                self.gate.stop_other(reason or "unknown")
        elif rec.kind == "running":
            self.gate.resume()

    def feed_async_line(self, line: str):
        """Process one asynchronous MI line arriving outside a command
        exchange (the reader thread path on a live stub)."""
        self.transcript.append(line)
        if not mi.is_terminator(line):
            self._apply_async(mi.parse_mi_record(line))

    def _ledger(self, command_text: str, category: str) -> MutationEvent:
        event = MutationEvent(
            seq=self.seq_source(),
            command_text=command_text,
            category=category,
            stopped_episode=self.gate.bp_id if self.gate.is_stopped else None,
        )
        self.mutation_ledger.append(event)
        if self.on_mutation:
            self.on_mutation(event)
        return event

    # operations ------------------------------------------------------------

    def manage_breakpoint(self, action: str, arg: Optional[str] = None):
        if action == "set":
            records = self._send('-break-insert %s' % arg)
            for rec in records:
                if rec.kind == "error":
                    raise UnresolvableLocation(rec.get("msg", default=arg))
                bkpt = rec.get("bkpt")
                if bkpt:
                    bp = Breakpoint(bp_id=bkpt["number"], location=arg)
                    self.breakpoints[bp.bp_id] = bp
                    return bp
            raise StubError("no bkpt record in response")
        if action == "delete":
            if arg not in self.breakpoints:
                raise UnknownBreakpoint(str(arg))
            self._send("-break-delete %s" % arg)
            del self.breakpoints[arg]
            return None
        if action == "list":
            return sorted(self.breakpoints.values(), key=lambda b: int(b.bp_id))
        raise ValueError("unknown breakpoint action %r" % action)

    def inspect_state(self, what: str, *args):
        """Registers, memory, or expression evaluation.

        Mutating expressions are ledgered before they reach the stub.
        """
        if what == "registers":
            records = self._send("-data-list-register-values x")
        elif what == "memory":
            addr, length = args
            records = self._send(
                "-data-read-memory-bytes %s %d" % (addr, length))
        elif what == "expression":
            (expr,) = args
            if not expr.strip():
                raise ValueError("empty expression")
            category = classify_mutation("-data-evaluate-expression %s" % expr)
            if category:
                self._ledger("expression: %s" % expr, category)
            records = self._send('-data-evaluate-expression "%s"' % expr)
        else:
            raise ValueError("unknown inspect target %r" % what)
        for rec in records:
            if rec.kind == "error":
                raise StubError(rec.get("msg", default="stub error"))
        return records

    def raw_command(self, text: str) -> List[mi.MiRecord]:
        category = classify_mutation(text)
        if category:
            self._ledger(text, category)
        return self._send(text)

    def resume(self):
        if not self.gate.is_stopped:
            raise NotStopped()
        records = self._send("-exec-continue")
        for rec in records:
            if rec.kind == "error":
                raise StubError(rec.get("msg", default="continue failed"))
        if self.gate.is_stopped:
            # no running record arrived; treat as stub failure
            raise StubError("debuggee did not resume")
        return self.gate


def attach(handle: GuestHandle, stub=None,
           seq_source: Optional[Callable[[], int]] = None) -> DebugSession:
    """Connect the single debug session for this guest."""
    if getattr(handle, "_debug_session", None) is not None:
        raise AlreadyAttached(handle.guest_id)
    if handle.state == "dead":
        raise StubUnavailable("guest is dead")
    if stub is None:
        stub = getattr(handle, "debug_stub", None)
    if stub is None:
        raise StubUnavailable("no debugger stub exposed by backend")
    session = DebugSession(handle, stub, seq_source=seq_source)
    handle._debug_session = session
    return session


class ScriptedMiStub:
    """Deterministic MI responder for fixtures.

    Knows a symbol table, a memory map, expression values, and optional
    per-command scripted responses.  Commands it does not recognize get an
    empty ``^done``.
    """

    def __init__(self, symbols=(), memory=None, expressions=None,
                 scripted=None, registers=None):
        self.symbols = set(symbols)
        self.memory = memory or {}
        self.expressions = expressions or {}
        self.scripted = scripted or {}  # exact command -> list of lines
        self.registers = registers or {"rip": "0xffffffff81000000"}
        self._bp_counter = 0
        self.alive = True

    def send(self, command: str) -> List[str]:
        if not self.alive:
            raise StubUnavailable("stub connection closed")
        if command in self.scripted:
            return list(self.scripted[command])
        if command.startswith("-break-insert "):
            loc = command.split(None, 1)[1]
            if loc not in self.symbols:
                return ['^error,msg="Function \\"%s\\" not defined."' % loc,
                        mi.TERMINATOR]
            self._bp_counter += 1
            return ['^done,bkpt={number="%d",type="breakpoint",func="%s",'
                    'addr="0xffffffff81%06x"}'
                    % (self._bp_counter, loc, 0x100000 + self._bp_counter),
                    mi.TERMINATOR]
        if command.startswith("-break-delete"):
            return ["^done", mi.TERMINATOR]
        if command == "-exec-continue":
            return ["^running", '*running,thread-id="all"', mi.TERMINATOR]
        if command == "-data-list-register-values x":
            vals = ",".join('{number="%d",value="%s"}' % (i, v)
                            for i, v in enumerate(self.registers.values()))
            return ['^done,register-values=[%s]' % vals, mi.TERMINATOR]
        if command.startswith("-data-read-memory-bytes"):
            _, addr, length = command.split()
            data = self.memory.get(addr)
            if data is None:
                return ['^error,msg="Cannot access memory at address %s"' % addr,
                        mi.TERMINATOR]
            contents = data[: 2 * int(length)]
            return ['^done,memory=[{begin="%s",offset="0x0",end="%s",'
                    'contents="%s"}]' % (addr, addr, contents), mi.TERMINATOR]
        if command.startswith("-data-evaluate-expression"):
            expr = command.split(None, 1)[1].strip().strip('"')
            if expr in self.expressions:
                value = self.expressions[expr]
                if value == "<optimized out>":
                    return ['^error,msg="value has been optimized out"',
                            mi.TERMINATOR]
                return ['^done,value="%s"' % value, mi.TERMINATOR]
            base = _ASSIGN_RE.split(expr)[0].strip()
            if base.startswith("p "):
                base = base[2:].strip()
            if base in self.expressions:
                return ['^done,value="%s"' % self.expressions[base],
                        mi.TERMINATOR]
            return ['^done,value="0"', mi.TERMINATOR]
        return ["^done", mi.TERMINATOR]
