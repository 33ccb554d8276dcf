"""Guest lifecycle and console interaction.

Two backends share one interface: an external hypervisor (QEMU launched from
a config file, serial console on a local stream) and a deterministic mock
driven by a scenario file.  The mock is what the test suite and the bundled
fixtures use; it never shells out except for PoC compilation.

A single multiplexed channel carries both command output and kernel log
lines.  Kernel lines are recognized lexically and are never dropped, even
when interleaved with command output.
"""

import copy
import hashlib
import json
import os
import re
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import (
    BackendUnavailable,
    CompileFailed,
    DebuggeeHalted,
    GuestUnavailable,
    RestoreFailed,
    SnapshotFailed,
    UploadFailed,
)

DEFAULT_EXEC_TIMEOUT_S = 30.0
DEFAULT_BLOCKED_UTILITIES = ("nft", "tc", "ip")

# Lexical recognizers for kernel log lines: a printk timestamp prefix or a
# known severity/banner token at line start.
_KERNEL_TS_RE = re.compile(r"^\[\s*\d+\.\d+\]")
KERNEL_SEVERITY_TOKENS = (
    "BUG:",
    "WARNING:",
    "Oops:",
    "Kernel panic",
    "general protection fault",
    "KASAN:",
    "kernel BUG at",
    "Call Trace:",
    "RIP:",
)


def is_kernel_line(line: str) -> bool:
    if _KERNEL_TS_RE.match(line):
        return True
    stripped = line.lstrip()
    return any(stripped.startswith(tok) for tok in KERNEL_SEVERITY_TOKENS)


class DebugGate:
    """Shared flag between the debugger bridge and the console tools.

    While the debuggee is halted at a breakpoint (or any other stop reason),
    every guest interaction operation must fail with DebuggeeHalted so the
    agent attributes the silence to the stop, not to a hang.
    """

    RUNNING = "running"
    STOPPED_BREAKPOINT = "stopped_breakpoint"
    STOPPED_OTHER = "stopped_other"

    def __init__(self):
        self.state = self.RUNNING
        self.bp_id: Optional[str] = None
        self.reason: Optional[str] = None

    def stop_breakpoint(self, bp_id):
        self.state = self.STOPPED_BREAKPOINT
        self.bp_id = bp_id

    def stop_other(self, reason):
        self.state = self.STOPPED_OTHER
        self.reason = reason

    def resume(self):
        self.state = self.RUNNING
        self.bp_id = None
        self.reason = None

    @property
    def is_stopped(self):
        return self.state != self.RUNNING

    def check(self):
        if self.is_stopped:
            raise DebuggeeHalted("debuggee halted (%s)" % self.state)


@dataclass
class SnapshotRef:
    """Reference to a restorable guest state.

    For the mock backend the full scenario-derived state is frozen inline;
    for the external backend this is an opaque hypervisor snapshot tag.
    """

    snapshot_id: str
    backend: str  # "mock" | "external_hypervisor"
    state: Optional[dict] = None  # mock: frozen guest state
    external_tag: Optional[str] = None

    def initial_state_digest(self) -> str:
        if self.backend == "mock":
            blob = json.dumps(self.state, sort_keys=True).encode()
            return hashlib.sha256(blob).hexdigest()
        return self.external_tag or ""


@dataclass
class ConsoleOutput:
    text: str
    duration_ms: int
    timed_out: bool
    kernel_lines: List[str] = field(default_factory=list)


@dataclass
class UploadResult:
    guest_path: str
    binary_size: int
    compile_log: str
    compiler_id: str = "host-cc x86_64-linux-gnu"


@dataclass
class ScenarioRule:
    pattern: str
    response: str = ""
    post: str = "ok"  # ok | emit_crash:<file> | hang | interruptible | hit_breakpoint:<loc>


class GuestScenario:
    """Deterministic mock-guest behaviour loaded from a JSON scenario file."""

    def __init__(self, boot_banner, prompt, rules, base_dir=".", scenario_id="",
                 debug=None):
        self.boot_banner = boot_banner
        self.prompt = prompt
        self.rules: List[ScenarioRule] = rules
        self.base_dir = base_dir
        self.debug = debug or {}  # scripted debug-stub config
        self.scenario_id = scenario_id or hashlib.sha256(
            json.dumps([boot_banner, prompt, [vars(r) for r in rules]],
                       sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def load(cls, path) -> "GuestScenario":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        rules = [ScenarioRule(**r) for r in raw.get("rules", [])]
        return cls(
            boot_banner=raw.get("boot_banner", "fixture kernel booting"),
            prompt=raw.get("prompt", "repro$ "),
            rules=rules,
            base_dir=os.path.dirname(os.path.abspath(path)),
            scenario_id=os.path.basename(path),
            debug=raw.get("debug"),
        )

    def crash_text(self, name) -> str:
        with open(os.path.join(self.base_dir, name), "r", encoding="utf-8") as fh:
            return fh.read()


class MockGuest:
    """In-process guest: scenario rules plus a tiny builtin shell.

    Builtins cover just enough surface for fixtures: ``echo``, ``touch``,
    ``cat`` of touched files, and ``sleep``.  Everything else is answered by
    scenario rules, uploaded-program registration, or command-not-found.
    """

    def __init__(self, scenario: GuestScenario, state: Optional[dict] = None):
        self.scenario = scenario
        self.state = state or {
            "scenario_id": scenario.scenario_id,
            "files": {},
            "programs": [],
            "blocked_utilities": [],
            "booted": True,
        }
        self.hung = False

    def state_digest(self) -> str:
        blob = json.dumps(self.state, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def run_command(self, command: str, timeout_s: float) -> Tuple[str, bool, str]:
        """Returns (output_text, timed_out, post_effect)."""
        cmd = command.strip()
        argv = cmd.split()
        if not argv:
            return "", False, "ok"
        prog = argv[0]

        if prog in self.state["blocked_utilities"]:
            return "sh: %s: command not found\n" % prog, False, "ok"

        for rule in self.scenario.rules:
            if re.search(rule.pattern, cmd):
                if rule.post == "hang":
                    self.hung = True
                    return rule.response, True, "hang"
                return rule.response, False, rule.post

        if prog == "echo":
            return cmd[len("echo"):].strip() + "\n", False, "ok"
        if prog == "touch" and len(argv) == 2:
            self.state["files"][argv[1]] = ""
            return "", False, "ok"
        if prog == "cat" and len(argv) == 2:
            if argv[1] in self.state["files"]:
                return self.state["files"][argv[1]] + "\n", False, "ok"
            return "cat: %s: No such file or directory\n" % argv[1], False, "ok"
        if prog == "sleep" and len(argv) == 2:
            try:
                secs = float(argv[1])
            except ValueError:
                secs = 0.0
            if secs > timeout_s:
                return "", True, "ok"
            return "", False, "ok"
        if prog.startswith("./") and prog[2:] in self.state["programs"]:
            return "", False, "ok"
        return "sh: %s: command not found\n" % prog, False, "ok"


class GuestHandle:
    """Live guest plus its append-only, timestamped console transcript."""

    def __init__(self, backend, snapshot_ref, mock_guest=None, gate=None):
        # Ids count restores of one snapshot, so repeat sessions over the
        # same environment produce identical traces.
        counter = getattr(snapshot_ref, "_restore_counter", 0) + 1
        snapshot_ref._restore_counter = counter
        self.guest_id = "guest-%d" % counter
        self.backend = backend  # "mock" | "external_hypervisor"
        self.state = "running"
        self.snapshot_ref = snapshot_ref
        self.mock = mock_guest
        self.gate = gate or DebugGate()
        self.transcript: List[dict] = []  # {t, origin, line}
        self.poc_iterations = 0
        self._origin_seq = 0

    # transcript -------------------------------------------------------------

    def append_transcript(self, lines, origin="console"):
        now = time.time()
        for line in lines:
            self.transcript.append({"t": now, "origin": origin, "line": line})

    def transcript_text(self) -> str:
        return "\n".join(e["line"] for e in self.transcript)

    def state_digest(self) -> str:
        if self.backend == "mock":
            return self.mock.state_digest()
        return self.snapshot_ref.initial_state_digest()


# --- lifecycle operations ---------------------------------------------------

def start_guest(env) -> GuestHandle:
    """Restore a fresh guest from the environment's snapshot."""
    snap = getattr(env, "snapshot_ref", None) if not isinstance(env, SnapshotRef) else env
    if snap is None:
        raise RestoreFailed("environment has no snapshot")
    return restore_from_snapshot(snap)


def restore_from_snapshot(snap: SnapshotRef) -> GuestHandle:
    if snap.backend == "mock":
        if snap.state is None:
            raise RestoreFailed("mock snapshot carries no state")
        scenario = GuestScenario.load(snap.state["scenario_path"])
        guest = MockGuest(scenario, state=copy.deepcopy(snap.state["guest_state"]))
        handle = GuestHandle("mock", snap, mock_guest=guest)
        handle.append_transcript(scenario.boot_banner.splitlines())
        handle.append_transcript([scenario.prompt + "# ready"])
        return handle
    raise BackendUnavailable("external hypervisor backend not configured")


def restart_guest(handle: GuestHandle) -> GuestHandle:
    """Discard the guest and restore from the same snapshot."""
    if handle.backend == "mock" and handle.snapshot_ref.state is None:
        raise RestoreFailed("snapshot lost")
    handle.state = "dead"
    handle.gate.resume()  # a dead debuggee cannot hold the gate
    fresh = restore_from_snapshot(handle.snapshot_ref)
    fresh.gate = handle.gate
    fresh.poc_iterations = handle.poc_iterations
    fresh.transcript = handle.transcript
    fresh.append_transcript(["== guest restarted =="], origin="lifecycle")
    return fresh


def create_snapshot(handle_or_state, scenario_path=None) -> SnapshotRef:
    """Freeze the current guest state for identical restores."""
    if isinstance(handle_or_state, GuestHandle):
        handle = handle_or_state
        if handle.backend != "mock":
            raise SnapshotFailed("external snapshotting requires a hypervisor")
        if not handle.mock.state.get("booted"):
            raise SnapshotFailed("guest not booted")
        state = {
            "scenario_path": scenario_path or handle.snapshot_ref.state["scenario_path"],
            "guest_state": copy.deepcopy(handle.mock.state),
        }
    else:
        state = handle_or_state
        if not state.get("guest_state", {}).get("booted"):
            raise SnapshotFailed("guest not booted")
    snap_id = hashlib.sha256(
        json.dumps(state, sort_keys=True).encode()).hexdigest()[:16]
    return SnapshotRef(snapshot_id=snap_id, backend="mock", state=state)


# --- console operations -----------------------------------------------------

def exec_console(handle: GuestHandle, command: str,
                 timeout_s: float = DEFAULT_EXEC_TIMEOUT_S) -> ConsoleOutput:
    """Send one command over the console and collect output until prompt or
    timeout.  Kernel log lines interleaved with command output are captured
    into ``kernel_lines`` as well as the transcript."""
    handle.gate.check()
    if handle.state != "running":
        raise GuestUnavailable("guest state is %s" % handle.state)

    started = time.monotonic()
    out, timed_out, post = handle.mock.run_command(command, timeout_s)
    lines = out.splitlines()

    handle.append_transcript([handle.mock.scenario.prompt + command], origin="console")
    handle.append_transcript(lines)

    kernel_lines = [ln for ln in lines if is_kernel_line(ln)]

    if post.startswith("emit_crash:"):
        crash = handle.mock.scenario.crash_text(post.split(":", 1)[1])
        crash_lines = crash.splitlines()
        handle.append_transcript(crash_lines, origin="kernel")
        kernel_lines.extend(ln for ln in crash_lines if is_kernel_line(ln))
        lines = lines + crash_lines
        handle.state = "unresponsive"
    elif post.startswith("hit_breakpoint:"):
        # The scripted debug stub (if attached) reacts through its own
        # channel; the guest merely goes silent here.
        pass

    duration_ms = int((time.monotonic() - started) * 1000)
    return ConsoleOutput(
        text="\n".join(lines) + ("\n" if lines else ""),
        duration_ms=duration_ms,
        timed_out=timed_out,
        kernel_lines=kernel_lines,
    )


def send_signal(handle: GuestHandle, signal: str) -> dict:
    """Deliver interrupt/break to the foreground guest program."""
    handle.gate.check()
    if handle.state != "running":
        raise GuestUnavailable("guest state is %s" % handle.state)
    if signal not in ("interrupt", "break"):
        raise ValueError("unknown signal %r" % signal)
    regained = False
    if handle.mock.hung:
        handle.mock.hung = False
        regained = True
        handle.append_transcript(["^C", handle.mock.scenario.prompt], origin="console")
    return {"signal": signal, "prompt_regained": regained}


def compile_and_upload(handle: GuestHandle, source_text: str,
                       dest_path: str) -> UploadResult:
    """Compile C source on the host and place the binary in the guest.

    Every attempt, including compile failures, counts as one PoC iteration.
    """
    handle.gate.check()
    handle.poc_iterations += 1
    if handle.state != "running":
        raise UploadFailed("guest state is %s" % handle.state)

    cc = shutil.which("gcc") or shutil.which("cc")
    if cc is None:
        raise CompileFailed("no host C compiler available")
    with tempfile.TemporaryDirectory(prefix="pocbuild-") as tmp:
        src = os.path.join(tmp, "poc.c")
        binary = os.path.join(tmp, "poc")
        with open(src, "w", encoding="utf-8") as fh:
            fh.write(source_text)
        proc = subprocess.run([cc, "-O1", "-o", binary, src],
                              capture_output=True, text=True)
        if proc.returncode != 0:
            raise CompileFailed("compilation failed", compile_log=proc.stderr)
        size = os.path.getsize(binary)

    name = os.path.basename(dest_path)
    handle.mock.state["programs"].append(name)
    handle.append_transcript(
        ["== uploaded %s (%d bytes) ==" % (dest_path, size)], origin="lifecycle")
    return UploadResult(guest_path=dest_path, binary_size=size,
                        compile_log=proc.stderr)
