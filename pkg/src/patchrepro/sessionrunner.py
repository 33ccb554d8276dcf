"""Drive one reproduction session and emit its artifact set.

A pluggable model client is looped over the tool server under wall-clock and
cost budgets.  The artifact directory has fixed names (poc.c, report.md,
trace.jsonl, console.log, session.json) so the verdict engine and analytics
need no discovery logic.
"""

import json
import os
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, List, Optional, Sequence

from . import envprep, toolserver
from .errors import FatalToolServerError, MalformedTrace
from .toolserver import CapabilityProfile, PROFILES
from .trace import Trace, read_trace

DEFAULT_WALL_CLOCK_LIMIT_S = 10 * 3600.0
DEFAULT_UTILITY_WATCHLIST = ("nft", "tc", "ip", "ethtool", "iptables")

ARTIFACT_POC = "poc.c"
ARTIFACT_REPORT = "report.md"
ARTIFACT_TRACE = "trace.jsonl"
ARTIFACT_CONSOLE = "console.log"
ARTIFACT_SESSION = "session.json"


@dataclass
class ModelAction:
    kind: str  # tool_call | finalize | give_up
    name: Optional[str] = None
    args: Optional[dict] = None
    poc_source: Optional[str] = None
    report: Optional[str] = None
    reason: Optional[str] = None
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass
class PriceTable:
    input_per_token: Decimal = Decimal("0")
    output_per_token: Decimal = Decimal("0")

    @classmethod
    def per_million(cls, input_usd, output_usd) -> "PriceTable":
        return cls(Decimal(str(input_usd)) / Decimal(1_000_000),
                   Decimal(str(output_usd)) / Decimal(1_000_000))


@dataclass
class Budget:
    wall_clock_limit_s: float = DEFAULT_WALL_CLOCK_LIMIT_S
    cost_limit: Optional[Decimal] = None
    price_table: PriceTable = field(default_factory=PriceTable)

    def __post_init__(self):
        if self.wall_clock_limit_s <= 0:
            raise ValueError("wall clock limit must be positive")
        if self.cost_limit is not None and self.cost_limit <= 0:
            raise ValueError("cost limit must be positive")


@dataclass
class SessionArtifacts:
    out_dir: str
    termination: str  # finalized | budget_exhausted | model_gave_up | fatal_error
    elapsed_s: float
    cost: Decimal
    poc_path: Optional[str] = None
    report_path: Optional[str] = None

    @property
    def trace_path(self):
        return os.path.join(self.out_dir, ARTIFACT_TRACE)

    @property
    def console_path(self):
        return os.path.join(self.out_dir, ARTIFACT_CONSOLE)


class ScriptedModelClient:
    """Replays a fixed action list; the deterministic test-suite client."""

    def __init__(self, actions: Sequence[ModelAction]):
        self.actions = list(actions)
        self._pos = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedModelClient":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls([ModelAction(**a) for a in raw])

    def next_action(self, prompts, history) -> ModelAction:
        if self._pos >= len(self.actions):
            return ModelAction(kind="give_up", reason="script exhausted")
        action = self.actions[self._pos]
        self._pos += 1
        return action


def account_usage(usage_events, price_table: PriceTable) -> Decimal:
    """Exact-decimal cost over (input_tokens, output_tokens) events."""
    total = Decimal("0")
    for ev in usage_events:
        if isinstance(ev, dict):
            tin, tout = ev.get("input_tokens", 0), ev.get("output_tokens", 0)
        else:
            tin, tout = ev
        total += (Decimal(tin) * price_table.input_per_token
                  + Decimal(tout) * price_table.output_per_token)
    return total


def run_session(task: envprep.PatchTask, env: envprep.ReproEnvironment,
                model_client, profile: CapabilityProfile, budget: Budget,
                out_dir: str) -> SessionArtifacts:
    """Loop the model over the tool server until finalize, give-up, or
    budget exhaustion; always flush the artifact set."""
    os.makedirs(out_dir, exist_ok=True)
    if profile.image_transform:
        env = envprep.apply_capability_profile(env, profile.image_transform)

    trace = Trace()
    server = toolserver.ToolServer(env, task, profile, trace=trace)
    prompts = toolserver.assemble_prompts(task, profile)
    history: List[dict] = []

    started = time.monotonic()
    cost = Decimal("0")
    termination = "budget_exhausted"
    poc_text: Optional[str] = None
    report_text: Optional[str] = None

    while True:
        if time.monotonic() - started > budget.wall_clock_limit_s:
            termination = "budget_exhausted"
            trace.record("lifecycle", event="budget_exhausted")
            break
        if budget.cost_limit is not None and cost >= budget.cost_limit:
            termination = "budget_exhausted"
            trace.record("lifecycle", event="budget_exhausted")
            break
        try:
            action = model_client.next_action(prompts, history)
        except Exception as exc:
            termination = "fatal_error"
            trace.record("lifecycle", event="fatal_error", error=str(exc))
            break

        if action.input_tokens or action.output_tokens:
            trace.record("model_usage", input_tokens=action.input_tokens,
                         output_tokens=action.output_tokens)
            cost += account_usage(
                [(action.input_tokens, action.output_tokens)],
                budget.price_table)

        if action.kind == "finalize":
            if not action.poc_source or not action.report:
                termination = "fatal_error"
                trace.record("lifecycle", event="fatal_error",
                             error="finalize without poc/report")
                break
            poc_text, report_text = action.poc_source, action.report
            termination = "finalized"
            trace.record("lifecycle", event="finalized")
            break
        if action.kind == "give_up":
            termination = "model_gave_up"
            trace.record("lifecycle", event="model_gave_up",
                         reason=action.reason)
            break
        if action.kind != "tool_call":
            termination = "fatal_error"
            trace.record("lifecycle", event="fatal_error",
                         error="unknown action kind %r" % action.kind)
            break

        try:
            outcome = server.dispatch_call(action.name, action.args or {})
        except KeyError:
            outcome = {"error": {"name": "MethodNotFound",
                                 "message": action.name}}
        except Exception as exc:
            termination = "fatal_error"
            trace.record("lifecycle", event="fatal_error", error=str(exc))
            history.append({"action": action, "outcome": {"error": str(exc)}})
            break
        history.append({"action": action, "outcome": outcome})

    elapsed = time.monotonic() - started
    return _flush_artifacts(out_dir, task, profile, server, trace,
                            termination, elapsed, cost, poc_text, report_text)


def _flush_artifacts(out_dir, task, profile, server, trace, termination,
                     elapsed, cost, poc_text, report_text) -> SessionArtifacts:
    poc_path = report_path = None
    if poc_text is not None:
        poc_path = os.path.join(out_dir, ARTIFACT_POC)
        with open(poc_path, "w", encoding="utf-8") as fh:
            fh.write(poc_text)
    if report_text is not None:
        report_path = os.path.join(out_dir, ARTIFACT_REPORT)
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report_text)

    trace.write(os.path.join(out_dir, ARTIFACT_TRACE))

    console_lines = []
    for event in trace.events:
        if event["kind"] == "console":
            console_lines.extend(event["lines"])
    with open(os.path.join(out_dir, ARTIFACT_CONSOLE), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(console_lines) + ("\n" if console_lines else ""))

    session = {
        "case_id": task.case_id,
        "profile": profile.id,
        "termination": termination,
        "elapsed_min": round(elapsed / 60.0, 4),
        "cost_usd": str(cost),
        "poc_iterations": server.handle.poc_iterations if server.handle else 0,
    }
    with open(os.path.join(out_dir, ARTIFACT_SESSION), "w",
              encoding="utf-8") as fh:
        json.dump(session, fh, indent=2, sort_keys=True)

    return SessionArtifacts(out_dir=out_dir, termination=termination,
                            elapsed_s=elapsed, cost=cost,
                            poc_path=poc_path, report_path=report_path)


def replay_trace(trace_path,
                 utility_watchlist=DEFAULT_UTILITY_WATCHLIST) -> dict:
    """Reconstruct per-category tool counts and behaviour measures from a
    trace file: PoC iterations, breakpoints set/hit, guest utility
    invocations, and procfs/sysfs access counts."""
    events = trace_path if isinstance(trace_path, list) else read_trace(trace_path)

    by_category: Dict[str, int] = {}
    result_errors = {}  # call_seq -> error or None
    for event in events:
        if event["kind"] == "tool_result":
            result_errors[event.get("call_seq")] = event.get("error")

    poc_iterations = 0
    breakpoints_set = 0
    breakpoints_hit = 0
    utility_counts: Dict[str, int] = {u: 0 for u in utility_watchlist}
    procfs_accesses = 0
    sysfs_accesses = 0

    for event in events:
        kind = event["kind"]
        if kind == "tool_call":
            category = event.get("category", "unknown")
            by_category[category] = by_category.get(category, 0) + 1
            name = event.get("name", "")
            args = event.get("args", {}) or {}
            if name == "vm.compile_upload":
                poc_iterations += 1
            if name == "dbg.breakpoint" and args.get("action") == "set" \
                    and result_errors.get(event["seq"]) is None:
                breakpoints_set += 1
            if name == "vm.exec":
                command = str(args.get("command", ""))
                head = command.split()[0] if command.split() else ""
                if head in utility_counts:
                    utility_counts[head] += 1
                procfs_accesses += command.count("/proc/")
                sysfs_accesses += command.count("/sys/")
        elif kind == "lifecycle" and event.get("event") == "gate_stopped" \
                and event.get("reason") == "stopped_breakpoint":
            breakpoints_hit += 1

    return {
        "tool_counts": by_category,
        "total_tool_calls": sum(by_category.values()),
        "poc_iterations": poc_iterations,
        "breakpoints_set": breakpoints_set,
        "breakpoints_hit": breakpoints_hit,
        "utility_invocations": {u: c for u, c in utility_counts.items() if c},
        "procfs_accesses": procfs_accesses,
        "sysfs_accesses": sysfs_accesses,
    }
