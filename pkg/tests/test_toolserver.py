import io
import json
import os

import pytest
from hypothesis import given, settings, strategies as st

from patchrepro import envprep, toolserver
from patchrepro.envprep import BuilderSpec
from patchrepro.trace import Trace
from tests.conftest import SCENARIOS, SENTINEL_MESSAGE


@pytest.fixture
def env_and_task(kernel_repo, tmp_path):
    task = envprep.resolve_task(kernel_repo["repo"], kernel_repo["fix"])
    builder = BuilderSpec("fixture-kasan", "fixture",
                          {"scenario": os.path.join(SCENARIOS, "crash_uaf.json")})
    env = envprep.prepare_environment(task, builder, str(tmp_path / "env"))
    return env, task


def _server(env_and_task, profile="baseline"):
    env, task = env_and_task
    return toolserver.ToolServer(env, task, toolserver.PROFILES[profile],
                                 trace=Trace())


def test_registry_has_twelve_unique_tools():
    tools = toolserver.load_registry()
    assert len(tools) == 12
    assert len({t.name for t in tools}) == 12
    cats = {t.category for t in tools}
    assert cats == {"code_browsing", "vm_management", "vm_interaction",
                    "debugging"}


def test_profile_filters_debugging_tools():
    base = {t.name for t in toolserver.list_tools(toolserver.PROFILES["baseline"])}
    nogdb = {t.name for t in toolserver.list_tools(toolserver.PROFILES["no_gdb"])}
    assert nogdb < base
    assert base - nogdb == {"dbg.breakpoint", "dbg.inspect", "dbg.raw",
                            "dbg.resume"}


def test_prompt_bundle_baseline(env_and_task):
    _, task = env_and_task
    bundle = toolserver.assemble_prompts(task, toolserver.PROFILES["baseline"])
    assert SENTINEL_MESSAGE in bundle.task_text
    assert task.diff_text.strip().splitlines()[0] in bundle.task_text
    assert "hypothes" in bundle.system_text.lower()
    assert bundle.constraints[0] == toolserver.NO_INTERNET_CONSTRAINT


def test_prompt_bundle_degraded_and_no_commit_message(env_and_task):
    _, task = env_and_task
    degraded = toolserver.assemble_prompts(task,
                                           toolserver.PROFILES["degraded_prompt"])
    baseline = toolserver.assemble_prompts(task, toolserver.PROFILES["baseline"])
    assert len(degraded.system_text) < len(baseline.system_text)
    assert degraded.technical_text == baseline.technical_text

    ncm = toolserver.assemble_prompts(task,
                                      toolserver.PROFILES["no_commit_message"])
    assert SENTINEL_MESSAGE not in ncm.task_text
    assert task.diff_text.strip().splitlines()[0] in ncm.task_text


def test_tool_calls_and_trace(env_and_task):
    srv = _server(env_and_task)
    out = srv.dispatch_call("vm.start", {})
    assert "result" in out
    out = srv.dispatch_call("code.query", {"name": "nft_chain_lookup"})
    assert out["result"]["locations"]
    out = srv.dispatch_call("vm.exec", {"command": "echo hi"})
    assert "hi" in out["result"]["text"]
    kinds = [e["kind"] for e in srv.trace.events]
    assert kinds.count("tool_call") == 3
    assert kinds.count("tool_result") == 3
    # Sequence numbers are gapless.
    seqs = [e["seq"] for e in srv.trace.events]
    assert seqs == list(range(seqs[0], seqs[0] + len(seqs)))


def test_harness_error_becomes_tool_error(env_and_task):
    srv = _server(env_and_task)
    out = srv.dispatch_call("vm.exec", {"command": "echo x"})
    assert out["error"]["name"] == "GuestUnavailable"  # guest never started
    srv.dispatch_call("vm.start", {})
    out = srv.dispatch_call("code.read",
                            {"file": "nope.c", "start": 1, "end": 5})
    assert out["error"]["name"] == "FileNotFound"


def test_unknown_tool_raises_before_any_trace_event(env_and_task):
    srv = _server(env_and_task, profile="no_gdb")
    before = len(srv.trace.events)
    with pytest.raises(KeyError):
        srv.dispatch_call("dbg.raw", {"command": "info registers"})
    assert len(srv.trace.events) == before


def test_jsonrpc_list_and_call(env_and_task):
    srv = _server(env_and_task)
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 1, "method": "tools/list"})
    assert len(resp["result"]["tools"]) == 12
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 2, "method": "tools/call",
                         "params": {"name": "vm.start", "arguments": {}}})
    assert "guest_id" in resp["result"]
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 3, "method": "tools/call",
                         "params": {"name": "bogus.tool", "arguments": {}}})
    assert resp["error"]["code"] == -32601
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 4, "method": "no/such"})
    assert resp["error"]["code"] == -32601
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 5, "method": "tools/call",
                         "params": {"name": "vm.exec",
                                    "arguments": {"command": "spin",
                                                  "timeout_s": 0.01}}})
    assert resp["result"]["timed_out"]


def test_jsonrpc_filtered_tool_is_method_not_found(env_and_task):
    srv = _server(env_and_task, profile="no_gdb")
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 1, "method": "tools/call",
                         "params": {"name": "dbg.resume", "arguments": {}}})
    assert resp["error"]["code"] == -32601
    resp = srv.dispatch({"jsonrpc": "2.0", "id": 2, "method": "tools/list"})
    assert len(resp["result"]["tools"]) == 8


def test_serve_newline_delimited(env_and_task):
    srv = _server(env_and_task)
    lines = [
        json.dumps({"jsonrpc": "2.0", "id": 1, "method": "tools/list"}),
        "not json",
        json.dumps({"jsonrpc": "2.0", "id": 2, "method": "tools/call",
                    "params": {"name": "vm.start", "arguments": {}}}),
    ]
    out = io.StringIO()
    srv.serve(stdin=io.StringIO("\n".join(lines) + "\n"), stdout=out)
    responses = [json.loads(l) for l in out.getvalue().splitlines()]
    assert len(responses) == 3
    assert "result" in responses[0]
    assert responses[1]["error"]["code"] == -32602
    assert "guest_id" in responses[2]["result"]


def test_debugger_flow_records_mutations(env_and_task):
    srv = _server(env_and_task)
    srv.dispatch_call("vm.start", {})
    out = srv.dispatch_call("dbg.breakpoint",
                            {"action": "set", "location": "nft_chain_lookup"})
    assert out["result"]["id"] == "1"
    out = srv.dispatch_call("dbg.raw", {"command": "set var obj->len = 64"})
    assert "result" in out
    muts = [e for e in srv.trace.events if e["kind"] == "mutation"]
    assert len(muts) == 1 and muts[0]["category"] == "memory_write"


def test_console_trace_mirrors_transcript(env_and_task):
    srv = _server(env_and_task)
    srv.dispatch_call("vm.start", {})
    srv.dispatch_call("vm.exec", {"command": "echo one"})
    srv.dispatch_call("vm.exec", {"command": "./trigger"})
    mirrored = [ln for e in srv.trace.events if e["kind"] == "console"
                for ln in e["lines"]]
    assert mirrored == [rec["line"] for rec in srv.handle.transcript]


@settings(max_examples=20, deadline=None)
@given(profile_id=st.sampled_from(sorted(toolserver.PROFILES)))
def test_every_profile_prompt_has_no_internet_rule(profile_id):
    task = envprep.PatchTask(case_id="c", commit_id="a" * 40,
                             parent_commit_id="b" * 40, diff_text="--- x",
                             commit_message="msg")
    bundle = toolserver.assemble_prompts(task, toolserver.PROFILES[profile_id])
    assert toolserver.NO_INTERNET_CONSTRAINT in bundle.constraints
    assert bundle.task_text and bundle.technical_text
