import os

import pytest
from hypothesis import given, settings, strategies as st

from patchrepro import mi
from patchrepro.errors import MalformedRecord
from tests.conftest import MI_DIR


def _corpus_lines():
    with open(os.path.join(MI_DIR, "transcript.txt")) as fh:
        return [ln for ln in fh.read().splitlines()
                if ln and not mi.is_terminator(ln)]


def test_corpus_parses_completely():
    lines = _corpus_lines()
    assert len(lines) >= 20
    for line in lines:
        mi.parse_mi_record(line)


def test_corpus_round_trip_fixpoint():
    for line in _corpus_lines():
        rec = mi.parse_mi_record(line)
        once = mi.serialize_mi_record(rec)
        assert once == line
        twice = mi.serialize_mi_record(mi.parse_mi_record(once))
        assert twice == once


def test_malformed_corpus_raises():
    with open(os.path.join(MI_DIR, "malformed.txt")) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    assert len(lines) == 3
    for line in lines:
        with pytest.raises(MalformedRecord):
            mi.parse_mi_record(line)


def test_record_classes():
    assert mi.parse_mi_record("^done").cls == "result"
    assert mi.parse_mi_record("5^error,msg=\"x\"").token == 5
    assert mi.parse_mi_record("*stopped,reason=\"exited\"").cls == "exec_async"
    assert mi.parse_mi_record("=thread-created,id=\"1\"").cls == "notify_async"
    assert mi.parse_mi_record("+download,progress=\"1\"").cls == "notify_async"
    assert mi.parse_mi_record('~"hi\\n"').cls == "console_stream"
    assert mi.parse_mi_record('@"raw"').cls == "target_stream"
    assert mi.parse_mi_record('&"log"').cls == "log_stream"
    assert mi.is_terminator("(gdb)")
    assert mi.is_terminator("(gdb) ")


def test_structured_payload_access():
    rec = mi.parse_mi_record(
        '*stopped,reason="breakpoint-hit",frame={func="f",'
        'args=[{name="a",value="1"}],line="7"}')
    assert rec.kind == "stopped"
    assert rec.get("reason") == "breakpoint-hit"
    assert rec.get("frame", "func") == "f"
    assert rec.get("frame", "args")[0]["name"] == "a"
    assert rec.get("frame", "missing", default="d") == "d"


def test_escape_round_trip_in_streams():
    line = '~"tab\\there \\"quoted\\" and\\nnewline\\\\done"'
    rec = mi.parse_mi_record(line)
    assert mi.serialize_mi_record(rec) == line
    text = rec.payload["text"]
    assert "\t" in text and "\n" in text and '"' in text


def test_malformed_variants():
    for line in ("", "^", "~unquoted", '3~"stream with token"',
                 '^done,="noname"', '^done,k="v" trailing'):
        with pytest.raises(MalformedRecord):
            mi.parse_mi_record(line)


_TEXT = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=126),
    max_size=20)


@settings(max_examples=100, deadline=None)
@given(token=st.one_of(st.none(), st.integers(0, 999)),
       kind=st.sampled_from(["done", "running", "error"]),
       pairs=st.dictionaries(
           st.from_regex(r"[a-z][a-z0-9-]{0,8}", fullmatch=True),
           _TEXT, max_size=4))
def test_result_record_round_trip_property(token, kind, pairs):
    """Any serialized result record reparses to an equal record."""
    rec = mi.MiRecord(token=token, cls="result", kind=kind,
                      payload=dict(pairs), prefix="^")
    line = mi.serialize_mi_record(rec)
    back = mi.parse_mi_record(line)
    assert back.token == token
    assert back.kind == kind
    assert back.payload == pairs
    assert mi.serialize_mi_record(back) == line


@settings(max_examples=100, deadline=None)
@given(text=st.text(max_size=40))
def test_stream_escape_unescape_property(text):
    rec = mi.MiRecord(token=None, cls="console_stream", kind="",
                      payload={"text": text}, prefix="~")
    try:
        line = mi.serialize_mi_record(rec)
    except ValueError:
        return  # characters outside the supported escape set
    back = mi.parse_mi_record(line)
    assert back.payload["text"] == text
