from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from secomp_kit.harness.gen import gen_io, gen_pair
from secomp_kit.lang import Signature
from secomp_kit.trace import (
    CallEvent, ICall, ISys, IoScript, ParseError, ReturnEvent, SyscallEvent, UndefEvent,
    blame_rel, io_for_trace, make_call, parse_io, parse_itrace, parse_trace, prefix_rel,
    project, serialize_io, serialize_itrace, serialize_trace, well_bracketed,
)

COMP = st.sampled_from(["C0", "C1", "C2"])
INT = st.integers(-(1 << 63), (1 << 63) - 1)
BYTES = st.lists(st.integers(0, 255), max_size=5).map(tuple)

calls = st.builds(CallEvent, COMP, COMP, st.sampled_from(["f", "g", "main"]),
                  st.lists(INT, max_size=4).map(tuple))
returns = st.builds(ReturnEvent, COMP, COMP, st.none() | INT)
syscalls = st.builds(SyscallEvent, COMP, st.sampled_from(["read", "write"]),
                     st.lists(INT, max_size=2).map(tuple), BYTES, INT, BYTES)
plain = st.one_of(calls, returns, syscalls)
traces = st.tuples(st.lists(plain, max_size=12), st.none() | COMP).map(
    lambda t: t[0] + ([UndefEvent(t[1])] if t[1] else []))

A = CallEvent("C0", "C1", "g", (1,))
B = CallEvent("C0", "C1", "g", (2,))
R = ReturnEvent("C1", "C0", 3)


# ---------------------------------------------------------------- relations

def test_prefix_examples():
    assert prefix_rel([A, R], [A, R])
    assert prefix_rel([A, UndefEvent("C0")], [A, R])
    assert prefix_rel([UndefEvent("C0")], [B, R])
    assert not prefix_rel([A], [B])
    assert not prefix_rel([A], [A, R])


def test_blame_examples():
    assert blame_rel([A, R], [A, R], set())
    assert blame_rel([A, UndefEvent("C1")], [A, R], {"C1"})
    assert not blame_rel([A, UndefEvent("C1")], [A, R], {"C2"})


@given(traces)
def test_prefix_is_reflexive_on_undef_free_and_undef_terminated(m):
    assert prefix_rel(m, m)


@given(traces, traces, st.sets(COMP))
def test_blame_implies_prefix(m1, m2, good):
    if blame_rel(m1, m2, good):
        assert prefix_rel(m1, m2)


@given(traces, traces, st.sets(COMP), st.sets(COMP))
def test_blame_is_monotone_in_the_good_set(m1, m2, good, extra):
    if blame_rel(m1, m2, good):
        assert blame_rel(m1, m2, good | extra)


@given(traces, st.integers(0, 12), COMP)
def test_any_truncation_with_undef_is_a_prefix(m, k, c):
    body = [e for e in m if type(e) is not UndefEvent]
    assert prefix_rel(body[:k] + [UndefEvent(c)], body)


def test_well_bracketing():
    assert well_bracketed([A, R])
    assert well_bracketed([A, CallEvent("C1", "C2", "f", ()), ReturnEvent("C2", "C1", None), R])
    assert not well_bracketed([R])
    assert not well_bracketed([A, ReturnEvent("C2", "C0", 1)])


# ---------------------------------------------------------------- wire format

def test_serialize_examples():
    assert serialize_trace([]) == ""
    assert serialize_trace([CallEvent("C0", "C1", "g", (1, 2))]) == "CALL C0 C1.g (1,2)\n"
    ev = SyscallEvent("C0", "read", (3,), (7, 8), 2, ())
    assert serialize_trace([ev, ReturnEvent("C1", "C0", None), UndefEvent("C0")]) == (
        "SYS C0 read (3) [7,8] -> 2 []\nRET C1 C0 void\nUB C0\n")


@given(traces)
def test_trace_round_trip(m):
    assert parse_trace(serialize_trace(m)) == m


@pytest.mark.parametrize("bad", ["CALL C0 C1 (1)", "RET C0", "SYS C0 open () [] -> 0 []", "UB C0\nUB C1"])
def test_malformed_traces_are_rejected(bad):
    with pytest.raises(ParseError):
        parse_trace(bad)


def test_scalar_payloads_only():
    with pytest.raises(TypeError):
        make_call("C0", "C1", "g", ["ptr"])


@pytest.mark.parametrize("seed", range(20))
def test_informative_round_trip_on_generated_traces(seed):
    env, it = gen_pair(seed, max_events=120)
    genv = env.genv()
    assert parse_itrace(serialize_itrace(it, genv), genv) == it


def test_informative_line_shapes():
    env, it = gen_pair(3, max_events=60)
    text = serialize_itrace(it, env.genv())
    call = next(ie for ie in it if type(ie) is ICall)
    assert f"I {call.f} CALL " in text and f" : {call.sig}" in text
    assert str(Signature(2, False)) == "2 void"


def test_project_examples():
    ev = SyscallEvent("C0", "read", (8,), (), 0, ())
    assert project([]) == []
    assert project([ISys("main", ev, "buf", ())]) == [ev]


# ---------------------------------------------------------------- io oracle

def test_io_script_serialization():
    io = IoScript(((1, 2), ()), (3,))
    assert serialize_io(io) == "READ 1 2\nREAD\nWRITEACK 3\n"
    assert parse_io(serialize_io(io)) == io


def test_io_exhaustion_gives_empty_read_and_zero_ack():
    io = IoScript()
    assert io.next_read() == ((), io)
    assert io.next_ack() == (0, io)


@pytest.mark.parametrize("seed", range(10))
def test_io_round_trip(seed):
    io = gen_io(random.Random(seed))
    assert parse_io(serialize_io(io)) == io


def test_io_for_trace_replays_recorded_syscalls():
    m = [SyscallEvent("C0", "read", (3,), (7, 8), 2, ()),
         SyscallEvent("C0", "write", (1,), (), 1, (9,))]
    assert io_for_trace(m) == IoScript(((7, 8),), (1,))


def test_io_rejects_non_bytes():
    with pytest.raises(ParseError):
        parse_io("READ 300\n")
