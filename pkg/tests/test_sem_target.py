from __future__ import annotations

import pytest

from programs import MINIMAL, TWO_COMP
from secomp_kit.compile import compile_program
from secomp_kit.harness.gen import gen_program_case
from secomp_kit.lang import parse_program
from secomp_kit.memory import UNDEF, audit_violations
from secomp_kit.sem_source import init
from secomp_kit.sem_target import RUNNING, tinit, trun, tstep
from secomp_kit.target import parse_target
from secomp_kit.trace import (
    CallEvent, Final, IoScript, Stuck, UndefEvent, project, well_bracketed,
)


def two(callee_body: str, caller_extra: str = "") -> str:
    """C0.main calls C1.g(5) and returns its result; C1.g runs `callee_body`."""
    return f"""
(tcompartment C0
  (interface (exports (main 0 ret)) (imports (C1 g 1 ret)) (syscalls))
  (tproc main
    (enter 2)
    (store_f 1 ra)
    {caller_extra}
    (li a0 5)
    (jal true C1.g)
    (load_f ra 1)
    (leave)
    (jr true ra)))
(tcompartment C1
  (interface (exports (g 1 ret)) (imports) (syscalls))
  (tproc g
    {callee_body}))
(entry C0 main)
"""


def test_honest_callee_returns():
    m, it, out = trun(parse_target(two("(li t0 1) (binop add a0 a0 t0) (jr true ra)")))
    assert out == Final(6)
    assert m[0] == CallEvent("C0", "C1", "g", (5,)) and m[1].val == 6
    assert project(it) == m


def test_wrong_return_address_blames_callee():
    m, _, out = trun(parse_target(two("(lcode ra C0.main 0) (jr true ra)")))
    assert out == Stuck("C1") and m[-1] == UndefEvent("C1")


def test_stack_pointer_mismatch_blames_callee():
    m, _, out = trun(parse_target(two("(enter 1) (jr true ra)")))
    assert out == Stuck("C1") and m[-1] == UndefEvent("C1")


def test_store_into_sealed_caller_frame_is_refused():
    # sp still points at the caller's frame, which is sealed and not the callee's
    _, _, out = trun(parse_target(two("(li t0 1) (store_f 1 t0) (jr true ra)")))
    assert out == Stuck("C1")


def test_unflagged_cross_jump_blames_caller():
    tp = parse_target(two("(jr true ra)").replace("(jal true C1.g)", "(jal false C1.g)"))
    m, _, out = trun(tp)
    assert m == [UndefEvent("C0")] and out == Stuck("C0")


def test_empty_body_is_stuck_on_first_step():
    tp = parse_target("(tcompartment C0 (interface (exports (main 0 ret)) (imports) (syscalls)) (tproc main)) (entry C0 main)")
    assert trun(tp) == ([UndefEvent("C0")], [], Stuck("C0"))


def test_minimal_target_starts_running_at_entry():
    s = tinit(compile_program(parse_program(MINIMAL)))
    assert (s.status, s.cur, s.proc, s.pc) == (RUNNING, "C0", "main", 0)


def test_registers_are_invalidated_across_a_call():
    s = tinit(parse_target(two("(jr true ra)", "(li t3 77)")))
    io = IoScript()
    while s.status == RUNNING and s.cur != "C1":
        s, _, _, io = tstep(s, io)
    assert s.regs["a0"] == 5 and s.regs["t3"] is UNDEF


def test_globals_mirror_the_source_layout():
    p = parse_program(TWO_COMP)
    src = init(p).mem
    tgt = tinit(compile_program(p)).mem
    assert [(b.owner, len(b.slots)) for b in tgt.blocks.values()] == [
        (b.owner, len(b.slots)) for b in src.blocks.values()]


@pytest.mark.parametrize("seed", range(200))
def test_recorded_runs_project_bracket_and_stay_in_bounds(seed):
    p, io = gen_program_case(seed)
    log: list = []
    m, it, out = trun(compile_program(p), io, audit=log)
    assert project(it) == [e for e in m if type(e) is not UndefEvent]
    body = m[:-1] if m and type(m[-1]) is UndefEvent else m
    assert well_bracketed(body)
    assert audit_violations(log) == []
    assert trun(compile_program(p), io) == (m, it, out)
