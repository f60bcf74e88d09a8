from __future__ import annotations

from dataclasses import replace

import pytest

from programs import MINIMAL, SPILL9, TWO_COMP
from secomp_kit.compile import (
    TooManyParams, compile_compartment, compile_program, compile_separately,
)
from secomp_kit.harness.gen import gen_program_case
from secomp_kit.lang import interface_of, parse_program
from secomp_kit.memory import Perm
from secomp_kit.sem_source import run
from secomp_kit.sem_target import RUNNING, tinit, trun, tstep
from secomp_kit.target import interface_of_target, parse_target, target_text
from secomp_kit.trace import CallEvent, Final, IoScript, ReturnEvent, Stuck, UndefEvent


def test_minimal_compiles_to_a_silent_final_run():
    tp = compile_program(parse_program(MINIMAL))
    assert trun(tp) == ([], [], Final(0))


def test_cross_call_events_match_the_source_run():
    p = parse_program(TWO_COMP)
    io = IoScript((), (1,))
    m_src, o_src = run(p, io)
    m_tgt, _, o_tgt = trun(compile_program(p), io)
    assert m_tgt == m_src and o_tgt == o_src == Final(42)


def test_ninth_argument_is_spilled_and_sealed_during_the_callee():
    p = parse_program(SPILL9)
    tp = compile_program(p)
    main = tp.compartments["C0"].procs["main"]
    assert ("store_f", 1, "t0") in main
    assert any(ins[0] == "load_arg" for ins in tp.compartments["C1"].procs["sum9"])
    s = tinit(tp)
    io = IoScript()
    sealed_seen = False
    while s.status == RUNNING:
        if s.cur == "C1":
            c0_frames = [b for b, blk in s.mem.blocks.items() if blk.owner == "C0" and blk.live]
            assert c0_frames and all(s.mem.blocks[b].perm is Perm.RO for b in c0_frames)
            sealed_seen = True
        s, _, _, io = tstep(s, io)
    assert sealed_seen
    assert s.outcome() == Final(36 + 900)
    assert run(p)[1] == Final(936)


def test_spilling_disabled_rejects_nine_parameters():
    with pytest.raises(TooManyParams):
        compile_program(parse_program(SPILL9), spill=False)


def test_single_compartment_compiles_the_same_either_way():
    p = parse_program(MINIMAL)
    assert compile_program(p).compartments["C0"] == compile_compartment(p.compartments["C0"])


def test_disallowed_syscall_still_compiles_and_fails_at_run_time():
    p = parse_program("""(compartment C0 (exports (main 0 ret)) (syscalls write)
      (global buf 2 public) (proc main () (locals x) (call x sys.write buf 1) (return x)))""")
    c0 = p.compartments["C0"]
    p = replace(p, compartments={"C0": replace(c0, syscalls=frozenset())})
    tp = compile_program(p, check=False)
    m, _, out = trun(tp)
    assert m == [UndefEvent("C0")] and out == Stuck("C0")


def test_interfaces_are_copied_verbatim():
    p = parse_program(TWO_COMP)
    assert interface_of_target(compile_program(p)) == interface_of(p)


def test_target_text_round_trip():
    tp = compile_program(parse_program(SPILL9))
    assert parse_target(target_text(tp)) == tp


@pytest.mark.parametrize("seed", range(100))
def test_separate_compilation_is_trace_equal(seed):
    p, io = gen_program_case(seed)
    comps = sorted(p.compartments)
    ks = set(comps[: max(1, len(comps) // 2)])
    whole = trun(compile_program(p), io)
    sep = trun(compile_separately(p, ks), io)
    assert sep[0] == whole[0] and sep[2] == whole[2]


def test_events_of_two_comp_program():
    m, _, _ = trun(compile_program(parse_program(TWO_COMP)), IoScript((), (1,)))
    assert m[:2] == [CallEvent("C0", "C1", "add", (40, 2)), ReturnEvent("C1", "C0", 42)]
