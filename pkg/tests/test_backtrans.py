from __future__ import annotations

import pytest

from programs import TWO_COMP
from secomp_kit.backtrans import (
    InterfaceViolation, StackUnderflow, TraceTooLong, back_translate, back_translate_all,
    bt_delta, bt_event, bt_init, check_wf, env_of_program, env_of_target, env_text,
    load_env, wf_step,
)
from secomp_kit.compile import compile_program
from secomp_kit.harness.gen import gen_pair, gen_program_case
from secomp_kit.lang import (
    Call, Const, GStore, Return, Seq, Signature, Skip, Target, interface_of,
    parse_program, program_text,
)
from secomp_kit.sem_source import run
from secomp_kit.sem_target import trun
from secomp_kit.trace import (
    CallEvent, DeltaAlloc, DeltaStore, ICall, IReturn, ISys, ReturnEvent, SyscallEvent,
    io_for_trace, project,
)

ENV_TEXT = """
(compartment C0 (exports (main 0 ret)) (imports (C1 g 1 ret)) (syscalls read write)
  (global buf 2 public) (global priv 1 private)
  (proc main () (return 0)))
(compartment C1 (exports (g 1 ret) (h 0 void)) (global gbuf 3 public)
  (proc g (a) (return a)) (proc h () (return)))
"""


@pytest.fixture
def env():
    return env_of_program(parse_program(ENV_TEXT))


def _buf(env, comp, name):
    return env.genv().block(comp, name)


def test_syscall_delta_updates_the_buffer(env):
    s = bt_init(env)
    buf = _buf(env, "C0", "buf")
    assert s.mem.blocks[buf].slots[0] == 0
    e = ISys("main", SyscallEvent("C0", "write", (1,), (), 1, (7,)), "buf",
             (DeltaStore(buf, 0, 7, "C0"),))
    s2 = wf_step(s, e)
    assert s2.mem.blocks[buf].slots[0] == 7
    assert s.mem.blocks[buf].slots[0] == 0


def test_call_to_non_exported_procedure(env):
    e = ICall("main", CallEvent("C0", "C1", "hidden", (1,)), Signature(1, True))
    with pytest.raises(InterfaceViolation):
        wf_step(bt_init(env), e)


def test_return_with_no_open_call(env):
    with pytest.raises(StackUnderflow):
        wf_step(bt_init(env), IReturn("main", ReturnEvent("C0", "C1", 0)))


def test_check_wf_examples(env):
    buf = _buf(env, "C0", "buf")
    assert check_wf([], bt_init(env))
    bad = ISys("main", SyscallEvent("C0", "write", (1,), (), 1, (8,)), "buf",
               (DeltaStore(buf, 0, 7, "C0"),))
    report = check_wf([bad], bt_init(env))
    assert not report and report.failed_at == 0


def test_bt_delta(env):
    genv = env.genv()
    gbuf = _buf(env, "C1", "gbuf")
    assert bt_delta("C1", DeltaStore(gbuf, 2, 9, "C1"), genv) == GStore("gbuf", Const(2), Const(9))
    assert bt_delta("C1", DeltaAlloc("C1", 3), genv) == Skip()
    assert bt_delta("C0", DeltaStore(gbuf, 2, 9, "C1"), genv) == Skip()
    priv = _buf(env, "C0", "priv")
    assert bt_delta("C0", DeltaStore(priv, 0, 1, "C0"), genv) == Skip()


def test_bt_event(env):
    genv = env.genv()
    call = ICall("main", CallEvent("C0", "C1", "g", (1, 2)), Signature(2, True))
    assert bt_event("C0", call, genv) == Call(None, Target("C1", "g"), (Const(1), Const(2)))
    ret = IReturn("g", ReturnEvent("C1", "C0", 3))
    assert bt_event("C1", ret, genv) == Return(Const(3))
    buf = _buf(env, "C0", "buf")
    sys = ISys("main", SyscallEvent("C0", "read", (2,), (), 0, ()), "buf",
               (DeltaStore(buf, 1, 4, "C0"),))
    got = bt_event("C0", sys, genv)
    assert type(got) is Seq and got.stmts[0] == GStore("buf", Const(1), Const(4))
    assert type(got.stmts[1]) is Call and got.stmts[1].target.proc == "read"


def test_empty_trace_gives_return_zero_everywhere(env):
    p = back_translate_all(env, [])
    m, out = run(p)
    assert m == [] and out.value == 0
    c1 = back_translate(env, [], "C1")
    assert "(return 0)" in program_text(p) and set(c1.procs) == {"g", "h"}


def test_single_call_lands_at_counter_zero(env):
    it = [ICall("main", CallEvent("C0", "C1", "g", (5,)), Signature(1, True))]
    c0 = back_translate(env, it, "C0")
    text = program_text(back_translate_all(env, it))
    assert "(if (op = (gload __ctr 0) 0)" in text
    assert "(call _ C1.g 5)" in text
    m, _ = run(back_translate_all(env, it), max_events=1)
    assert m == project(it)
    assert c0.exports == env.interface["C0"].exports


def test_back_translation_keeps_the_interface(env):
    env2, it = gen_pair(5, max_events=200)
    p = back_translate_all(env2, it)
    assert interface_of(p) == env2.interface


def test_length_limit(env):
    it = [ICall("main", CallEvent("C0", "C1", "g", (5,)), Signature(1, True))]
    with pytest.raises(TraceTooLong):
        back_translate_all(env, it * 3, max_length=2)


def test_interface_file_round_trip():
    env, _ = gen_pair(11, max_events=50)
    assert load_env(env_text(env)) == env
    p = parse_program(TWO_COMP)
    assert load_env(TWO_COMP) == env_of_program(p)


@pytest.mark.parametrize("seed", range(100))
def test_recorded_informative_traces_are_well_formed_and_replayable(seed):
    p, io = gen_program_case(seed)
    tp = compile_program(p)
    m, it, _ = trun(tp, io)
    env = env_of_target(tp)
    assert check_wf(it, bt_init(env))
    q = back_translate_all(env, it)
    m2, _ = run(q, io_for_trace(project(it)), max_events=len(it))
    assert m2 == project(it)
