"""Well-formedness of informative traces and their back-translation.

A well-formed informative trace is replayed against a `BtState` holding the
current procedure, a memory with only the global blocks, and the stack of
open cross-compartment calls. Back-translation turns the events attributed
to a compartment into a counter-driven dispatcher: every exported procedure
loops over an else-if chain keyed on the compartment's counter global.
"""
from __future__ import annotations

from dataclasses import dataclass

from .lang import (
    BinOp, Call, CompartmentDecl, Const, GlobalDecl, GlobalRef, GLoad, GStore,
    If, ProcBody, Program, Return, Seq, Signature, Skip, Target, While,
    UnknownCompartment, SYS_COMP, interface_of, parse_program,
)
from .memory import GlobalEnv, MemError, Memory
from .target import TargetProgram, TCompartment, is_target_text, parse_target, target_text
from .trace import (
    READ_CAP, DeltaAlloc, DeltaBytes, DeltaFree, DeltaStore, ICall, IReturn, ISys,
)


class WfError(Exception):
    """An informative event that the well-formedness step rejects."""


class DeltaMismatch(WfError):
    pass


class NonScalarGlobal(WfError):
    pass


class InterfaceViolation(WfError):
    pass


class StackUnderflow(WfError):
    pass


class NotWellFormed(Exception):
    pass


class TraceTooLong(NotWellFormed):
    pass


MAX_TRACE_LENGTH = 10_000


@dataclass(frozen=True)
class TraceEnv:
    """Everything needed to interpret an informative trace.

    `interface` maps compartments to their `CompInterface`, `globals` maps
    them to their `GlobalDecl` tuples and `entry` is the (comp, proc) that
    starts execution.
    """
    interface: dict
    globals: dict
    entry: tuple

    def genv(self) -> GlobalEnv:
        return GlobalEnv(self.globals)


def env_of_program(p) -> TraceEnv:
    return TraceEnv(interface_of(p), {k: tuple(c.globals) for k, c in p.compartments.items()}, p.main)


def env_of_target(tp) -> TraceEnv:
    return TraceEnv({k: c.interface for k, c in tp.compartments.items()},
                    {k: tuple(c.globals) for k, c in tp.compartments.items()}, tp.entry)


def env_text(env: TraceEnv) -> str:
    """Interface file: a target program whose compartments carry no code."""
    comps = {k: TCompartment(k, ci, tuple(env.globals.get(k, ())), {})
             for k, ci in env.interface.items()}
    return target_text(TargetProgram(comps, tuple(env.entry) if env.entry else None))


def load_env(text: str) -> TraceEnv:
    """Trace environment from an interface file, a target program or a source program."""
    if is_target_text(text):
        return env_of_target(parse_target(text))
    return env_of_program(parse_program(text, partial=True))


class BtState:
    __slots__ = ("f", "mem", "fs", "env", "genv")

    def __init__(self, f, mem: Memory, fs: list, env: TraceEnv, genv: GlobalEnv):
        self.f = f
        self.mem = mem
        self.fs = fs
        self.env = env
        self.genv = genv

    def clone(self) -> "BtState":
        return BtState(self.f, self.mem.copy(), list(self.fs), self.env, self.genv)


def bt_init(env: TraceEnv) -> BtState:
    genv = env.genv()
    mem = Memory()
    genv.populate(mem)
    return BtState(tuple(env.entry), mem, [], env, genv)


# ---------------------------------------------------------------- well-formedness

def _apply_deltas(s: BtState, comp: str, deltas) -> None:
    mem = s.mem
    try:
        for d in deltas:
            if d.comp != comp:
                raise DeltaMismatch(f"delta by {d.comp} while {comp} is running")
            t = type(d)
            if t is DeltaStore:
                mem.store(comp, d.block, d.off, d.value)
            elif t is DeltaBytes:
                for i, v in enumerate(d.values):
                    mem.store(comp, d.block, d.off + i, v)
            elif t is DeltaAlloc:
                mem.alloc(comp, d.size)
            elif t is DeltaFree:
                mem.free(comp, d.block)
            else:
                raise DeltaMismatch(f"unknown delta {d!r}")
    except MemError as e:
        raise DeltaMismatch(str(e)) from None


def _step(s: BtState, e) -> None:
    iface = s.env.interface
    comp = s.f[0]
    t = type(e)
    if t is ICall:
        ev = e.event
        if ev.caller != comp:
            raise InterfaceViolation(f"call issued by {ev.caller} while {comp} is running")
        _apply_deltas(s, comp, e.deltas)
        callee = iface.get(ev.callee)
        if callee is None or callee.exports.get(ev.proc) != e.sig:
            raise InterfaceViolation(f"{ev.callee}.{ev.proc} is not exported with ({e.sig})")
        if iface[comp].imports.get((ev.callee, ev.proc)) != e.sig:
            raise InterfaceViolation(f"{comp} does not import {ev.callee}.{ev.proc}")
        if len(ev.args) != e.sig.param_count or any(type(a) is not int for a in ev.args):
            raise InterfaceViolation("arguments do not match the signature")
        s.fs.append(((comp, e.f), e.sig))
        s.f = (ev.callee, ev.proc)
    elif t is IReturn:
        ev = e.event
        if not s.fs:
            raise StackUnderflow("return with no open call")
        (caller, sig) = s.fs[-1]
        if ev.callee != comp or ev.caller != caller[0]:
            raise InterfaceViolation(f"return {ev.callee}->{ev.caller} does not close {caller[0]}->{comp}")
        if sig.returns_value != (ev.val is not None):
            raise InterfaceViolation("return value does not match the signature")
        if ev.val is not None and type(ev.val) is not int:
            raise InterfaceViolation("return value must be scalar")
        _apply_deltas(s, comp, e.deltas)
        s.fs.pop()
        s.f = caller
    elif t is ISys:
        ev = e.event
        if ev.comp != comp:
            raise InterfaceViolation(f"syscall by {ev.comp} while {comp} is running")
        if ev.name not in iface[comp].syscalls:
            raise InterfaceViolation(f"{comp} may not use {ev.name}")
        _apply_deltas(s, comp, e.deltas)
        genv = s.genv
        mem = s.mem
        for bid in genv.public_blocks(comp):
            if any(type(v) is not int for v in mem.blocks[bid].slots):
                raise NonScalarGlobal(f"public global {genv.ref(bid)} holds a non-scalar")
        bid = genv.block(comp, e.buffer)
        if bid is None or not genv.by_block[bid][3]:
            raise InterfaceViolation(f"{e.buffer} is not a public global of {comp}")
        size = genv.by_block[bid][2]
        if len(ev.args) != 1 or type(ev.args[0]) is not int:
            raise InterfaceViolation("syscalls take a single count")
        n = ev.args[0]
        if not 0 <= n <= size:
            raise InterfaceViolation("syscall count outside the buffer")
        if ev.name == "read":
            rb = ev.read_bytes
            if (n > READ_CAP or ev.written_bytes or len(rb) != ev.ret or ev.ret > n
                    or any(type(b) is not int or not 0 <= b <= 255 for b in rb)):
                raise InterfaceViolation("inconsistent read event")
            slots = mem.blocks[bid].slots
            for i, b in enumerate(rb):
                slots[i] = b
        else:
            expect = tuple(v & 0xFF for v in mem.blocks[bid].slots[:n])
            if ev.read_bytes or ev.written_bytes != expect or not 0 <= ev.ret <= n:
                raise InterfaceViolation("written bytes do not match the buffer")
        s.f = (comp, e.f)
    else:
        raise InterfaceViolation(f"not an informative event: {e!r}")


def wf_step(s: BtState, e) -> BtState:
    """Functional step: returns a new state, leaving `s` untouched."""
    s2 = s.clone()
    _step(s2, e)
    return s2


@dataclass(frozen=True)
class WfReport:
    ok: bool
    failed_at: int | None = None
    error: str = ""

    def __bool__(self) -> bool:
        return self.ok


def check_wf(it, init: BtState) -> WfReport:
    s = init.clone()
    for i, e in enumerate(it):
        try:
            _step(s, e)
        except WfError as exc:
            return WfReport(False, i, f"{type(exc).__name__}: {exc}")
    return WfReport(True)


def attribute(it, init: BtState) -> list[str]:
    """Compartment responsible for each event (the running one before the step)."""
    s = init.clone()
    out = []
    for e in it:
        out.append(s.f[0])
        _step(s, e)
    return out


# ---------------------------------------------------------------- back-translation

def bt_delta(c: str, d, genv: GlobalEnv):
    t = type(d)
    if t is DeltaStore or t is DeltaBytes:
        info = genv.by_block.get(d.block)
        if info is None or info[0] != c or not info[3]:
            return Skip()
        if t is DeltaStore:
            if type(d.value) is not int:
                return Skip()
            return GStore(info[1], Const(d.off), Const(d.value))
        parts = [GStore(info[1], Const(d.off + i), Const(v))
                 for i, v in enumerate(d.values) if type(v) is int]
        return Seq(tuple(parts)) if parts else Skip()
    return Skip()


def _deltas_code(c: str, deltas, genv: GlobalEnv) -> list:
    out = []
    for d in deltas:
        s = bt_delta(c, d, genv)
        if type(s) is not Skip:
            out.append(s)
    return out


def bt_event(c: str, e, genv: GlobalEnv, returns_value: bool | None = None):
    """Statement replaying `e` from inside compartment `c`.

    For returns, `returns_value` selects the statement form matching the
    enclosing procedure; it defaults to the presence of a value in `e`.
    """
    parts = _deltas_code(c, e.deltas, genv)
    t = type(e)
    if t is ICall:
        ev = e.event
        parts.append(Call(None, Target(ev.callee, ev.proc), tuple(Const(a) for a in ev.args)))
    elif t is IReturn:
        v = e.event.val
        rv = (v is not None) if returns_value is None else returns_value
        parts.append(Return(Const(v if v is not None else 0)) if rv else Return(None))
    elif t is ISys:
        ev = e.event
        parts.append(Call(None, Target(SYS_COMP, ev.name), (GlobalRef(e.buffer), Const(ev.args[0]))))
    return parts[0] if len(parts) == 1 else Seq(tuple(parts))


def counter_name(globals_) -> str:
    names = {g.name for g in globals_}
    name = "__ctr"
    k = 0
    while name in names:
        k += 1
        name = f"__ctr{k}"
    return name


DISPATCH_CHAIN = 4


def dispatcher(ctr: str, codes: list, returns_value: bool):
    """Loop that bumps the counter and runs case `ctr` until the cases run out.

    Cases are selected through a balanced comparison tree over the counter,
    so replaying n events costs O(n log n) comparisons instead of O(n^2).
    """
    load = GLoad(ctr, Const(0))
    bump = GStore(ctr, Const(0), BinOp("+", load, Const(1)))
    done = Return(Const(0)) if returns_value else Return(None)

    def select(lo: int, hi: int):
        if hi - lo <= DISPATCH_CHAIN:
            chain = done
            for n in range(hi - 1, lo - 1, -1):
                chain = If(BinOp("=", load, Const(n)), Seq((bump, codes[n])), chain)
            return chain
        mid = (lo + hi) // 2
        return If(BinOp("<", load, Const(mid)), select(lo, mid), select(mid, hi))

    # counters at or past the last case fall through to `done` in the rightmost leaf
    return While(Const(1), select(0, len(codes)))


def events_by_compartment(env: TraceEnv, it, init: BtState | None = None,
                          max_length: int = MAX_TRACE_LENGTH) -> dict:
    """Informative events grouped by the compartment that performs them."""
    if len(it) > max_length:
        raise TraceTooLong(f"{len(it)} events exceed the limit of {max_length}")
    init = init or bt_init(env)
    report = check_wf(it, init)
    if not report:
        raise NotWellFormed(f"event {report.failed_at}: {report.error}")
    owners = attribute(it, init)
    per: dict = {k: [] for k in env.interface}
    for k, e in zip(owners, it):
        per[k].append(e)
    return per


def _build(env: TraceEnv, k: str, events: list, genv: GlobalEnv) -> CompartmentDecl:
    ci = env.interface[k]
    globals_ = tuple(env.globals.get(k, ()))
    ctr = counter_name(globals_)
    bodies = {}
    for rv in (True, False):
        codes = [bt_event(k, e, genv, rv) for e in events]
        bodies[rv] = dispatcher(ctr, codes, rv)
    procs = {}
    for g, sig in ci.exports.items():
        params = tuple(f"p{i}" for i in range(sig.param_count))
        procs[g] = ProcBody(params, (), bodies[sig.returns_value])
    return CompartmentDecl(
        k, dict(ci.exports), dict(ci.imports), frozenset(ci.syscalls),
        globals_ + (GlobalDecl(ctr, 1, False),), procs)


def back_translate(env: TraceEnv, it, k: str, max_length: int = MAX_TRACE_LENGTH) -> CompartmentDecl:
    if k not in env.interface:
        raise UnknownCompartment(f"unknown compartment {k}")
    per = events_by_compartment(env, it, max_length=max_length)
    return _build(env, k, per[k], env.genv())


def back_translate_all(env: TraceEnv, it, max_length: int = MAX_TRACE_LENGTH) -> Program:
    """Link of the back-translations of every compartment."""
    per = events_by_compartment(env, it, max_length=max_length)
    genv = env.genv()
    comps = {k: _build(env, k, per[k], genv) for k in env.interface}
    return Program(comps, tuple(env.entry))
