"""Compartment-aware machine with a cross-compartment shadow stack.

`tstep` mutates a `MachineState` in place. Every cross-compartment transfer
goes through a flagged `jal`/`jr` that checks the interfaces, pushes or pops
a shadow frame, seals the caller's frame read-only and invalidates registers.
Global stores are accumulated as memory deltas and attached to the next
informative event.
"""
from __future__ import annotations

from dataclasses import dataclass

from .lang import ArithUB, Signature, eval_binop
from .memory import (
    HALT, UNDEF, CodeAddr, GlobalEnv, MemError, Memory, Perm, Ptr,
)
from .target import ARG_REGS, BINOP_KINDS, REGISTERS, TargetProgram
from .trace import (
    READ_CAP, CallEvent, DeltaStore, EventLimit, Final, ICall, IoScript,
    IReturn, ISys, OutOfFuel, ReturnEvent, Stuck, SyscallEvent, UndefEvent,
)

RUNNING, FINAL, STUCK = "running", "final", "stuck"


class NoEntry(Exception):
    pass


class _Fault(Exception):
    pass


@dataclass(frozen=True, slots=True)
class ShadowFrame:
    ret_addr: CodeAddr
    saved_sp: object
    sig: Signature


class _Loaded:
    """Per-program tables: resolved code, label maps and the global layout."""

    def __init__(self, tp: TargetProgram):
        self.program = tp
        self.genv = GlobalEnv({k: c.globals for k, c in tp.compartments.items()})
        self.code: dict[tuple[str, str], tuple] = {}
        for k, c in tp.compartments.items():
            for name, instrs in c.procs.items():
                self.code[(k, name)] = _resolve(instrs)
        self.public = {k: tuple(self.genv.public_blocks(k)) for k in tp.compartments}

    def gblock(self, cur: str, gref: str) -> int:
        if "." in gref:
            comp, _, name = gref.partition(".")
        else:
            comp, name = cur, gref
        bid = self.genv.by_name.get((comp, name))
        if bid is None:
            raise _Fault(f"unknown global {gref}")
        return bid


def _resolve(instrs: tuple) -> tuple:
    labels = {ins[1]: i for i, ins in enumerate(instrs) if ins[0] == "label"}
    out = []
    for ins in instrs:
        op = ins[0]
        if op == "jcond" or op == "jmp":
            lab = ins[-1]
            idx = labels.get(lab)
            out.append(ins[:-1] + ((-1, lab) if idx is None else (idx,)))
        elif op == "binop":
            out.append(("binop", BINOP_KINDS[ins[1]], ins[2], ins[3], ins[4]))
        else:
            out.append(ins)
    return tuple(out)


class MachineState:
    __slots__ = ("ctx", "cur", "proc", "pc", "code", "regs", "mem", "shadow", "frames",
                 "status", "value", "offender", "reason", "delta")

    def clone(self) -> "MachineState":
        s = MachineState.__new__(MachineState)
        for name in self.__slots__:
            setattr(s, name, getattr(self, name))
        s.regs = dict(self.regs)
        s.mem = self.mem.copy()
        s.shadow = list(self.shadow)
        s.frames = list(self.frames)
        s.delta = list(self.delta)
        return s

    def outcome(self):
        if self.status == FINAL:
            return Final(self.value)
        if self.status == STUCK:
            return Stuck(self.offender, self.reason)
        return None


def tinit(tp: TargetProgram, audit: list | None = None) -> MachineState:
    if tp.entry is None:
        raise NoEntry("target program has no entry")
    ctx = _Loaded(tp)
    comp, proc = tp.entry
    if (comp, proc) not in ctx.code:
        raise NoEntry(f"entry {comp}.{proc} does not exist")
    mem = Memory(audit)
    ctx.genv.populate(mem)
    s = MachineState.__new__(MachineState)
    s.ctx = ctx
    s.cur = comp
    s.proc = proc
    s.pc = 0
    s.code = ctx.code[(comp, proc)]
    s.regs = dict.fromkeys(REGISTERS, UNDEF)
    s.regs["ra"] = HALT
    s.mem = mem
    s.shadow = []
    s.frames = []
    s.status = RUNNING
    s.value = None
    s.offender = None
    s.reason = ""
    s.delta = []
    return s


def _goto(s: MachineState, comp: str, proc: str, idx: int) -> None:
    code = s.ctx.code.get((comp, proc))
    if code is None:
        raise _Fault(f"no procedure {comp}.{proc}")
    s.cur = comp
    s.proc = proc
    s.code = code
    s.pc = idx


def _int(v) -> int:
    if type(v) is not int:
        raise _Fault(f"expected a scalar, got {v!r}")
    return v


def _frame(s: MachineState) -> Ptr:
    sp = s.regs["sp"]
    if type(sp) is not Ptr:
        raise _Fault("sp does not hold a frame")
    return sp


def tstep(s: MachineState, io: IoScript):
    """One instruction. Returns (state, event, informative event, io)."""
    if s.status != RUNNING:
        raise ValueError("machine is not running")
    cur = s.cur
    try:
        return _exec(s, io)
    except (_Fault, MemError, ArithUB) as exc:
        s.status = STUCK
        s.offender = cur
        s.reason = str(exc)
        return s, UndefEvent(cur), None, io


def _exec(s: MachineState, io: IoScript):
    pc = s.pc
    code = s.code
    if not 0 <= pc < len(code):
        raise _Fault(f"pc {pc} outside {s.cur}.{s.proc}")
    ins = code[pc]
    op = ins[0]
    regs = s.regs
    s.pc = pc + 1
    if op == "load_f":
        sp = _frame(s)
        regs[ins[1]] = s.mem.load(s.cur, sp.block, sp.offset + ins[2])
    elif op == "store_f":
        sp = _frame(s)
        s.mem.store(s.cur, sp.block, sp.offset + ins[1], regs[ins[2]])
    elif op == "li":
        regs[ins[1]] = ins[2]
    elif op == "binop":
        regs[ins[2]] = eval_binop(ins[1], _int(regs[ins[3]]), _int(regs[ins[4]]))
    elif op == "jcond":
        if _int(regs[ins[1]]) != 0:
            s.pc = _label(ins[2])
    elif op == "label":
        pass
    elif op == "jmp":
        s.pc = _label(ins[1])
    elif op == "load_g":
        bid = s.ctx.gblock(s.cur, ins[2])
        regs[ins[1]] = s.mem.load(s.cur, bid, _int(regs[ins[3]]))
    elif op == "store_g":
        bid = s.ctx.gblock(s.cur, ins[1])
        off = _int(regs[ins[2]])
        val = regs[ins[3]]
        s.mem.store(s.cur, bid, off, val)
        s.delta.append(DeltaStore(bid, off, val, s.cur))
    elif op == "mov":
        regs[ins[1]] = regs[ins[2]]
    elif op == "jal":
        return _jal(s, ins, io)
    elif op == "jr":
        return _jr(s, ins, io)
    elif op == "enter":
        size = ins[1]
        if size < 1:
            raise _Fault("frame needs a back-link slot")
        bid = s.mem.alloc(s.cur, size)
        s.mem.store(s.cur, bid, 0, regs["sp"])
        regs["sp"] = Ptr(bid, 0)
    elif op == "leave":
        sp = _frame(s)
        blk = s.mem.blocks.get(sp.block)
        if blk is not None and blk.perm is Perm.RO:
            raise _Fault("cannot release a sealed frame")
        back = s.mem.load(s.cur, sp.block, sp.offset)
        s.mem.free(s.cur, sp.block)
        regs["sp"] = back
    elif op == "load_arg":
        regs[ins[1]] = _load_arg(s, ins[2])
    elif op == "la":
        regs[ins[1]] = Ptr(s.ctx.gblock(s.cur, ins[2]), 0)
    elif op == "lcode":
        regs[ins[1]] = CodeAddr(ins[2], ins[3], ins[4])
    elif op == "tail":
        _goto(s, s.cur, ins[1], 0)
    elif op == "sys":
        return _sys(s, ins[1], io)
    elif op == "halt":
        s.status = FINAL
        s.value = _int(regs[ins[1]])
    else:
        raise _Fault(f"unknown instruction {ins!r}")
    return s, None, None, io


def _label(target) -> int:
    if type(target) is tuple:
        raise _Fault(f"unknown label {target[1]}")
    return target


def _load_arg(s: MachineState, j: int):
    sp = _frame(s)
    back = s.mem.load(s.cur, sp.block, sp.offset)
    if type(back) is not Ptr:
        raise _Fault("no caller frame")
    owner = s.mem.owner(back.block)
    if owner == s.cur:
        return s.mem.load(s.cur, back.block, back.offset + 1 + j)
    if not s.frames or s.frames[-1][0] != back.block:
        raise _Fault("argument frame is not the one sealed by the current call")
    if j >= s.shadow[-1].sig.param_count - len(ARG_REGS):
        raise _Fault(f"no spilled argument {j}")
    return s.mem.read_privileged(s.cur, back.block, back.offset + 1 + j)


def _jal(s: MachineState, ins: tuple, io: IoScript):
    flag, (tcomp, tproc) = ins[1], ins[2]
    cur = s.cur
    regs = s.regs
    ret = CodeAddr(cur, s.proc, s.pc)
    if tcomp is None or tcomp == cur:
        _goto(s, cur, tproc, 0)
        regs["ra"] = ret
        return s, None, None, io
    if not flag:
        raise _Fault(f"unflagged jump from {cur} into {tcomp}")
    prog = s.ctx.program
    callee = prog.compartments.get(tcomp)
    sig = callee.interface.exports.get(tproc) if callee is not None else None
    if sig is None:
        raise _Fault(f"{tcomp}.{tproc} is not exported")
    if prog.compartments[cur].interface.imports.get((tcomp, tproc)) != sig:
        raise _Fault(f"{cur} does not import {tcomp}.{tproc}")
    n = sig.param_count
    in_regs = min(n, len(ARG_REGS))
    args = [_int(regs[ARG_REGS[i]]) for i in range(in_regs)]
    sp = regs["sp"]
    sealed = None
    if type(sp) is Ptr and s.mem.owner(sp.block) == cur and s.mem.is_live(sp.block):
        sealed = sp.block
    if n > in_regs:
        if sealed is None:
            raise _Fault("spilled arguments need a caller frame")
        for k in range(n - in_regs):
            args.append(_int(s.mem.load(cur, sp.block, sp.offset + 1 + k)))
    if sealed is not None:
        s.mem.set_perm(sealed, Perm.RO)
    s.shadow.append(ShadowFrame(ret, sp, sig))
    s.frames.append((sealed, cur))
    for r in REGISTERS:
        regs[r] = UNDEF
    for i in range(in_regs):
        regs[ARG_REGS[i]] = args[i]
    regs["sp"] = sp
    regs["ra"] = ret
    event = CallEvent(cur, tcomp, tproc, tuple(args))
    ievent = ICall(s.proc, event, sig, tuple(s.delta))
    s.delta = []
    _goto(s, tcomp, tproc, 0)
    return s, event, ievent, io


def _jr(s: MachineState, ins: tuple, io: IoScript):
    flag = ins[1]
    target = s.regs[ins[2]]
    cur = s.cur
    regs = s.regs
    if type(target) is not CodeAddr:
        raise _Fault("jump target is not a code address")
    if target == HALT:
        if s.shadow:
            raise _Fault("halt address used inside a cross-compartment call")
        s.status = FINAL
        s.value = _int(regs["a0"])
        return s, None, None, io
    if target.comp == cur:
        _goto(s, cur, target.proc, target.index)
        return s, None, None, io
    if not flag:
        raise _Fault(f"unflagged jump from {cur} into {target.comp}")
    if not s.shadow:
        raise _Fault("return with an empty shadow stack")
    top = s.shadow[-1]
    if target != top.ret_addr:
        raise _Fault("return address does not match the shadow stack")
    if regs["sp"] != top.saved_sp:
        raise _Fault("stack pointer not restored")
    val = None
    if top.sig.returns_value:
        val = _int(regs["a0"])
    s.shadow.pop()
    sealed, _ = s.frames.pop()
    if sealed is not None and s.mem.is_live(sealed):
        s.mem.set_perm(sealed, Perm.RW)
    sp = regs["sp"]
    for r in REGISTERS:
        regs[r] = UNDEF
    regs["sp"] = sp
    if val is not None:
        regs["a0"] = val
    event = ReturnEvent(cur, target.comp, val)
    ievent = IReturn(s.proc, event, tuple(s.delta))
    s.delta = []
    _goto(s, target.comp, target.proc, target.index)
    return s, event, ievent, io


def _sys(s: MachineState, name: str, io: IoScript):
    cur = s.cur
    regs = s.regs
    ctx = s.ctx
    if name not in ctx.program.compartments[cur].interface.syscalls:
        raise _Fault(f"{cur} may not use {name}")
    buf = regs["a0"]
    if type(buf) is not Ptr or buf.offset != 0:
        raise _Fault("syscall buffer must point at a global")
    publics = ctx.public[cur]
    if buf.block not in publics:
        raise _Fault("syscall buffer must be a public global of the caller")
    n = _int(regs["a1"])
    mem = s.mem
    for bid in publics:
        for v in mem.blocks[bid].slots:
            if type(v) is not int:
                raise _Fault("public globals must hold scalars at a syscall")
    size = mem.size(buf.block)
    if not 0 <= n <= size:
        raise _Fault("syscall count outside the buffer")
    if name == "read":
        if n > READ_CAP:
            raise _Fault("read count above cap")
        chunk, io = io.next_read()
        data = tuple(chunk[:n])
        for i, b in enumerate(data):
            mem.store(cur, buf.block, i, b)
        ret = len(data)
        event = SyscallEvent(cur, "read", (n,), data, ret, ())
    else:
        vals = [mem.load(cur, buf.block, i) for i in range(n)]
        ack, io = io.next_ack()
        ret = min(max(ack, 0), n)
        event = SyscallEvent(cur, "write", (n,), (), ret, tuple(v & 0xFF for v in vals))
    regs["a0"] = ret
    gname = ctx.genv.by_block[buf.block][1]
    ievent = ISys(s.proc, event, gname, tuple(s.delta))
    s.delta = []
    return s, event, ievent, io


def trun(tp: TargetProgram, io: IoScript = IoScript(), fuel: int = 50_000_000,
         max_events: int | None = None, audit: list | None = None):
    """Run a target program. Returns (trace, informative trace, outcome)."""
    trace: list = []
    itrace: list = []
    if fuel <= 0:
        return trace, itrace, OutOfFuel()
    s = tinit(tp, audit)
    if max_events is not None and max_events <= 0:
        return trace, itrace, EventLimit()
    while fuel > 0:
        if s.status != RUNNING:
            return trace, itrace, s.outcome()
        fuel -= 1
        s, ev, iev, io = tstep(s, io)
        if ev is not None:
            trace.append(ev)
            if iev is not None:
                itrace.append(iev)
            if s.status != STUCK and max_events is not None and len(trace) >= max_events:
                return trace, itrace, EventLimit()
    if s.status != RUNNING:
        return trace, itrace, s.outcome()
    return trace, itrace, OutOfFuel()
