"""Lowering from source programs to compartment-aware target assembly.

Pass 1 flattens statements into three-address code over named variables and
per-statement temporaries. Pass 2 assigns every variable a frame slot and
selects instructions, using t0/t1 as scratch registers.

Frame layout of a procedure (slot indices relative to sp):

    0            back link to the caller's sp
    1 .. S       outgoing spilled arguments (S = widest call minus 8)
    S + 1        saved return address
    then         parameters, locals, temporaries
"""
from __future__ import annotations

from .lang import (
    REG_ARGS, Assign, BinOp, Call, CompartmentDecl, Const, GLoad, GlobalRef,
    GStore, If, LangError, Local, Program, Return, Seq, Skip, UnOp, While,
    check_interfaces, interface_of_compartment, signature_of,
)
from .target import ARG_REGS, TargetProgram, TCompartment, target_link

MAX_LABELS = 1 << 24
MAX_FRAME = 1 << 20

_BINOP_MNEMONIC = {
    "+": "add", "-": "sub", "*": "mul", "/": "div", "%": "rem",
    "<": "slt", "=": "seq", "!=": "sne", "<=": "sle", "and": "and", "or": "or",
}


class CompileError(LangError):
    pass


class TooManyParams(CompileError):
    pass


class UnsupportedConstruct(CompileError):
    pass


# ---------------------------------------------------------------- pass 1

class _Flattener:
    """Three-address code. Operands are ("const", v) or ("var", name)."""

    def __init__(self):
        self.code: list[tuple] = []
        self.labels = 0
        self.temps = 0
        self.max_temps = 0

    def label(self) -> str:
        self.labels += 1
        if self.labels > MAX_LABELS:
            raise UnsupportedConstruct("label space exhausted")
        return f"L{self.labels}"

    def temp(self) -> tuple:
        name = f"%t{self.temps}"
        self.temps += 1
        self.max_temps = max(self.max_temps, self.temps)
        return ("var", name)

    def expr(self, e) -> tuple:
        t = type(e)
        if t is Const:
            return ("const", e.value)
        if t is Local:
            return ("var", e.name)
        if t is BinOp:
            a = self.expr(e.left)
            b = self.expr(e.right)
            d = self.temp()
            self.code.append(("bin", e.op, d, a, b))
            return d
        if t is UnOp:
            a = self.expr(e.arg)
            d = self.temp()
            self.code.append(("un", e.op, d, a))
            return d
        if t is GLoad:
            off = self.expr(e.off)
            d = self.temp()
            self.code.append(("gload", d, e.glob, off))
            return d
        raise UnsupportedConstruct(f"cannot compile expression {e!r}")

    def stmt(self, s) -> None:
        # explicit work list keeps deep else-if chains off the Python stack
        work = [s]
        while work:
            s = work.pop()
            if type(s) is str:
                self.code.append(("label", s))
                continue
            if type(s) is tuple:
                self.code.append(s)
                continue
            self.temps = 0
            t = type(s)
            if t is Skip:
                continue
            if t is Seq:
                work.extend(reversed(s.stmts))
            elif t is Assign:
                self.code.append(("copy", ("var", s.name), self.expr(s.expr)))
            elif t is GStore:
                off = self.expr(s.off)
                val = self.expr(s.val)
                self.code.append(("gstore", s.glob, off, val))
            elif t is If:
                c = self.expr(s.cond)
                l_else, l_end = self.label(), self.label()
                self.code.append(("jz", c, l_else))
                work.extend([l_end, s.els, l_else, ("jmp", l_end), s.then])
            elif t is While:
                l_top, l_end = self.label(), self.label()
                self.code.append(("label", l_top))
                c = self.expr(s.cond)
                self.code.append(("jz", c, l_end))
                work.extend([l_end, ("jmp", l_top), s.body])
            elif t is Call:
                if s.target.is_sys:
                    buf = s.args[0]
                    assert type(buf) is GlobalRef
                    count = self.expr(s.args[1])
                    self.code.append(("sys", s.dest, s.target.proc, buf.name, count))
                else:
                    args = [self.expr(a) for a in s.args]
                    self.code.append(("call", s.dest, s.target, args))
            elif t is Return:
                self.code.append(("ret", None if s.expr is None else self.expr(s.expr)))
            else:
                raise UnsupportedConstruct(f"cannot compile statement {s!r}")


# ---------------------------------------------------------------- pass 2

def _select(comp: CompartmentDecl, name: str, tac: list, max_temps: int, spill: bool) -> tuple:
    body = comp.procs[name]
    params = body.params
    if len(params) > REG_ARGS and not spill:
        raise TooManyParams(f"{comp.name}.{name} has {len(params)} parameters")
    widest = 0
    for ins in tac:
        if ins[0] == "call":
            widest = max(widest, len(ins[3]))
    if widest > REG_ARGS and not spill:
        raise TooManyParams(f"{comp.name}.{name} makes a call with {widest} arguments")
    n_spill = max(0, widest - REG_ARGS)
    ra_slot = 1 + n_spill
    slot: dict[str, int] = {}
    nxt = ra_slot + 1
    for v in (*params, *body.locals, *(f"%t{i}" for i in range(max_temps))):
        slot[v] = nxt
        nxt += 1
    if nxt > MAX_FRAME:
        raise UnsupportedConstruct(f"frame of {comp.name}.{name} too large")

    out: list[tuple] = [("enter", nxt), ("store_f", ra_slot, "ra")]
    for j, p in enumerate(params):
        if j < REG_ARGS:
            out.append(("store_f", slot[p], ARG_REGS[j]))
        else:
            out.append(("load_arg", "t0", j - REG_ARGS))
            out.append(("store_f", slot[p], "t0"))
    if body.locals:
        out.append(("li", "t0", 0))
        for v in body.locals:
            out.append(("store_f", slot[v], "t0"))

    def load(reg: str, opnd: tuple) -> None:
        if opnd[0] == "const":
            out.append(("li", reg, opnd[1]))
        else:
            out.append(("load_f", reg, slot[opnd[1]]))

    def epilogue() -> None:
        out.append(("load_f", "ra", ra_slot))
        out.append(("leave",))
        out.append(("jr", True, "ra"))

    for ins in tac:
        op = ins[0]
        if op == "copy":
            load("t0", ins[2])
            out.append(("store_f", slot[ins[1][1]], "t0"))
        elif op == "bin":
            load("t0", ins[3])
            load("t1", ins[4])
            out.append(("binop", _BINOP_MNEMONIC[ins[1]], "t0", "t0", "t1"))
            out.append(("store_f", slot[ins[2][1]], "t0"))
        elif op == "un":
            load("t0", ins[3])
            out.append(("li", "t1", 0))
            if ins[1] == "not":
                out.append(("binop", "seq", "t0", "t0", "t1"))
            else:
                out.append(("binop", "sub", "t0", "t1", "t0"))
            out.append(("store_f", slot[ins[2][1]], "t0"))
        elif op == "gload":
            load("t1", ins[3])
            out.append(("load_g", "t0", ins[2], "t1"))
            out.append(("store_f", slot[ins[1][1]], "t0"))
        elif op == "gstore":
            load("t0", ins[2])
            load("t1", ins[3])
            out.append(("store_g", ins[1], "t0", "t1"))
        elif op == "label":
            out.append(ins)
        elif op == "jmp":
            out.append(ins)
        elif op == "jz":
            load("t0", ins[1])
            out.append(("li", "t1", 0))
            out.append(("binop", "seq", "t0", "t0", "t1"))
            out.append(("jcond", "t0", ins[2]))
        elif op == "call":
            _, dest, tgt, args = ins
            for j, a in enumerate(args):
                if j < REG_ARGS:
                    load(ARG_REGS[j], a)
            for j, a in enumerate(args[REG_ARGS:]):
                load("t0", a)
                out.append(("store_f", 1 + j, "t0"))
            if tgt.comp is None:
                out.append(("jal", False, (None, tgt.proc)))
            else:
                out.append(("jal", True, (tgt.comp, tgt.proc)))
            if dest is not None:
                out.append(("store_f", slot[dest], "a0"))
        elif op == "sys":
            _, dest, sname, gname, count = ins
            out.append(("la", "a0", gname))
            load("a1", count)
            out.append(("sys", sname))
            if dest is not None:
                out.append(("store_f", slot[dest], "a0"))
        elif op == "ret":
            if ins[1] is not None:
                load("a0", ins[1])
            epilogue()
        else:
            raise UnsupportedConstruct(f"unknown three-address op {op}")
    if not signature_of(comp, name).returns_value:
        # void procedures may finish by falling off the end of the body
        epilogue()
    return tuple(out)


def compile_proc(comp: CompartmentDecl, name: str, spill: bool = True) -> tuple:
    fl = _Flattener()
    fl.stmt(comp.procs[name].body)
    return _select(comp, name, fl.code, fl.max_temps, spill)


def compile_compartment(c: CompartmentDecl, spill: bool = True) -> TCompartment:
    procs = {name: compile_proc(c, name, spill) for name in c.procs}
    return TCompartment(c.name, interface_of_compartment(c), tuple(c.globals), procs)


def compile_program(p: Program, spill: bool = True, check: bool = True) -> TargetProgram:
    if check:
        check_interfaces(p)
    comps = {k: compile_compartment(c, spill) for k, c in p.compartments.items()}
    return TargetProgram(comps, p.main)


def compile_separately(p: Program, ks, spill: bool = True) -> TargetProgram:
    """Compile the compartments in `ks` and the rest independently, then target-link."""
    ks = set(ks)
    a = TargetProgram({k: compile_compartment(c, spill) for k, c in p.compartments.items() if k in ks},
                      p.main if p.main and p.main[0] in ks else None)
    b = TargetProgram({k: compile_compartment(c, spill) for k, c in p.compartments.items() if k not in ks},
                      p.main if p.main and p.main[0] not in ks else None)
    return target_link(a, b)
