"""Target assembly: instruction tuples, target programs and their text format.

Every instruction is a tuple whose first element is the mnemonic:

    ("li", rd, imm)                ("mov", rd, rs)
    ("binop", kind, rd, rs1, rs2)  kind in add sub mul div rem slt seq sne sle and or
    ("load_g", rd, gref, rs_off)   ("store_g", gref, rs_off, rs_val)
    ("load_f", rd, off)            ("store_f", off, rs)       slots of the frame in sp
    ("load_arg", rd, j)            j-th spilled argument of the current call
    ("enter", size)                ("leave",)
    ("jal", flag, (comp|None, proc))
    ("jr", flag, rs)
    ("jcond", rs, label)           ("jmp", label)             ("label", name)
    ("tail", proc)                 jump to the start of a procedure of the same compartment
    ("sys", name)                  ("halt", rs)
    ("la", rd, gref)               ("lcode", rd, comp, proc, index)

A gref is a global name of the current compartment or `COMP.NAME`.
"""
from __future__ import annotations

from dataclasses import dataclass

from .lang import (
    MAX_GLOBAL_SIZE, SYSCALLS, CompInterface, DuplicateName, GlobalDecl,
    NameClash, ProgramSyntaxError, _ident, _sig,
)
from .sexp import SexpError, dumps, parse_int, pos, read_all

REGISTERS = tuple([f"a{i}" for i in range(8)] + [f"t{i}" for i in range(8)] + ["ra", "sp"])
ARG_REGS = REGISTERS[:8]
BINOP_KINDS = {
    "add": "+", "sub": "-", "mul": "*", "div": "/", "rem": "%",
    "slt": "<", "seq": "=", "sne": "!=", "sle": "<=", "and": "and", "or": "or",
}
_REGSET = frozenset(REGISTERS)


@dataclass(frozen=True)
class TCompartment:
    name: str
    interface: CompInterface
    globals: tuple
    procs: dict   # proc -> tuple of instructions


@dataclass(frozen=True)
class TargetProgram:
    compartments: dict
    entry: tuple | None = None


def interface_of_target(tp: TargetProgram) -> dict:
    return {k: c.interface for k, c in tp.compartments.items()}


def target_link(a: TargetProgram, b: TargetProgram) -> TargetProgram:
    clash = set(a.compartments) & set(b.compartments)
    if clash:
        raise NameClash(f"compartments defined twice: {sorted(clash)}")
    if a.entry is not None and b.entry is not None and a.entry != b.entry:
        raise NameClash("both sides declare an entry")
    return TargetProgram({**a.compartments, **b.compartments}, a.entry or b.entry)


def target_split(tp: TargetProgram, ks) -> tuple[TargetProgram, TargetProgram]:
    ks = set(ks)
    inside = {k: c for k, c in tp.compartments.items() if k in ks}
    outside = {k: c for k, c in tp.compartments.items() if k not in ks}
    e = tp.entry
    return (TargetProgram(inside, e if e and e[0] in ks else None),
            TargetProgram(outside, e if e and e[0] not in ks else None))


# ---------------------------------------------------------------- text format

def _flag(v: bool) -> str:
    return "true" if v else "false"


def instr_form(ins: tuple) -> list:
    op = ins[0]
    if op == "jal":
        comp, proc = ins[2]
        return ["jal", _flag(ins[1]), proc if comp is None else f"{comp}.{proc}"]
    if op == "jr":
        return ["jr", _flag(ins[1]), ins[2]]
    if op == "lcode":
        return ["lcode", ins[1], f"{ins[2]}.{ins[3]}", str(ins[4])]
    return [str(x) for x in ins]


def interface_forms(iface: CompInterface) -> list:
    ex = ["exports"] + [[p, str(s.param_count), "ret" if s.returns_value else "void"]
                        for p, s in iface.exports.items()]
    im = ["imports"] + [[c, p, str(s.param_count), "ret" if s.returns_value else "void"]
                        for (c, p), s in iface.imports.items()]
    sy = ["syscalls"] + [s for s in SYSCALLS if s in iface.syscalls]
    return [ex, im, sy]


def target_text(tp: TargetProgram) -> str:
    out: list[str] = []
    for c in tp.compartments.values():
        out.append(f"(tcompartment {c.name}")
        out.append("  " + dumps(["interface"] + interface_forms(c.interface)))
        for g in c.globals:
            out.append("  " + dumps(["global", g.name, str(g.size), "public" if g.public else "private"]))
        for name, code in c.procs.items():
            out.append(f"  (tproc {name}")
            out.extend("    " + dumps(instr_form(i)) for i in code)
            out[-1] += ")"
        out[-1] += ")"
    if tp.entry is not None:
        out.append(f"(entry {tp.entry[0]} {tp.entry[1]})")
    return "\n".join(out) + "\n"


def _err(msg, form):
    return ProgramSyntaxError(msg, *pos(form))


def _reg(tok) -> str:
    if tok not in _REGSET:
        raise _err(f"unknown register {tok!r}", tok)
    return str(tok)


def _gref(tok) -> str:
    s = str(tok)
    for part in s.split(".", 1):
        _ident(part, "global")
    return s


def _bool(tok) -> bool:
    if tok not in ("true", "false"):
        raise _err("expected true or false", tok)
    return tok == "true"


def _int(tok) -> int:
    return parse_int(str(tok), *pos(tok))


_SHAPES = {
    "li": ("reg", "int"), "mov": ("reg", "reg"),
    "load_g": ("reg", "gref", "reg"), "store_g": ("gref", "reg", "reg"),
    "load_f": ("reg", "nat"), "store_f": ("nat", "reg"),
    "load_arg": ("reg", "nat"), "enter": ("nat",), "leave": (),
    "jcond": ("reg", "name"), "jmp": ("name",), "label": ("name",),
    "tail": ("name",), "halt": ("reg",), "la": ("reg", "gref"),
}


def parse_instr(f) -> tuple:
    if not isinstance(f, list) or not f or isinstance(f[0], list):
        raise _err(f"bad instruction {f!r}", f)
    op = str(f[0])
    args = f[1:]
    if op == "binop":
        if len(args) != 4 or args[0] not in BINOP_KINDS:
            raise _err("binop is (binop KIND rd rs1 rs2)", f)
        return ("binop", str(args[0]), _reg(args[1]), _reg(args[2]), _reg(args[3]))
    if op == "jal":
        if len(args) != 2:
            raise _err("jal is (jal FLAG TARGET)", f)
        tgt = str(args[1])
        if "." in tgt:
            comp, _, proc = tgt.partition(".")
            target = (_ident(comp, "compartment"), _ident(proc, "procedure"))
        else:
            target = (None, _ident(tgt, "procedure"))
        return ("jal", _bool(args[0]), target)
    if op == "jr":
        if len(args) != 2:
            raise _err("jr is (jr FLAG rs)", f)
        return ("jr", _bool(args[0]), _reg(args[1]))
    if op == "sys":
        if len(args) != 1 or args[0] not in SYSCALLS:
            raise _err("sys is (sys read|write)", f)
        return ("sys", str(args[0]))
    if op == "lcode":
        if len(args) != 3 or "." not in args[1]:
            raise _err("lcode is (lcode rd COMP.PROC INDEX)", f)
        comp, _, proc = str(args[1]).partition(".")
        return ("lcode", _reg(args[0]), comp, proc, _int(args[2]))
    shape = _SHAPES.get(op)
    if shape is None:
        raise _err(f"unknown mnemonic {op}", f)
    if len(args) != len(shape):
        raise _err(f"{op} takes {len(shape)} operands", f)
    out = [op]
    for kind, tok in zip(shape, args):
        if isinstance(tok, list):
            raise _err(f"unexpected list in {op}", tok)
        if kind == "reg":
            out.append(_reg(tok))
        elif kind == "int":
            out.append(_int(tok))
        elif kind == "nat":
            v = _int(tok)
            if v < 0:
                raise _err("expected a non-negative integer", tok)
            out.append(v)
        elif kind == "gref":
            out.append(_gref(tok))
        else:
            out.append(_ident(tok, "label"))
    return tuple(out)


def parse_interface_forms(forms, where) -> CompInterface:
    exports: dict = {}
    imports: dict = {}
    syscalls: set = set()
    for sub in forms:
        h = str(sub[0]) if isinstance(sub, list) and sub else None
        if h == "exports":
            for e in sub[1:]:
                if not isinstance(e, list) or len(e) != 3:
                    raise _err("export entry is (PROC ARITY ret|void)", e)
                name = _ident(e[0], "procedure")
                if name in exports:
                    raise _err(f"duplicate export {name}", e)
                exports[name] = _sig(e[1], e[2])
        elif h == "imports":
            for e in sub[1:]:
                if not isinstance(e, list) or len(e) != 4:
                    raise _err("import entry is (COMP PROC ARITY ret|void)", e)
                imports[(_ident(e[0], "compartment"), _ident(e[1], "procedure"))] = _sig(e[2], e[3])
        elif h == "syscalls":
            for s in sub[1:]:
                if s not in SYSCALLS:
                    raise _err(f"unknown syscall {s}", s)
                syscalls.add(str(s))
        else:
            raise _err("interface holds exports, imports and syscalls", sub if isinstance(sub, list) else where)
    return CompInterface(exports, imports, frozenset(syscalls))


def parse_global(sub) -> GlobalDecl:
    if len(sub) != 4 or sub[3] not in ("public", "private"):
        raise _err("global is (global NAME SIZE public|private)", sub)
    size = _int(sub[2])
    if not 1 <= size <= MAX_GLOBAL_SIZE:
        raise _err(f"global size {size} out of range", sub[2])
    return GlobalDecl(_ident(sub[1], "global"), size, sub[3] == "public")


def parse_target(text: str) -> TargetProgram:
    try:
        forms = read_all(text)
    except SexpError as e:
        raise ProgramSyntaxError(str(e).split(": ", 1)[-1], e.line, e.col) from None
    comps: dict = {}
    entry = None
    for f in forms:
        h = str(f[0]) if isinstance(f, list) and f else None
        if h == "tcompartment":
            c = _parse_tcompartment(f)
            if c.name in comps:
                raise DuplicateName(f"duplicate compartment {c.name}", *pos(f))
            comps[c.name] = c
        elif h == "entry":
            if len(f) != 3:
                raise _err("entry is (entry COMP PROC)", f)
            entry = (_ident(f[1], "compartment"), _ident(f[2], "procedure"))
        else:
            raise _err("expected tcompartment or entry", f)
    return TargetProgram(comps, entry)


def _parse_tcompartment(f) -> TCompartment:
    try:
        if len(f) < 2:
            raise _err("tcompartment needs a name", f)
        name = _ident(f[1], "compartment")
        iface = CompInterface({}, {}, frozenset())
        globals_: list = []
        procs: dict = {}
        for sub in f[2:]:
            h = str(sub[0]) if isinstance(sub, list) and sub else None
            if h == "interface":
                iface = parse_interface_forms(sub[1:], sub)
            elif h == "global":
                g = parse_global(sub)
                if any(x.name == g.name for x in globals_):
                    raise DuplicateName(f"duplicate global {g.name}", *pos(sub))
                globals_.append(g)
            elif h == "tproc":
                pname = _ident(sub[1], "procedure")
                if pname in procs:
                    raise DuplicateName(f"duplicate procedure {pname}", *pos(sub))
                procs[pname] = tuple(parse_instr(i) for i in sub[2:])
            else:
                raise _err("unexpected form in tcompartment", sub)
        return TCompartment(name, iface, tuple(globals_), procs)
    except SexpError as e:
        raise ProgramSyntaxError(str(e).split(": ", 1)[-1], e.line, e.col) from None


def is_target_text(text: str) -> bool:
    return "(tcompartment" in text

