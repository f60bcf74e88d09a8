"""Events, traces, informative events and the IO oracle.

Plain events are what both semantics emit. Informative events add the
procedure name, the call signature and the chronological list of global
memory deltas observed since the previous event.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .lang import Signature
from .memory import GlobalEnv, parse_value, value_str

READ_CAP = 4096


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


# ---------------------------------------------------------------- events

@dataclass(frozen=True, slots=True)
class CallEvent:
    caller: str
    callee: str
    proc: str
    args: tuple


@dataclass(frozen=True, slots=True)
class ReturnEvent:
    callee: str
    caller: str
    val: int | None


@dataclass(frozen=True, slots=True)
class SyscallEvent:
    comp: str
    name: str
    args: tuple
    read_bytes: tuple
    ret: int
    written_bytes: tuple


@dataclass(frozen=True, slots=True)
class UndefEvent:
    comp: str


Event = CallEvent | ReturnEvent | SyscallEvent | UndefEvent


def _check_scalars(vals) -> None:
    for v in vals:
        if type(v) is not int:
            raise TypeError(f"event payload must be scalar, got {v!r}")


def make_call(caller: str, callee: str, proc: str, args) -> CallEvent:
    args = tuple(args)
    _check_scalars(args)
    return CallEvent(caller, callee, proc, args)


def make_return(callee: str, caller: str, val) -> ReturnEvent:
    if val is not None:
        _check_scalars((val,))
    return ReturnEvent(callee, caller, val)


# ---------------------------------------------------------------- deltas

@dataclass(frozen=True, slots=True)
class DeltaStore:
    block: int
    off: int
    value: object
    comp: str


@dataclass(frozen=True, slots=True)
class DeltaBytes:
    block: int
    off: int
    values: tuple
    comp: str


@dataclass(frozen=True, slots=True)
class DeltaAlloc:
    comp: str
    size: int


@dataclass(frozen=True, slots=True)
class DeltaFree:
    block: int
    comp: str


MemDelta = DeltaStore | DeltaBytes | DeltaAlloc | DeltaFree


# ---------------------------------------------------------------- informative events

@dataclass(frozen=True, slots=True)
class ICall:
    f: str
    event: CallEvent
    sig: Signature
    deltas: tuple = ()

    @property
    def target(self) -> tuple[str, str]:
        return (self.event.callee, self.event.proc)

    @property
    def args(self) -> tuple:
        return self.event.args


@dataclass(frozen=True, slots=True)
class IReturn:
    f: str
    event: ReturnEvent
    deltas: tuple = ()

    @property
    def value(self):
        return self.event.val


@dataclass(frozen=True, slots=True)
class ISys:
    f: str
    event: SyscallEvent
    buffer: str
    deltas: tuple = ()

    @property
    def name(self) -> str:
        return self.event.name

    @property
    def args(self) -> tuple:
        return self.event.args


InformativeEvent = ICall | IReturn | ISys


def project(it) -> list:
    return [e.event for e in it]


# ---------------------------------------------------------------- relations

def prefix_rel(m1, m2) -> bool:
    """m1 is m2 exactly (Undef-free) or an Undef-terminated prefix of m2."""
    if m1 and type(m1[-1]) is UndefEvent:
        m0 = m1[:-1]
        return len(m0) <= len(m2) and list(m0) == list(m2[: len(m0)])
    if any(type(e) is UndefEvent for e in m1):
        return False
    return list(m1) == list(m2)


def blame_rel(m1, m2, good) -> bool:
    if not prefix_rel(m1, m2):
        return False
    if m1 and type(m1[-1]) is UndefEvent:
        return m1[-1].comp in good
    return True


def well_bracketed(m) -> bool:
    """Every Return answers the innermost open cross-compartment Call."""
    open_calls: list[tuple[str, str]] = []
    for e in m:
        t = type(e)
        if t is CallEvent:
            open_calls.append((e.caller, e.callee))
        elif t is ReturnEvent:
            if not open_calls or open_calls[-1] != (e.caller, e.callee):
                return False
            open_calls.pop()
    return True


def undef_terminal(m) -> bool:
    return all(type(e) is not UndefEvent for e in m[:-1])


# ---------------------------------------------------------------- IO oracle

@dataclass(frozen=True)
class IoScript:
    read_chunks: tuple = ()
    write_acks: tuple = ()
    read_pos: int = 0
    ack_pos: int = 0

    def next_read(self) -> tuple[tuple, "IoScript"]:
        if self.read_pos >= len(self.read_chunks):
            return (), self
        return self.read_chunks[self.read_pos], IoScript(
            self.read_chunks, self.write_acks, self.read_pos + 1, self.ack_pos)

    def next_ack(self) -> tuple[int, "IoScript"]:
        if self.ack_pos >= len(self.write_acks):
            return 0, self
        return self.write_acks[self.ack_pos], IoScript(
            self.read_chunks, self.write_acks, self.read_pos, self.ack_pos + 1)


def io_for_trace(m) -> IoScript:
    """The script under which the syscalls of `m` return what they recorded."""
    reads, acks = [], []
    for e in m:
        if type(e) is SyscallEvent:
            if e.name == "read":
                reads.append(tuple(e.read_bytes))
            else:
                acks.append(e.ret)
    return IoScript(tuple(reads), tuple(acks))


def serialize_io(io: IoScript) -> str:
    lines = ["READ " + " ".join(map(str, c)) if c else "READ" for c in io.read_chunks]
    lines += [f"WRITEACK {a}" for a in io.write_acks]
    return "".join(x + "\n" for x in lines)


def parse_io(text: str) -> IoScript:
    reads, acks = [], []
    for n, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "READ":
                chunk = tuple(int(x) for x in parts[1:])
                if any(not 0 <= b <= 255 for b in chunk):
                    raise ValueError("byte out of range")
                reads.append(chunk)
            elif parts[0] == "WRITEACK" and len(parts) == 2:
                acks.append(int(parts[1]))
            else:
                raise ValueError("unknown directive")
        except ValueError as e:
            raise ParseError(f"{e}: {raw!r}", n) from None
    return IoScript(tuple(reads), tuple(acks))


# ---------------------------------------------------------------- wire format

def _ints(vals) -> str:
    return ",".join(str(v) for v in vals)


def event_line(e) -> str:
    t = type(e)
    if t is CallEvent:
        return f"CALL {e.caller} {e.callee}.{e.proc} ({_ints(e.args)})"
    if t is ReturnEvent:
        return f"RET {e.callee} {e.caller} {'void' if e.val is None else e.val}"
    if t is SyscallEvent:
        return (f"SYS {e.comp} {e.name} ({_ints(e.args)}) [{_ints(e.read_bytes)}]"
                f" -> {e.ret} [{_ints(e.written_bytes)}]")
    if t is UndefEvent:
        return f"UB {e.comp}"
    raise TypeError(f"not an event: {e!r}")


def serialize_trace(m) -> str:
    return "".join(event_line(e) + "\n" for e in m)


_NAME = r"[A-Za-z0-9_]+"
_LIST = r"-?\d+(?:,-?\d+)*"
_CALL = re.compile(rf"CALL ({_NAME}) ({_NAME})\.({_NAME}) \((|{_LIST})\)\Z")
_RET = re.compile(rf"RET ({_NAME}) ({_NAME}) (void|-?\d+)\Z")
_SYS = re.compile(rf"SYS ({_NAME}) (read|write) \((|{_LIST})\) \[(|{_LIST})\] -> (-?\d+) \[(|{_LIST})\]\Z")
_UB = re.compile(rf"UB ({_NAME})\Z")


def _tuple(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",")) if s else ()


def parse_event(line: str, lineno: int = 0):
    if mt := _CALL.match(line):
        return CallEvent(mt[1], mt[2], mt[3], _tuple(mt[4]))
    if mt := _RET.match(line):
        return ReturnEvent(mt[1], mt[2], None if mt[3] == "void" else int(mt[3]))
    if mt := _SYS.match(line):
        return SyscallEvent(mt[1], mt[2], _tuple(mt[3]), _tuple(mt[4]), int(mt[5]), _tuple(mt[6]))
    if mt := _UB.match(line):
        return UndefEvent(mt[1])
    raise ParseError(f"malformed event {line!r}", lineno)


def parse_trace(text: str) -> list:
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if line.strip():
            out.append(parse_event(line.strip(), n))
    for e in out[:-1]:
        if type(e) is UndefEvent:
            raise ParseError("UB may only end a trace")
    return out


def _delta_line(d, genv: GlobalEnv) -> str:
    t = type(d)
    if t is DeltaStore:
        return f"DELTA store {d.comp} {genv.ref(d.block)} {d.off} {value_str(d.value)}"
    if t is DeltaBytes:
        vals = ",".join(value_str(v) for v in d.values)
        return f"DELTA bytes {d.comp} {genv.ref(d.block)} {d.off} ({vals})"
    if t is DeltaAlloc:
        return f"DELTA alloc {d.comp} {d.size}"
    if t is DeltaFree:
        return f"DELTA free {d.comp} {genv.ref(d.block)}"
    raise TypeError(f"not a delta: {d!r}")


def informative_lines(ie, genv: GlobalEnv) -> list[str]:
    t = type(ie)
    head = f"I {ie.f} {event_line(ie.event)}"
    if t is ICall:
        head += f" : {ie.sig}"
    elif t is ISys:
        head += f" @ {ie.buffer}"
    return [head] + [_delta_line(d, genv) for d in ie.deltas]


def serialize_itrace(it, genv: GlobalEnv) -> str:
    return "".join(line + "\n" for ie in it for line in informative_lines(ie, genv))


def _parse_delta(parts: list[str], genv: GlobalEnv, n: int):
    kind = parts[1] if len(parts) > 1 else ""
    try:
        if kind == "store" and len(parts) == 6:
            return DeltaStore(genv.parse_ref(parts[3]), int(parts[4]), parse_value(parts[5]), parts[2])
        if kind == "bytes" and len(parts) == 6:
            inner = parts[5].strip("()")
            vals = tuple(parse_value(x) for x in inner.split(",")) if inner else ()
            return DeltaBytes(genv.parse_ref(parts[3]), int(parts[4]), vals, parts[2])
        if kind == "alloc" and len(parts) == 4:
            return DeltaAlloc(parts[2], int(parts[3]))
        if kind == "free" and len(parts) == 4:
            return DeltaFree(genv.parse_ref(parts[3]), parts[2])
    except (KeyError, ValueError) as e:
        raise ParseError(f"bad delta: {e}", n) from None
    raise ParseError("malformed DELTA line", n)


def parse_itrace(text: str, genv: GlobalEnv) -> list:
    items: list = []   # [kind, f, event, extra, deltas]
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(" ")
        if parts[0] == "DELTA":
            if not items:
                raise ParseError("DELTA before any event", n)
            items[-1][4].append(_parse_delta(parts, genv, n))
            continue
        if parts[0] != "I" or len(parts) < 3:
            raise ParseError(f"malformed informative line {line!r}", n)
        f = parts[1]
        rest = " ".join(parts[2:])
        extra = None
        if rest.startswith("CALL "):
            body, sep, sig = rest.partition(" : ")
            sp = sig.split()
            if not sep or len(sp) != 2 or sp[1] not in ("ret", "void") or not sp[0].isdigit():
                raise ParseError("call line needs ' : ARITY ret|void'", n)
            extra = Signature(int(sp[0]), sp[1] == "ret")
        elif rest.startswith("SYS "):
            body, sep, extra = rest.partition(" @ ")
            if not sep:
                raise ParseError("syscall line needs ' @ BUFFER'", n)
        else:
            body = rest
        ev = parse_event(body, n)
        if type(ev) is UndefEvent:
            raise ParseError("UB has no informative form", n)
        items.append([type(ev), f, ev, extra, []])
    out = []
    for t, f, ev, extra, deltas in items:
        if t is CallEvent:
            out.append(ICall(f, ev, extra, tuple(deltas)))
        elif t is ReturnEvent:
            out.append(IReturn(f, ev, tuple(deltas)))
        else:
            out.append(ISys(f, ev, extra, tuple(deltas)))
    return out


# ---------------------------------------------------------------- run outcomes

@dataclass(frozen=True, slots=True)
class Final:
    value: int


@dataclass(frozen=True, slots=True)
class Stuck:
    comp: str
    reason: str = ""

    def __eq__(self, other) -> bool:
        return type(other) is Stuck and other.comp == self.comp

    def __hash__(self) -> int:
        return hash(("stuck", self.comp))


@dataclass(frozen=True, slots=True)
class OutOfFuel:
    pass


@dataclass(frozen=True, slots=True)
class EventLimit:
    """The run was stopped after the requested number of events."""


Outcome = Final | Stuck | OutOfFuel | EventLimit
