"""Block memory with per-compartment ownership and permissions.

Values are plain Python ints (64-bit signed scalars), `Ptr` block
references, or the `UNDEF` marker. The `Memory` object is a single-owner
mutable store; call `copy()` to fork it for differential runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

INT_MIN = -(1 << 63)
INT_MAX = (1 << 63) - 1
_MASK = (1 << 64) - 1


def wrap64(v: int) -> int:
    v &= _MASK
    return v - (1 << 64) if v >> 63 else v


@dataclass(frozen=True, slots=True)
class Ptr:
    block: int
    offset: int = 0

    def __str__(self) -> str:
        return f"ptr:{self.block}:{self.offset}"


class _Undef:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "UNDEF"

    def __reduce__(self):
        return (_Undef, ())


UNDEF = _Undef()


@dataclass(frozen=True, slots=True)
class CodeAddr:
    """Symbolic code address: instruction `index` of `comp.proc`."""
    comp: str
    proc: str
    index: int

    def __str__(self) -> str:
        if self.index < 0:
            return "halt"
        return f"code:{self.comp}.{self.proc}:{self.index}"


HALT = CodeAddr("", "", -1)


def value_str(v) -> str:
    if type(v) is int:
        return str(v)
    if v is UNDEF:
        return "undef"
    return str(v)


def parse_value(tok: str):
    if tok == "undef":
        return UNDEF
    if tok == "halt":
        return HALT
    if tok.startswith("ptr:"):
        _, b, o = tok.split(":")
        return Ptr(int(b), int(o))
    if tok.startswith("code:"):
        _, where, idx = tok.split(":")
        comp, _, proc = where.partition(".")
        return CodeAddr(comp, proc, int(idx))
    return int(tok)


def is_int(v) -> bool:
    return type(v) is int


class Perm(Enum):
    RW = "rw"
    RO = "ro"


class MemError(Exception):
    """Base class for memory access failures."""


class NotOwner(MemError):
    pass


class DeadBlock(MemError):
    pass


class OutOfBounds(MemError):
    pass


class ReadOnlyViolation(MemError):
    pass


class Block:
    __slots__ = ("id", "owner", "slots", "perm", "live")

    def __init__(self, bid: int, owner: str, size: int):
        self.id = bid
        self.owner = owner
        self.slots: list = [UNDEF] * size
        self.perm = Perm.RW
        self.live = True

    def clone(self) -> "Block":
        b = Block.__new__(Block)
        b.id, b.owner, b.perm, b.live = self.id, self.owner, self.perm, self.live
        b.slots = list(self.slots)
        return b

    def __repr__(self) -> str:
        state = "live" if self.live else "dead"
        return f"Block({self.id}, {self.owner}, {self.perm.value}, {state}, {self.slots})"


class Memory:
    """Blocks indexed by a monotonically increasing id.

    When `audit` is a list, every successful slot access appends a tuple
    (op, actor, owner, block_id) so callers can check isolation afterwards.
    """

    __slots__ = ("blocks", "next_id", "audit")

    def __init__(self, audit: list | None = None):
        self.blocks: dict[int, Block] = {}
        self.next_id = 0
        self.audit = audit

    def copy(self) -> "Memory":
        m = Memory(self.audit)
        m.blocks = {k: b.clone() for k, b in self.blocks.items()}
        m.next_id = self.next_id
        return m

    def alloc(self, comp: str, size: int) -> int:
        if size < 0:
            raise ValueError("negative block size")
        bid = self.next_id
        self.next_id += 1
        self.blocks[bid] = Block(bid, comp, size)
        if self.audit is not None:
            self.audit.append(("alloc", comp, comp, bid))
        return bid

    def _get(self, comp: str, bid: int) -> Block:
        b = self.blocks.get(bid)
        if b is None:
            raise DeadBlock(f"no block {bid}")
        if b.owner != comp:
            raise NotOwner(f"{comp} does not own block {bid} (owner {b.owner})")
        if not b.live:
            raise DeadBlock(f"block {bid} is freed")
        return b

    def load(self, comp: str, bid: int, off: int):
        b = self._get(comp, bid)
        if not 0 <= off < len(b.slots):
            raise OutOfBounds(f"offset {off} outside block {bid} of size {len(b.slots)}")
        if self.audit is not None:
            self.audit.append(("load", comp, b.owner, bid))
        return b.slots[off]

    def store(self, comp: str, bid: int, off: int, v) -> None:
        b = self._get(comp, bid)
        if not 0 <= off < len(b.slots):
            raise OutOfBounds(f"offset {off} outside block {bid} of size {len(b.slots)}")
        if b.perm is Perm.RO:
            raise ReadOnlyViolation(f"block {bid} is read-only")
        if self.audit is not None:
            self.audit.append(("store", comp, b.owner, bid))
        b.slots[off] = v

    def free(self, comp: str, bid: int) -> None:
        b = self._get(comp, bid)
        b.live = False
        if self.audit is not None:
            self.audit.append(("free", comp, b.owner, bid))

    def set_perm(self, bid: int, perm: Perm) -> None:
        """Privileged permission change, used only by call/return transitions."""
        b = self.blocks.get(bid)
        if b is None or not b.live:
            raise DeadBlock(f"block {bid} is not live")
        b.perm = perm

    def read_privileged(self, actor: str, bid: int, off: int):
        """Semantics-internal read of another compartment's read-only frame.

        The target machine uses this to fetch spilled call arguments; the
        caller is responsible for validating that the block is the spill
        frame of the active cross-compartment call.
        """
        b = self.blocks.get(bid)
        if b is None or not b.live:
            raise DeadBlock(f"block {bid} is not live")
        if b.perm is not Perm.RO:
            raise NotOwner(f"block {bid} is not a sealed argument frame")
        if not 0 <= off < len(b.slots):
            raise OutOfBounds(f"offset {off} outside block {bid}")
        if self.audit is not None:
            self.audit.append(("arg", actor, b.owner, bid))
        return b.slots[off]

    def owner(self, bid: int) -> str | None:
        b = self.blocks.get(bid)
        return b.owner if b is not None else None

    def is_live(self, bid: int) -> bool:
        b = self.blocks.get(bid)
        return b is not None and b.live

    def size(self, bid: int) -> int:
        return len(self.blocks[bid].slots)

    def snapshot(self) -> dict[int, tuple]:
        """Comparable view of the live blocks."""
        return {k: (b.owner, tuple(b.slots)) for k, b in self.blocks.items() if b.live}


def audit_violations(log: list) -> list[tuple]:
    """Entries where an ordinary access crossed compartment ownership."""
    return [e for e in log if e[0] != "arg" and e[1] != e[2]]


class GlobalEnv:
    """Fixed layout of global blocks shared by every semantics.

    Compartments are taken in sorted name order and globals in declaration
    order, so block ids 0..G-1 are the same at source, target and in the
    well-formedness checker.
    """

    def __init__(self, table: dict):
        # table: comp -> sequence of objects with name, size, public
        self.by_name: dict[tuple[str, str], int] = {}
        self.by_block: dict[int, tuple[str, str, int, bool]] = {}
        bid = 0
        for comp in sorted(table):
            for g in table[comp]:
                self.by_name[(comp, g.name)] = bid
                self.by_block[bid] = (comp, g.name, g.size, g.public)
                bid += 1
        self.count = bid

    def populate(self, mem: "Memory") -> None:
        """Allocate and zero every global block in `mem` (which must be fresh)."""
        for bid in range(self.count):
            comp, _, size, _ = self.by_block[bid]
            got = mem.alloc(comp, size)
            assert got == bid, "globals must be allocated first"
            mem.blocks[got].slots = [0] * size

    def block(self, comp: str, name: str) -> int | None:
        return self.by_name.get((comp, name))

    def public_blocks(self, comp: str) -> list[int]:
        return [b for b, (c, _, _, pub) in self.by_block.items() if c == comp and pub]

    def ref(self, bid: int) -> str:
        info = self.by_block.get(bid)
        return f"{info[0]}.{info[1]}" if info else f"#{bid}"

    def parse_ref(self, tok: str) -> int:
        if tok.startswith("#"):
            return int(tok[1:])
        comp, _, name = tok.partition(".")
        bid = self.by_name.get((comp, name))
        if bid is None:
            raise KeyError(f"unknown global {tok}")
        return bid
