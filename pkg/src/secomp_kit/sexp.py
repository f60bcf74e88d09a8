"""Minimal s-expression reader and printer.

Both directions are iterative so that deeply nested forms (long else-if
chains produced by back-translation) never hit the interpreter's recursion
limit.
"""
from __future__ import annotations


class SexpError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


class Sym(str):
    """An atom with its source position."""

    line: int
    col: int

    def __new__(cls, text: str, line: int = 0, col: int = 0):
        obj = super().__new__(cls, text)
        obj.line = line
        obj.col = col
        return obj


class SList(list):
    """A parenthesized list with the position of its opening paren."""

    def __init__(self, items=(), line: int = 0, col: int = 0):
        super().__init__(items)
        self.line = line
        self.col = col


def read_all(text: str) -> list[SList | Sym]:
    """Parse every top-level form in `text`. Comments start with ';'."""
    forms: list = []
    stack: list[SList] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "(":
            stack.append(SList((), line, col))
            i += 1
            col += 1
            continue
        if ch == ")":
            if not stack:
                raise SexpError("unbalanced ')'", line, col)
            done = stack.pop()
            (stack[-1] if stack else forms).append(done)
            i += 1
            col += 1
            continue
        start = i
        while i < n and text[i] not in " \t\r\n();":
            i += 1
        atom = Sym(text[start:i], line, col)
        col += i - start
        (stack[-1] if stack else forms).append(atom)
    if stack:
        s = stack[-1]
        raise SexpError("unclosed '('", s.line, s.col)
    return forms


def dumps(form) -> str:
    """Render a nested list/str structure on a single line."""
    out: list[str] = []
    # work items: either a form to render or a literal string to emit
    work: list = [form]
    while work:
        item = work.pop()
        if isinstance(item, list):
            if not item:
                out.append("()")
                continue
            work.append(")")
            for k in range(len(item) - 1, 0, -1):
                work.append(item[k])
                work.append(" ")
            work.append(item[0])
            work.append("(")
        elif isinstance(item, tuple):
            raise TypeError("tuples are not s-expressions")
        else:
            out.append(str(item))
    return "".join(out)


def parse_int(tok: str, line: int = 0, col: int = 0) -> int:
    try:
        v = int(tok, 10)
    except ValueError:
        raise SexpError(f"expected integer, got {tok!r}", line, col) from None
    if not -(1 << 63) <= v < (1 << 63):
        raise SexpError(f"integer {tok} out of 64-bit range", line, col)
    return v


def pos(form) -> tuple[int, int]:
    return getattr(form, "line", 0), getattr(form, "col", 0)
