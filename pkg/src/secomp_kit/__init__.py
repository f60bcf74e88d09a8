"""Compartmentalized mini-C toolchain with trace semantics and back-translation."""
import sys

# back-translated programs nest else-if chains deeply; the walkers are
# iterative but equality and repr on AST nodes still recurse
if sys.getrecursionlimit() < 20000:
    sys.setrecursionlimit(20000)

__version__ = "0.1.0"
