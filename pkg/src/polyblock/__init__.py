"""Compiler kit for a nested polyhedral tensor IR."""

from .ir import AffineExpr, Block, Constraint, IndexDecl, Intrinsic, Location, Program, Refinement, Special
from .text import parse_program, print_program

__all__ = [
    "AffineExpr",
    "Block",
    "Constraint",
    "IndexDecl",
    "Intrinsic",
    "Location",
    "Program",
    "Refinement",
    "Special",
    "parse_program",
    "print_program",
]
