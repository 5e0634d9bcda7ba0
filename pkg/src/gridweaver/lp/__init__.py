"""Embedded linear programming: container, simplex solver, MPS I/O, checks."""
from gridweaver.lp.checks import Certificate, certify
from gridweaver.lp.mps import read_mps, write_mps
from gridweaver.lp.program import LinearProgram, LPBuilder
from gridweaver.lp.simplex import LPResult, solve_lp

__all__ = [
    "Certificate",
    "LPBuilder",
    "LPResult",
    "LinearProgram",
    "certify",
    "read_mps",
    "solve_lp",
    "write_mps",
]
