"""Linear program container.

A program is ``min c @ x + offset`` subject to ``row_lo <= A @ x <= row_hi`` and
``col_lo <= x <= col_hi``. Infinite bounds are encoded as ``+-np.inf``; an
equality row has ``row_lo == row_hi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class LinearProgram:
    c: np.ndarray
    A: sp.csc_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    col_names: list[str] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)
    offset: float = 0.0
    name: str = "LP"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.A.sort_indices()
        self.row_lo = np.asarray(self.row_lo, dtype=float)
        self.row_hi = np.asarray(self.row_hi, dtype=float)
        self.col_lo = np.asarray(self.col_lo, dtype=float)
        self.col_hi = np.asarray(self.col_hi, dtype=float)
        m, n = self.A.shape
        if self.c.shape != (n,) or self.col_lo.shape != (n,) or self.col_hi.shape != (n,):
            raise ValueError("column data inconsistent with constraint matrix")
        if self.row_lo.shape != (m,) or self.row_hi.shape != (m,):
            raise ValueError("row data inconsistent with constraint matrix")
        if not self.col_names:
            self.col_names = [f"x{j}" for j in range(n)]
        if not self.row_names:
            self.row_names = [f"r{i}" for i in range(m)]
        if len(self.col_names) != n or len(self.row_names) != m:
            raise ValueError("name lists do not match dimensions")

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_cols(self) -> int:
        return self.A.shape[1]

    def objective(self, x) -> float:
        return float(self.c @ x + self.offset)


class LPBuilder:
    """Incremental construction of a :class:`LinearProgram` from named pieces."""

    def __init__(self, name="LP"):
        self.name = name
        self._cols: list[str] = []
        self._col_index: dict[str, int] = {}
        self._c: list[float] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._rows: list[str] = []
        self._row_lo: list[float] = []
        self._row_hi: list[float] = []
        self._ri: list[int] = []
        self._ci: list[int] = []
        self._v: list[float] = []
        self.offset = 0.0

    def add_var(self, name, lo=0.0, hi=np.inf, cost=0.0) -> int:
        if name in self._col_index:
            raise ValueError(f"duplicate variable name {name!r}")
        j = len(self._cols)
        self._cols.append(name)
        self._col_index[name] = j
        self._c.append(float(cost))
        self._lo.append(float(lo))
        self._hi.append(float(hi))
        return j

    def add_cost(self, j, cost):
        self._c[j] += float(cost)

    def add_row(self, name, terms, lo=-np.inf, hi=np.inf) -> int:
        """Add ``lo <= sum(coef * x[j] for j, coef in terms) <= hi``."""
        i = len(self._rows)
        self._rows.append(name)
        self._row_lo.append(float(lo))
        self._row_hi.append(float(hi))
        for j, coef in terms:
            if coef != 0.0:
                self._ri.append(i)
                self._ci.append(j)
                self._v.append(float(coef))
        return i

    def index(self, name) -> int:
        return self._col_index[name]

    def build(self) -> LinearProgram:
        m, n = len(self._rows), len(self._cols)
        # duplicates (same row/col) are summed by the COO -> CSC conversion
        A = sp.coo_matrix((self._v, (self._ri, self._ci)), shape=(m, n)).tocsc()
        return LinearProgram(
            c=np.array(self._c),
            A=A,
            row_lo=np.array(self._row_lo),
            row_hi=np.array(self._row_hi),
            col_lo=np.array(self._lo),
            col_hi=np.array(self._hi),
            col_names=list(self._cols),
            row_names=list(self._rows),
            offset=self.offset,
            name=self.name,
        )
