"""Free-format MPS writer and reader for :class:`LinearProgram`.

Conventions:

* Objective row ``OBJ`` (type N), ``OBJSENSE MIN``. A constant objective
  offset is written as the negated RHS of the objective row.
* Rows with both bounds infinite are written as extra N rows and read back
  as free rows. Ranged rows are written as L rows with ``RANGES = hi - lo``.
* Zero cost entries are omitted from COLUMNS; a column with no entries at all
  is listed once with a zero objective coefficient so it is not lost.
* Numbers are written with ``repr`` so a write/read cycle is lossless.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from gridweaver.errors import ParseError
from gridweaver.lp.program import LinearProgram

OBJ = "OBJ"


def _num(v: float) -> str:
    v = float(v)
    if v == 0.0:
        return "0"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _check_name(name: str):
    if not name or len(name) > 255 or any(ch.isspace() for ch in name):
        raise ValueError(f"name {name!r} is not a valid free-format MPS identifier")


def _row_type(lo, hi):
    if lo == hi:
        return "E"
    if np.isfinite(lo) and np.isfinite(hi):
        return "L"  # ranged
    if np.isfinite(hi):
        return "L"
    if np.isfinite(lo):
        return "G"
    return "N"


def write_mps(lp: LinearProgram) -> str:
    out = io.StringIO()
    for name in lp.row_names + lp.col_names:
        _check_name(name)
    out.write(f"NAME {lp.name}\n")
    out.write("OBJSENSE\n    MIN\n")
    out.write("ROWS\n")
    out.write(f" N {OBJ}\n")
    types = [_row_type(lo, hi) for lo, hi in zip(lp.row_lo, lp.row_hi)]
    for name, t in zip(lp.row_names, types):
        out.write(f" {t} {name}\n")

    out.write("COLUMNS\n")
    A = lp.A
    for j, cname in enumerate(lp.col_names):
        wrote = False
        if lp.c[j] != 0.0:
            out.write(f"    {cname} {OBJ} {_num(lp.c[j])}\n")
            wrote = True
        for k in range(A.indptr[j], A.indptr[j + 1]):
            v = A.data[k]
            if v != 0.0:
                out.write(f"    {cname} {lp.row_names[A.indices[k]]} {_num(v)}\n")
                wrote = True
        if not wrote:
            out.write(f"    {cname} {OBJ} 0\n")

    out.write("RHS\n")
    if lp.offset != 0.0:
        out.write(f"    RHS {OBJ} {_num(-lp.offset)}\n")
    for name, t, lo, hi in zip(lp.row_names, types, lp.row_lo, lp.row_hi):
        if t in ("E", "G"):
            rhs = lo
        elif t == "L":
            rhs = hi
        else:
            continue
        if rhs != 0.0:
            out.write(f"    RHS {name} {_num(rhs)}\n")

    ranged = [
        (name, hi - lo)
        for name, t, lo, hi in zip(lp.row_names, types, lp.row_lo, lp.row_hi)
        if t == "L" and np.isfinite(lo)
    ]
    if ranged:
        out.write("RANGES\n")
        for name, r in ranged:
            out.write(f"    RNG {name} {_num(r)}\n")

    bound_lines = []
    for name, lo, hi in zip(lp.col_names, lp.col_lo, lp.col_hi):
        if lo == hi:
            bound_lines.append(f" FX BND {name} {_num(lo)}")
            continue
        if not np.isfinite(lo) and not np.isfinite(hi):
            bound_lines.append(f" FR BND {name}")
            continue
        if not np.isfinite(lo):
            bound_lines.append(f" MI BND {name}")
        elif lo != 0.0:
            bound_lines.append(f" LO BND {name} {_num(lo)}")
        if np.isfinite(hi):
            bound_lines.append(f" UP BND {name} {_num(hi)}")
    if bound_lines:
        out.write("BOUNDS\n")
        out.write("\n".join(bound_lines) + "\n")
    out.write("ENDATA\n")
    return out.getvalue()


def read_mps(source) -> LinearProgram:
    """Parse free-format MPS text (or a path to it)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = source

    name = "LP"
    section = None
    obj_name = None
    sense = 1.0
    row_names: list[str] = []
    row_type: dict[str, str] = {}
    row_index: dict[str, int] = {}
    free_rows: list[str] = []
    col_names: list[str] = []
    col_index: dict[str, int] = {}
    cost: dict[int, float] = {}
    entries: list[tuple[int, int, float]] = []
    rhs: dict[str, float] = {}
    ranges: dict[str, float] = {}
    bounds: dict[int, list[float]] = {}
    offset = 0.0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line or line.startswith("*"):
            continue
        tokens = line.split()
        if not raw[0].isspace():
            head = tokens[0].upper()
            if head == "NAME":
                name = tokens[1] if len(tokens) > 1 else name
                section = None
            elif head in ("ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "OBJSENSE"):
                section = head
                if head == "OBJSENSE" and len(tokens) > 1:
                    sense = -1.0 if tokens[1].upper().startswith("MAX") else 1.0
            elif head == "ENDATA":
                break
            else:
                raise ParseError(f"unknown MPS section {tokens[0]!r}", line=lineno)
            continue

        try:
            if section == "OBJSENSE":
                sense = -1.0 if tokens[0].upper().startswith("MAX") else 1.0
            elif section == "ROWS":
                t, rname = tokens[0].upper(), tokens[1]
                if t == "N" and obj_name is None:
                    obj_name = rname
                    continue
                if t == "N":
                    free_rows.append(rname)
                elif t not in ("E", "L", "G"):
                    raise ParseError(f"bad row type {t!r}", line=lineno)
                row_type[rname] = t
                row_index[rname] = len(row_names)
                row_names.append(rname)
            elif section == "COLUMNS":
                if "'MARKER'" in tokens:
                    raise ParseError("integer markers are not supported", line=lineno)
                cname = tokens[0]
                if cname not in col_index:
                    col_index[cname] = len(col_names)
                    col_names.append(cname)
                j = col_index[cname]
                for rname, val in zip(tokens[1::2], tokens[2::2]):
                    v = float(val)
                    if rname == obj_name:
                        cost[j] = cost.get(j, 0.0) + v
                    else:
                        entries.append((row_index[rname], j, v))
            elif section == "RHS":
                pairs = tokens[1:] if len(tokens) % 2 == 1 else tokens
                for rname, val in zip(pairs[0::2], pairs[1::2]):
                    if rname == obj_name:
                        offset = -float(val)
                    else:
                        rhs[rname] = float(val)
            elif section == "RANGES":
                pairs = tokens[1:] if len(tokens) % 2 == 1 else tokens
                for rname, val in zip(pairs[0::2], pairs[1::2]):
                    ranges[rname] = float(val)
            elif section == "BOUNDS":
                btype, cname = tokens[0].upper(), tokens[2]
                j = col_index[cname]
                b = bounds.setdefault(j, [0.0, np.inf])
                val = float(tokens[3]) if len(tokens) > 3 else None
                if btype == "LO":
                    b[0] = val
                elif btype == "UP":
                    b[1] = val
                    if val < 0 and b[0] == 0.0:
                        b[0] = -np.inf
                elif btype == "FX":
                    b[0] = b[1] = val
                elif btype == "FR":
                    b[0], b[1] = -np.inf, np.inf
                elif btype == "MI":
                    b[0] = -np.inf
                elif btype == "PL":
                    b[1] = np.inf
                else:
                    raise ParseError(f"unsupported bound type {btype!r}", line=lineno)
            else:
                raise ParseError("data line outside a section", line=lineno)
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed MPS record: {exc}", line=lineno) from exc

    m, n = len(row_names), len(col_names)
    row_lo = np.full(m, -np.inf)
    row_hi = np.full(m, np.inf)
    for rname, i in row_index.items():
        t = row_type[rname]
        b = rhs.get(rname, 0.0)
        r = ranges.get(rname)
        if t == "E":
            row_lo[i] = row_hi[i] = b
            if r is not None:
                if r > 0:
                    row_hi[i] = b + r
                elif r < 0:
                    row_lo[i] = b + r
        elif t == "L":
            row_hi[i] = b
            if r is not None:
                row_lo[i] = b - abs(r)
        elif t == "G":
            row_lo[i] = b
            if r is not None:
                row_hi[i] = b + abs(r)
    c = np.zeros(n)
    for j, v in cost.items():
        c[j] = sense * v
    col_lo = np.zeros(n)
    col_hi = np.full(n, np.inf)
    for j, (lo, hi) in bounds.items():
        col_lo[j], col_hi[j] = lo, hi
    if entries:
        ri, ci, vals = zip(*entries)
    else:
        ri, ci, vals = (), (), ()
    A = sp.coo_matrix((vals, (ri, ci)), shape=(m, n)).tocsc()
    return LinearProgram(
        c=c, A=A, row_lo=row_lo, row_hi=row_hi, col_lo=col_lo, col_hi=col_hi,
        col_names=col_names, row_names=row_names, offset=sense * offset, name=name,
    )
