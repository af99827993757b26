"""Fixed-format MPS export of an :class:`AllocationProgram`, and a reader.

Rows are named ``R0000000``..., columns ``C0000000``... in the program's
canonical order (jobs in snapshot order, steps ascending, node counts
ascending), so identical programs export byte-identical text.  The reader
accepts what the writer produces and is whitespace tolerant; it exists so
exported files can be fed to an external solver and checked back.
"""

from __future__ import annotations

import math

import numpy as np

from .milp import AllocationProgram


def _compact(text: str) -> str:
    # "-0.5" -> "-.5", "1e-05" -> "1e-5"; both are plain MPS numbers
    if "e" in text:
        mant, exp = text.split("e")
        text = f"{mant}e{int(exp)}"
    if text.startswith("0."):
        text = text[1:]
    elif text.startswith("-0."):
        text = "-" + text[2:]
    return text


def _num(v: float) -> str:
    """Closest rendering of ``v`` that fits the 12-character value field."""
    v = float(v)
    if v == int(v) and abs(v) < 1e11:
        return str(int(v))
    # highest precision first, so the first rendering that fits is the closest
    for prec in range(17, 0, -1):
        text = _compact(f"{v:.{prec}g}")
        if len(text) <= 12:
            return text
    return f"{v:.5e}"


def _line(f1: str, f2: str, f3: str = "", f4: str = "") -> str:
    text = " " + f1.ljust(2) + " " + f2.ljust(8)
    if f3:
        text += "  " + f3.ljust(8)
    if f4:
        text += "  " + f4.rjust(12)
    return text.rstrip()


def export_mps(program: AllocationProgram, name: str = "ELASTIC") -> str:
    cols = program.columns
    rows = program.rows
    rname = [f"R{r:07d}" for r in range(len(rows))]
    cname = [f"C{c:07d}" for c in range(len(cols))]
    by_col = [[] for _ in cols]
    for r, row in enumerate(rows):
        for c, v in zip(row.cols, row.vals):
            by_col[c].append((r, v))

    out = [f"NAME          {name}", "OBJSENSE", "    MAX", "ROWS", " N  OBJ"]
    out.extend(_line(row.sense, rname[r]) for r, row in enumerate(rows))
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for c, col in enumerate(cols):
        want_int = col.kind != "cont"
        if want_int != in_int:
            tag = "'INTORG'" if want_int else "'INTEND'"
            out.append(f"    M{marker:07d}  'MARKER'                 {tag}")
            marker += 1
            in_int = want_int
        if col.obj != 0.0:
            out.append(_line("", cname[c], "OBJ", _num(col.obj)))
        for r, v in sorted(by_col[c]):
            out.append(_line("", cname[c], rname[r], _num(v)))
    if in_int:
        out.append(f"    M{marker:07d}  'MARKER'                 'INTEND'")
    out.append("RHS")
    for r, row in enumerate(rows):
        if row.rhs != 0.0:
            out.append(_line("", "RHS", rname[r], _num(row.rhs)))
    out.append("BOUNDS")
    for c, col in enumerate(cols):
        if col.kind == "bin":
            out.append(_line("BV", "BND", cname[c]))
        elif col.kind == "int" and math.isfinite(col.ub):
            out.append(_line("UI", "BND", cname[c], _num(col.ub)))
        elif col.kind == "int":
            i = col.key[1]
            out.append(_line("UI", "BND", cname[c], _num(max(program.legal_sets[i]))))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def read_mps(text: str) -> dict:
    """Parse MPS text into dense-friendly pieces.

    Returns a dict with ``sense`` (+1 max / -1 min), ``c``, COO arrays
    ``rows``, ``cols``, ``vals``, row bounds ``row_lo``/``row_hi``, column
    bounds ``lb``/``ub``, ``integrality`` (0/1) and the name lists.
    """
    section = None
    sense = -1
    row_names, row_types = [], {}
    col_index, col_names = {}, []
    entries = []
    obj = {}
    rhs = {}
    integer = set()
    lb, ub = {}, {}
    in_int = False
    obj_row = None

    def col_id(name):
        if name not in col_index:
            col_index[name] = len(col_names)
            col_names.append(name)
            if in_int:
                integer.add(name)
        return col_index[name]

    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            section = raw.split()[0]
            continue
        tok = raw.split()
        if section == "OBJSENSE":
            sense = 1 if tok[0].upper() in ("MAX", "MAXIMIZE") else -1
        elif section == "ROWS":
            kind, name = tok
            if kind == "N":
                obj_row = obj_row or name
            else:
                row_types[name] = kind
                row_names.append(name)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1] == "'MARKER'":
                in_int = tok[2] == "'INTORG'"
                continue
            cid = col_id(tok[0])
            for rn, v in zip(tok[1::2], tok[2::2]):
                if rn == obj_row:
                    obj[cid] = float(v)
                else:
                    entries.append((rn, cid, float(v)))
        elif section == "RHS":
            for rn, v in zip(tok[1::2], tok[2::2]):
                rhs[rn] = float(v)
        elif section == "BOUNDS":
            kind, _, cn = tok[:3]
            cid = col_id(cn)
            v = float(tok[3]) if len(tok) > 3 else None
            if kind == "BV":
                integer.add(cn)
                lb[cid], ub[cid] = 0.0, 1.0
            elif kind in ("UP", "UI"):
                ub[cid] = v
                if kind == "UI":
                    integer.add(cn)
            elif kind in ("LO", "LI"):
                lb[cid] = v
            elif kind == "FX":
                lb[cid] = ub[cid] = v
            elif kind == "FR":
                lb[cid], ub[cid] = -np.inf, np.inf
            elif kind == "MI":
                lb[cid] = -np.inf
    rpos = {n: i for i, n in enumerate(row_names)}
    n = len(col_names)
    row_lo = np.full(len(row_names), -np.inf)
    row_hi = np.full(len(row_names), np.inf)
    for name, kind in row_types.items():
        b = rhs.get(name, 0.0)
        if kind in ("L", "E"):
            row_hi[rpos[name]] = b
        if kind in ("G", "E"):
            row_lo[rpos[name]] = b
    return {
        "sense": sense,
        "c": np.array([obj.get(i, 0.0) for i in range(n)]),
        "rows": np.array([rpos[r] for r, _, _ in entries], dtype=np.int64),
        "cols": np.array([c for _, c, _ in entries], dtype=np.int64),
        "vals": np.array([v for _, _, v in entries]),
        "row_lo": row_lo,
        "row_hi": row_hi,
        "lb": np.array([lb.get(i, 0.0) for i in range(n)]),
        "ub": np.array([ub.get(i, np.inf) for i in range(n)]),
        "integrality": np.array([1 if name in integer else 0 for name in col_names]),
        "row_names": row_names,
        "col_names": col_names,
    }
