"""Fixed-layout MPS export for debugging against external LP/MILP engines.

Layout (1-based character columns)::

    field 1: 2-3   row type / bound type
    field 2: 5-12  column name (or row name in ROWS)
    field 3: 15-22 row name
    field 4: 25-36 value
    field 5: 40-47 row name
    field 6: 50-61 value

Names are limited to eight characters, so rows and columns are written as
``R0000001`` / ``C0000001``; the original names follow as ``*`` comment lines
right after ``NAME``. The objective row is ``COST`` and always minimised;
maximisation problems are exported with the objective negated.
"""

from collections.abc import Collection
from pathlib import Path

import numpy as np

from app.core.lp import LpProblem, RowSense

_ROW_TYPE = {RowSense.LE: "L", RowSense.EQ: "E", RowSense.GE: "G"}


def _num(value: float) -> str:
    for digits in range(12, 0, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= 12:
            return text
    return f"{value:.1e}"


def _line(f1: str = "", f2: str = "", f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    line = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        line += f"   {f5:<8}  {f6:>12}"
    return line.rstrip()


def to_mps(
    problem: LpProblem,
    integer_columns: Collection[int] = (),
    *,
    negate_objective: bool = False,
) -> str:
    """Render ``problem`` as fixed-layout MPS text.

    Args:
        problem: LP to export.
        integer_columns: Column indices wrapped in ``INTORG``/``INTEND`` markers.
        negate_objective: Write ``-c`` (used for maximisation problems).

    Returns:
        str: MPS document ending with ``ENDATA``.

    """
    row_names = [f"R{i + 1:07d}" for i in range(problem.n_rows)]
    col_names = [f"C{j + 1:07d}" for j in range(problem.n_cols)]
    cost = -problem.c if negate_objective else problem.c
    integer = set(integer_columns)

    out = [f"NAME          {problem.name[:8].upper()}"]
    out += [f"* {row_names[i]} {tag.label()}" for i, tag in enumerate(problem.row_tags)]
    out += [f"* {col_names[j]} {name}" for j, name in enumerate(problem.col_names)]
    out.append("ROWS")
    out.append(_line("N", "COST"))
    out += [
        _line(_ROW_TYPE[sense], row_names[i]) for i, sense in enumerate(problem.senses)
    ]

    out.append("COLUMNS")
    csc = problem.a.tocsc()
    in_marker = False
    for j in range(problem.n_cols):
        if (j in integer) != in_marker:
            marker = "INTORG" if not in_marker else "INTEND"
            out.append(_line("", "MARKER", "'MARKER'", "", f"'{marker}'"))
            in_marker = not in_marker
        entries = []
        if cost[j] != 0:
            entries.append(("COST", cost[j]))
        start, end = csc.indptr[j], csc.indptr[j + 1]
        entries += [
            (row_names[r], v) for r, v in zip(csc.indices[start:end], csc.data[start:end], strict=True)
        ]
        if not entries:
            entries.append(("COST", 0.0))
        for k in range(0, len(entries), 2):
            r1, v1 = entries[k]
            if k + 1 < len(entries):
                r2, v2 = entries[k + 1]
                out.append(_line("", col_names[j], r1, _num(v1), r2, _num(v2)))
            else:
                out.append(_line("", col_names[j], r1, _num(v1)))
    if in_marker:
        out.append(_line("", "MARKER", "'MARKER'", "", "'INTEND'"))

    out.append("RHS")
    out += [
        _line("", "RHS", row_names[i], _num(b))
        for i, b in enumerate(problem.b)
        if b != 0
    ]

    out.append("BOUNDS")
    for j in range(problem.n_cols):
        lo, hi = problem.lo[j], problem.hi[j]
        name = col_names[j]
        if j in integer and lo == 0 and hi == 1:
            out.append(_line("BV", "BND", name))
        elif lo == hi:
            out.append(_line("FX", "BND", name, _num(lo)))
        elif np.isneginf(lo) and np.isposinf(hi):
            out.append(_line("FR", "BND", name))
        else:
            if np.isneginf(lo):
                out.append(_line("MI", "BND", name))
            elif lo != 0:
                out.append(_line("LO", "BND", name, _num(lo)))
            if np.isfinite(hi):
                out.append(_line("UP", "BND", name, _num(hi)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def write_mps(
    problem: LpProblem,
    path: Path,
    integer_columns: Collection[int] = (),
    *,
    negate_objective: bool = False,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        to_mps(problem, integer_columns, negate_objective=negate_objective),
        encoding="utf-8",
    )
    return path
