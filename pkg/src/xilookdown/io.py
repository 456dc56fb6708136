"""Plain-text matrix files and path dumps.

Matrix file: first line n, then n whitespace-separated rows.  A marked
state stores r in the rows and adds a final line of n u-values.
"""
from __future__ import annotations

import numpy as np

from .lookdown import MarkedState, PlainState


def _row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def format_matrix(rho, u=None) -> str:
    rho = np.asarray(rho, dtype=float)
    n = rho.shape[0]
    if rho.shape != (n, n):
        raise ValueError("matrix must be square")
    lines = [str(n)] + [_row(r) for r in rho]
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != (n,):
            raise ValueError("mark vector length differs from the matrix size")
        lines.append(_row(u))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> tuple[np.ndarray, np.ndarray | None]:
    """(matrix, marks or None) from the matrix file format."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("empty matrix file")
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise ValueError(f"first line must be the size, got {lines[0]!r}") from None
    if n < 1:
        raise ValueError("matrix size must be positive")
    body = lines[1:]
    if len(body) not in (n, n + 1):
        raise ValueError(f"expected {n} rows (plus an optional mark line), got {len(body)}")
    rows = [[float(v) for v in ln.split()] for ln in body]
    if any(len(r) != n for r in rows):
        raise ValueError(f"every row must hold {n} values")
    mat = np.array(rows[:n])
    if not np.array_equal(mat, mat.T) or np.any(np.diag(mat) != 0):
        raise ValueError("matrix must be symmetric with zero diagonal")
    if np.any(mat < 0):
        raise ValueError("entries must be nonnegative")
    marks = np.array(rows[n]) if len(rows) == n + 1 else None
    if marks is not None and np.any(marks < 0):
        raise ValueError("marks must be nonnegative")
    return mat, marks


def format_state(state) -> str:
    if isinstance(state, MarkedState):
        return format_matrix(state.r, state.u)
    return format_matrix(state.rho)


def state_from_text(text: str, time: float = 0.0):
    mat, marks = parse_matrix(text)
    if marks is None:
        return PlainState(mat, float(time))
    return MarkedState.from_ru(mat, marks, float(time))


def path_csv(path) -> str:
    """One row per recorded state: event index, time, upper-triangle entries (and marks)."""
    states = [path.initial] + list(path.states)
    marked = isinstance(path.initial, MarkedState)
    head = "event,time,entries" + (",marks" if marked else "")
    lines = [head]
    for k, st in enumerate(states):
        mat = st.r if marked else st.rho
        iu = np.triu_indices(mat.shape[0], 1)
        row = f"{k},{st.time!r},{_row(mat[iu])}"
        if marked:
            row += f",{_row(st.u)}"
        lines.append(row)
    return "\n".join(lines) + "\n"
