import numpy as np
import pytest
from hypothesis import given, strategies as st

from xilookdown.event_stream import generate
from xilookdown.io import format_matrix, format_state, parse_matrix, path_csv, state_from_text
from xilookdown.lookdown import MarkedState, PlainState, evolve
from xilookdown.xi_model import XiMeasure

finite = st.floats(0, 1e6, allow_nan=False, allow_infinity=False)


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.just(n), st.lists(finite, min_size=n, max_size=n),
                                                        st.lists(finite, min_size=n, max_size=n))))
def test_matrix_roundtrip_is_exact(args):
    n, pts, u = args
    pts = np.array(pts)
    rho = np.abs(pts[:, None] - pts[None, :])
    mat, marks = parse_matrix(format_matrix(rho))
    assert np.array_equal(mat, rho) and marks is None
    mat, marks = parse_matrix(format_matrix(rho, u))
    assert np.array_equal(marks, np.array(u))


@pytest.mark.parametrize("text", ["", "x\n", "2\n0 1\n", "2\n0 1\n2 0\n", "2\n0 -1\n-1 0\n",
                                  "2\n0 1\n1 0\n-1 0\n", "2\n0 1 2\n1 0\n"])
def test_malformed_matrices_rejected(text):
    with pytest.raises(ValueError):
        parse_matrix(text)


def test_state_roundtrip():
    st_ = MarkedState.from_ru(np.array([[0, 1.5], [1.5, 0]]), [0.25, 0.5], 2.0)
    back = state_from_text(format_state(st_), 2.0)
    assert isinstance(back, MarkedState) and np.array_equal(back.u, st_.u) and np.array_equal(back.r, st_.r)
    plain = state_from_text(format_state(PlainState(st_.rho())))
    assert isinstance(plain, PlainState)


def test_path_csv_rows():
    stream = generate(XiMeasure.kingman(), 3, 2.0, seed=1)
    path = evolve(PlainState(np.zeros((3, 3))), stream, 2.0, record=True)
    lines = path_csv(path).strip().splitlines()
    assert lines[0] == "event,time,entries" and len(lines) == len(stream) + 2
