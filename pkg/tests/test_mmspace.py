import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xilookdown.coalescent import equilibrium_tree
from xilookdown.mmspace import (
    Correspondence,
    FiniteMMSpace,
    distortion,
    finite_space_from_matrix,
    ghp_small,
    gromov_prohorov_small,
    max_transport,
    prohorov_distance,
    sample_distance_matrix,
    space_from_json,
    tree_checks,
)
from xilookdown.verify import prohorov_oracle, relation_oracle
from xilookdown.xi_model import XiMeasure


@st.composite
def spaces(draw, min_size=1, max_size=3, marked=False, positive=False):
    m = draw(st.integers(min_size, max_size))
    pts = np.array(draw(st.lists(st.integers(0, 6), min_size=m, max_size=m)), dtype=float) / 4
    d = np.abs(pts[:, None] - pts[None, :])
    w = np.array(draw(st.lists(st.integers(1 if positive else 0, 3), min_size=m, max_size=m)), dtype=float)
    if w.sum() == 0:
        w[0] = 1.0
    marks = np.array(draw(st.lists(st.integers(0, 4), min_size=m, max_size=m)), dtype=float) / 4 if marked else None
    return FiniteMMSpace(d, w / w.sum(), marks)


def test_space_validation():
    with pytest.raises(ValueError):
        FiniteMMSpace([[0, 1], [2, 0]], [0.5, 0.5])
    with pytest.raises(ValueError):
        FiniteMMSpace([[0, 1], [1, 0]], [0.6, 0.6])
    with pytest.raises(ValueError):
        FiniteMMSpace([[0, 1, 5], [1, 0, 1], [5, 1, 0]], [1 / 3] * 3)


def test_json_roundtrip():
    S = FiniteMMSpace([[0, 1], [1, 0]], [0.25, 0.75], [0.0, 2.0])
    T = space_from_json(S.to_json())
    assert np.array_equal(T.dist, S.dist) and np.array_equal(T.marks, S.marks)


def test_ghp_one_point_two_point_fixture():
    one = FiniteMMSpace([[0.0]], [1.0])
    two = FiniteMMSpace([[0, 2.0], [2.0, 0]], [0.5, 0.5])
    assert float(ghp_small(one, two)) == 1.0
    assert float(gromov_prohorov_small(one, two)) == 0.5


def test_identical_spaces_zero():
    rho = equilibrium_tree(XiMeasure.kingman(), 5, 1).rho
    S = finite_space_from_matrix(rho)
    for f in (gromov_prohorov_small, ghp_small):
        assert float(f(S, S)) == 0.0
    assert prohorov_distance(S.weights, S.weights, S) == 0.0


def test_prohorov_hand_example():
    d = np.array([[0, 1.0], [1.0, 0]])
    assert prohorov_distance([1, 0], [0, 1], d) == 1.0
    assert prohorov_distance([0.5, 0.5], [0.75, 0.25], d) == 0.25
    assert prohorov_distance([1, 0], [0, 1], 0.3 * d) == pytest.approx(0.3)


def test_max_transport_full_and_blocked():
    p, q = np.array([0.5, 0.5]), np.array([0.25, 0.75])
    assert max_transport(p, q, np.ones((2, 2), bool)) == pytest.approx(1.0)
    assert max_transport(p, q, np.eye(2, dtype=bool)) == pytest.approx(0.75)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 8), st.data())
def test_prohorov_matches_subset_enumeration(m, data):
    pts = np.array(data.draw(st.lists(st.integers(0, 8), min_size=m, max_size=m)), dtype=float) / 8
    d = np.abs(pts[:, None] - pts[None, :])
    p = np.array(data.draw(st.lists(st.integers(0, 3), min_size=m, max_size=m)), dtype=float)
    q = np.array(data.draw(st.lists(st.integers(0, 3), min_size=m, max_size=m)), dtype=float)
    p[0] += p.sum() == 0
    q[-1] += q.sum() == 0
    p, q = p / p.sum(), q / q.sum()
    assert abs(prohorov_distance(p, q, d) - prohorov_oracle(p, q, d)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(spaces(marked=True), spaces(marked=True))
def test_exact_solvers_match_relation_oracle(A, B):
    assert abs(float(gromov_prohorov_small(A, B)) - relation_oracle(A, B)) <= 1e-9
    assert abs(float(gromov_prohorov_small(A, B, marked=True)) - relation_oracle(A, B, marked=True)) <= 1e-9
    assert abs(float(ghp_small(A, B)) - relation_oracle(A, B, cover=True)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(spaces(max_size=4), spaces(max_size=4), spaces(max_size=4))
def test_gp_metric_properties(A, B, C):
    ab, ba = float(gromov_prohorov_small(A, B)), float(gromov_prohorov_small(B, A))
    assert ab == pytest.approx(ba, abs=1e-12)
    assert ab <= float(gromov_prohorov_small(A, C)) + float(gromov_prohorov_small(C, B)) + 1e-12
    assert float(ghp_small(A, B)) >= ab - 1e-12
    assert 0.0 <= ab <= 1.0


@settings(max_examples=40, deadline=None)
@given(spaces(min_size=3, max_size=5, positive=True), spaces(min_size=3, max_size=5, positive=True))
def test_bounds_bracket_exact_value(A, B):
    exact = float(ghp_small(A, B))
    res = ghp_small(A, B, exact_limit=2)
    assert res.mode == "bounds" and res.value is None
    assert res.lower - 1e-12 <= exact <= res.upper + 1e-12
    gp = float(gromov_prohorov_small(A, B))
    res = gromov_prohorov_small(A, B, exact_limit=2)
    assert res.lower - 1e-12 <= gp <= res.upper + 1e-12


def test_size_gate_switches_to_bounds():
    x = np.arange(7.0)
    S = FiniteMMSpace(np.abs(x[:, None] - x[None, :]), np.full(7, 1 / 7))
    res = gromov_prohorov_small(S, S)
    assert res.mode == "bounds" and res.lower == 0.0


def test_support_only_drops_zero_weight_points():
    A = FiniteMMSpace([[0, 4.0], [4.0, 0]], [1.0, 0.0])
    B = FiniteMMSpace([[0.0]], [1.0])
    assert float(ghp_small(A, B)) == 2.0
    assert float(ghp_small(A, B, support_only=True)) == 0.0


def test_distortion_and_correspondence():
    A = FiniteMMSpace([[0, 1.0], [1.0, 0]], [0.5, 0.5])
    B = FiniteMMSpace([[0, 3.0], [3.0, 0]], [0.5, 0.5])
    rel = Correspondence.of([(0, 0), (1, 1)], (2, 2))
    assert rel.full_cover and distortion(rel, A, B) == 2.0
    assert distortion([], A, B) == 0.0


def test_finite_space_from_matrix_merges_duplicates():
    rho = np.array([[0, 0, 2], [0, 0, 2], [2, 2, 0]], dtype=float)
    S = finite_space_from_matrix(rho)
    assert S.size == 2 and np.allclose(S.weights, [2 / 3, 1 / 3])
    M = finite_space_from_matrix(rho, [0.0, 1.0, 0.0])
    assert M.size == 3


def test_sample_distance_matrix_without_replacement():
    S = FiniteMMSpace(np.abs(np.arange(4.0)[:, None] - np.arange(4.0)[None, :]), np.full(4, 0.25))
    mat, marks = sample_distance_matrix(S, 4, np.random.default_rng(0), replace=False)
    assert marks is None
    assert sorted(mat.sum(axis=1)) == sorted(S.dist.sum(axis=1))
    assert np.all(mat[~np.eye(4, dtype=bool)] > 0)


@pytest.mark.parametrize("seed", range(5))
def test_coalescent_trees_pass_tree_checks(seed):
    rho = equilibrium_tree(XiMeasure.from_atoms([(1.0, [0.5, 0.25])], kingman=1.0), 9, seed).rho
    rep = tree_checks(rho)
    assert rep.ultrametric and rep.four_point


def test_tree_checks_detects_non_tree():
    path = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    rep = tree_checks(path)
    assert not rep.ultrametric and rep.four_point and rep.ultrametric_violation == 1.0
    square = np.array([[0, 1, 2, 1], [1, 0, 1, 2], [2, 1, 0, 1], [1, 2, 1, 0]], dtype=float)
    assert not tree_checks(square).four_point


def test_tree_checks_triangle_223():
    d = np.array([[0, 2, 3], [2, 0, 2], [3, 2, 0]], dtype=float)
    rep = tree_checks(d)
    assert not rep.ultrametric and rep.four_point
