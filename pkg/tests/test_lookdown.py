import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xilookdown.event_stream import generate
from xilookdown.lookdown import (
    ESCAPED,
    MarkedState,
    PlainState,
    ancestor_vector,
    ancestral_level,
    apply_pi,
    apply_sigma,
    compose,
    descendant_level,
    detect_jumps,
    dust_partition,
    evolve,
    flow_partition,
    grow,
    meet_times,
    pair_distance,
    sampling_measure,
)
from xilookdown.mmspace import tree_checks
from xilookdown.partitions import Partition, SubsetSystem, parse_partition, parse_subset_system
from xilookdown.xi_model import XiMeasure

HALF = XiMeasure.lambda_dirac(0.5)
MIXED = XiMeasure.from_atoms([(1.0, [0.5, 0.25])], kingman=1.0)


def subset_system(n):
    """Random subset systems on {1..n}: label -1 means not involved."""
    return st.lists(st.integers(-1, n - 1), min_size=n, max_size=n).map(
        lambda lab: SubsetSystem(n, [[i + 1 for i, v in enumerate(lab) if v == c] for c in set(lab) if c >= 0]))


@st.composite
def marked_states(draw, max_n=7):
    n = draw(st.integers(1, max_n))
    pts = np.array(draw(st.lists(st.floats(0, 5), min_size=n, max_size=n)))
    r = np.abs(pts[:, None] - pts[None, :])
    u = np.array(draw(st.lists(st.floats(0, 3), min_size=n, max_size=n)))
    return MarkedState.from_ru(r, u, time=draw(st.floats(3, 10)))


def test_apply_pi_hand_example():
    rho = np.array([[0, 1, 2, 3], [1, 0, 4, 5], [2, 4, 0, 6], [3, 5, 6, 0]], dtype=float)
    out = apply_pi(rho, parse_partition("1,3|2|4"))
    # levels 1 and 3 copy level 1; level 2 copies 2; level 4 copies 3
    expect = np.array([[0, 1, 0, 2], [1, 0, 1, 4], [0, 1, 0, 2], [2, 4, 2, 0]], dtype=float)
    assert np.array_equal(out, expect)


def test_apply_sigma_hand_example():
    st0 = MarkedState.from_ru(np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float), [0.5, 0.25, 1.0], 2.0)
    out = apply_sigma(st0, parse_subset_system("2", 3))
    # level 2 took part alone: its u moves into r, its mark resets
    assert np.allclose(out.u, [0.5, 0.0, 1.0])
    assert np.allclose(out.rho(), st0.rho())
    out2 = apply_sigma(st0, parse_subset_system("1,3", 3))
    assert np.allclose(out2.u, [0.0, 0.25, 0.0])
    assert out2.r[0, 2] == 0.0
    assert np.allclose(out2.rho(), apply_pi(st0.rho(), parse_partition("1,3|2")))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_commutation_property(data):
    state = data.draw(marked_states())
    sig = data.draw(subset_system(state.n))
    lhs = apply_sigma(state, sig).rho()
    rhs = apply_pi(state.rho(), sig.partition())
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@given(marked_states(), st.floats(0, 5))
def test_growth_commutes_with_compose(state, dt):
    lhs = grow(state, dt).rho()
    rhs = grow(PlainState(state.rho(), state.time), dt).rho
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_grow_rejects_negative_and_wrong_representation():
    with pytest.raises(ValueError):
        grow(PlainState(np.zeros((2, 2))), -1.0)
    with pytest.raises(ValueError):
        grow(PlainState(np.zeros((2, 2))), 1.0, "marked")


def test_zero_model_is_pure_growth():
    stream = generate(XiMeasure(0.0, (), None), 4, 3.0)
    path = evolve(PlainState(np.zeros((4, 4))), stream, 3.0)
    expect = np.full((4, 4), 6.0)
    np.fill_diagonal(expect, 0.0)
    assert np.array_equal(path.final.rho, expect)


@pytest.mark.parametrize("seed", range(5))
def test_evolution_matches_genealogy(seed):
    n, T = 6, 3.0
    stream = generate(MIXED, n, T, seed=seed)
    rho0 = np.array(tree_free_matrix(n, seed))
    final = evolve(PlainState(rho0), stream, T).final.rho
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            d = 0.0 if i == j else pair_distance(stream, rho0, (T, i), (T, j))
            assert final[i - 1, j - 1] == pytest.approx(d, abs=1e-12)


def tree_free_matrix(n, seed):
    pts = np.random.default_rng(seed).uniform(0, 2, n)
    return np.abs(pts[:, None] - pts[None, :])


@pytest.mark.parametrize("seed", range(5))
def test_meet_times_reproduce_distances(seed):
    n, T = 8, 4.0
    stream = generate(MIXED, n, T, seed=seed)
    grid = [1.0, 2.5, 4.0]
    _, snaps = evolve(PlainState(np.zeros((n, n))), stream, T, checkpoints=grid)
    for t, st_, M in zip(grid, snaps, meet_times(stream, n, 0.0, grid)):
        rho = 2.0 * (t - M)
        np.fill_diagonal(rho, 0.0)
        assert np.allclose(rho, st_.rho, atol=1e-12)


def test_ancestry_consistency():
    stream = generate(MIXED, 6, 5.0, seed=4)
    anc = ancestor_vector(stream, 1.0, 4.0, 6)
    for j in range(1, 7):
        assert anc[j - 1] == ancestral_level(stream, 4.0, j, 1.0)
    for i in range(1, 7):
        d = descendant_level(stream, 1.0, i, 4.0)
        if d is ESCAPED:
            assert i not in anc
        else:
            assert anc[d - 1] == i and i not in anc[: d - 1]


def test_levels_only_look_down():
    stream = generate(MIXED, 6, 5.0, seed=8)
    for s in (0.0, 2.0):
        assert np.all(ancestor_vector(stream, s, 5.0, 6) <= np.arange(1, 7))


def test_flow_partition_matches_ancestors():
    stream = generate(MIXED, 7, 5.0, seed=2)
    final = evolve(PlainState(np.zeros((7, 7))), stream, 5.0).final
    for s in (1.0, 3.0, 4.5):
        anc = ancestor_vector(stream, s, 5.0, 7)
        assert flow_partition(final.rho, 5.0, s) == Partition.from_labels(anc.tolist())


def test_evolve_checkpoints_and_record():
    stream = generate(MIXED, 4, 2.0, seed=1)
    path, snaps = evolve(PlainState(np.zeros((4, 4))), stream, 2.0, record=True, checkpoints=[0.5, 2.0])
    assert len(path.states) == len(stream)
    assert np.array_equal(snaps[-1].rho, path.final.rho)
    assert np.allclose(path.state_at(0.5).rho, snaps[0].rho)
    with pytest.raises(ValueError):
        evolve(PlainState(np.zeros((4, 4))), stream, 2.0, checkpoints=[1.0, 0.5])


def test_marked_and_plain_evolutions_agree():
    stream = generate(HALF, 10, 5.0, "touches_level", seed=3)
    a = evolve(MarkedState.zero(10), stream, 5.0).final
    b = evolve(PlainState(np.zeros((10, 10))), stream, 5.0).final
    assert np.allclose(a.rho(), b.rho, atol=1e-12)
    assert tree_checks(b.rho).ultrametric


def test_dust_partition_and_sampling_measure():
    stream = generate(HALF, 12, 1.0, "touches_level", seed=5)
    state = evolve(MarkedState.zero(12), stream, 1.0).final
    dp = dust_partition(state)
    never = {i + 1 for i in range(12) if not any(e.sigma.in_union[i] for e in stream)}
    assert dp.dust == frozenset(never)
    ws = sampling_measure(state, "dust_decomposed")
    assert ws.total() == pytest.approx(1.0)
    assert ws.remainder == pytest.approx(len(never) / 12)
    uni = sampling_measure(state)
    assert uni.total() == pytest.approx(1.0)
    fl = sampling_measure(state, "flow", s=0.5)
    assert fl.total() == pytest.approx(1.0)


def test_detect_jumps_relations():
    star = XiMeasure.from_atoms([(1.0, [1.0])], kingman=1.0)
    for seed in range(10):
        stream = generate(star, 6, 5.0, seed=seed)
        log = detect_jumps(stream)
        theta, theta_f, proxy = set(log.theta), set(log.theta_f), set(log.theta_prime_proxy)
        assert theta_f <= theta and theta_f <= proxy
        king = {e.time for e in stream if e.origin == "kingman"}
        assert not king & theta
        assert theta == {e.time for e in stream if e.origin != "kingman"}


def test_compose_zero_diagonal():
    r = np.ones((3, 3))
    assert np.all(np.diag(compose(r, np.array([1.0, 2.0, 3.0]))) == 0)


def test_apply_sigma_three_level_example():
    r = np.array([[0, 10, 20], [10, 0, 30], [20, 30, 0]], dtype=float)
    out = apply_sigma(MarkedState.from_ru(r, [3.0, 5.0, 7.0], 8.0), parse_subset_system("1,2", 3))
    assert np.array_equal(out.u, [0.0, 0.0, 5.0])
    assert out.r[0, 1] == 0.0 and out.r[0, 2] == 13.0 and out.r[1, 2] == 13.0
