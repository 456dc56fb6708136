import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from xilookdown.partitions import Partition, SubsetSystem, nontrivial_partitions, subset_systems
from xilookdown.xi_model import (
    INF,
    SimplexPoint,
    XiMeasure,
    atom_visible_probability,
    classify_dust,
    dust_rate,
    injective_moment,
    kappa_sigma,
    paintbox_labels,
    paintbox_sample,
    rate_pi,
    rate_sigma,
    visible_rate,
    xi_from_json,
)

simplex = st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3).map(
    lambda v: [x / max(1.0, sum(v) * 1.0000001) for x in v])


def brute_kappa(x, n, sigma):
    """Exact paintbox probability by enumerating every component assignment."""
    comps = list(range(len(x))) + [-1]
    probs = list(x) + [max(0.0, 1.0 - sum(x))]
    total = 0.0
    for assign in itertools.product(comps, repeat=n):
        groups = {}
        for lvl, c in enumerate(assign, start=1):
            if c >= 0:
                groups.setdefault(c, []).append(lvl)
        if SubsetSystem(n, groups.values()) == sigma:
            total += math.prod(probs[c] for c in assign)
    return total


def test_simplex_point_validation():
    assert SimplexPoint([0.25, 0.5]).entries == (0.5, 0.25)
    with pytest.raises(ValueError):
        SimplexPoint([0.7, 0.4])
    with pytest.raises(ValueError):
        SimplexPoint([0.5, 0.0])


@pytest.mark.parametrize("x", [[0.5], [0.5, 0.25], [1.0], [0.6, 0.4], [0.3, 0.3, 0.2]])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_kappa_matches_enumeration(x, n):
    p = SimplexPoint(x)
    for sig in subset_systems(n):
        assert kappa_sigma(p, n, sig.sizes) == pytest.approx(brute_kappa(p.entries, n, sig), abs=1e-14)


@given(simplex, st.lists(st.integers(1, 3), min_size=0, max_size=3))
def test_injective_moment_matches_permutations(x, ks):
    brute = sum(math.prod(x[i] ** k for i, k in zip(idx, ks))
                for idx in itertools.permutations(range(len(x)), len(ks)))
    assert injective_moment(x, ks) == pytest.approx(brute, rel=1e-12, abs=1e-300)


def test_kingman_rates():
    xi = XiMeasure.kingman(2.0)
    assert rate_pi(xi, 2, Partition(2, [[1, 2]])) == 2.0
    assert rate_pi(xi, 4, Partition(4, [[1, 2], [3], [4]])) == 2.0
    assert rate_pi(xi, 4, Partition(4, [[1, 2, 3], [4]])) == 0.0
    assert visible_rate(xi, 5, "changes_gamma") == 2.0 * 10
    assert visible_rate(xi, 5, "touches_level") == INF


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (0.5, 1.5), (2.0, 1.0), (1.5, 0.5)])
@pytest.mark.parametrize("n,k", [(2, 2), (3, 2), (4, 3), (5, 5)])
def test_beta_lambda_matches_quadrature(a, b, n, k):
    xi = XiMeasure.beta(a, b)
    val, _ = integrate.quad(lambda x: x ** (k - 2) * (1 - x) ** (n - k) * stats.beta.pdf(x, a, b), 0, 1,
                            limit=200)
    assert rate_sigma(xi, n, SubsetSystem(n, [list(range(1, k + 1))])) == pytest.approx(val, rel=1e-7)


MODELS = [XiMeasure.kingman(), XiMeasure.lambda_dirac(0.5), XiMeasure.lambda_dirac(1.0),
          XiMeasure.from_atoms([(1.0, [0.5, 0.25]), (0.5, [0.9])], kingman=0.3), XiMeasure.beta(1.5, 1.0),
          XiMeasure.uniform()]


@pytest.mark.parametrize("xi", MODELS, ids=lambda m: json.dumps(m.to_json()))
@pytest.mark.parametrize("n", [2, 3, 4])
def test_partition_rates_sum_to_visible_rate(xi, n):
    total = math.fsum(rate_pi(xi, n, p) for p in nontrivial_partitions(n))
    assert total == pytest.approx(visible_rate(xi, n, "changes_gamma"), rel=1e-12)


@pytest.mark.parametrize("xi", [m for m in MODELS if classify_dust(m) == "dust"],
                         ids=lambda m: json.dumps(m.to_json()))
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_subset_rates_sum_to_touch_rate(xi, n):
    total = math.fsum(rate_sigma(xi, n, s) for s in subset_systems(n))
    assert total == pytest.approx(visible_rate(xi, n, "touches_level"), rel=1e-12)
    if n == 1:
        assert total == pytest.approx(dust_rate(xi), rel=1e-12)


@pytest.mark.parametrize("xi", MODELS, ids=lambda m: json.dumps(m.to_json()))
@pytest.mark.parametrize("n", [2, 3, 4])
def test_rates_are_consistent_under_restriction(xi, n):
    # the rate of pi on n levels equals the sum over its extensions to n + 1
    for p in nontrivial_partitions(n):
        ext = [Partition(n + 1, list(p.blocks) + [(n + 1,)])]
        for i in range(len(p.blocks)):
            blocks = [list(b) for b in p.blocks]
            blocks[i].append(n + 1)
            ext.append(Partition(n + 1, blocks))
        assert math.fsum(rate_pi(xi, n + 1, q) for q in ext) == pytest.approx(rate_pi(xi, n, p), rel=1e-12)


def test_dust_classification_table():
    assert classify_dust(XiMeasure.kingman()) == "no_dust"
    assert classify_dust(XiMeasure.lambda_dirac(1.0)) == "dust"
    assert classify_dust(XiMeasure.uniform()) == "no_dust"
    for a in (0.5, 1.0, 1.5, 3.0):
        assert classify_dust(XiMeasure.beta(a, 1.0)) == ("dust" if a > 1 else "no_dust")
    assert classify_dust(XiMeasure.lambda_dirac(0.5, kingman=0.1)) == "no_dust"


def test_visible_probability_closed_forms():
    x = SimplexPoint([0.5])
    assert atom_visible_probability(x, 3, "touches_level") == pytest.approx(1 - 0.5 ** 3)
    # a merger among 3 levels in a one-component paintbox: at least two hits
    assert atom_visible_probability(x, 3, "changes_gamma") == pytest.approx(3 * 0.25 * 0.5 + 0.125)
    assert atom_visible_probability(x, 1, "changes_gamma") == 0.0


@settings(max_examples=20, deadline=None)
@given(simplex, st.integers(1, 3), st.integers(0, 2 ** 32))
def test_paintbox_frequencies(x, n, seed):
    p = SimplexPoint(x)
    rng = np.random.default_rng(seed)
    lab = paintbox_labels(p, n, rng, rows=20_000)
    assert lab.shape == (20_000, n)
    freq = np.mean(lab == 0)
    assert abs(freq - p.entries[0]) < 5 * math.sqrt(p.entries[0] * (1 - p.entries[0]) / lab.size) + 1e-9
    part = paintbox_sample(p, n, rng)
    assert part.n == n


def test_json_roundtrip_and_errors():
    for xi in MODELS + [XiMeasure(0.0, (), None)]:
        assert xi_from_json(json.dumps(xi.to_json())).to_json() == xi.to_json()
    for bad in ({"kingman": -1}, {"atoms": [{"w": 1, "x": [0.8, 0.8]}]}, {"family": {"gamma": 1}}, {"foo": 1},
                [1, 2]):
        with pytest.raises((ValueError, TypeError, KeyError)):
            xi_from_json(bad)
