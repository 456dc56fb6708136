import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from xilookdown.event_stream import EventSampler, event_diagnostics, generate, generate_two_sided, stream_from_csv
from xilookdown.partitions import SubsetSystem, subset_systems
from xilookdown.xi_model import InfiniteRateError, XiMeasure, rate_sigma, visible_rate

MIXED = XiMeasure.from_atoms([(1.0, [0.5, 0.25]), (0.5, [0.8])], kingman=0.5)
DUSTY = XiMeasure.from_atoms([(1.0, [0.5]), (0.5, [0.3, 0.3])])


def exact_law(xi, n, scope):
    keep = [s for s in subset_systems(n) if (s.changes_gamma() if scope == "changes_gamma" else bool(s))]
    rates = np.array([rate_sigma(xi, n, s) for s in keep])
    keep = [s for s, r in zip(keep, rates) if r > 0]
    rates = rates[rates > 0]
    return keep, rates / rates.sum(), rates.sum()


@pytest.mark.parametrize("xi,scope", [(MIXED, "changes_gamma"), (DUSTY, "touches_level"),
                                      (XiMeasure.beta(2.0, 1.0), "touches_level"),
                                      (XiMeasure.uniform(), "changes_gamma")])
@pytest.mark.parametrize("method", ["thinning", "categorical"])
def test_sampled_events_follow_rates(xi, scope, method):
    n = 3
    keep, probs, total = exact_law(xi, n, scope)
    sampler = EventSampler(xi, n, scope, method)
    assert sampler.rate == pytest.approx(total, rel=1e-12)
    rng = np.random.default_rng(11)
    draws = Counter(sampler.sample(rng, 1.0).sigma for _ in range(20_000))
    assert set(draws) <= set(keep)
    obs = np.array([draws.get(s, 0) for s in keep])
    p = stats.chisquare(obs, probs * obs.sum()).pvalue
    assert p > 1e-3


def test_event_counts_are_poisson():
    xi = XiMeasure.kingman()
    counts = [len(generate(xi, 4, 10.0, seed=s)) for s in range(400)]
    mean = 6 * 10.0
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / 400)
    assert np.var(counts, ddof=1) == pytest.approx(mean, rel=0.25)


def test_same_seed_same_stream():
    a = generate(MIXED, 5, (0.0, 3.0), seed=42)
    b = generate(MIXED, 5, (0.0, 3.0), seed=42)
    c = generate(MIXED, 5, (0.0, 3.0), seed=43)
    assert a.to_csv() == b.to_csv() != c.to_csv()


def test_stream_times_inside_window_and_sorted():
    s = generate_two_sided(MIXED, 4, 2.0, 3.0, seed=1)
    t = s.times
    assert np.all(np.diff(t) > 0) and t[0] > -2.0 and t[-1] <= 3.0
    assert s.window == (-2.0, 3.0)


def test_csv_roundtrip():
    s = generate(MIXED, 5, 4.0, seed=3)
    back = stream_from_csv(s.to_csv(), 5, s.window)
    assert [(e.time, e.sigma, e.origin, e.atom_finite) for e in back] == \
        [(e.time, e.sigma, e.origin, e.atom_finite) for e in s]


def test_zero_model_gives_empty_stream():
    assert len(generate(XiMeasure(0.0, (), None), 3, 5.0)) == 0


def test_infinite_touch_rate_rejected():
    with pytest.raises(InfiniteRateError):
        generate(XiMeasure.kingman(), 3, 1.0, "touches_level")


def test_mismatched_sampler_rejected():
    sampler = EventSampler(MIXED, 4)
    with pytest.raises(ValueError):
        generate(MIXED, 5, 1.0, sampler=sampler)


def test_restriction_matches_direct_rate():
    # restricting an n-level stream to m levels keeps exactly the events visible at m
    big = [generate(MIXED, 6, 20.0, seed=s).restrict(3) for s in range(200)]
    mean = np.mean([len(b) for b in big])
    expect = visible_rate(MIXED, 3, "changes_gamma") * 20.0
    assert abs(mean - expect) < 4 * math.sqrt(expect / 200)
    assert all(e.sigma.changes_gamma() for b in big for e in b)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_restriction_is_a_projection(n, seed):
    s = generate(MIXED, n, 3.0, seed=seed)
    for m in range(2, n + 1):
        r = s.restrict(m)
        assert r.n == m
        for e in r:
            assert max(x for b in e.sigma.blocks for x in b) <= m
        assert len(r.restrict(2)) == len(s.restrict(2))


def test_diagnostics_counts():
    s = generate(XiMeasure.kingman(), 3, 5.0, seed=9)
    d = event_diagnostics(s, [(0.0, 5.0)], [2, 3])
    # every Kingman event merges one pair: one newborn at level 3, and one at level 2 iff it hits {1, 2}
    hits12 = sum(1 for e in s if e.sigma == SubsetSystem(3, [[1, 2]]))
    assert d.newborn[0, 1] == len(s)
    assert d.newborn[0, 0] == hits12
    assert d.U[0] == 0.0
