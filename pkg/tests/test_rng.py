import pytest
from hypothesis import given, strategies as st

from xilookdown.rng import MASK64, SeedSpec, as_seed

u64 = st.integers(0, MASK64)


@given(u64, st.integers(0, 1000))
def test_streams_reproducible(root, r):
    a = as_seed(root).replicate(r).generator().random(4)
    b = SeedSpec(root, r).generator().random(4)
    assert list(a) == list(b)


def test_children_and_replicates_are_distinct():
    s = as_seed(7)
    draws = {tuple(x.generator().random(3)) for x in
             (s, s.child(0), s.child(1), s.child(0, 1), s.replicate(1), s.child(0).replicate(1))}
    assert len(draws) == 6


def test_replicate_keeps_sub_path():
    s = as_seed(3).child(2, 5)
    assert s.replicate(9).sub == (2, 5) and s.replicate(9).stream_id == 9


def test_rejects_out_of_range():
    with pytest.raises(ValueError):
        SeedSpec(-1)
    with pytest.raises(ValueError):
        SeedSpec(MASK64 + 1)


def test_json():
    assert as_seed(4).child(1).to_json() == {"root_seed": 4, "stream_id": 0, "sub": [1]}
