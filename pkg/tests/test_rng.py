import numpy as np
from hypothesis import given, strategies as st

from qndsim.rng import child_seed, substream


@given(st.integers(0, 2**63 - 1), st.integers(0, 100), st.integers(0, 10**6))
def test_substream_reproducible(seed, stream, index):
    a = substream(seed, stream, index).random(4)
    b = substream(seed, stream, index).random(4)
    assert np.array_equal(a, b)


def test_streams_differ():
    draws = {tuple(substream(1, s, i).integers(0, 2**62, 2)) for s in range(3) for i in range(50)}
    assert len(draws) == 150


def test_child_seed_range():
    seeds = [child_seed(7, k) for k in range(100)]
    assert len(set(seeds)) == 100
    assert all(0 <= s < 2**63 for s in seeds)


def test_streams_uncorrelated():
    x = np.array([substream(3, 2, i).standard_normal() for i in range(4000)])
    y = np.array([substream(3, 2, i + 1).standard_normal() for i in range(4000)])
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.06
