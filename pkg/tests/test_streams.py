import numpy as np
import pytest

from nlwlab.streams import StreamFactory, split_stream, stream_key


def test_same_key_same_stream():
    a = split_stream(123, 4).standard_normal(1000)
    b = split_stream(123, 4).standard_normal(1000)
    np.testing.assert_array_equal(a, b)


def test_neighbouring_streams_uncorrelated():
    n = 200_000
    a = split_stream(7, 0).standard_normal(n)
    b = split_stream(7, 1).standard_normal(n)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(n)


def test_million_keys_are_distinct():
    seeds = np.repeat(np.arange(1000), 1000)
    idx = np.tile(np.arange(1000), 1000)
    keys = {stream_key(int(s), int(i)) for s, i in zip(seeds, idx)}
    assert len(keys) == 1_000_000


def test_key_rejects_out_of_range_index():
    with pytest.raises(ValueError):
        stream_key(0, -1)
    with pytest.raises(ValueError):
        stream_key(0, 2**64)


def test_factory_never_reuses_indices():
    f = StreamFactory(5)
    draws = [f().random() for _ in range(5)]
    assert f.issued == [0, 1, 2, 3, 4]
    assert len(set(draws)) == 5
    assert draws[2] == split_stream(5, 2).random()
