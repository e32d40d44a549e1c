import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meshparse.model import ContractError
from meshparse.serialize import (morton_codes, morton_decode, morton_encode, morton_order, normalize_unit_cube,
                                 partition, quantize)
from oracles import interleave_string, morton_sort_oracle


def test_normalize_endpoints():
    out = normalize_unit_cube([(0, 0, 0), (2, 4, 8)])
    np.testing.assert_array_equal(out, [(0, 0, 0), (1, 1, 1)])


def test_normalize_single_point():
    np.testing.assert_array_equal(normalize_unit_cube([(5, 5, 5)]), [(0, 0, 0)])


def test_normalize_random_bounds(rng):
    out = normalize_unit_cube(rng.normal(size=(1000, 3)) * 50)
    assert out.min() >= 0 and out.max() <= 1
    np.testing.assert_array_equal(out.min(axis=0), 0.0)
    np.testing.assert_array_equal(out.max(axis=0), 1.0)


def test_encode_small_cases():
    assert morton_encode((0, 0, 0), 2) == 0
    assert morton_encode((1, 0, 0), 2) == 0b100100
    assert morton_encode((0, 1, 0), 2) == 0b010010
    assert morton_encode((0, 0, 1), 2) == 0b001001


def test_encode_rejects_outside_unit_cube():
    with pytest.raises(ContractError):
        morton_encode((1.5, 0, 0), 4)
    with pytest.raises(ContractError):
        morton_encode((0.5, 0, 0), 0)


def test_codes_match_string_interleave(rng):
    pts = rng.random((1000, 3))
    bits = 10
    q = quantize(pts, bits)
    for i in range(0, 1000, 37):
        assert format(int(morton_codes(pts[i:i + 1], bits)[0]), f"0{3 * bits}b") == interleave_string(q[i], bits)
    order = np.argsort(morton_codes(pts, bits), kind="stable")
    np.testing.assert_array_equal(order, morton_sort_oracle(pts, bits))


@settings(max_examples=200)
@given(st.integers(1, 21), st.data())
def test_decode_inverts_encode(bits, data):
    top = (1 << bits) - 1
    q = data.draw(st.tuples(*[st.integers(0, top)] * 3))
    p = np.array(q, dtype=float) / top
    assert morton_decode(morton_encode(p, bits), bits) == q


def test_full_width_codes_fit_uint64():
    assert morton_encode((1, 1, 1), 21) == (1 << 63) - 1


def test_single_window():
    part = partition(np.random.default_rng(0).random((5000, 3)), 5000)
    assert part.n_windows == 1 and part.pad_count == 0


def test_one_point_over():
    part = partition(np.random.default_rng(0).random((5001, 3)), 5000)
    assert part.n_windows == 2 and part.pad_count == 4999
    np.testing.assert_array_equal(part.populations(), [5000, 1])


def test_collinear_windows():
    part = partition([(0, 0, 0), (0.5, 0, 0), (1, 0, 0)], window_size=2)
    np.testing.assert_array_equal(part.order, [0, 1, 2])
    assert part.windows == ((0, 2), (2, 3))


def test_bad_window_size():
    with pytest.raises(ContractError):
        partition(np.zeros((3, 3)), 0)


def test_duplicates_keep_index_order():
    pts = np.array([(1, 1, 1), (0, 0, 0), (1, 1, 1), (0, 0, 0)], dtype=float)
    np.testing.assert_array_equal(morton_order(pts), [1, 3, 0, 2])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 300), st.just(3)), elements=st.floats(-100, 100)),
       st.integers(1, 64))
def test_partition_invariants(points, window_size):
    part = partition(points, window_size)
    n = len(points)
    np.testing.assert_array_equal(np.sort(part.order), np.arange(n))
    pops = part.populations()
    assert (pops[:-1] == window_size).all() and 1 <= pops[-1] <= window_size
    assert part.n_windows == -(-n // window_size)
    assert part.pad_count == part.n_windows * window_size - n
