import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fusionsteer import tensor as T


def test_zeros_ones():
    assert T.zeros([2, 2]).tolist() == [[0, 0], [0, 0]]
    assert T.ones([1, 1, 1, 1]).ravel().tolist() == [1]
    assert T.zeros([2, 3, 4, 5]).size == 120
    assert T.zeros([2]).dtype == np.float32
    with pytest.raises(T.ShapeError):
        T.zeros([2, 0])
    with pytest.raises(T.ShapeError):
        T.zeros([2, 2, 2])


def test_elementwise():
    np.testing.assert_array_equal(T.mul(np.array([1., 2, 3]), np.array([4., 5, 6])), [4, 10, 18])
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(T.add(x, T.zeros([2, 3])), x)
    np.testing.assert_array_equal(T.scale(2, np.array([0.5, -0.5])), [1, -1])
    np.testing.assert_array_equal(T.sub(x, 1.0), x - 1)


def test_no_broadcasting():
    with pytest.raises(T.ShapeError):
        T.add(np.ones((2, 3)), np.ones((1, 3)))
    with pytest.raises(T.ShapeError):
        T.mul(np.ones(3), np.ones(4))


def test_matmul_small():
    np.testing.assert_array_equal(T.matmul(np.eye(2), np.array([[5., 6], [7, 8]])), [[5, 6], [7, 8]])
    np.testing.assert_array_equal(T.matmul(np.array([[1., 2]]), np.array([[3.], [4]])), [[11]])
    with pytest.raises(T.ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_matches_triple_loop():
    rng = T.make_rng(3)
    a, b = T.rand_normal(rng, [4, 3]), T.rand_normal(rng, [3, 2])
    ref = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            for k in range(3):
                ref[i, j] += float(a[i, k]) * float(b[k, j])
    assert np.max(np.abs(T.matmul(a, b) - ref)) < 1e-6


def test_reduce():
    assert T.reduce("mean", [1, 2, 3]) == 2
    assert T.reduce("var", [1, 1, 1]) == 0
    assert T.reduce("median", [0.1, 0.3, 0.0, 0.2]) == pytest.approx(0.15, abs=1e-15)
    assert T.reduce("sum", np.ones((2, 2))) == 4
    assert T.reduce("var", [0.0, 2.0]) == 1.0  # population convention
    with pytest.raises(ValueError):
        T.reduce("mean", [])


def test_random():
    rng = T.make_rng(7)
    assert abs(float(T.rand_normal(rng, [10000], 0, 1).mean())) < 0.05
    assert np.all(T.rand_uniform(T.make_rng(7), [100], 2, 2) == 2)
    np.testing.assert_array_equal(T.rand_normal(T.make_rng(11), [50]), T.rand_normal(T.make_rng(11), [50]))
    x = T.rand_normal(T.make_rng(5), [100000], 0, 1).astype(np.float64)
    assert 0.98 <= np.sqrt(np.mean(x * x)) <= 1.02
    with pytest.raises(ValueError):
        T.rand_normal(rng, [3], 0, -1)
    with pytest.raises(ValueError):
        T.rand_uniform(rng, [3], 1, 0)


def test_uniform_bounds_and_stats():
    u = T.rand_uniform(T.make_rng(1), [20000], -1, 3).astype(np.float64)
    assert u.min() >= -1 and u.max() < 3
    # mean 1, std 4/sqrt(12); 5-sigma bound on the sample mean
    assert abs(u.mean() - 1) < 5 * (4 / np.sqrt(12)) / np.sqrt(u.size)


def test_flatten_layout():
    x = np.arange(1, 9, dtype=np.float32).reshape(1, 2, 2, 2)
    assert T.flatten_sample(x).tolist() == [[1, 2, 3, 4, 5, 6, 7, 8]]
    assert T.flatten_sample(np.zeros((5, 64, 15, 15))).shape == (5, 14400)
    with pytest.raises(T.ShapeError):
        T.reshape(x, [3, 3])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3, width=32)))
def test_reshape_round_trip(x):
    flat = T.flatten_sample(x)
    back = T.reshape(flat, x.shape)
    assert back.tobytes() == x.tobytes()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_mul_commutes(a, b):
    n = min(len(a), len(b))
    np.testing.assert_array_equal(T.mul(a[:n], b[:n]), T.mul(b[:n], a[:n]))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e6, 1e6), st.integers(1, 50))
def test_constant_variance_zero(c, n):
    assert T.reduce("var", np.full(n, c)) == 0.0


def test_identity_matmul_exact():
    a = np.array([[1.5, -2.0, 0.25], [3.0, 4.0, -8.0]])
    assert T.matmul(np.eye(2), a).tobytes() == a.tobytes()


def test_deterministic_flag():
    T.set_deterministic(True)
    try:
        assert T.is_deterministic()
        with T.compute_context():
            pass
    finally:
        T.set_deterministic(False)
    assert not T.is_deterministic()
