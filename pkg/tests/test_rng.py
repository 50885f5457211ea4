import numpy as np
import pytest

from mmdefect.rng import RngStream, cholesky2x2, gaussian2d


def test_same_state_same_values():
    a = RngStream(123).stream("init", 4)
    b = RngStream(123).stream("init", 4)
    np.testing.assert_array_equal(a.uniform(size=100), b.uniform(size=100))
    assert a.counter == b.counter == 100


def test_distinct_streams_differ():
    root = RngStream(1)
    u1 = root.stream("points", 0).uniform(size=50)
    u2 = root.stream("points", 1).uniform(size=50)
    u3 = root.stream("shuffle", 0).uniform(size=50)
    assert not np.array_equal(u1, u2)
    assert not np.array_equal(u1, u3)


def test_uniform_in_range_and_moments():
    u = RngStream(7).uniform(size=200_000)
    assert np.all((u >= 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1 / 12) < 0.005


def test_normal_moments():
    z = RngStream(11).normal(size=200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.02


def test_permutation_is_permutation():
    perm = RngStream(3).permutation(100)
    assert sorted(perm.tolist()) == list(range(100))


def test_gaussian2d_zero_sigma_returns_mu():
    pts = gaussian2d(RngStream(5), (2.0, -3.0), np.zeros((2, 2)), n=10)
    np.testing.assert_array_equal(pts, np.tile([2.0, -3.0], (10, 1)))


def test_gaussian2d_statistics():
    # 1e5 draws: mean within +-0.02 per axis, variance within +-0.03 (4-sigma bands)
    pts = gaussian2d(RngStream(17).stream("mc", 0), (0.0, 0.0), np.eye(2), n=100_000)
    assert np.all(np.abs(pts.mean(axis=0)) < 0.02)
    assert np.all(np.abs(pts.var(axis=0) - 1.0) < 0.03)


def test_gaussian2d_determinism():
    a = gaussian2d(RngStream(9).stream("x", 2), (1.0, 1.0), [[2.0, 0.3], [0.3, 1.0]], n=5)
    b = gaussian2d(RngStream(9).stream("x", 2), (1.0, 1.0), [[2.0, 0.3], [0.3, 1.0]], n=5)
    np.testing.assert_array_equal(a, b)


def test_gaussian2d_correlation():
    sigma = np.array([[2.0, 0.8], [0.8, 1.0]])
    pts = gaussian2d(RngStream(21), (0.0, 0.0), sigma, n=100_000)
    cov = np.cov(pts.T)
    np.testing.assert_allclose(cov, sigma, atol=0.05)


def test_cholesky_rejects_non_psd():
    with pytest.raises(ValueError):
        cholesky2x2([[1.0, 5.0], [5.0, 1.0]])
    with pytest.raises(ValueError):
        cholesky2x2([[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        cholesky2x2([[1.0, 0.5], [0.4, 1.0]])
