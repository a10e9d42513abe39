import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wenki.numkit import NotSpd, RandomSource, SpdFactor, gaussian_vector, spd_solve, spd_solve_many


def test_identity_solve():
    assert np.array_equal(spd_solve(np.eye(3), [1, 2, 3]), [1.0, 2.0, 3.0])


def test_two_by_two_solve():
    np.testing.assert_allclose(spd_solve([[2, 1], [1, 2]], [3, 3]), [1.0, 1.0], rtol=1e-14)


def test_indefinite_rejected():
    with pytest.raises(NotSpd):
        spd_solve([[1, 2], [2, 1]], [1, 1])


def test_asymmetric_rejected():
    with pytest.raises(NotSpd):
        SpdFactor.of([[2.0, 1.0], [0.0, 2.0]])


def test_random_spd_residuals():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = rng.integers(1, 9)
        m = rng.standard_normal((n, n))
        a = m.T @ m + np.eye(n)
        b = rng.standard_normal(n)
        x = spd_solve(a, b)
        assert np.linalg.norm(a @ x - b) <= 1e-10 * (1 + np.linalg.norm(b))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32))
def test_factor_reconstructs(n, seed):
    m = np.random.default_rng(seed).standard_normal((n, n))
    a = m.T @ m + np.eye(n)
    f = SpdFactor.of(a)
    assert np.linalg.norm(f.reconstruct() - a) <= 1e-10 * np.linalg.norm(a)
    assert np.allclose(np.tril(f.lower), f.lower)
    np.testing.assert_allclose(f.logdet(), np.linalg.slogdet(a)[1], rtol=1e-10, atol=1e-12)


def test_factor_helpers_batch():
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    f = SpdFactor.of(a)
    v = np.random.default_rng(1).standard_normal((5, 3, 2))
    np.testing.assert_allclose(f.solve(v), np.linalg.solve(a, v[..., None])[..., 0], rtol=1e-12)
    np.testing.assert_allclose(f.quad(v), np.einsum("...i,ij,...j->...", v, np.linalg.inv(a), v), rtol=1e-12)
    b = np.arange(6.0).reshape(2, 3)
    np.testing.assert_allclose(f.solve_columns(b), np.linalg.solve(a, b), rtol=1e-12)


def test_stacked_solve():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((4, 3, 3))
    a = m @ np.swapaxes(m, -1, -2) + np.eye(3)
    b = rng.standard_normal((4, 3, 2))
    np.testing.assert_allclose(a @ spd_solve_many(a, b), b, atol=1e-12)
    a[2] = [[1, 2, 0], [2, 1, 0], [0, 0, 1]]
    with pytest.raises(NotSpd, match="matrix 2"):
        spd_solve_many(a, b)


def test_zero_covariance_returns_mean_without_draws():
    rng = RandomSource(5)
    out = gaussian_vector(rng, [1.5, -2.0], np.zeros((2, 2)))
    assert np.array_equal(out, [1.5, -2.0])
    assert rng.standard_normal(3).tolist() == RandomSource(5).standard_normal(3).tolist()


def test_same_seed_same_stream():
    a = gaussian_vector(RandomSource(11), [0.0, 0.0], [[2.0, 0.3], [0.3, 1.0]], size=50)
    b = gaussian_vector(RandomSource(11), [0.0, 0.0], [[2.0, 0.3], [0.3, 1.0]], size=50)
    assert a.tobytes() == b.tobytes()
    assert RandomSource(12).uniform() != RandomSource(11).uniform()


def test_invalid_covariance():
    with pytest.raises(NotSpd):
        gaussian_vector(RandomSource(0), [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_seed_range():
    with pytest.raises(ValueError):
        RandomSource(-1)
    with pytest.raises(ValueError):
        RandomSource(2**64)
    RandomSource(2**64 - 1)


def test_scalar_law_of_large_numbers():
    n = 10**5
    x = gaussian_vector(RandomSource(2024), [0.0], [[1.0]], size=n)[:, 0]
    assert abs(x.mean()) <= 4 / np.sqrt(n)
    assert abs(x.var() - 1.0) <= 0.05


def test_two_by_two_covariance():
    n = 10**5
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    x = gaussian_vector(RandomSource(99), [1.0, -1.0], cov, size=n)
    emp = np.cov(x.T)
    # standard error of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) <= 5 * se)
