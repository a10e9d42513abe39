import numpy as np
import pytest

from wenki.model import (
    BUILTIN_PROBLEMS,
    GaussianPrior,
    InverseProblem,
    TemperedDensity,
    builtin_problem,
    curvature_w,
    density_hessian_ratio,
    finite_difference_model,
    linear_model,
    log_unnormalized_density,
    misfit,
    score_v,
)

EXAMPLES = ("example1", "example2", "example3", "example4", "example5")


def sample_points(problem, n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.5, 4.5, size=(n, problem.dim_in))


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def fd_jacobian(fn, u, h=1e-3):
    """Fourth-order central differences, so the oracle stays accurate near stationary points."""
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h * (1 + abs(u[i]))
        d = 8 * (fn(u + e) - fn(u - e)) - (fn(u + 2 * e) - fn(u - 2 * e))
        cols.append(d / (12 * e[i]))
    return np.stack(cols, axis=-1)


def test_misfit_examples():
    lin = InverseProblem(linear_model(np.eye(1)), GaussianPrior([0.0], [[1.0]]), [0.7], [[1.0]])
    assert misfit(lin, [0.7]) == 0.0
    ex3 = builtin_problem("example3")
    assert misfit(ex3, [3.0]) == 8.0
    assert misfit(ex3, [5.0]) == 0.0


def test_misfit_dimension_mismatch():
    with pytest.raises(ValueError):
        misfit(builtin_problem("example5"), [1.0, 2.0, 3.0])


def test_log_density_examples():
    ex3 = builtin_problem("example3")
    assert log_unnormalized_density(TemperedDensity(ex3, 0.0), [0.0]) == 0.0
    lin = builtin_problem("linear_gaussian_1d")
    assert log_unnormalized_density(TemperedDensity(lin, 1.0), [1.0]) == -1.0
    assert log_unnormalized_density(TemperedDensity(ex3, 0.5), [5.0]) == -12.5


def test_tempering_time_validated():
    with pytest.raises(ValueError):
        TemperedDensity(builtin_problem("example3"), 1.5)


def test_score_examples():
    ex3 = builtin_problem("example3")
    assert score_v(TemperedDensity(ex3, 0.0), [2.0]).tolist() == [-2.0]
    assert score_v(TemperedDensity(ex3, 1.0), [4.0]).tolist() == [-2.0]


def test_curvature_examples():
    lin = builtin_problem("linear_gaussian_2d")
    assert not np.any(curvature_w(TemperedDensity(lin, 0.4), [0.3, -1.0]))
    ex3 = builtin_problem("example3")
    assert curvature_w(TemperedDensity(ex3, 1.0), [4.0]).tolist() == [[-2.0]]


def test_builtin_values():
    ex3 = builtin_problem("example3").model
    assert ex3([3.0]).tolist() == [4.0]
    assert ex3.jacobian(np.array([3.0])).tolist() == [[-4.0]]
    assert ex3.second_derivative([3.0], 0).tolist() == [[2.0]]
    ex2 = builtin_problem("example2").model
    assert ex2([3.0]).tolist() == [-1.0]
    assert ex2.jacobian(np.array([3.0])).tolist() == [[0.0]]
    ex5 = builtin_problem("example5").model
    assert not np.any(ex5.jacobian(np.array([3.0, 3.0])))


def test_unknown_problem():
    with pytest.raises(KeyError):
        builtin_problem("example9")


def test_mixture_recast_reproduces_mixture_misfit():
    p = builtin_problem("example4")
    centers = np.array([[6, 3], [3, 6], [3, 0], [0, 3]], dtype=float)
    u = sample_points(p, 50, 4)
    direct = -np.log(0.25 * np.exp(-np.sum((u[:, None, :] - centers) ** 2, axis=-1) / 0.2).sum(axis=1))
    np.testing.assert_allclose(misfit(p, u), direct, rtol=1e-10)
    assert np.all(misfit(p, u) >= np.log(4) - 1e-12)


@pytest.mark.parametrize("pid", BUILTIN_PROBLEMS)
def test_jacobian_matches_finite_differences(pid):
    p = builtin_problem(pid)
    for u in sample_points(p, 100, 1):
        assert rel_err(p.model.jacobian(u), fd_jacobian(p.model.eval, u)) <= 1e-5


@pytest.mark.parametrize("pid", BUILTIN_PROBLEMS)
def test_second_derivatives_match_finite_differences(pid):
    p = builtin_problem(pid)
    m = p.model
    for u in sample_points(p, 100, 2):
        fd = fd_jacobian(m.jacobian, u)  # fd[k, j, i] = d_i d_j G_k
        for i in range(p.dim_in):
            assert rel_err(m.second_derivative(u, i), fd[..., i]) <= 1e-4


@pytest.mark.parametrize("pid", BUILTIN_PROBLEMS)
def test_score_and_hessian_identity(pid):
    p = builtin_problem(pid)
    rng = np.random.default_rng(3)
    for u, t in zip(sample_points(p, 100, 3), rng.uniform(0, 1, 100)):
        td = TemperedDensity(p, t)
        f = lambda x: np.atleast_1d(log_unnormalized_density(td, x))
        v = score_v(td, u)
        assert rel_err(v, fd_jacobian(f, u)[0]) <= 1e-5
        fd_hess = fd_jacobian(lambda x: score_v(td, x), u)
        expected = fd_hess + np.outer(v, v)
        assert rel_err(density_hessian_ratio(td, u), expected) <= 1e-4


@pytest.mark.parametrize("pid", BUILTIN_PROBLEMS)
def test_time_derivative_is_minus_misfit(pid):
    p = builtin_problem(pid)
    u = sample_points(p, 2, 5)
    h = 1e-3
    d = [(log_unnormalized_density(TemperedDensity(p, 0.5 + h), x)
          - log_unnormalized_density(TemperedDensity(p, 0.5 - h), x)) / (2 * h) for x in u]
    dphi = misfit(p, u[0]) - misfit(p, u[1])
    assert abs((d[0] - d[1]) + dphi) <= 1e-9 * (1 + abs(dphi))


def test_finite_difference_adaptor():
    exact = builtin_problem("example5").model
    fd = finite_difference_model(exact.eval, 2, 2)
    u = sample_points(builtin_problem("example5"), 20, 8)
    assert rel_err(fd.jacobian(u), exact.jacobian(u)) <= 1e-7
    assert rel_err(fd.hessian(u), exact.hessian(u)) <= 1e-5


def test_prior_dimension_checked():
    with pytest.raises(ValueError):
        InverseProblem(linear_model(np.eye(2)), GaussianPrior([0.0], [[1.0]]), [0.0, 0.0], np.eye(2))
