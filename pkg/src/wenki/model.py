"""Inverse problems, the tempered density path and its derivative kernels.

All callables are vectorized: a point set of shape ``(..., L)`` maps to
``(..., K)`` values, ``(..., K, L)`` Jacobians and ``(..., K, L, L)`` Hessian
tensors with ``hess[..., k, i, j] = d_i d_j G_k``.

The tempered log-density is

    log rho(u, t) = -t * Phi(u; y) - 1/2 |u - u0|^2_{Gamma0} + const,

with ``Phi(u; y) = 1/2 (y - G(u))^T Gamma^{-1} (y - G(u))``.  Normalizing
constants are never computed here (see :mod:`wenki.oracle`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .numkit import SpdFactor, as_matrix, as_vector

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ForwardModel:
    """Forward map ``G: R^L -> R^K`` with optional analytic derivatives.

    ``linear`` holds ``(A, b)`` when ``G(u) = A u + b``; the Gaussian-flow
    oracle needs it.
    """

    dim_in: int
    dim_out: int
    eval: ArrayFn
    jacobian: ArrayFn | None = None
    hessian: ArrayFn | None = None
    linear: tuple[np.ndarray, np.ndarray] | None = None
    name: str = "custom"

    def __call__(self, u) -> np.ndarray:
        return self.eval(np.asarray(u, dtype=float))

    def second_derivative(self, u, i: int) -> np.ndarray:
        """``d_i grad G(u)`` as a ``(K, L)`` matrix (leading axes preserved)."""
        if self.hessian is None:
            raise ValueError(f"model {self.name!r} has no second derivatives")
        return self.hessian(np.asarray(u, dtype=float))[..., :, i, :]


def finite_difference_model(fn: ArrayFn, dim_in: int, dim_out: int, name: str = "fd") -> ForwardModel:
    """Wrap an eval-only map with central finite-difference derivatives.

    Jacobian steps are ``sqrt(eps) * (1 + |u_i|)``; Hessian steps are
    ``eps**(1/3) * (1 + |u_i|)``.  ``fn`` must be vectorized over leading axes.
    """
    eps = np.finfo(float).eps
    h1, h2 = np.sqrt(eps), eps ** (1.0 / 3.0)

    def jac(u):
        u = np.asarray(u, dtype=float)
        cols = []
        for i in range(dim_in):
            h = h1 * (1.0 + np.abs(u[..., i]))
            e = np.zeros(u.shape)
            e[..., i] = h
            cols.append((fn(u + e) - fn(u - e)) / (2.0 * h[..., None]))
        return np.stack(cols, axis=-1)

    def hess(u):
        u = np.asarray(u, dtype=float)
        h = h2 * (1.0 + np.abs(u))
        out = np.empty(u.shape[:-1] + (dim_out, dim_in, dim_in))
        for i in range(dim_in):
            ei = np.zeros(u.shape)
            ei[..., i] = h[..., i]
            for j in range(i, dim_in):
                ej = np.zeros(u.shape)
                ej[..., j] = h[..., j]
                d = (fn(u + ei + ej) - fn(u + ei - ej) - fn(u - ei + ej) + fn(u - ei - ej))
                d = d / (4.0 * (h[..., i] * h[..., j])[..., None])
                out[..., :, i, j] = d
                out[..., :, j, i] = d
        return out

    return ForwardModel(dim_in, dim_out, fn, jac, hess, name=name)


def linear_model(a, b=None, name: str = "linear") -> ForwardModel:
    a = as_matrix(a, name="A")
    k, l_ = a.shape
    b = np.zeros(k) if b is None else as_vector(b, k, name="b")
    a.setflags(write=False)
    b.setflags(write=False)

    def ev(u):
        return np.asarray(u, dtype=float) @ a.T + b

    def jac(u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(a, u.shape[:-1] + a.shape).copy()

    def hess(u):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-1] + (k, l_, l_))

    return ForwardModel(l_, k, ev, jac, hess, linear=(a, b), name=name)


def _scalar_model(f, df, d2f, name: str) -> ForwardModel:
    def ev(u):
        return f(np.asarray(u, dtype=float)[..., 0])[..., None]

    def jac(u):
        return df(np.asarray(u, dtype=float)[..., 0])[..., None, None]

    def hess(u):
        return d2f(np.asarray(u, dtype=float)[..., 0])[..., None, None, None]

    return ForwardModel(1, 1, ev, jac, hess, name=name)


@dataclass(frozen=True)
class GaussianPrior:
    u0: np.ndarray
    gamma0: np.ndarray
    factor: SpdFactor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        u0 = as_vector(self.u0, name="u0")
        gamma0 = as_matrix(self.gamma0, (u0.size, u0.size), name="gamma0")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "gamma0", gamma0)
        object.__setattr__(self, "factor", SpdFactor.of(gamma0))

    @property
    def dim(self) -> int:
        return self.u0.size


@dataclass(frozen=True)
class InverseProblem:
    """Data ``y = G(u) + eta`` with ``eta ~ N(0, gamma)`` and a Gaussian prior."""

    model: ForwardModel
    prior: GaussianPrior
    y: np.ndarray
    gamma: np.ndarray
    name: str = "custom"
    gamma_factor: SpdFactor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = as_vector(self.y, self.model.dim_out, name="y")
        gamma = as_matrix(self.gamma, (y.size, y.size), name="gamma")
        if self.prior.dim != self.model.dim_in:
            raise ValueError(
                f"prior dimension {self.prior.dim} does not match model input dimension {self.model.dim_in}"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "gamma_factor", SpdFactor.of(gamma))

    @property
    def dim_in(self) -> int:
        return self.model.dim_in

    @property
    def dim_out(self) -> int:
        return self.model.dim_out

    def check_points(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.dim_in:
            raise ValueError(f"points must have trailing dimension {self.dim_in}, got shape {u.shape}")
        return u


@dataclass(frozen=True)
class TemperedDensity:
    problem: InverseProblem
    t: float

    def __post_init__(self):
        t = float(self.t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"tempering time must lie in [0, 1], got {t}")
        object.__setattr__(self, "t", t)


def misfit(problem: InverseProblem, u) -> np.ndarray | float:
    """Least-squares misfit ``1/2 |y - G(u)|^2_Gamma``."""
    u = problem.check_points(u)
    r = problem.y - problem.model.eval(u)
    out = 0.5 * problem.gamma_factor.quad(r)
    return float(out) if out.ndim == 0 else out


def prior_energy(problem: InverseProblem, u) -> np.ndarray:
    return 0.5 * problem.prior.factor.quad(np.asarray(u, dtype=float) - problem.prior.u0)


def log_unnormalized_density(td: TemperedDensity, u) -> np.ndarray | float:
    u = td.problem.check_points(u)
    out = -td.t * misfit(td.problem, u) - prior_energy(td.problem, u)
    return float(out) if np.ndim(out) == 0 else out


def score_v(td: TemperedDensity, u, g=None, jac=None) -> np.ndarray:
    """Gradient of the tempered log-density.

    ``g`` and ``jac`` may be passed when already evaluated at ``u``.
    """
    p = td.problem
    u = p.check_points(u)
    g = p.model.eval(u) if g is None else g
    jac = p.model.jacobian(u) if jac is None else jac
    s = p.gamma_factor.solve(p.y - g)
    data = np.einsum("...ki,...k->...i", jac, s)
    return td.t * data - p.prior.factor.solve(u - p.prior.u0)


def curvature_w(td: TemperedDensity, u, g=None, hess=None) -> np.ndarray:
    """Matrix whose column ``i`` is ``(d_i grad G)^T Gamma^{-1} (y - G)``."""
    p = td.problem
    u = p.check_points(u)
    g = p.model.eval(u) if g is None else g
    hess = p.model.hessian(u) if hess is None else hess
    s = p.gamma_factor.solve(p.y - g)
    return np.einsum("...kij,...k->...ji", hess, s)


def density_hessian_ratio(td: TemperedDensity, u) -> np.ndarray:
    """``H_u rho / rho = V V^T - t J^T Gamma^{-1} J - Gamma0^{-1} + t W``."""
    p = td.problem
    u = p.check_points(u)
    g, jac, hess = p.model.eval(u), p.model.jacobian(u), p.model.hessian(u)
    v = score_v(td, u, g, jac)
    gj = p.gamma_factor.solve(np.swapaxes(jac, -1, -2))  # (..., L, K) rows solved
    jtj = np.einsum("...ik,...kj->...ij", gj, jac)
    prec0 = p.prior.factor.solve(np.eye(p.dim_in))
    w = curvature_w(td, u, g, hess)
    return v[..., :, None] * v[..., None, :] - td.t * jtj - prec0 + td.t * w


# --- builtin problems -------------------------------------------------------

_MIX_CENTERS = np.array([[6.0, 3.0], [3.0, 6.0], [3.0, 0.0], [0.0, 3.0]])
_MIX_WIDTH = 0.2


def _mixture_misfit(u):
    d = u[..., None, :] - _MIX_CENTERS
    return -logsumexp(np.log(0.25) - np.sum(d * d, axis=-1) / _MIX_WIDTH, axis=-1)


def _mixture_misfit_parts(u):
    """Misfit of the four-bump likelihood with its gradient and Hessian."""
    d = u[..., None, :] - _MIX_CENTERS  # (..., 4, 2)
    q = np.log(0.25) - np.sum(d * d, axis=-1) / _MIX_WIDTH
    lse = logsumexp(q, axis=-1)
    p = np.exp(q - lse[..., None])
    dq = -2.0 * d / _MIX_WIDTH
    mean_dq = np.einsum("...m,...mi->...i", p, dq)
    phi = -lse
    grad = -mean_dq
    second = np.einsum("...m,...mi,...mj->...ij", p, dq, dq) - mean_dq[..., :, None] * mean_dq[..., None, :]
    hess = (2.0 / _MIX_WIDTH) * np.eye(2) - second
    return phi, grad, hess


def _mixture_model() -> ForwardModel:
    # G = sqrt(2 Phi_mix) so that 1/2 |0 - G|^2 reproduces the mixture misfit; Phi_mix > 0.
    def ev(u):
        return np.sqrt(2.0 * _mixture_misfit(np.asarray(u, dtype=float)))[..., None]

    def jac(u):
        phi, grad, _ = _mixture_misfit_parts(np.asarray(u, dtype=float))
        g = np.sqrt(2.0 * phi)
        return (grad / g[..., None])[..., None, :]

    def hess(u):
        phi, grad, h = _mixture_misfit_parts(np.asarray(u, dtype=float))
        g = np.sqrt(2.0 * phi)
        dg = grad / g[..., None]
        out = (h - dg[..., :, None] * dg[..., None, :]) / g[..., None, None]
        return out[..., None, :, :]

    return ForwardModel(2, 1, ev, jac, hess, name="example4")


def _example5_model() -> ForwardModel:
    def ev(u):
        u = np.asarray(u, dtype=float)
        a, b = (u[..., 0] - 3.0) ** 2, (u[..., 1] - 3.0) ** 2
        return np.stack([a + 0.5 * b, 0.5 * a + b], axis=-1)

    def jac(u):
        u = np.asarray(u, dtype=float)
        da, db = u[..., 0] - 3.0, u[..., 1] - 3.0
        row1 = np.stack([2.0 * da, db], axis=-1)
        row2 = np.stack([da, 2.0 * db], axis=-1)
        return np.stack([row1, row2], axis=-2)

    const = np.array([[[2.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 2.0]]])

    def hess(u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(const, u.shape[:-1] + const.shape).copy()

    return ForwardModel(2, 2, ev, jac, hess, name="example5")


def _standard_prior(dim: int) -> GaussianPrior:
    return GaussianPrior(np.zeros(dim), np.eye(dim))


def _build(problem_id: str) -> InverseProblem:
    if problem_id == "example1":
        model = _scalar_model(
            lambda u: 4.0 * np.cos(2.0 * (u - 3.0)) + np.sin(u - 3.0),
            lambda u: -8.0 * np.sin(2.0 * (u - 3.0)) + np.cos(u - 3.0),
            lambda u: -16.0 * np.cos(2.0 * (u - 3.0)) - np.sin(u - 3.0),
            "example1",
        )
    elif problem_id == "example2":
        model = _scalar_model(
            lambda u: (u - 3.0) ** 4 - 1.0,
            lambda u: 4.0 * (u - 3.0) ** 3,
            lambda u: 12.0 * (u - 3.0) ** 2,
            "example2",
        )
    elif problem_id == "example3":
        model = _scalar_model(
            lambda u: (u - 5.0) ** 2,
            lambda u: 2.0 * (u - 5.0),
            lambda u: np.full(np.shape(u), 2.0),
            "example3",
        )
    elif problem_id == "example4":
        model = _mixture_model()
    elif problem_id == "example5":
        model = _example5_model()
    elif problem_id == "linear_gaussian_1d":
        return InverseProblem(linear_model(np.eye(1), name=problem_id), _standard_prior(1),
                              np.array([2.0]), np.eye(1), name=problem_id)
    elif problem_id == "linear_gaussian_2d":
        return InverseProblem(linear_model(np.eye(2), name=problem_id), _standard_prior(2),
                              np.array([2.0, 1.0]), np.array([[1.0, 0.2], [0.2, 0.5]]), name=problem_id)
    else:
        raise KeyError(f"unknown problem id {problem_id!r}; choose from {', '.join(BUILTIN_PROBLEMS)}")
    return InverseProblem(model, _standard_prior(model.dim_in), np.zeros(model.dim_out),
                          np.eye(model.dim_out), name=problem_id)


BUILTIN_PROBLEMS = (
    "example1",
    "example2",
    "example3",
    "example4",
    "example5",
    "linear_gaussian_1d",
    "linear_gaussian_2d",
)


def builtin_problem(problem_id: str) -> InverseProblem:
    """Return one of the shipped problems (see ``BUILTIN_PROBLEMS``)."""
    return _build(problem_id)
