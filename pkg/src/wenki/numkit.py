"""Small dense linear algebra and the seeded random source.

Vectors and matrices are plain ``numpy`` arrays.  Every inverse that shows up
in the samplers (noise covariance, prior covariance, Kalman gain) is applied
through a Cholesky factor; nothing here ever forms an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dtrtrs


class NumericalError(ArithmeticError):
    """Base class for numeric failures raised by the samplers."""


class NotSpd(NumericalError):
    """Raised when a matrix expected to be SPD fails to factorize."""


def as_vector(x, n: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.array(x, dtype=float).reshape(-1)
    if n is not None and v.shape[0] != n:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_matrix(x, shape: tuple[int, int] | None = None, name: str = "matrix") -> np.ndarray:
    m = np.array(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"{name} has shape {m.shape}, expected {shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular Cholesky factor ``L`` with ``a = L @ L.T``."""

    lower: np.ndarray

    @classmethod
    def of(cls, a) -> "SpdFactor":
        a = as_matrix(a, name="SPD matrix")
        n, m = a.shape
        if n != m:
            raise NotSpd(f"matrix of shape {a.shape} is not square")
        if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(a).max())):
            raise NotSpd("matrix is not symmetric")
        try:
            lower = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise NotSpd(str(exc)) from None
        if not np.all(np.diag(lower) > 0.0):
            raise NotSpd("non-positive pivot")
        lower.setflags(write=False)
        return cls(lower)

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def solve(self, b) -> np.ndarray:
        """Solve ``a x = b`` along the last axis of ``b`` (any leading shape)."""
        b = np.asarray(b, dtype=float)
        if b.shape[-1] != self.n:
            raise ValueError(f"right-hand side has trailing size {b.shape[-1]}, expected {self.n}")
        flat = b.reshape(-1, self.n).T
        z, _ = dtrtrs(self.lower, flat, lower=1)
        x, _ = dtrtrs(self.lower, z, lower=1, trans=1)
        return x.T.reshape(b.shape)

    def solve_columns(self, b) -> np.ndarray:
        """Solve ``a X = B`` for a matrix right-hand side (columns are systems)."""
        b = np.asarray(b, dtype=float)
        return self.solve(b.T).T if b.ndim == 2 else self.solve(b)

    def quad(self, v) -> np.ndarray:
        """``v^T a^{-1} v`` along the last axis."""
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.n).T
        z, _ = dtrtrs(self.lower, flat, lower=1)
        return np.sum(z * z, axis=0).reshape(v.shape[:-1])

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a``.

    Raises:
        NotSpd: if the Cholesky factorization meets a non-positive pivot.
    """
    a = as_matrix(a, name="a")
    b = as_vector(b, a.shape[0], name="b")
    return SpdFactor.of(a).solve(b)


class RandomSource:
    """Seeded source of uniform and Gaussian variates.

    Wraps a PCG64 bit generator.  Gaussian variates come from numpy's
    ziggurat transform of that stream, so a given seed reproduces the same
    stream bit for bit within one build.  Not thread safe: give each worker
    its own source.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=None) -> np.ndarray | float:
        return self._gen.random(shape)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed})"


def gaussian_vector(rng: RandomSource, mean, cov, size: int | None = None) -> np.ndarray:
    """Draw ``mean + L z`` with ``L`` the Cholesky factor of ``cov``.

    An exactly-zero covariance returns ``mean`` unchanged and consumes no
    variates.  With ``size`` set, returns ``size`` draws stacked row-wise,
    taken from the stream in row order.
    """
    mean = as_vector(mean, name="mean")
    cov = as_matrix(cov, (mean.size, mean.size), name="cov")
    shape = (mean.size,) if size is None else (size, mean.size)
    if not np.any(cov):
        return np.broadcast_to(mean, shape).copy()
    lower = SpdFactor.of(cov).lower
    z = rng.standard_normal(shape)
    return mean + z @ lower.T


def spd_solve_many(a, b) -> np.ndarray:
    """Solve ``a[s] x[s] = b[s]`` for a stack of SPD matrices.

    ``a`` has shape ``(..., n, n)`` and ``b`` shape ``(..., n, m)``.

    Raises:
        NotSpd: naming the first stack index whose factorization fails.
    """
    a = np.asarray(a, dtype=float)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        flat = a.reshape((-1,) + a.shape[-2:])
        for i, m in enumerate(flat):
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise NotSpd(f"matrix {i} of the stack is not positive definite") from None
        raise NotSpd("stack is not positive definite") from None
    z = np.linalg.solve(lower, b)
    return np.linalg.solve(np.swapaxes(lower, -1, -2), z)
