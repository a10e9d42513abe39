"""Reference values by tensor-grid quadrature and the linear-Gaussian closed form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .ensemble import EnsembleStats, fmt
from .model import InverseProblem, TemperedDensity, log_unnormalized_density
from .numkit import NumericalError, SpdFactor
from .samplers import wenki_rates

DEFAULT_1D = ((-10.0, 10.0), 4001)
DEFAULT_2D = ((-8.0, 8.0), 801)


class NonFiniteDensity(NumericalError):
    """The tempered log-density is NaN somewhere on the grid."""


def _trapezoid_weights(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.linspace(lo, hi, n)
    w = np.full(n, (hi - lo) / (n - 1))
    w[0] = w[-1] = 0.5 * w[0]
    return x, w


@dataclass(frozen=True)
class GridOracle:
    """Trapezoid quadrature of ``rho(u, t)`` on a tensor grid (``L <= 2``).

    ``points`` has shape ``(P, L)``; ``density`` holds normalized quadrature
    masses (density value times cell weight) summing to one.
    """

    density_path: TemperedDensity
    bounds: tuple[tuple[float, float], ...]
    nodes: tuple[int, ...]
    points: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    log_norm: float = 0.0

    @classmethod
    def build(cls, td: TemperedDensity, bounds=None, nodes=None, check_coverage: bool = True) -> "GridOracle":
        p = td.problem
        dim = p.dim_in
        if dim > 2:
            raise ValueError("quadrature oracle supports at most two dimensions")
        default = DEFAULT_1D if dim == 1 else DEFAULT_2D
        if bounds is None:
            bounds = (default[0],) * dim
        if nodes is None:
            nodes = (default[1],) * dim
        bounds = tuple((float(lo), float(hi)) for lo, hi in np.broadcast_to(np.asarray(bounds, float), (dim, 2)))
        nodes = tuple(int(n) for n in np.broadcast_to(np.asarray(nodes), (dim,)))
        if check_coverage:
            sd = np.sqrt(np.diag(p.prior.gamma0))
            for i, (lo, hi) in enumerate(bounds):
                if lo > p.prior.u0[i] - 8 * sd[i] or hi < p.prior.u0[i] + 8 * sd[i]:
                    raise ValueError(f"grid axis {i} does not cover the prior mean +- 8 standard deviations")
        axes = [_trapezoid_weights(lo, hi, n) for (lo, hi), n in zip(bounds, nodes)]
        if dim == 1:
            pts = axes[0][0][:, None]
            cell = axes[0][1]
        else:
            gx, gy = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
            pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
            cell = np.outer(axes[0][1], axes[1][1]).ravel()
        logp = np.asarray(log_unnormalized_density(td, pts), dtype=float)
        if np.any(np.isnan(logp)):
            raise NonFiniteDensity("tempered log-density is NaN on the grid")
        logm = logp + np.log(cell)
        norm = float(logsumexp(logm))
        if not np.isfinite(norm):
            raise NonFiniteDensity("tempered density has no finite mass on the grid")
        mass = np.exp(logm - norm)
        pts.setflags(write=False)
        mass.setflags(write=False)
        return cls(td, bounds, nodes, pts, mass, norm)

    @property
    def t(self) -> float:
        return self.density_path.t

    @property
    def problem(self) -> InverseProblem:
        return self.density_path.problem

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Quadrature expectation of per-node values (leading axis = nodes)."""
        return np.tensordot(self.mass, values, axes=(0, 0))

    def stats(self) -> EnsembleStats:
        """Exact (quadrature) mean and covariances of ``u`` and ``G(u)``."""
        u = self.points
        g = self.problem.model.eval(u)
        mu, mg = self.expect(u), self.expect(g)
        du, dg = u - mu, g - mg
        wdu = self.mass[:, None] * du
        wdg = self.mass[:, None] * dg
        return EnsembleStats(mu, mg, wdu.T @ du, wdu.T @ dg, wdg.T @ dg)


def oracle(problem: InverseProblem, t: float = 1.0, bounds=None, nodes=None) -> GridOracle:
    return GridOracle.build(TemperedDensity(problem, t), bounds, nodes)


def grid_moment(o: GridOracle, k: int) -> float:
    """``E|u|^k`` under the normalized tempered density."""
    if int(k) != k or k < 1:
        raise ValueError("moment order must be a positive integer")
    if np.any(np.isnan(o.mass)):
        raise NonFiniteDensity("cached density contains NaN")
    r = np.linalg.norm(o.points, axis=1)
    return float(o.expect(r ** int(k)))


def gaussian_flow(problem: InverseProblem, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the tempered density for ``G(u) = A u + b``.

    ``Cov = (t A^T Gamma^{-1} A + Gamma0^{-1})^{-1}`` and
    ``mean = Cov (t A^T Gamma^{-1} (y - b) + Gamma0^{-1} u0)``.  The data
    term equals ``t A^T Gamma^{-1} A u*`` for any least-squares minimizer
    ``u*``, so no pseudo-inverse is needed.
    """
    td = TemperedDensity(problem, t)
    lin = problem.model.linear
    if lin is None:
        raise ValueError(f"problem {problem.name!r} is not linear")
    a, b = lin
    gf, pf = problem.gamma_factor, problem.prior.factor
    ga = gf.solve_columns(a)  # Gamma^{-1} A
    prec0 = pf.solve_columns(np.eye(problem.dim_in))
    prec = td.t * a.T @ ga + prec0
    prec = 0.5 * (prec + prec.T)
    f = SpdFactor.of(prec)
    cov = f.solve_columns(np.eye(problem.dim_in))
    cov = 0.5 * (cov + cov.T)
    rhs = td.t * ga.T @ (problem.y - b) + pf.solve(problem.prior.u0)
    return f.solve(rhs), cov


def gaussian_flow_stats(problem: InverseProblem, t: float) -> EnsembleStats:
    """Exact statistics of ``(u, G(u))`` along the linear Gaussian flow."""
    mean, cov = gaussian_flow(problem, t)
    a, b = problem.model.linear
    return EnsembleStats(mean, a @ mean + b, cov, cov @ a.T, a @ cov @ a.T)


def misfit_curve(problem: InverseProblem, t_nodes, bounds=None, nodes=None) -> list[float]:
    """``E^{rho(t)} |y - G|^2_Gamma`` at each tempering time, by quadrature."""
    out = []
    for t in t_nodes:
        o = oracle(problem, t, bounds, nodes)
        r = problem.y - problem.model.eval(o.points)
        out.append(float(o.expect(problem.gamma_factor.quad(r))))
    return out


def enki_inconsistency(problem: InverseProblem, t_nodes=None, bounds=None, nodes=None) -> float:
    """Double quadrature of ``(1 + |u|^2) |R1 + R2 + R3| rho`` over the grid and ``t``.

    The weight rate is evaluated with exact quadrature statistics at each
    node in ``t``; the outer integral is the composite trapezoid rule.
    """
    t_nodes = np.linspace(0.0, 1.0, 21) if t_nodes is None else np.asarray(t_nodes, dtype=float)
    inner = []
    for t in t_nodes:
        o = oracle(problem, float(t), bounds, nodes)
        rate = wenki_rates(problem, o.points, float(t), o.stats())
        weight = 1.0 + np.sum(o.points ** 2, axis=1)
        inner.append(float(o.expect(weight * np.abs(rate))))
    return float(np.trapezoid(inner, t_nodes)) if len(t_nodes) > 1 else 0.0


ORACLE_HEADER = ["example", "t", "k", "value"]


def write_oracle_csv(path, rows) -> None:
    """Rows of ``(example, t, k, value)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ORACLE_HEADER)
        for ex, t, k, v in rows:
            w.writerow([ex, fmt(t), str(int(k)), fmt(v)])


def read_oracle_csv(path) -> list[tuple[str, float, int, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(ex, float(t), int(k), float(v)) for ex, t, k, v in r]
