"""Weighted particle ensembles, their statistics and weight diagnostics.

Weights live in log space.  A step multiplies weights by ``exp(dt * rate)``,
which is an addition on ``log_weights``; normalization is a log-sum-exp.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import ForwardModel
from .numkit import NumericalError, RandomSource


class AllWeightsVanished(NumericalError):
    """Every log-weight is -inf (or NaN), so normalization is impossible."""


@dataclass(frozen=True)
class WeightedEnsemble:
    """``N`` particles in ``R^L`` with log-weights at tempering time ``t``."""

    particles: np.ndarray
    log_weights: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u = np.array(self.particles, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError(f"particles must have shape (N, L) with N >= 1, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("particle positions must be finite")
        lw = np.array(self.log_weights, dtype=float).reshape(-1)
        if lw.shape[0] != u.shape[0]:
            raise ValueError(f"{lw.shape[0]} log-weights for {u.shape[0]} particles")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise AllWeightsVanished("log-weights contain NaN or +inf")
        u.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "particles", u)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def uniform(cls, particles, t: float = 0.0) -> "WeightedEnsemble":
        u = np.asarray(particles, dtype=float)
        n = u.shape[0]
        return cls(u, np.full(n, -np.log(n)), t)

    @classmethod
    def from_weights(cls, particles, weights, t: float = 0.0) -> "WeightedEnsemble":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(particles, np.log(w), t)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Normalized linear-space weights."""
        lw = self.log_weights
        if np.all(lw == lw[0]) and np.isfinite(lw[0]):
            return np.full(self.n, 1.0 / self.n)
        top = logsumexp(lw)
        if not np.isfinite(top):
            raise AllWeightsVanished("every log-weight is -inf")
        return np.exp(lw - top)

    def with_state(self, particles=None, log_weights=None, t=None) -> "WeightedEnsemble":
        return replace(
            self,
            particles=self.particles if particles is None else particles,
            log_weights=self.log_weights if log_weights is None else log_weights,
            t=self.t if t is None else t,
        )


@dataclass(frozen=True)
class EnsembleStats:
    mean_u: np.ndarray
    mean_g: np.ndarray
    cov_uu: np.ndarray
    cov_up: np.ndarray
    cov_pp: np.ndarray

    @property
    def cov_pu(self) -> np.ndarray:
        return self.cov_up.T


def normalize_weights(e: WeightedEnsemble) -> WeightedEnsemble:
    """Shift log-weights so the weights sum to one.

    Raises:
        AllWeightsVanished: if no log-weight is finite.
    """
    lw = e.log_weights
    if np.all(lw == lw[0]) and np.isfinite(lw[0]):
        return e.with_state(log_weights=np.full(e.n, -np.log(e.n)))
    top = logsumexp(lw)
    if not np.isfinite(top):
        raise AllWeightsVanished("every log-weight is -inf; cannot normalize")
    return e.with_state(log_weights=lw - top)


def stats_from_values(u: np.ndarray, g: np.ndarray, w: np.ndarray) -> EnsembleStats:
    """Weighted means and covariances of ``(u, G(u))`` pairs.

    Reductions run over the particle axis in index order.
    """
    mean_u = w @ u
    mean_g = w @ g
    du = u - mean_u
    dg = g - mean_g
    wdu = w[:, None] * du
    wdg = w[:, None] * dg
    return EnsembleStats(
        mean_u=mean_u,
        mean_g=mean_g,
        cov_uu=wdu.T @ du,
        cov_up=wdu.T @ dg,
        cov_pp=wdg.T @ dg,
    )


def stats(e: WeightedEnsemble, model: ForwardModel, weighted: bool = True,
          g: np.ndarray | None = None) -> EnsembleStats:
    """Ensemble statistics of particles and their images under ``model``.

    ``weighted=False`` uses plain ``1/N`` averages.  ``G`` is evaluated once
    per particle unless precomputed values ``g`` are supplied.
    """
    if g is None:
        g = model.eval(e.particles)
    w = e.weights if weighted else np.full(e.n, 1.0 / e.n)
    return stats_from_values(e.particles, g, w)


def weight_variance(e: WeightedEnsemble) -> float:
    """``(1/N) sum (N w_n)^2 - 1``, evaluated as ``N sum (w_n - 1/N)^2``.

    The second form is algebraically equal, never negative and exactly zero
    for uniform weights.
    """
    d = e.weights - 1.0 / e.n
    return float(e.n * np.sum(d * d))


def weighted_moment(e: WeightedEnsemble, k: int) -> float:
    """``sum_n w_n |u_n|^k`` with the Euclidean norm."""
    if int(k) != k or k < 1:
        raise ValueError("moment order must be a positive integer")
    r = np.linalg.norm(e.particles, axis=1)
    return float(e.weights @ r ** int(k))


def effective_sample_size(e: WeightedEnsemble) -> float:
    w = e.weights
    return float(1.0 / np.sum(w * w))


def systematic_resample(e: WeightedEnsemble, rng: RandomSource) -> WeightedEnsemble:
    """Systematic resampling with one shared uniform offset; output weights are uniform."""
    n = e.n
    positions = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(e.weights)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, positions, side="right")
    idx = np.minimum(idx, n - 1)
    return WeightedEnsemble.uniform(e.particles[idx], e.t)


# --- CSV snapshots ----------------------------------------------------------

def fmt(x: float) -> str:
    return format(float(x), ".17g")


def snapshot_header(dim: int) -> list[str]:
    return ["t", "particle_index", "w"] + [f"u_{i + 1}" for i in range(dim)]


def snapshot_rows(e: WeightedEnsemble) -> Iterable[list[str]]:
    w = e.weights
    t = fmt(e.t)
    for n in range(e.n):
        yield [t, str(n), fmt(w[n])] + [fmt(x) for x in e.particles[n]]


def write_snapshots(path, snapshots: Sequence[WeightedEnsemble]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(snapshot_header(snapshots[0].dim))
        for e in snapshots:
            writer.writerows(snapshot_rows(e))


@dataclass(frozen=True)
class SnapshotRecord:
    """One parsed snapshot, exactly as stored."""

    t: float
    particles: np.ndarray
    weights: np.ndarray

    def ensemble(self) -> WeightedEnsemble:
        return WeightedEnsemble.from_weights(self.particles, self.weights, self.t)


def read_snapshots(path) -> list[SnapshotRecord]:
    """Inverse of :func:`write_snapshots`, grouped by ``t`` in file order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 3
        groups: dict[str, list[list[str]]] = {}
        for row in reader:
            groups.setdefault(row[0], []).append(row)
    out = []
    for t, rows in groups.items():
        rows.sort(key=lambda r: int(r[1]))
        w = np.array([float(r[2]) for r in rows])
        u = np.array([[float(x) for x in r[3:3 + dim]] for r in rows])
        out.append(SnapshotRecord(float(t), u, w))
    return out
