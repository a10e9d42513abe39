"""Ensemble samplers: IS, EnSRF, EnKI, their weighted variants and WEnKF.

Every time-marching method follows the same step order: statistics at the
start of the step, then weight rates from those statistics and the pre-move
positions, then the particle move and the reweighting.  Weighted methods
use the weighted statistics ``sum_n w_n (.)``; EnKI and EnSRF use ``1/N``
averages and never touch the weights.

The kernels work on stacks of independent ensembles: positions of shape
``(S, N, L)`` and log-weights ``(S, N)``, one row per seed.  The single
ensemble steps are stacks of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ensemble import AllWeightsVanished, EnsembleStats, WeightedEnsemble, normalize_weights, stats_from_values
from .model import InverseProblem, TemperedDensity, curvature_w, log_unnormalized_density, misfit, score_v
from .numkit import NumericalError, RandomSource, SpdFactor, spd_solve_many

# Below this normalized log-weight exp() underflows to exactly zero.
EXTINCT_LOG_WEIGHT = float(np.log(np.finfo(float).smallest_subnormal))

METHODS = ("is", "ensrf", "enki", "wensrf", "wenki", "wenkf")
SINGLE_SHOT = ("is", "wenkf")
WEIGHTED_FLOWS = ("wensrf", "wenki")


class StepFailure(NumericalError):
    """A sampler step failed; ``step`` is the zero-based index of the failing step."""

    def __init__(self, method: str, step: int, cause: Exception, seed: int | None = None):
        where = f" (seed {seed})" if seed is not None else ""
        super().__init__(f"{method} failed at step {step}{where}: {cause}")
        self.method = method
        self.step = step
        self.seed = seed
        self.cause = cause


def step_count(dt: float) -> int:
    """Number of steps ``M`` with ``M * dt == 1``; rejects steps that do not divide 1."""
    dt = float(dt)
    if not 0.0 < dt <= 1.0:
        raise ValueError(f"time step must lie in (0, 1], got {dt}")
    m = round(1.0 / dt)
    if abs(m * dt - 1.0) > 1e-12:
        raise ValueError(f"time step {dt} does not divide 1")
    return m


@dataclass(frozen=True)
class SamplerConfig:
    method: str
    n_particles: int
    dt: float = 1e-3
    seed: int = 0
    stats_weighted: bool | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if isinstance(self.n_particles, bool) or int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError("n_particles must be a positive integer")
        step_count(self.dt)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.stats_weighted is None:
            object.__setattr__(self, "stats_weighted", self.method in WEIGHTED_FLOWS)

    @property
    def steps(self) -> int:
        return 1 if self.method in SINGLE_SHOT else step_count(self.dt)


@dataclass
class Trajectory:
    """Ensemble snapshots from ``t = 0`` to ``t = 1``.

    ``variance`` holds ``(t, Var(N w))`` after every step taken, so a
    single-shot method has exactly one entry at ``t = 1``.
    """

    method: str
    seed: int = 0
    snapshots: list[WeightedEnsemble] = field(default_factory=list)
    variance: list[tuple[float, float]] = field(default_factory=list)

    @property
    def final(self) -> WeightedEnsemble:
        return self.snapshots[-1]

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.snapshots]


# --- stacked kernels ---------------------------------------------------------

def _stack_stats(u: np.ndarray, g: np.ndarray, w: np.ndarray) -> EnsembleStats:
    """Weighted statistics per stack row; shapes gain a leading axis."""
    mean_u = np.einsum("sn,snl->sl", w, u)
    mean_g = np.einsum("sn,snk->sk", w, g)
    du = u - mean_u[:, None, :]
    dg = g - mean_g[:, None, :]
    wdu = w[:, :, None] * du
    return EnsembleStats(
        mean_u=mean_u,
        mean_g=mean_g,
        cov_uu=np.einsum("snl,snm->slm", wdu, du),
        cov_up=np.einsum("snl,snk->slk", wdu, dg),
        cov_pp=np.einsum("snk,snj->skj", w[:, :, None] * dg, dg),
    )


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _gain_up(problem: InverseProblem, st: EnsembleStats) -> np.ndarray:
    """``Cov_up Gamma^{-1}``, shape ``(..., L, K)``."""
    return problem.gamma_factor.solve(st.cov_up)


def _trace(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


def _srf_drift(problem: InverseProblem, st: EnsembleStats, g: np.ndarray, gain: np.ndarray) -> np.ndarray:
    d = g + st.mean_g[..., None, :] - 2.0 * problem.y
    return -0.5 * np.einsum("...nk,...ik->...ni", d, gain)


def wensrf_rates(problem: InverseProblem, u: np.ndarray, t: float, st: EnsembleStats,
                 g: np.ndarray | None = None, jac: np.ndarray | None = None) -> np.ndarray:
    """Per-particle log-weight rate ``P1 + P2`` of the weighted square-root flow.

    ``u`` has shape ``(..., N, L)``; the fields of ``st`` carry the same
    leading axes.  ``st`` may come from the ensemble or from an exact
    density (oracle).
    """
    u = problem.check_points(u)
    g = problem.model.eval(u) if g is None else g
    jac = problem.model.jacobian(u) if jac is None else jac
    gf = problem.gamma_factor
    gain = _gain_up(problem, st)
    p1 = 0.5 * (gf.quad(problem.y - st.mean_g)[..., None] - gf.quad(problem.y - g))
    p1 = p1 + 0.5 * _trace(gf.solve(st.cov_pp))[..., None]
    v = score_v(TemperedDensity(problem, t), u, g, jac)
    d = g + st.mean_g[..., None, :] - 2.0 * problem.y
    p2 = (-0.5 * np.einsum("...ik,...nki->...n", gain, jac)
          - 0.5 * np.einsum("...ni,...ik,...nk->...n", v, gain, d))
    return p1 + p2


def wenki_rates(problem: InverseProblem, u: np.ndarray, t: float, st: EnsembleStats,
                g: np.ndarray | None = None, jac: np.ndarray | None = None,
                hess: np.ndarray | None = None) -> np.ndarray:
    """Per-particle log-weight rate ``R1 + R2 + R3`` of the weighted EnKI flow.

    Shapes as in :func:`wensrf_rates`.
    """
    u = problem.check_points(u)
    model = problem.model
    g = model.eval(u) if g is None else g
    jac = model.jacobian(u) if jac is None else jac
    hess = model.hessian(u) if hess is None else hess
    gf = problem.gamma_factor
    td = TemperedDensity(problem, t)

    gain = _gain_up(problem, st)
    spread = gain @ _swap(st.cov_up)  # Cov_up Gamma^{-1} Cov_pu
    prior_term = _trace(problem.prior.factor.solve(spread))[..., None]
    gj = gf.solve(_swap(jac))
    jtj = np.einsum("...nik,...nkj->...nij", gj, jac)
    r1 = (0.5 * _trace(gf.solve(st.cov_pp))[..., None]
          - np.einsum("...ik,...nki->...n", gain, jac)
          + 0.5 * (t * np.einsum("...ij,...nji->...n", spread, jtj) + prior_term))

    v = score_v(td, u, g, jac)
    resid = problem.y - g - np.einsum("...ni,...ik->...nk", v, st.cov_up)
    r2 = 0.5 * gf.quad(problem.y - st.mean_g)[..., None] - 0.5 * gf.quad(resid)

    w = curvature_w(td, u, g, hess)
    r3 = -0.5 * t * np.einsum("...ij,...nji->...n", spread, w)
    return r1 + r2 + r3


def _normalize_rows(lw: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise NumericalError("log-weight update produced NaN or +inf")
    n = lw.shape[-1]
    peak = lw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(peak)):
        raise AllWeightsVanished("every log-weight is -inf; cannot normalize")
    top = peak + np.log(np.sum(np.exp(lw - peak), axis=-1, keepdims=True))
    if not np.all(np.isfinite(top)):
        raise AllWeightsVanished("every log-weight is -inf; cannot normalize")
    out = lw - top
    flat = np.all(lw == lw[..., :1], axis=-1)
    out[flat] = -math.log(n)
    return out


def _weights_rows(lw: np.ndarray) -> np.ndarray:
    w = np.exp(lw)
    flat = np.all(lw == lw[..., :1], axis=-1)
    w[flat] = 1.0 / lw.shape[-1]
    return w


def _enki_move(problem: InverseProblem, st: EnsembleStats, u: np.ndarray, g: np.ndarray,
               dt: float, z: np.ndarray) -> np.ndarray:
    """Perturbed-observation update with ``z`` standard normal of shape ``(S, N, K)``."""
    inv_dt = 1.0 / dt
    xi = math.sqrt(inv_dt) * (z @ problem.gamma_factor.lower.T)
    gain_t = spd_solve_many(st.cov_pp + inv_dt * problem.gamma, _swap(st.cov_up))
    return u + (problem.y + xi - g) @ gain_t


def _draw(rngs: Sequence[RandomSource], shape) -> np.ndarray:
    return np.stack([r.standard_normal(shape) for r in rngs])


def _march(method: str, problem: InverseProblem, u: np.ndarray, lw: np.ndarray, t: float, dt: float,
           rngs: Sequence[RandomSource], weighted: bool) -> tuple[np.ndarray, np.ndarray]:
    """One step of a time-marching method on a stack of ensembles."""
    model = problem.model
    s, n = lw.shape
    w = _weights_rows(lw) if weighted else np.full((s, n), 1.0 / n)
    g = model.eval(u)
    st = _stack_stats(u, g, w)
    if method == "ensrf":
        return u + dt * _srf_drift(problem, st, g, _gain_up(problem, st)), lw
    if method == "enki":
        return _enki_move(problem, st, u, g, dt, _draw(rngs, g.shape[1:])), lw
    jac = model.jacobian(u)
    if method == "wensrf":
        rate = wensrf_rates(problem, u, t, st, g, jac)
        u_new = u + dt * _srf_drift(problem, st, g, _gain_up(problem, st))
    elif method == "wenki":
        rate = wenki_rates(problem, u, t, st, g, jac, model.hessian(u))
        u_new = _enki_move(problem, st, u, g, dt, _draw(rngs, g.shape[1:]))
    else:
        raise ValueError(f"{method!r} is not a time-marching method")
    return _retire(u, u_new, lw, _normalize_rows(np.where(np.isneginf(lw), -np.inf, lw + dt * rate)))


def _retire(u: np.ndarray, u_new: np.ndarray, lw: np.ndarray, lw_new: np.ndarray):
    """Freeze particles whose weight is exactly zero in floating point.

    Such particles no longer enter any weighted statistic, so nothing holds
    them near the bulk; left to the flow they can escape to infinity.
    """
    dead = lw_new < EXTINCT_LOG_WEIGHT
    if np.any(dead):
        lw_new[dead] = -np.inf
        u_new = np.where(dead[..., None], u, u_new)
    return u_new, lw_new


def _single(method: str, e: WeightedEnsemble, problem: InverseProblem, dt: float,
            rng: RandomSource | None, weighted: bool) -> WeightedEnsemble:
    u, lw = _march(method, problem, e.particles[None], e.log_weights[None], e.t, dt,
                   [rng] if rng is not None else [], weighted)
    return WeightedEnsemble(u[0], lw[0], e.t + dt)


# --- single-shot methods -----------------------------------------------------

def sample_prior(problem: InverseProblem, n: int, rng: RandomSource) -> WeightedEnsemble:
    prior = problem.prior
    z = rng.standard_normal((n, prior.dim))
    return WeightedEnsemble.uniform(prior.u0 + z @ prior.factor.lower.T, 0.0)


def importance_reweight(e: WeightedEnsemble, problem: InverseProblem, t: float = 1.0) -> WeightedEnsemble:
    """Weight the particles of ``e`` by ``exp(-t Phi)`` and normalize."""
    return normalize_weights(WeightedEnsemble(e.particles, -t * misfit(problem, e.particles), t))


def importance_sampling(problem: InverseProblem, n: int, rng: RandomSource) -> WeightedEnsemble:
    """Prior draws weighted by the likelihood."""
    return importance_reweight(sample_prior(problem, n, rng), problem)


def gaussian_proposal_weights(problem: InverseProblem, mean: np.ndarray, cov: np.ndarray,
                              rng: RandomSource) -> WeightedEnsemble:
    """Draw ``u_n ~ N(mean_n, cov)`` and weight by posterior over proposal density.

    Raises:
        NotSpd: if ``cov`` is singular.
    """
    prop = SpdFactor.of(0.5 * (cov + cov.T))
    z = rng.standard_normal(mean.shape)
    u = mean + z @ prop.lower.T
    log_prop = -0.5 * np.sum(z * z, axis=1) - 0.5 * prop.logdet()
    log_post = log_unnormalized_density(TemperedDensity(problem, 1.0), u)
    return normalize_weights(WeightedEnsemble(u, log_post - log_prop, 1.0))


def wenkf_reweight(e: WeightedEnsemble, problem: InverseProblem, rng: RandomSource) -> WeightedEnsemble:
    """One Kalman analysis proposal from initial statistics, then importance weights.

    Each particle is drawn from ``N(m_n, C)`` with
    ``m_n = u0_n + Cov_up (Cov_pp + Gamma)^{-1} (y - G(u0_n))`` and
    ``C = Cov_up (Cov_pp + Gamma)^{-1} Gamma (Cov_pp + Gamma)^{-T} Cov_pu``.
    A single particle has zero covariances; it stays at its proposal mean
    with weight one.

    Raises:
        NotSpd: if the proposal covariance is singular and ``N > 1``.
    """
    u0 = e.particles
    g0 = problem.model.eval(u0)
    st = stats_from_values(u0, g0, np.full(e.n, 1.0 / e.n))
    gain_t = SpdFactor.of(st.cov_pp + problem.gamma).solve_columns(st.cov_pu)
    mean = u0 + (problem.y - g0) @ gain_t
    if e.n == 1:
        return WeightedEnsemble.uniform(mean, 1.0)
    return gaussian_proposal_weights(problem, mean, gain_t.T @ problem.gamma @ gain_t, rng)


def wenkf_weights(problem: InverseProblem, n: int, rng: RandomSource) -> WeightedEnsemble:
    return wenkf_reweight(sample_prior(problem, n, rng), problem, rng)


# --- time-marching steps -----------------------------------------------------

def ensrf_step(e: WeightedEnsemble, problem: InverseProblem, dt: float,
               weighted: bool = False) -> WeightedEnsemble:
    """Forward-Euler step of the square-root particle ODE; weights untouched."""
    return _single("ensrf", e, problem, dt, None, weighted)


def enki_step(e: WeightedEnsemble, problem: InverseProblem, dt: float, rng: RandomSource,
              weighted: bool = False) -> WeightedEnsemble:
    """Perturbed-observation EnKI step.

    Raises:
        NotSpd: if ``Cov_pp + Gamma/dt`` fails to factorize.
    """
    return _single("enki", e, problem, dt, rng, weighted)


def wensrf_step(e: WeightedEnsemble, problem: InverseProblem, dt: float) -> WeightedEnsemble:
    return _single("wensrf", e, problem, dt, None, True)


def wenki_step(e: WeightedEnsemble, problem: InverseProblem, dt: float, rng: RandomSource) -> WeightedEnsemble:
    return _single("wenki", e, problem, dt, rng, True)


# --- drivers -----------------------------------------------------------------

def _row_variance(lw: np.ndarray) -> np.ndarray:
    n = lw.shape[-1]
    d = _weights_rows(lw) - 1.0 / n
    return n * np.sum(d * d, axis=-1)


def run_many(problem: InverseProblem, config: SamplerConfig, seeds: Sequence[int],
             record_every: int = 1) -> list[Trajectory]:
    """Run ``config`` once per seed, advancing all seeds together.

    Every seed owns its random source, so each trajectory matches what
    :func:`run` gives for that seed up to floating-point reassociation.
    ``record_every`` thins the stored snapshots (the first and last are
    always kept); the variance series has one entry per step.

    Raises:
        StepFailure: wrapping the numeric error, with the failing step index.
    """
    method = config.method
    seeds = [int(s) for s in seeds]
    rngs = [RandomSource(s) for s in seeds]
    starts = [sample_prior(problem, config.n_particles, r) for r in rngs]
    trajs = [Trajectory(method, s, snapshots=[e]) for s, e in zip(seeds, starts)]

    if method in SINGLE_SHOT:
        for tr, e, rng in zip(trajs, starts, rngs):
            try:
                out = importance_reweight(e, problem) if method == "is" else wenkf_reweight(e, problem, rng)
            except NumericalError as exc:
                raise StepFailure(method, 0, exc, tr.seed) from exc
            tr.snapshots.append(out)
            d = out.weights - 1.0 / out.n
            tr.variance.append((1.0, float(out.n * np.sum(d * d))))
        return trajs

    m_steps = step_count(config.dt)
    weighted = bool(config.stats_weighted)
    u = np.stack([e.particles for e in starts])
    lw = np.stack([e.log_weights for e in starts])
    for m in range(m_steps):
        try:
            u, lw = _march(method, problem, u, lw, m / m_steps, config.dt, rngs, weighted)
            if not np.all(np.isfinite(u)):
                raise NumericalError("particle positions became non-finite")
        except NumericalError as exc:
            seed = seeds[0] if len(seeds) == 1 else None
            raise StepFailure(method, m, exc, seed) from exc
        t = (m + 1) / m_steps
        var = _row_variance(lw)
        keep = (m + 1) % record_every == 0 or m + 1 == m_steps
        for i, tr in enumerate(trajs):
            tr.variance.append((t, float(var[i])))
            if keep:
                tr.snapshots.append(WeightedEnsemble(u[i], lw[i], t))
    return trajs


def run(problem: InverseProblem, config: SamplerConfig, record_every: int = 1) -> Trajectory:
    """March ``config.method`` from prior draws at ``t = 0`` to ``t = 1``."""
    return run_many(problem, config, [config.seed], record_every)[0]
