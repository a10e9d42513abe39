"""Experiment configuration, moment tables and CSV artifacts."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import WeightedEnsemble, fmt, weighted_moment, write_snapshots
from .model import BUILTIN_PROBLEMS, GaussianPrior, InverseProblem, builtin_problem, linear_model, misfit
from .numkit import RandomSource
from .oracle import DEFAULT_1D, DEFAULT_2D, grid_moment, oracle
from .samplers import METHODS, SamplerConfig, run_many, sample_prior, step_count

DEFAULT_SEEDS = tuple(range(10))
DEFAULT_ORDERS = (1, 2, 3, 4, 5)
HISTOGRAM_BINS = 100
TABLE_SETTINGS = {"example3": 2000, "example5": 1000}
VARIANCE_METHODS = ("is", "wenki", "wensrf")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def default_dt(problem_id) -> float:
    return {"example2": 1e-5, "example4": 1e-4}.get(problem_id, 1e-3) if isinstance(problem_id, str) else 1e-3


def inline_problem(fields: dict) -> InverseProblem:
    """Linear problem ``G(u) = A u + b`` from a JSON-style dict.

    Keys: ``A``, ``y`` (required), ``b``, ``gamma``, ``u0``, ``gamma0``
    (default zero offset, identity covariances, zero prior mean).
    """
    unknown = set(fields) - {"A", "b", "y", "gamma", "u0", "gamma0", "name"}
    if unknown:
        raise ConfigError(f"unknown inline problem keys: {sorted(unknown)}")
    try:
        a = np.atleast_2d(np.asarray(fields["A"], dtype=float))
        k, l_ = a.shape
        model = linear_model(a, fields.get("b"), name=fields.get("name", "inline"))
        prior = GaussianPrior(fields.get("u0", np.zeros(l_)), fields.get("gamma0", np.eye(l_)))
        return InverseProblem(model, prior, fields["y"], fields.get("gamma", np.eye(k)), name=fields.get("name", "inline"))
    except KeyError as exc:
        raise ConfigError(f"inline problem is missing {exc}") from None
    except ArithmeticError as exc:
        raise ConfigError(f"inline problem: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"inline problem: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """One method on one problem over several seeds.

    ``problem`` is a builtin id or an inline linear problem dict.  ``dt``
    defaults per problem; ``snapshot_every`` thins the trajectory CSV
    (default: eleven snapshots from ``t = 0`` to ``t = 1``).
    """

    problem: str | dict
    method: str
    n_particles: int
    dt: float | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    output_dir: str = "out"
    grid_bounds: tuple | None = None
    grid_nodes: tuple | None = None
    moment_orders: tuple[int, ...] = DEFAULT_ORDERS
    snapshot_every: int | None = None

    def __post_init__(self):
        if isinstance(self.problem, str):
            if self.problem not in BUILTIN_PROBLEMS:
                raise ConfigError(f"unknown problem {self.problem!r}; choose from {', '.join(BUILTIN_PROBLEMS)}")
        elif isinstance(self.problem, dict):
            inline_problem(self.problem)
        else:
            raise ConfigError("problem must be a builtin id or an inline problem object")
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.problem))
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("at least one seed is required")
        object.__setattr__(self, "seeds", seeds)
        orders = tuple(int(k) for k in self.moment_orders)
        if not orders or min(orders) < 1:
            raise ConfigError("moment orders must be positive integers")
        object.__setattr__(self, "moment_orders", orders)
        for s in seeds:
            try:
                SamplerConfig(self.method, self.n_particles, self.dt, s)
            except (ValueError, TypeError) as exc:
                raise ConfigError(str(exc)) from None
        if self.snapshot_every is not None and int(self.snapshot_every) < 1:
            raise ConfigError("snapshot_every must be a positive integer")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = set(cls.__dataclass_fields__)
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"problem", "method", "n_particles"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        d = dict(data)
        for key in ("seeds", "moment_orders"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("grid_bounds", "grid_nodes"):
            if d.get(key) is not None:
                d[key] = _freeze(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def resolve_problem(self) -> InverseProblem:
        if isinstance(self.problem, str):
            return builtin_problem(self.problem)
        return inline_problem(self.problem)

    @property
    def label(self) -> str:
        return self.problem if isinstance(self.problem, str) else self.problem.get("name", "inline")


def _freeze(x):
    return tuple(_freeze(v) for v in x) if isinstance(x, (list, tuple)) else x


# --- moment tables -----------------------------------------------------------

@dataclass(frozen=True)
class MomentRow:
    k: int
    oracle: float
    estimate: float

    @property
    def relative_error(self) -> float:
        return abs(self.estimate - self.oracle) / abs(self.oracle)


@dataclass
class MomentTable:
    """Seed-mean estimates of ``E|u|^k`` against oracle values for one method.

    ``per_seed`` keeps the individual seed estimates in the same order as
    ``rows``.
    """

    method: str
    rows: list[MomentRow]
    per_seed: dict[int, list[float]] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max(r.relative_error for r in self.rows)

    def row(self, k: int) -> MomentRow:
        return next(r for r in self.rows if r.k == k)


MOMENT_HEADER = ["method", "seed", "k", "oracle", "estimate", "relative_error"]


def moment_table(method: str, finals: Sequence[WeightedEnsemble], seeds: Sequence[int],
                 oracle_values: dict[int, float]) -> MomentTable:
    per_seed = {int(s): [weighted_moment(e, k) for k in oracle_values] for s, e in zip(seeds, finals)}
    est = np.mean(np.array(list(per_seed.values())), axis=0)
    rows = [MomentRow(k, float(v), float(m)) for (k, v), m in zip(oracle_values.items(), est)]
    return MomentTable(method, rows, per_seed)


def write_moment_tables(path, tables: Sequence[MomentTable]) -> None:
    """Aggregate rows carry ``seed = mean``; per-seed rows follow."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MOMENT_HEADER)
        for tab in tables:
            for r in tab.rows:
                w.writerow([tab.method, "mean", r.k, fmt(r.oracle), fmt(r.estimate), fmt(r.relative_error)])
            for seed, values in tab.per_seed.items():
                for r, v in zip(tab.rows, values):
                    rel = abs(v - r.oracle) / abs(r.oracle)
                    w.writerow([tab.method, seed, r.k, fmt(r.oracle), fmt(v), fmt(rel)])


def read_moment_tables(path) -> list[MomentTable]:
    tables: dict[str, MomentTable] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for method, seed, k, orc, est, _ in reader:
            tab = tables.setdefault(method, MomentTable(method, []))
            if seed == "mean":
                tab.rows.append(MomentRow(int(k), float(orc), float(est)))
            else:
                tab.per_seed.setdefault(int(seed), []).append(float(est))
    return list(tables.values())


# --- per-seed artifacts ------------------------------------------------------

def _grid_bounds(dim: int, override) -> list[tuple[float, float]]:
    if override is not None:
        return [tuple(b) for b in np.broadcast_to(np.asarray(override, float), (dim, 2))]
    lo, hi = (DEFAULT_1D if dim == 1 else DEFAULT_2D)[0]
    return [(lo, hi)] * dim


def histogram_rows(e: WeightedEnsemble, bounds) -> tuple[list[str], list[list[str]]]:
    """Weighted counts on ``HISTOGRAM_BINS`` uniform bins per axis.

    Particles outside ``bounds`` are not counted.
    """
    edges = [np.linspace(lo, hi, HISTOGRAM_BINS + 1) for lo, hi in bounds]
    counts, _ = np.histogramdd(e.particles, bins=edges, weights=e.weights)
    header = ["bin_index"] + [f"{side}_{i + 1}" for i in range(e.dim) for side in ("lo", "hi")] + ["weight"]
    rows = []
    for flat, idx in enumerate(np.ndindex(counts.shape)):
        cells = []
        for axis, j in enumerate(idx):
            cells += [fmt(edges[axis][j]), fmt(edges[axis][j + 1])]
        rows.append([str(flat)] + cells + [fmt(counts[idx])])
    return header, rows


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_variance_series(path, series: Sequence[tuple[float, float]]) -> None:
    _write_csv(path, ["t", "var_nw"], [[fmt(t), fmt(v)] for t, v in series])


def read_variance_series(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(float(t), float(v)) for t, v in r]


def oracle_moments(problem: InverseProblem, orders: Sequence[int], bounds=None, nodes=None) -> dict[int, float]:
    """Quadrature moments at ``t = 1``; NaN when the problem has more than two dimensions."""
    if problem.dim_in > 2:
        return {int(k): math.nan for k in orders}
    o = oracle(problem, 1.0, bounds, nodes)
    return {int(k): grid_moment(o, k) for k in orders}


def run_experiment(config: ExperimentConfig) -> list[Path]:
    """Run every seed and write the artifacts; returns the written paths.

    Per seed: ``<method>_seed<s>_trajectory.csv``, ``..._variance.csv`` and
    ``..._histogram.csv``.  Once: ``<method>_moments.csv`` and
    ``<method>_metadata.json`` (config echo plus wall-clock seconds).

    Raises:
        StepFailure: with the failing step (and seed when known).
    """
    problem = config.resolve_problem()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sampler = SamplerConfig(config.method, config.n_particles, config.dt, config.seeds[0])
    every = config.snapshot_every or max(1, sampler.steps // 10)
    start = time.perf_counter()
    trajs = run_many(problem, sampler, config.seeds, record_every=every)
    elapsed = time.perf_counter() - start

    bounds = _grid_bounds(problem.dim_in, config.grid_bounds)
    written: list[Path] = []
    for tr in trajs:
        stem = out / f"{config.method}_seed{tr.seed}"
        paths = [Path(f"{stem}_trajectory.csv"), Path(f"{stem}_variance.csv"), Path(f"{stem}_histogram.csv")]
        write_snapshots(paths[0], tr.snapshots)
        write_variance_series(paths[1], tr.variance)
        _write_csv(paths[2], *histogram_rows(tr.final, bounds))
        written += paths

    orc = oracle_moments(problem, config.moment_orders, config.grid_bounds, config.grid_nodes)
    table = moment_table(config.method, [t.final for t in trajs], config.seeds, orc)
    moments_path = out / f"{config.method}_moments.csv"
    write_moment_tables(moments_path, [table])
    meta_path = out / f"{config.method}_metadata.json"
    meta = {"config": config.to_dict(), "wall_clock_seconds": elapsed}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return written + [moments_path, meta_path]


# --- table and variance reproductions ---------------------------------------

def reproduce_table(example: str, seeds: Sequence[int] = DEFAULT_SEEDS, methods: Sequence[str] = METHODS,
                    orders: Sequence[int] = DEFAULT_ORDERS, out=None) -> dict[str, MomentTable]:
    """All methods on ``example3`` (N=2000) or ``example5`` (N=1000), ``dt = 1e-3``."""
    if example not in TABLE_SETTINGS:
        raise ConfigError(f"tables exist for {', '.join(TABLE_SETTINGS)}, not {example!r}")
    problem = builtin_problem(example)
    orc = oracle_moments(problem, orders)
    tables = {}
    for method in methods:
        cfg = SamplerConfig(method, TABLE_SETTINGS[example], 1e-3, seeds[0])
        trajs = run_many(problem, cfg, seeds, record_every=10**9)
        tables[method] = moment_table(method, [t.final for t in trajs], seeds, orc)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_moment_tables(Path(out) / f"{example}_table.csv", list(tables.values()))
    return tables


def variance_series(problem: InverseProblem, method: str, n_particles: int, dt: float,
                    seeds: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """``Var(N w)`` on the time grid ``0, dt, ..., 1``, one row per seed.

    For ``is`` the weights at time ``t`` are ``exp(-t Phi)`` on the seed's
    prior draws.
    """
    if method not in VARIANCE_METHODS:
        raise ConfigError(f"variance series is defined for {', '.join(VARIANCE_METHODS)}, not {method!r}")
    m_steps = step_count(dt)
    times = np.arange(m_steps + 1) / m_steps
    if method == "is":
        rows = []
        for s in seeds:
            phi = misfit(problem, sample_prior(problem, n_particles, RandomSource(s)).particles)
            lw = -times[:, None] * phi[None, :]
            lw = lw - lw.max(axis=1, keepdims=True)
            w = np.exp(lw)
            w /= w.sum(axis=1, keepdims=True)
            d = w - 1.0 / n_particles
            rows.append(n_particles * np.sum(d * d, axis=1))
        return times, np.array(rows)
    trajs = run_many(problem, SamplerConfig(method, n_particles, dt, seeds[0]), seeds, record_every=10**9)
    return times, np.array([[0.0] + [v for _, v in tr.variance] for tr in trajs])


VARIANCE_HEADER = ["t", "method", "log_var_plus_one"]


def weight_variance_report(example: str, methods: Sequence[str] = VARIANCE_METHODS, n_particles: int = 1000,
                           dt: float | None = None, seed: int = 0, out=None) -> list[tuple[float, str, float]]:
    """``log(Var(N w) + 1)`` over time for each method, from ``t = 0``."""
    problem = builtin_problem(example)
    dt = default_dt(example) if dt is None else dt
    rows = []
    for method in methods:
        times, var = variance_series(problem, method, n_particles, dt, [seed])
        rows += [(float(t), method, float(np.log1p(v))) for t, v in zip(times, var[0])]
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_variance_report(Path(out) / f"{example}_variance.csv", rows)
    return rows


def write_variance_report(path, rows) -> None:
    _write_csv(path, VARIANCE_HEADER, [[fmt(t), m, fmt(v)] for t, m, v in rows])


def read_variance_report(path) -> list[tuple[float, str, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(float(t), m, float(v)) for t, m, v in r]
