"""Monte Carlo solve-time benchmark over random start positions.

Each sample places the end effector uniformly in the unit square (intersected
with a reachable annulus), maps it to joint space with elbow-up inverse
kinematics and solves one cold-started NLP per configuration. Transcription
happens outside the timed region.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import ipm
from .dynamics import ManipulatorModel
from .mpc import cold_guess
from .transcription import METHODS, TaskDefinition, TranscriptionConfig, transcribe

SEED_ENV = "MPFCKIT_SEED"
CALLBACKS = ("constraints", "constraint_jacobian", "hessian", "cost", "gradient")
REACH_BAND = (0.02, 0.98)


def float_str(x) -> str:
    """Shortest text that parses back to the same float (17 significant digits)."""
    return format(float(x), ".17g")


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


@dataclass(frozen=True)
class BenchConfig:
    samples: int = 2000
    horizons: tuple[float, ...] = (0.1, 0.2, 0.4, 0.6)
    integrators: tuple[str, ...] = METHODS
    controllers: tuple[str, ...] = ("mpfc",)
    seed: int = field(default_factory=default_seed)
    delta_t: float = 0.01
    jobs: int = 1
    model: ManipulatorModel = field(default_factory=ManipulatorModel)
    task: TaskDefinition = field(default_factory=TaskDefinition)
    solver: ipm.IpmOptions = field(default_factory=ipm.IpmOptions)

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("sample count must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        for name in ("horizons", "integrators", "controllers"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for h in self.horizons:
            TranscriptionConfig.from_horizon(h, self.delta_t)  # raises if not a multiple


def sample_positions(n: int, seed: int, band=REACH_BAND) -> np.ndarray:
    """Rejection-sample ``n`` points in [0, 1]^2 with ``band[0] <= |p| <= band[1]``."""
    rng = np.random.default_rng(seed)
    out = np.empty((0, 2))
    while out.shape[0] < n:
        cand = rng.uniform(0.0, 1.0, size=(2 * (n - out.shape[0]) + 8, 2))
        r = np.linalg.norm(cand, axis=1)
        out = np.vstack([out, cand[(r >= band[0]) & (r <= band[1])]])
    return out[:n]


def initial_state(p, controller: str, model: ManipulatorModel) -> np.ndarray:
    y = dyn.inverse_kinematics(p, model, elbow_up=True)
    chi = np.concatenate([y, [0.0, 0.0]])
    return np.concatenate([chi, [0.0, 0.0]]) if controller == "mpfc" else chi


@dataclass(frozen=True)
class SampleRecord:
    sample: int
    controller: str
    integrator: str
    horizon: float
    px: float
    py: float
    status: str
    iterations: int
    objective: float
    setup_time: float
    solve_time: float
    callback_per_call: tuple[float, ...]  # mean seconds per call, CALLBACKS order


def _solve_sample(args) -> list[SampleRecord]:
    index, p, config = args
    records = []
    for controller in config.controllers:
        x0 = initial_state(p, controller, config.model)
        for integrator in config.integrators:
            for horizon in config.horizons:
                tc = TranscriptionConfig.from_horizon(horizon, config.delta_t, method=integrator)
                t0 = time.perf_counter()
                problem, layout = transcribe(controller, tc, config.model, config.task, x0)
                guess = cold_guess(x0, layout, config.model)
                setup = time.perf_counter() - t0
                res = ipm.solve(problem, guess, config.solver)
                st = res.stats
                records.append(SampleRecord(
                    index, controller, integrator, float(horizon), float(p[0]), float(p[1]), res.status,
                    st.iterations, st.objective, setup, st.wall_time, tuple(st.per_call(k) for k in CALLBACKS)))
    return records


def run_samples(config: BenchConfig) -> list[SampleRecord]:
    positions = sample_positions(config.samples, config.seed)
    work = [(i, positions[i], config) for i in range(config.samples)]
    if config.jobs == 1:
        chunks = [_solve_sample(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_solve_sample, work))
    return [r for chunk in chunks for r in chunk]


@dataclass(frozen=True)
class TimingRow:
    controller: str
    integrator: str
    horizon: float
    samples: int
    failures: int
    iterations_mean: float
    iterations_median: float
    objective_mean: float
    time_min: float
    time_q1: float
    time_median: float
    time_q3: float
    time_max: float
    time_mean: float
    setup_mean: float
    callback_mean: tuple[float, ...]  # CALLBACKS order, seconds per call


@dataclass
class TimingSummary:
    rows: list[TimingRow]
    records: list[SampleRecord]

    def row(self, controller: str, integrator: str, horizon: float) -> TimingRow:
        for r in self.rows:
            if (r.controller, r.integrator) == (controller, integrator) and np.isclose(r.horizon, horizon):
                return r
        raise KeyError((controller, integrator, horizon))

    # deterministic columns only: identical seeds give byte-identical files
    SUMMARY_COLUMNS = ("controller", "integrator", "horizon", "samples", "failures", "iterations_mean",
                       "iterations_median", "objective_mean")
    TIMING_COLUMNS = ("controller", "integrator", "horizon", "samples", "failures", "time_min", "time_q1",
                      "time_median", "time_q3", "time_max", "time_mean", "setup_mean",
                      *(f"{k}_per_call" for k in CALLBACKS))
    RAW_COLUMNS = ("sample", "controller", "integrator", "horizon", "px", "py", "status", "iterations",
                   "objective", "setup_time", "solve_time", *(f"{k}_per_call" for k in CALLBACKS))

    def write(self, directory) -> dict[str, str]:
        os.makedirs(directory, exist_ok=True)
        paths = {name: os.path.join(directory, f"{name}.csv") for name in ("summary", "timing", "raw")}
        fmt = _cell
        with open(paths["summary"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.SUMMARY_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(getattr(r, c)) for c in self.SUMMARY_COLUMNS])
        with open(paths["timing"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.TIMING_COLUMNS)
            for r in self.rows:
                head = [fmt(getattr(r, c)) for c in self.TIMING_COLUMNS[:12]]
                w.writerow(head + [fmt(v) for v in r.callback_mean])
        with open(paths["raw"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.RAW_COLUMNS)
            for r in self.records:
                w.writerow([fmt(getattr(r, c)) for c in self.RAW_COLUMNS[:11]] + [fmt(v) for v in r.callback_per_call])
        return paths


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return float_str(v)
    return str(v)


def summarize(config: BenchConfig, records: list[SampleRecord]) -> TimingSummary:
    rows = []
    for controller in config.controllers:
        for integrator in config.integrators:
            for horizon in config.horizons:
                group = [r for r in records if (r.controller, r.integrator) == (controller, integrator)
                         and r.horizon == float(horizon)]
                ok = [r for r in group if r.status == ipm.OPTIMAL]
                times = np.array([r.solve_time for r in ok])
                if times.size:
                    q = np.quantile(times, [0.0, 0.25, 0.5, 0.75, 1.0])
                    mean = float(times.mean())
                    iters = np.array([r.iterations for r in ok], dtype=float)
                    it_mean, it_med = float(iters.mean()), float(np.median(iters))
                    obj = float(np.mean([r.objective for r in ok]))
                    cb = tuple(float(np.mean([r.callback_per_call[i] for r in ok])) for i in range(len(CALLBACKS)))
                    setup = float(np.mean([r.setup_time for r in ok]))
                else:
                    q = np.full(5, np.nan)
                    mean = it_mean = it_med = obj = setup = float("nan")
                    cb = (float("nan"),) * len(CALLBACKS)
                rows.append(TimingRow(controller, integrator, float(horizon), len(group), len(group) - len(ok),
                                      it_mean, it_med, obj, *map(float, q), mean, setup, cb))
    return TimingSummary(rows, records)


def monte_carlo_bench(config: BenchConfig) -> TimingSummary:
    """Run the benchmark; failed solves are excluded from the statistics and counted."""
    return summarize(config, run_samples(config))
