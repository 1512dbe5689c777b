"""Command-line entry point: ``simulate``, ``bench`` and ``selftest``.

Config files are flat ``key = value`` lines; ``#`` starts a comment. Keys
use the long flag names with underscores (``delta_t``, ``joint_speed_max``).
Command-line flags override config values. Unknown keys are errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from .bench import BenchConfig, default_seed, float_str, monte_carlo_bench
from .mpc import LOG_COLUMNS, SCENARIOS, ClosedLoopLog, run_closed_loop
from .path import Obstacle
from .selftest import run_selftest

EXIT_OK, EXIT_USAGE, EXIT_SELFTEST = 0, 1, 2

log = logging.getLogger("mpfckit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _optional_float(text: str):
    return None if text.strip().lower() in ("none", "") else float(text)


def _obstacles(text: str) -> tuple[Obstacle, ...]:
    """``x,y,r; x,y,r`` or ``none``."""
    if text.strip().lower() in ("none", ""):
        return ()
    out = []
    for part in text.split(";"):
        vals = _floats(part)
        if len(vals) != 3:
            raise ValueError(f"obstacle {part.strip()!r} needs x,y,r")
        out.append(Obstacle(vals[:2], vals[2]))
    return tuple(out)


SIMULATE_KEYS = {
    "scenario": str, "controller": str, "integrator": str, "horizon": float, "delta_t": float,
    "duration": float, "joint_speed_max": _optional_float, "degree": int, "s_dot_max": float,
    "v_max": float, "y0": _floats, "x0": _floats, "obstacles": _obstacles, "out": str,
    "max_iterations": int, "kkt_tolerance": float,
}
BENCH_KEYS = {
    "samples": int, "horizons": _floats, "integrators": _words, "controllers": _words, "seed": int,
    "jobs": int, "delta_t": float, "out": str,
}


def read_config(path: str, schema: dict) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in schema:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = schema[key](value)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def _merge(args, schema) -> dict:
    values = read_config(args.config, schema) if args.config else {}
    for key in schema:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpfckit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run one closed-loop scenario and write a trajectory CSV")
    sim.add_argument("--config")
    sim.add_argument("--scenario", choices=sorted(SCENARIOS))
    sim.add_argument("--controller", choices=("mpfc", "ttmpc"))
    sim.add_argument("--integrator", choices=("rk4", "collocation"))
    sim.add_argument("--horizon", type=float)
    sim.add_argument("--delta-t", dest="delta_t", type=float)
    sim.add_argument("--duration", type=float)
    sim.add_argument("--joint-speed-max", dest="joint_speed_max", type=_optional_float)
    sim.add_argument("--degree", type=int)
    sim.add_argument("--s-dot-max", dest="s_dot_max", type=float)
    sim.add_argument("--v-max", dest="v_max", type=float)
    sim.add_argument("--y0", type=_floats)
    sim.add_argument("--x0", type=_floats)
    sim.add_argument("--obstacles", type=_obstacles, help="'x,y,r; x,y,r' or 'none'")
    sim.add_argument("--max-iterations", dest="max_iterations", type=int)
    sim.add_argument("--kkt-tolerance", dest="kkt_tolerance", type=float)
    sim.add_argument("--out", help="CSV path (default: stdout)")

    bench = sub.add_parser("bench", help="Monte Carlo timing of cold-started solves")
    bench.add_argument("--config")
    bench.add_argument("--samples", type=int)
    bench.add_argument("--horizons", type=_floats, help="comma-separated, seconds")
    bench.add_argument("--integrators", type=_words)
    bench.add_argument("--controllers", type=_words)
    bench.add_argument("--seed", type=int, help="default: $MPFCKIT_SEED or 0")
    bench.add_argument("--jobs", type=int)
    bench.add_argument("--delta-t", dest="delta_t", type=float)
    bench.add_argument("--out", help="output directory (default: bench_out)")

    sub.add_parser("selftest", help="analytic solver battery and derivative checks")
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def scenario_from(values: dict):
    name = values.get("scenario", "approach")
    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}")
    controller = values.get("controller", "mpfc")
    integrator = values.get("integrator", "rk4")
    changes = {k: values[k] for k in ("horizon", "delta_t", "duration", "s_dot_max", "v_max", "y0", "x0",
                                      "obstacles") if k in values}
    if "joint_speed_max" in values:
        changes["joint_speed_max"] = values["joint_speed_max"]
    if "degree" in values:
        changes["degree"] = values["degree"]
    scenario = SCENARIOS[name](controller, integrator, **changes)
    solver = {k: values[k] for k in ("max_iterations", "kkt_tolerance") if k in values}
    if solver:
        scenario = replace(scenario, solver=replace(scenario.solver, **solver))
    return scenario


def write_log(log_: ClosedLoopLog, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in log_.rows():
        w.writerow([v if isinstance(v, (str, int)) else float_str(v) for v in row])


def _simulate(args) -> int:
    values = _merge(args, SIMULATE_KEYS)
    try:
        scenario = scenario_from(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_closed_loop(scenario)
    out = values.get("out")
    if out:
        with open(out, "w", newline="") as fh:
            write_log(result, fh)
    else:
        write_log(result, sys.stdout)
    return EXIT_OK


def _bench(args) -> int:
    values = _merge(args, BENCH_KEYS)
    out = values.pop("out", "bench_out")
    values.setdefault("seed", default_seed())
    try:
        config = BenchConfig(**values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    summary = monte_carlo_bench(config)
    paths = summary.write(out)
    for r in summary.rows:
        print(f"{r.controller:6s} {r.integrator:12s} T={r.horizon:<5g} median={r.time_median * 1e3:8.2f} ms "
              f"iters={r.iterations_mean:6.2f} failures={r.failures}")
    print("wrote " + ", ".join(paths.values()))
    return EXIT_OK


def _selftest(args) -> int:
    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return {"simulate": _simulate, "bench": _bench, "selftest": _selftest}[args.command](args)
    except UsageError as exc:
        print(f"mpfckit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"mpfckit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
