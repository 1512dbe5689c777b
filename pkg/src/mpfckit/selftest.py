"""Analytic solver battery and finite-difference derivative checks.

Shared by the ``selftest`` CLI subcommand and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ipm
from .autodiff import DifferentiableFunction as DF
from .dynamics import ManipulatorModel
from .transcription import (
    PAPER_OBSTACLES,
    NlpProblem,
    TaskDefinition,
    TranscriptionConfig,
    transcribe,
)


@dataclass(frozen=True)
class BatteryProblem:
    name: str
    problem: NlpProblem
    initial_guess: np.ndarray
    solution: np.ndarray


def analytic_battery() -> list[BatteryProblem]:
    """Five small NLPs with closed-form minimizers."""
    cases = [
        ("equality_qp",
         NlpProblem.build(DF.from_callable(lambda z: [z[0] * z[0] + z[1] * z[1]], 2, 1),
                          eq=DF.from_callable(lambda z: [z[0] + z[1] - 1.0], 2, 1)),
         [3.0, -1.0], [0.5, 0.5]),
        ("box_qp",
         NlpProblem.build(DF.from_callable(lambda z: [(z[0] - 2.0) ** 2 + (z[1] + 1.0) ** 2], 2, 1),
                          lb=[0.0, 0.0], ub=[1.0, 1.0]),
         [0.5, 0.5], [1.0, 0.0]),
        ("inequality_qp",
         NlpProblem.build(DF.from_callable(lambda z: [(z[0] - 2.0) ** 2 + (z[1] - 1.0) ** 2], 2, 1),
                          ineq=DF.from_callable(lambda z: [z[0] + z[1] - 1.0], 2, 1)),
         [0.0, 0.0], [1.0, 0.0]),
        ("rosenbrock_box",
         NlpProblem.build(DF.from_callable(lambda z: [(1.0 - z[0]) ** 2 + 100.0 * (z[1] - z[0] ** 2) ** 2], 2, 1),
                          lb=[-1.5, -np.inf], ub=[0.5, np.inf]),
         [-1.2, 1.0], [0.5, 0.25]),
        # d/dx [log(1 + e^x) - 0.75 x] = 0  ->  x = ln 3
        ("logistic_barrier",
         NlpProblem.build(DF.from_callable(lambda z: [np.log(1.0 + np.exp(z[0])) - 0.75 * z[0]], 1, 1),
                          lb=[-1.0], ub=[2.0]),
         [0.0], [np.log(3.0)]),
    ]
    return [BatteryProblem(n, p, np.array(q0, dtype=float), np.array(x, dtype=float)) for n, p, q0, x in cases]


def central_jacobian(fn, q, h: float = 1e-6) -> np.ndarray:
    """Dense central-difference Jacobian of a vector function."""
    q = np.asarray(q, dtype=float)
    cols = []
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h * max(1.0, abs(q[i]))
        cols.append((np.asarray(fn(q + e)) - np.asarray(fn(q - e))) / (2.0 * e[i]))
    return np.stack(cols, axis=-1)


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b), initial=0.0) / max(1.0, np.max(np.abs(b), initial=0.0)))


def random_point(problem: NlpProblem, layout, x_init, rng, spread: float = 0.1) -> np.ndarray:
    """Perturbed copy of the trivial guess that respects finite bounds."""
    base = np.zeros(layout.n)
    base[layout.state_index] = np.tile(x_init, (layout.N + 1, 1))
    if layout.nodes_per_interval > 1:
        base[layout.node_index] = np.broadcast_to(x_init, layout.node_index.shape)
    q = base + spread * rng.standard_normal(layout.n)
    lo = np.where(np.isfinite(problem.lb), problem.lb, -np.inf)
    hi = np.where(np.isfinite(problem.ub), problem.ub, np.inf)
    return np.clip(q, lo, hi)


def derivative_errors(problem: NlpProblem, q, rng) -> dict[str, float]:
    """Relative errors of every callback Jacobian and the Lagrangian Hessian."""
    out = {}
    for name, fn in (("cost", problem.cost), ("eq", problem.eq), ("ineq", problem.ineq)):
        if fn.n_out:
            out[name + "_jacobian"] = relative_error(fn.jacobian(q).toarray(), central_jacobian(fn, q))
    lam_e = rng.standard_normal(problem.m_eq)
    lam_i = rng.standard_normal(problem.m_ineq)

    def lagrangian_gradient(z):
        g = problem.cost.jacobian(z).toarray().ravel()
        if problem.m_eq:
            g = g + problem.eq.jacobian(z).T @ lam_e
        if problem.m_ineq:
            g = g + problem.ineq.jacobian(z).T @ lam_i
        return g

    H = problem.cost.hessian(q, np.ones(1))
    if problem.m_eq:
        H = H + problem.eq.hessian(q, lam_e)
    if problem.m_ineq:
        H = H + problem.ineq.hessian(q, lam_i)
    out["lagrangian_hessian"] = relative_error(H.toarray(), central_jacobian(lagrangian_gradient, q))
    return out


def run_selftest(points: int = 2, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Return ``(check, passed, detail)`` triples."""
    results = []
    for case in analytic_battery():
        res = ipm.solve(case.problem, case.initial_guess)
        err = float(np.max(np.abs(res.q_star - case.solution)))
        kkt = max(ipm.kkt_residuals(case.problem, res.point))
        ok = res.status == ipm.OPTIMAL and err < 1e-6 and kkt <= 1e-8
        results.append((f"solver:{case.name}", ok, f"status={res.status} err={err:.2e} kkt={kkt:.2e}"))

    model = ManipulatorModel()
    task = TaskDefinition(obstacles=PAPER_OBSTACLES)
    rng = np.random.default_rng(seed)
    for controller in ("mpfc", "ttmpc"):
        x0 = np.array([0.9, -1.2, 0.1, -0.2, 0.5, 0.3])[: 6 if controller == "mpfc" else 4]
        for method in ("rk4", "collocation"):
            config = TranscriptionConfig(method=method, N_T=3)
            problem, layout = transcribe(controller, config, model, task, x0, t_k=0.3)
            worst = 0.0
            for _ in range(points):
                errs = derivative_errors(problem, random_point(problem, layout, x0, rng), rng)
                worst = max(worst, max(errs.values()))
            results.append((f"derivatives:{controller}-{method}", worst < 1e-6, f"max rel err={worst:.2e}"))
    return results
