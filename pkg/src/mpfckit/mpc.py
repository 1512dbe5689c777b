"""Receding-horizon closed loop for both controllers."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from . import ipm
from . import path as pth
from .dynamics import ManipulatorModel
from .ipm import IpmOptions, SolveStats
from .path import CirclePath, CostWeights, Obstacle
from .transcription import (
    CONTROLLERS,
    METHODS,
    PAPER_OBSTACLES,
    DecisionLayout,
    TaskDefinition,
    TranscriptionConfig,
    extract_trajectory,
    transcribe,
)

log = logging.getLogger(__name__)

PLANT_SUBSTEPS = 10
HOLD_STATUSES = (ipm.NUMERICAL_FAILURE,)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one closed-loop run."""

    controller: str = "mpfc"
    integrator: str = "rk4"
    horizon: float = 0.2
    delta_t: float = 0.01
    duration: float = 3.0
    y0: tuple[float, float] = (np.pi / 2, -np.pi / 2)
    x0: tuple[float, float] = (0.0, 0.0)
    joint_speed_max: float | None = None
    obstacles: tuple[Obstacle, ...] = ()
    weights: CostWeights = field(default_factory=CostWeights)
    model: ManipulatorModel = field(default_factory=ManipulatorModel)
    path: CirclePath = field(default_factory=CirclePath)
    s_dot_max: float = 2.0
    v_max: float = 10.0
    degree: int = 3
    solver: IpmOptions = field(default_factory=IpmOptions)
    name: str = "custom"

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.integrator not in METHODS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not (self.horizon > 0 and self.delta_t > 0):
            raise ValueError("horizon and delta_t must be positive")
        if self.duration != 0 and self.duration < self.horizon:
            raise ValueError("duration must be zero or at least the horizon")
        steps = self.horizon / self.delta_t
        if abs(steps - round(steps)) > 1e-12 * max(1.0, steps) + 1e-12:
            raise ValueError("delta_t must divide the horizon")
        dsteps = self.duration / self.delta_t
        if abs(dsteps - round(dsteps)) > 1e-9 * max(1.0, dsteps):
            raise ValueError("delta_t must divide the duration")
        object.__setattr__(self, "y0", tuple(float(v) for v in self.y0))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def transcription(self) -> TranscriptionConfig:
        return TranscriptionConfig.from_horizon(self.horizon, self.delta_t, method=self.integrator, d=self.degree)

    @property
    def task(self) -> TaskDefinition:
        return TaskDefinition(self.path, self.obstacles, self.weights, self.s_dot_max, self.v_max,
                              self.joint_speed_max)

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.delta_t))

    def initial_state(self) -> np.ndarray:
        chi = np.array([*self.y0, *self.x0])
        return np.concatenate([chi, [0.0, 0.0]]) if self.controller == "mpfc" else chi


def approach_scenario(controller: str = "mpfc", integrator: str = "rk4", **changes) -> ScenarioConfig:
    """Start at the tip position [0.5, 0.5] inside the circle, joint speeds limited to pi/2 rad/s."""
    base = ScenarioConfig(controller, integrator, duration=3.0, y0=(np.pi / 2, -np.pi / 2),
                          joint_speed_max=0.5 * np.pi, name="approach")
    return replace(base, **changes)


def obstacle_scenario(controller: str = "mpfc", integrator: str = "rk4", **changes) -> ScenarioConfig:
    """Start on the path origin with two obstacles and no speed bound.

    The tracking reference needs ``t >= s_f`` to arrive at the path end, so
    the TT-MPC run lasts 7 s; the MPFC run lasts 4 s.
    """
    model = changes.get("model", ManipulatorModel())
    path = changes.get("path", CirclePath())
    y0 = dyn.inverse_kinematics(pth.path_point(0.0, path), model, elbow_up=True)
    duration = 4.0 if controller == "mpfc" else 7.0
    base = ScenarioConfig(controller, integrator, duration=duration, y0=tuple(y0),
                          obstacles=PAPER_OBSTACLES, name="obstacles")
    return replace(base, **changes)


SCENARIOS = {"approach": approach_scenario, "obstacles": obstacle_scenario}


# ---------------------------------------------------------------------------
# controller and plant
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    applied: np.ndarray  # w_k (MPFC) or u_k (TT-MPC)
    states: np.ndarray  # predicted start-node states (N+1, nx)
    inputs: np.ndarray  # predicted inputs (N, nu)
    status: str
    stats: SolveStats
    solution: np.ndarray  # raw decision vector, for warm starts
    held: bool = False


def cold_guess(state, layout: DecisionLayout, model: ManipulatorModel) -> np.ndarray:
    """All nodes at ``state``, torques compensating gravity, zero path acceleration."""
    state = np.asarray(state, dtype=float)
    inp = np.zeros(layout.nu)
    inp[:2] = np.clip(dyn.gravity(state[:2], model), -model.u_max, model.u_max)
    return layout.pack(np.tile(state, (layout.N + 1, 1)), np.tile(inp, (layout.N, 1)))


def controller_step(state, t_k: float, scenario: ScenarioConfig, warm: np.ndarray | None = None,
                    previous_input: np.ndarray | None = None) -> StepResult:
    """Solve the OCP at ``(state, t_k)`` and return the first input.

    ``warm`` is the previous step's ``solution``; it is shifted by one
    interval before use. On a numerical failure the previous input is held.
    """
    problem, layout = transcribe(scenario.controller, scenario.transcription, scenario.model,
                                 scenario.task, state, t_k)
    if warm is None:
        guess = cold_guess(state, layout, scenario.model)
        options = replace(scenario.solver, warm_start=False)
    else:
        guess = layout.shift(warm)
        guess[layout.state_index[0]] = np.asarray(state, dtype=float)
        options = replace(scenario.solver, warm_start=True)
    result = ipm.solve(problem, guess, options)
    states, inputs = extract_trajectory(result.q_star, layout)
    if result.status in HOLD_STATUSES:
        held = previous_input if previous_input is not None else cold_guess(state, layout, scenario.model)[
            layout.input_index[0]]
        log.warning("t=%.3f: solver %s, holding previous input", t_k, result.status)
        return StepResult(np.array(held, dtype=float), states, inputs, result.status, result.stats, guess, True)
    return StepResult(inputs[0].copy(), states, inputs, result.status, result.stats, result.q_star.copy())


def simulate_plant(state, u, delta_t: float, model: ManipulatorModel, *, s_f: float = 2 * np.pi,
                   s_dot_max: float = 2.0, substeps: int = PLANT_SUBSTEPS) -> np.ndarray:
    """Advance the plant by ``delta_t`` under a constant input.

    Joint states use ``substeps`` RK4 steps. For 6-dimensional (MPFC) states
    the path-timing double integrator is integrated exactly and clamped to
    its bounds.
    """
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    h = delta_t / substeps
    chi = state[:4].copy()
    torque = u[:2]
    for _ in range(substeps):
        k1 = dyn.tracking_rhs(chi, torque, model)
        k2 = dyn.tracking_rhs(chi + 0.5 * h * k1, torque, model)
        k3 = dyn.tracking_rhs(chi + 0.5 * h * k2, torque, model)
        k4 = dyn.tracking_rhs(chi + h * k3, torque, model)
        chi = chi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if state.size == 4:
        return chi
    s, s_dot = state[4], state[5]
    v = u[2]
    s_new = s + s_dot * delta_t + 0.5 * v * delta_t ** 2
    s_dot_new = s_dot + v * delta_t
    s_dot_new = min(max(s_dot_new, 0.0), s_dot_max)
    s_new = min(max(s_new, 0.0), s_f)
    return np.concatenate([chi, [s_new, s_dot_new]])


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("t", "y1", "y2", "x1", "x2", "u1", "u2", "s", "sdot", "v", "px", "py",
               "e_norm", "status", "iters", "solve_ms")


@dataclass
class ClosedLoopLog:
    """One row per control instant; the input is the one applied over the following step."""

    scenario: ScenarioConfig
    t: np.ndarray
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    v: np.ndarray
    p: np.ndarray
    e_norm: np.ndarray
    status: list
    iterations: np.ndarray
    solve_ms: np.ndarray
    final_state: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def rows(self):
        """Rows in ``LOG_COLUMNS`` order."""
        for k in range(len(self)):
            yield (self.t[k], *self.y[k], *self.x[k], *self.u[k], self.s[k], self.s_dot[k], self.v[k],
                   *self.p[k], self.e_norm[k], self.status[k], int(self.iterations[k]), self.solve_ms[k])


def run_closed_loop(scenario: ScenarioConfig) -> ClosedLoopLog:
    """Run ``scenario.steps`` receding-horizon steps with warm-start chaining."""
    model, path = scenario.model, scenario.path
    mpfc = scenario.controller == "mpfc"
    state = scenario.initial_state()
    K = scenario.steps
    t = scenario.delta_t * np.arange(K)
    rows = {k: np.zeros((K, 2)) for k in ("y", "x", "u", "p")}
    cols = {k: np.zeros(K) for k in ("s", "s_dot", "v", "e_norm", "solve_ms")}
    iterations = np.zeros(K, dtype=np.int64)
    status = []
    warm = None
    applied = None
    for k in range(K):
        tk = t[k]
        t0 = time.perf_counter()
        step = controller_step(state, tk, scenario, warm, applied)
        cols["solve_ms"][k] = 1e3 * (time.perf_counter() - t0)
        warm, applied = step.solution, step.applied
        status.append(step.status)
        iterations[k] = step.stats.iterations
        rows["y"][k], rows["x"][k] = state[:2], state[2:4]
        rows["u"][k] = applied[:2]
        p = dyn.forward_kinematics(state[:2], model)
        rows["p"][k] = p
        if mpfc:
            cols["s"][k], cols["s_dot"][k], cols["v"][k] = state[4], state[5], applied[2]
            ref = pth.path_point(state[4], path)
        else:
            sigma, gate = pth._clock(tk, path)
            cols["s"][k], cols["s_dot"][k], cols["v"][k] = float(sigma), float(gate), 0.0
            ref = pth.path_point(float(sigma), path)
        cols["e_norm"][k] = np.linalg.norm(p - ref)
        state = simulate_plant(state, applied, scenario.delta_t, model, s_f=path.s_f,
                               s_dot_max=scenario.s_dot_max)
    return ClosedLoopLog(scenario, t, rows["y"], rows["x"], rows["u"], cols["s"], cols["s_dot"], cols["v"],
                         rows["p"], cols["e_norm"], status, iterations, cols["solve_ms"], state)
