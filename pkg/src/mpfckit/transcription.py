"""Direct simultaneous transcription of the path-following and tracking OCPs.

Two integrators are supported: one explicit RK4 step per control interval,
and Lagrange collocation on ``{0} + shifted Gauss-Legendre`` nodes. The cost
uses the rectangle rule on interval start nodes plus a terminal
state-only term.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import dynamics as dyn
from . import path as pth
from .autodiff import DifferentiableFunction, StageBlock
from .dynamics import ManipulatorModel
from .path import CirclePath, CostWeights, Obstacle

CONTROLLERS = ("mpfc", "ttmpc")
METHODS = ("rk4", "collocation")
CLAMP_TOL = 1e-9
INFEASIBLE_TOL = 1e-6


class InfeasibleBoundsError(ValueError):
    """Initial state violates the box bounds beyond the clamping tolerance."""


@dataclass(frozen=True)
class TranscriptionConfig:
    method: str = "rk4"
    delta_t: float = 0.01
    N_T: int = 20
    d: int = 3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")
        if self.N_T < 1:
            raise ValueError("N_T must be at least 1")
        if not 1 <= self.d <= 5:
            raise ValueError("collocation degree must be in 1..5")

    @property
    def horizon(self) -> float:
        return self.N_T * self.delta_t

    @classmethod
    def from_horizon(cls, horizon: float, delta_t: float = 0.01, **kw) -> "TranscriptionConfig":
        steps = horizon / delta_t
        n = int(round(steps))
        if n < 1 or abs(steps - n) > 1e-9 * max(1.0, steps):
            raise ValueError(f"horizon {horizon} is not an integer multiple of delta_t {delta_t}")
        return cls(delta_t=delta_t, N_T=n, **kw)


@dataclass(frozen=True)
class TaskDefinition:
    path: CirclePath = field(default_factory=CirclePath)
    obstacles: tuple[Obstacle, ...] = ()
    weights: CostWeights = field(default_factory=CostWeights)
    s_dot_max: float = 2.0
    v_max: float = 10.0
    joint_speed_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.s_dot_max <= 0 or self.v_max <= 0:
            raise ValueError("s_dot_max and v_max must be positive")
        if self.joint_speed_max is not None and self.joint_speed_max <= 0:
            raise ValueError("joint_speed_max must be positive")


PAPER_OBSTACLES = (Obstacle((0.55, 0.75), 0.02), Obstacle((0.4, 0.4), 0.04))


# ---------------------------------------------------------------------------
# integration primitives
# ---------------------------------------------------------------------------

def _rk4(f, z, w, h):
    k1 = f(z, w)
    k2 = f([zi + 0.5 * h * ki for zi, ki in zip(z, k1)], w)
    k3 = f([zi + 0.5 * h * ki for zi, ki in zip(z, k2)], w)
    k4 = f([zi + h * ki for zi, ki in zip(z, k3)], w)
    return [zi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + e) for zi, a, b, c, e in zip(z, k1, k2, k3, k4)]


def rk4_step(f, z, w, delta_t: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``z' = f(z, w)`` with ``w`` held constant."""
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    z = np.asarray(z, dtype=float)
    k1 = np.asarray(f(z, w), dtype=float)
    k2 = np.asarray(f(z + 0.5 * delta_t * k1, w), dtype=float)
    k3 = np.asarray(f(z + 0.5 * delta_t * k2, w), dtype=float)
    k4 = np.asarray(f(z + delta_t * k3, w), dtype=float)
    return z + (delta_t / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def legendre_nodes(d: int) -> np.ndarray:
    """Gauss-Legendre points shifted to (0, 1), ascending."""
    if not 1 <= d <= 5:
        raise ValueError(f"unsupported collocation degree {d}")
    x, _ = np.polynomial.legendre.leggauss(d)
    return np.sort(0.5 * (x + 1.0))


@functools.lru_cache(maxsize=None)
def _lagrange(d: int):
    tau = np.concatenate([[0.0], legendre_nodes(d)])
    end = np.zeros(d + 1)
    diff = np.zeros((d + 1, d + 1))
    for r in range(d + 1):
        others = np.delete(tau, r)
        poly = np.poly1d(others, r=True) / np.prod(tau[r] - others)
        end[r] = poly(1.0)
        diff[:, r] = poly.deriv()(tau)
    end.flags.writeable = False
    diff.flags.writeable = False
    return tau, end, diff


def lagrange_coefficients(d: int) -> tuple[np.ndarray, np.ndarray]:
    """``(L_j(1), D)`` with ``D[j, r] = dL_r/dtau`` at node ``j`` of ``{0, theta_1..theta_d}``."""
    if not 1 <= d <= 5:
        raise ValueError(f"unsupported collocation degree {d}")
    _, end, diff = _lagrange(d)
    return end.copy(), diff.copy()


# ---------------------------------------------------------------------------
# decision vector layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionLayout:
    """Index maps into q.

    RK4: ``[xi_0, w_0, ..., xi_{N-1}, w_{N-1}, xi_N]``.
    Collocation: ``[xi_{k,0..d}, w_k]`` per interval, then ``xi_{N,0}``.
    """

    method: str
    nx: int
    nu: int
    N: int
    d: int = 0

    @property
    def nodes_per_interval(self) -> int:
        return 1 if self.method == "rk4" else self.d + 1

    @property
    def stride(self) -> int:
        return self.nodes_per_interval * self.nx + self.nu

    @property
    def n(self) -> int:
        return self.N * self.stride + self.nx

    @functools.cached_property
    def node_index(self) -> np.ndarray:
        """(N, nodes_per_interval, nx) indices of all interval nodes."""
        k = np.arange(self.N)[:, None, None] * self.stride
        j = np.arange(self.nodes_per_interval)[None, :, None] * self.nx
        return k + j + np.arange(self.nx)[None, None, :]

    @functools.cached_property
    def state_index(self) -> np.ndarray:
        """(N + 1, nx) indices of the interval start nodes and the terminal node."""
        last = self.N * self.stride + np.arange(self.nx)
        return np.vstack([self.node_index[:, 0, :], last[None, :]])

    @functools.cached_property
    def input_index(self) -> np.ndarray:
        base = np.arange(self.N)[:, None] * self.stride + self.nodes_per_interval * self.nx
        return base + np.arange(self.nu)[None, :]

    def ranges(self) -> list[tuple[int, int]]:
        """Contiguous half-open ranges of every entity, in q order."""
        out = []
        for k in range(self.N):
            for j in range(self.nodes_per_interval):
                a = int(self.node_index[k, j, 0])
                out.append((a, a + self.nx))
            a = int(self.input_index[k, 0])
            out.append((a, a + self.nu))
        a = int(self.state_index[-1, 0])
        out.append((a, a + self.nx))
        return out

    def pack(self, states, inputs, nodes=None) -> np.ndarray:
        """Build q from start-node states ``(N+1, nx)``, inputs ``(N, nu)`` and
        optional interior collocation nodes ``(N, d, nx)`` (default: the
        interval start state repeated)."""
        states = np.asarray(states, dtype=float).reshape(self.N + 1, self.nx)
        inputs = np.asarray(inputs, dtype=float).reshape(self.N, self.nu)
        q = np.empty(self.n)
        q[self.state_index] = states
        q[self.input_index] = inputs
        if self.nodes_per_interval > 1:
            if nodes is None:
                nodes = np.repeat(states[:-1, None, :], self.d, axis=1)
            q[self.node_index[:, 1:, :]] = np.asarray(nodes, dtype=float).reshape(self.N, self.d, self.nx)
        return q

    def shift(self, q) -> np.ndarray:
        """Drop the first interval and duplicate the last one."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise ValueError(f"expected q of length {self.n}, got {q.shape}")
        body = q[: self.N * self.stride].reshape(self.N, self.stride)
        tail = q[self.N * self.stride:]
        if self.N == 1:
            new_body = body.copy()
        else:
            new_body = np.vstack([body[1:], body[-1:]])
        out = np.concatenate([new_body.ravel(), tail])
        # last interval starts where the old terminal node was
        out[self.node_index[-1].ravel()] = np.tile(tail, self.nodes_per_interval)
        return out


def extract_trajectory(q, layout: DecisionLayout) -> tuple[np.ndarray, np.ndarray]:
    """Start-node states ``(N+1, nx)`` and piecewise-constant inputs ``(N, nu)``."""
    q = np.asarray(q, dtype=float)
    if q.shape != (layout.n,):
        raise ValueError(f"q has length {q.size}, layout expects {layout.n}")
    return q[layout.state_index].copy(), q[layout.input_index].copy()


# ---------------------------------------------------------------------------
# NLP container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NlpProblem:
    """min cost(q)  s.t.  eq(q) = 0,  ineq(q) <= 0,  lb <= q <= ub."""

    n: int
    m_eq: int
    m_ineq: int
    lb: np.ndarray
    ub: np.ndarray
    cost: DifferentiableFunction
    eq: DifferentiableFunction
    ineq: DifferentiableFunction
    # optional per-stage (variables, equality rows, inequality rows) partition
    stages: tuple | None = None

    def __post_init__(self):
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("bounds must have length n")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        if (self.cost.n_in, self.cost.n_out) != (self.n, 1):
            raise ValueError("cost must map R^n to a scalar")
        if (self.eq.n_in, self.eq.n_out) != (self.n, self.m_eq):
            raise ValueError("equality callback dimensions do not match")
        if (self.ineq.n_in, self.ineq.n_out) != (self.n, self.m_ineq):
            raise ValueError("inequality callback dimensions do not match")

    @classmethod
    def build(cls, cost, eq=None, ineq=None, lb=None, ub=None):
        n = cost.n_in
        eq = eq if eq is not None else DifferentiableFunction(n, 0)
        ineq = ineq if ineq is not None else DifferentiableFunction(n, 0)
        lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        return cls(n, eq.n_out, ineq.n_out, lb, ub, cost, eq, ineq)


# ---------------------------------------------------------------------------
# transcription
# ---------------------------------------------------------------------------

def state_bounds(controller: str, model: ManipulatorModel, task: TaskDefinition):
    vmax = np.inf if task.joint_speed_max is None else task.joint_speed_max
    lo = [-np.inf, -np.inf, -vmax, -vmax]
    hi = [np.inf, np.inf, vmax, vmax]
    if controller == "mpfc":
        lo += [0.0, 0.0]
        hi += [task.path.s_f, task.s_dot_max]
    return np.array(lo), np.array(hi)


def input_bounds(controller: str, model: ManipulatorModel, task: TaskDefinition):
    hi = [model.u_max, model.u_max] + ([task.v_max] if controller == "mpfc" else [])
    hi = np.array(hi)
    return -hi, hi


def _rhs(controller, model):
    if controller == "mpfc":
        return lambda z, w: dyn._extended_rhs(z, w, model)
    return lambda z, w: dyn._tracking_rhs(z, w, model)


@dataclass(frozen=True)
class _Template:
    problem: NlpProblem
    layout: DecisionLayout
    pin_rows: np.ndarray
    times: np.ndarray | None  # node time offsets for the tracking cost blocks


def _cost_blocks(controller, layout, config, model, task, times):
    h = config.delta_t
    nx, path, weights = layout.nx, task.path, task.weights
    stage_cols = np.hstack([layout.state_index[:-1], layout.input_index])
    term_cols = layout.state_index[-1:]
    if controller == "mpfc":
        def stage(z, p):
            return [h * pth._stage_cost_pf(z[:nx], z[nx:], weights, path, model)]

        def terminal(z, p):
            return [h * pth._stage_cost_pf(z, None, weights, path, model)]
        p_stage = p_term = None
    else:
        def stage(z, p):
            return [h * pth._stage_cost_tt(z[:nx], z[nx:], p[:, 0], weights, path, model)]

        def terminal(z, p):
            return [h * pth._stage_cost_tt(z, None, p[:, 0], weights, path, model)]
        p_stage = times[:-1, None].copy()
        p_term = times[-1:, None].copy()
    zero = lambda b: np.zeros((b, 1), dtype=np.int64)  # noqa: E731
    return [
        StageBlock(stage, stage_cols, zero(layout.N), p_stage),
        StageBlock(terminal, term_cols, zero(1), p_term),
    ]


def _stages(layout, pin_rows, cont, coll, obst_rows):
    """Group variables and rows by time stage so the KKT matrix is block tridiagonal."""
    out = []
    empty = np.zeros(0, dtype=np.int64)
    for k in range(layout.N + 1):
        if k < layout.N:
            var = [layout.node_index[k].ravel(), layout.input_index[k]]
        else:
            var = [layout.state_index[-1]]
        eq = [pin_rows if k == 0 else cont[k - 1]]
        if coll is not None and k < layout.N:
            eq.append(coll[k].ravel())
        ineq = obst_rows[k - 1] if (obst_rows is not None and k > 0) else empty
        out.append((np.concatenate(var), np.concatenate(eq), np.asarray(ineq, dtype=np.int64)))
    return tuple(out)


@functools.lru_cache(maxsize=64)
def _template(controller: str, config: TranscriptionConfig, model: ManipulatorModel,
              task: TaskDefinition) -> _Template:
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}")
    nx, nu = (6, 3) if controller == "mpfc" else (4, 2)
    N, h = config.N_T, config.delta_t
    layout = DecisionLayout(config.method, nx, nu, N, config.d if config.method == "collocation" else 0)
    n = layout.n
    f = _rhs(controller, model)
    S, U = layout.state_index, layout.input_index

    lin_r, lin_c, lin_v = [], [], []

    def lin(rows, cols, vals):
        rows, cols = np.broadcast_arrays(np.asarray(rows), np.asarray(cols))
        lin_r.append(rows.ravel())
        lin_c.append(cols.ravel())
        lin_v.append(np.broadcast_to(vals, rows.shape).ravel().astype(float))

    eye_rows = np.arange(nx)
    pin_rows = eye_rows.copy()
    lin(pin_rows, S[0], 1.0)
    blocks = []

    if config.method == "rk4":
        # rows nx*(k+1) .. : xi_{k+1} - F(xi_k, w_k)
        cont = nx * (np.arange(N)[:, None] + 1) + eye_rows[None, :]
        lin(cont, S[1:], 1.0)

        def step(z, p):
            return [-v for v in _rk4(f, z[:nx], z[nx:], h)]

        blocks.append(StageBlock(step, np.hstack([S[:-1], U]), cont))
        m_eq = nx * (N + 1)
    else:
        d = config.d
        _, end, diff = _lagrange(d)
        nodes = layout.node_index  # (N, d+1, nx)
        per = nx * (d + 1)
        base = nx + per * np.arange(N)
        cont = base[:, None] + eye_rows[None, :]  # (N, nx)
        lin(cont, S[1:], 1.0)
        for r in range(d + 1):
            lin(cont, nodes[:, r, :], -end[r])
        coll = base[:, None, None] + nx * (1 + np.arange(d))[None, :, None] + eye_rows[None, None, :]  # (N, d, nx)
        for j in range(1, d + 1):
            for r in range(d + 1):
                if diff[j, r] != 0.0:
                    lin(coll[:, j - 1, :], nodes[:, r, :], -diff[j, r] / h)

        def colloc(z, p):
            return f(z[:nx], z[nx:])

        cols = np.concatenate(
            [nodes[:, 1:, :], np.broadcast_to(U[:, None, :], (N, d, nu))], axis=2
        ).reshape(N * d, nx + nu)
        blocks.append(StageBlock(colloc, cols, coll.reshape(N * d, nx)))
        m_eq = nx * (1 + N * (1 + d))

    A = sp.csr_matrix((np.concatenate(lin_v), (np.concatenate(lin_r), np.concatenate(lin_c))), shape=(m_eq, n))
    eq = DifferentiableFunction(n, m_eq, blocks, A)

    times = h * np.arange(N + 1) if controller == "ttmpc" else None
    cost = DifferentiableFunction(n, 1, _cost_blocks(controller, layout, config, model, task, times))

    obstacles = task.obstacles
    if obstacles:
        n_obs = len(obstacles)

        def obst(z, p):
            px, py = dyn._fk(z[0], z[1], model)
            return [pth._obstacle(px, py, o) for o in obstacles]

        rows = np.arange(N * n_obs).reshape(N, n_obs)
        ineq = DifferentiableFunction(n, N * n_obs, [StageBlock(obst, S[1:, :2], rows)])
    else:
        ineq = DifferentiableFunction(n, 0)

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    xlo, xhi = state_bounds(controller, model, task)
    ulo, uhi = input_bounds(controller, model, task)
    all_nodes = np.concatenate([layout.node_index.reshape(-1, nx), S[-1:]])
    lb[all_nodes] = xlo
    ub[all_nodes] = xhi
    # the pinned start node carries no box bounds
    lb[S[0]] = -np.inf
    ub[S[0]] = np.inf
    lb[U] = ulo
    ub[U] = uhi

    stages = _stages(layout, pin_rows, cont, None if config.method == "rk4" else coll,
                     rows if obstacles else None)
    problem = NlpProblem(n, m_eq, ineq.n_out, lb, ub, cost, eq, ineq, stages)
    for fn in (eq, cost, ineq):
        fn.jacobian_structure()
        fn.hessian_structure()
    return _Template(problem, layout, pin_rows, times)


def _with(fn: DifferentiableFunction, **changes) -> DifferentiableFunction:
    """Shallow copy sharing the cached sparsity patterns."""
    new = DifferentiableFunction.__new__(DifferentiableFunction)
    new.__dict__.update(fn.__dict__)
    for k, v in changes.items():
        setattr(new, k, v)
    return new


def clamp_initial_state(x_init, controller: str, model: ManipulatorModel, task: TaskDefinition) -> np.ndarray:
    x = np.asarray(x_init, dtype=float).copy()
    lo, hi = state_bounds(controller, model, task)
    if x.shape != lo.shape:
        raise ValueError(f"initial state must have length {lo.size}")
    viol = np.max(np.concatenate([lo - x, x - hi, [0.0]]))
    if viol > INFEASIBLE_TOL:
        raise InfeasibleBoundsError(f"initial state violates bounds by {viol:.3g}")
    return np.clip(x, lo, hi)


def transcribe(controller: str, config: TranscriptionConfig, model: ManipulatorModel,
               task: TaskDefinition, x_init, t_k: float = 0.0) -> tuple[NlpProblem, DecisionLayout]:
    """Build the NLP for one receding-horizon solve started at ``(x_init, t_k)``."""
    tpl = _template(controller, config, model, task)
    x0 = clamp_initial_state(x_init, controller, model, task)
    p = tpl.problem
    offset = np.zeros(p.m_eq)
    offset[tpl.pin_rows] = x0
    eq = _with(p.eq, offset=offset)
    cost = p.cost
    if controller == "ttmpc":
        times = t_k + tpl.times
        b0, b1 = cost.blocks
        cost = _with(cost, blocks=[replace(b0, params=times[:-1, None].copy()),
                                   replace(b1, params=times[-1:, None].copy())])
    return replace(p, eq=eq, cost=cost), tpl.layout
