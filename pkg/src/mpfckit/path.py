"""Reference circle, error signals, stage costs and obstacle constraints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .dynamics import ManipulatorModel


@dataclass(frozen=True)
class CirclePath:
    """Counter-clockwise circle ``center + radius * [cos(s + phase), sin(s + phase)]``."""

    center: tuple[float, float] = (0.55, 0.55)
    radius: float = 0.2
    phase: float = 0.0
    s_f: float = 2 * np.pi

    def __post_init__(self):
        if self.radius <= 0 or self.s_f <= 0:
            raise ValueError("radius and s_f must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


def _spd(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (2, 2) or not np.allclose(mat, mat.T) or np.any(np.linalg.eigvalsh(mat) <= 0):
        raise ValueError(f"{name} must be a symmetric positive definite 2x2 matrix")
    return mat


@dataclass(frozen=True, eq=False)
class CostWeights:
    Q: np.ndarray = field(default_factory=lambda: 1e4 * np.eye(2))
    Q_d: np.ndarray = field(default_factory=lambda: 1e1 * np.eye(2))
    R: np.ndarray = field(default_factory=lambda: 1e-3 * np.eye(2))
    q: float = 1.0
    r: float = 1e-3

    def __post_init__(self):
        for name in ("Q", "Q_d", "R"):
            object.__setattr__(self, name, _spd(getattr(self, name), name))
        if self.q <= 0 or self.r <= 0:
            raise ValueError("q and r must be positive")

    def key(self):
        return (self.Q.tobytes(), self.Q_d.tobytes(), self.R.tobytes(), self.q, self.r)

    def __eq__(self, other):
        return isinstance(other, CostWeights) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


# ---------------------------------------------------------------------------
# component kernels (float / array / Jet)
# ---------------------------------------------------------------------------

def _point(s, path: CirclePath):
    a = s + path.phase
    return path.center[0] + path.radius * np.cos(a), path.center[1] + path.radius * np.sin(a)


def _tangent(s, path: CirclePath):
    a = s + path.phase
    return -path.radius * np.sin(a), path.radius * np.cos(a)


def _quad(e1, e2, W):
    return 0.5 * (W[0, 0] * e1 * e1 + 2.0 * W[0, 1] * e1 * e2 + W[1, 1] * e2 * e2)


def _errors_pf(xi, path, model):
    y1, y2, x1, x2, s, s_dot = xi
    px, py = dyn._fk(y1, y2, model)
    rx, ry = _point(s, path)
    vx, vy = dyn._fk_velocity(y1, y2, x1, x2, model)
    tx, ty = _tangent(s, path)
    return (px - rx, py - ry), (vx - tx * s_dot, vy - ty * s_dot)


def _clock(t, path):
    t = np.asarray(t, dtype=float)
    return np.minimum(t, path.s_f), (t < path.s_f).astype(float)


def _errors_tt(chi, t, path, model):
    y1, y2, x1, x2 = chi
    sigma, gate = _clock(t, path)
    px, py = dyn._fk(y1, y2, model)
    rx, ry = _point(sigma, path)
    vx, vy = dyn._fk_velocity(y1, y2, x1, x2, model)
    tx, ty = _tangent(sigma, path)
    return (px - rx, py - ry), (vx - tx * gate, vy - ty * gate)


def _stage_cost_pf(xi, w, weights: CostWeights, path, model):
    e, ed = _errors_pf(xi, path, model)
    es = xi[4] - path.s_f
    cost = _quad(e[0], e[1], weights.Q) + _quad(ed[0], ed[1], weights.Q_d)
    cost = cost + 0.5 * weights.q * es * es
    if w is not None:
        cost = cost + _quad(w[0], w[1], weights.R) + 0.5 * weights.r * w[2] * w[2]
    return cost


def _stage_cost_tt(chi, u, t, weights: CostWeights, path, model):
    e, ed = _errors_tt(chi, t, path, model)
    cost = _quad(e[0], e[1], weights.Q) + _quad(ed[0], ed[1], weights.Q_d)
    if u is not None:
        cost = cost + _quad(u[0], u[1], weights.R)
    return cost


def _obstacle(px, py, obstacle: Obstacle):
    dx = px - obstacle.center[0]
    dy = py - obstacle.center[1]
    return obstacle.radius ** 2 - (dx * dx + dy * dy)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def path_point(s, path: CirclePath) -> np.ndarray:
    return np.array(_point(s, path), dtype=float)


def path_tangent(s, path: CirclePath) -> np.ndarray:
    return np.array(_tangent(s, path), dtype=float)


def path_error(xi, path: CirclePath, model: ManipulatorModel) -> np.ndarray:
    """e_pf = FK(y) - rho(s)."""
    return np.array(_errors_pf(list(xi), path, model)[0], dtype=float)


def path_error_rate(xi, path: CirclePath, model: ManipulatorModel) -> np.ndarray:
    return np.array(_errors_pf(list(xi), path, model)[1], dtype=float)


def tracking_error(chi, t, path: CirclePath, model: ManipulatorModel) -> np.ndarray:
    """Error to the clocked reference rho(min(t, s_f))."""
    return np.array(_errors_tt(list(chi), t, path, model)[0], dtype=float)


def tracking_error_rate(chi, t, path: CirclePath, model: ManipulatorModel) -> np.ndarray:
    return np.array(_errors_tt(list(chi), t, path, model)[1], dtype=float)


def timing_error(s, path: CirclePath) -> float:
    return float(s - path.s_f)


def stage_cost_pf(xi, w, weights: CostWeights, path: CirclePath, model: ManipulatorModel) -> float:
    return float(_stage_cost_pf(list(xi), None if w is None else list(w), weights, path, model))


def stage_cost_tt(chi, u, t, weights: CostWeights, path: CirclePath, model: ManipulatorModel) -> float:
    return float(_stage_cost_tt(list(chi), None if u is None else list(u), t, weights, path, model))


def obstacle_violation(p, obstacle: Obstacle) -> float:
    """``r^2 - |p - c|^2``; the point is admissible iff the result is <= 0."""
    return float(_obstacle(p[0], p[1], obstacle))


def obstacle_gradient(p, obstacle: Obstacle) -> np.ndarray:
    return -2.0 * (np.asarray(p, dtype=float) - np.asarray(obstacle.center))
