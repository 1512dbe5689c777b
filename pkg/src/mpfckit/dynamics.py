"""Two-link planar manipulator and path-timing dynamics.

The scalar kernels (``_accel``, ``_fk``, ...) take components one by one and
use only arithmetic and ``np.sin``/``np.cos``, so they evaluate on floats,
on batched arrays of shape ``(B,)`` and on :class:`~mpfckit.autodiff.Jet`
objects alike. The public functions wrap them for single states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import value

PIVOT_TOL = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    """Inertia matrix pivot fell below tolerance (corrupted parameters)."""


@dataclass(frozen=True)
class ManipulatorModel:
    """Composite dynamic parameters of the two-link arm.

    Defaults are the published composites; link lengths are 0.5 m each so the
    reference circle lies well inside the 1 m reach.
    """

    a1: float = 0.5578
    a2: float = 0.2263
    a3: float = 0.0785
    g1: float = 17.0694
    g2: float = 4.3164
    L1: float = 0.5
    L2: float = 0.5
    u_max: float = 30.0

    def __post_init__(self):
        if not (self.a1 > 0 and self.a3 > 0 and self.a1 > self.a2):
            raise ValueError("inertia composites must satisfy a1, a3 > 0 and a1 > a2")
        if not (self.u_max > 0 and self.L1 > 0 and self.L2 > 0):
            raise ValueError("u_max, L1 and L2 must be positive")
        # leading minors over a full turn of the elbow
        c = np.cos(np.linspace(0.0, 2 * np.pi, 361))
        m11 = self.a1 + self.a2 * c
        det = m11 * self.a3 - (0.5 * self.a2 * c + self.a3) ** 2
        if np.any(m11 <= 0) or np.any(det <= 0):
            raise ValueError("inertia matrix is not positive definite for all elbow angles")

    @property
    def reach(self) -> float:
        return self.L1 + self.L2


@dataclass(frozen=True)
class JointState:
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(2))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(2))
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.x))):
            raise ValueError("joint state must be finite")


@dataclass(frozen=True)
class PathTimingState:
    s: float
    s_dot: float


@dataclass(frozen=True)
class TrackingState:
    """chi = [y, x]."""

    joint: JointState

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.joint.y, self.joint.x])

    @classmethod
    def from_vector(cls, v) -> "TrackingState":
        v = np.asarray(v, dtype=float)
        return cls(JointState(v[0:2], v[2:4]))


@dataclass(frozen=True)
class ExtendedState:
    """xi = [y, x, s, s_dot]."""

    joint: JointState
    timing: PathTimingState

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.joint.y, self.joint.x, [self.timing.s, self.timing.s_dot]])

    @classmethod
    def from_vector(cls, v) -> "ExtendedState":
        v = np.asarray(v, dtype=float)
        return cls(JointState(v[0:2], v[2:4]), PathTimingState(float(v[4]), float(v[5])))

    def validate(self, s_f: float, s_dot_max: float, tol: float = 0.0) -> None:
        s, sd = self.timing.s, self.timing.s_dot
        if not (-tol <= s <= s_f + tol and -tol <= sd <= s_dot_max + tol):
            raise ValueError(f"path timing state (s={s}, s_dot={sd}) out of bounds")


# ---------------------------------------------------------------------------
# component kernels
# ---------------------------------------------------------------------------

def _inertia(y2, m: ManipulatorModel):
    c2 = np.cos(y2)
    m11 = m.a1 + m.a2 * c2
    m12 = 0.5 * m.a2 * c2 + m.a3
    return m11, m12, m.a3


def _coriolis_times_x(y2, x1, x2, m: ManipulatorModel):
    h = 0.5 * m.a2 * np.sin(y2)
    return -h * (2.0 * x1 * x2 + x2 * x2), h * x1 * x1


def _gravity(y1, y2, m: ManipulatorModel):
    c12 = np.cos(y1 + y2)
    return m.g1 * np.cos(y1) + m.g2 * c12, m.g2 * c12


def _check_pivot(p):
    if np.any(np.abs(value(p)) < PIVOT_TOL):
        raise SingularMatrixError("inertia matrix pivot below tolerance")


def _accel(y1, y2, x1, x2, u1, u2, m: ManipulatorModel):
    """Joint accelerations by 2x2 elimination of M a = u - C x - G."""
    m11, m12, m22 = _inertia(y2, m)
    cx1, cx2 = _coriolis_times_x(y2, x1, x2, m)
    g1, g2 = _gravity(y1, y2, m)
    b1 = u1 - cx1 - g1
    b2 = u2 - cx2 - g2
    _check_pivot(m11)
    l21 = m12 / m11
    p2 = m22 - l21 * m12
    _check_pivot(p2)
    acc2 = (b2 - l21 * b1) / p2
    acc1 = (b1 - m12 * acc2) / m11
    return acc1, acc2


def _fk(y1, y2, m: ManipulatorModel):
    a, b = y1, y1 + y2
    return m.L1 * np.cos(a) + m.L2 * np.cos(b), m.L1 * np.sin(a) + m.L2 * np.sin(b)


def _fk_velocity(y1, y2, x1, x2, m: ManipulatorModel):
    """J_p(y) x."""
    s1, c1 = np.sin(y1), np.cos(y1)
    s12, c12 = np.sin(y1 + y2), np.cos(y1 + y2)
    w12 = x1 + x2
    return -m.L1 * s1 * x1 - m.L2 * s12 * w12, m.L1 * c1 * x1 + m.L2 * c12 * w12


def _tracking_rhs(chi, u, m: ManipulatorModel):
    y1, y2, x1, x2 = chi
    a1, a2 = _accel(y1, y2, x1, x2, u[0], u[1], m)
    return [x1, x2, a1, a2]


def _extended_rhs(xi, w, m: ManipulatorModel):
    y1, y2, x1, x2, _s, s_dot = xi
    a1, a2 = _accel(y1, y2, x1, x2, w[0], w[1], m)
    return [x1, x2, a1, a2, s_dot, w[2]]


# ---------------------------------------------------------------------------
# public single-state API
# ---------------------------------------------------------------------------

def inertia(y, model: ManipulatorModel) -> np.ndarray:
    m11, m12, m22 = _inertia(y[1], model)
    return np.array([[m11, m12], [m12, m22]], dtype=float)


def inertia_dy2(y, model: ManipulatorModel) -> np.ndarray:
    """Derivative of the inertia matrix with respect to the elbow angle."""
    s2 = np.sin(y[1])
    return np.array([[-model.a2 * s2, -0.5 * model.a2 * s2], [-0.5 * model.a2 * s2, 0.0]])


def coriolis(y, x, model: ManipulatorModel) -> np.ndarray:
    h = 0.5 * model.a2 * np.sin(y[1])
    x1, x2 = x
    return np.array([[-h * x2, -h * (x1 + x2)], [h * x1, 0.0]])


def gravity(y, model: ManipulatorModel) -> np.ndarray:
    return np.array(_gravity(y[0], y[1], model), dtype=float)


def joint_accel(y, x, u, model: ManipulatorModel) -> np.ndarray:
    return np.array(_accel(y[0], y[1], x[0], x[1], u[0], u[1], model), dtype=float)


def forward_kinematics(y, model: ManipulatorModel) -> np.ndarray:
    return np.array(_fk(y[0], y[1], model), dtype=float)


def fk_jacobian(y, model: ManipulatorModel) -> np.ndarray:
    s1, c1 = np.sin(y[0]), np.cos(y[0])
    s12, c12 = np.sin(y[0] + y[1]), np.cos(y[0] + y[1])
    return np.array([
        [-model.L1 * s1 - model.L2 * s12, -model.L2 * s12],
        [model.L1 * c1 + model.L2 * c12, model.L2 * c12],
    ])


def inverse_kinematics(p, model: ManipulatorModel, elbow_up: bool = True) -> np.ndarray:
    """Joint angles placing the tip at ``p``.

    The elbow-up branch has a non-positive elbow angle, i.e. the elbow sits on
    the counter-clockwise side of the base-to-tip line.
    """
    px, py = float(p[0]), float(p[1])
    L1, L2 = model.L1, model.L2
    c2 = (px * px + py * py - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    if not -1.0 <= c2 <= 1.0:
        raise ValueError(f"point {p} is outside the reachable workspace")
    y2 = np.arccos(c2)
    if elbow_up:
        y2 = -y2
    y1 = np.arctan2(py, px) - np.arctan2(L2 * np.sin(y2), L1 + L2 * np.cos(y2))
    return np.array([y1, y2])


def tracking_rhs(chi, u, model: ManipulatorModel) -> np.ndarray:
    return np.array(_tracking_rhs(list(chi), list(u), model), dtype=float)


def extended_rhs(xi, w, model: ManipulatorModel) -> np.ndarray:
    return np.array(_extended_rhs(list(xi), list(w), model), dtype=float)
