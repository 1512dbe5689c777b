import numpy as np
import pytest

from mpfckit import dynamics as dyn
from mpfckit import path as pth
from mpfckit.dynamics import ManipulatorModel
from mpfckit.transcription import (
    PAPER_OBSTACLES,
    DecisionLayout,
    InfeasibleBoundsError,
    TaskDefinition,
    TranscriptionConfig,
    extract_trajectory,
    lagrange_coefficients,
    legendre_nodes,
    rk4_step,
    transcribe,
)

MODEL = ManipulatorModel()
TASK = TaskDefinition()
XI0 = np.array([0.9, -1.2, 0.1, -0.2, 0.5, 0.3])


@pytest.mark.parametrize("controller, method, n, m_eq", [
    ("mpfc", "rk4", 186, 126),
    ("ttmpc", "rk4", 124, 84),
    ("mpfc", "collocation", 546, None),
])
def test_problem_sizes(controller, method, n, m_eq):
    x0 = XI0 if controller == "mpfc" else XI0[:4]
    problem, layout = transcribe(controller, TranscriptionConfig(method=method, N_T=20), MODEL, TASK, x0)
    assert problem.n == layout.n == n
    if m_eq is not None:
        assert problem.m_eq == m_eq
    else:
        # pin + continuity + d collocation rows per interval
        assert problem.m_eq == 6 * 21 + 20 * 3 * 6


def test_obstacle_rows_per_node():
    task = TaskDefinition(obstacles=PAPER_OBSTACLES)
    problem, _ = transcribe("mpfc", TranscriptionConfig(N_T=20), MODEL, task, XI0)
    # node 0 is pinned, so only nodes 1..N carry obstacle rows
    assert problem.m_ineq == 2 * 20


def test_rk4_step_examples():
    assert rk4_step(lambda z, w: 0.0 * z, np.array([1.5]), None, 0.1) == pytest.approx(1.5)
    np.testing.assert_allclose(rk4_step(lambda z, w: z, np.array([1.0]), None, 0.1),
                               1 + 0.1 + 0.01 / 2 + 0.001 / 6 + 0.0001 / 24, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        rk4_step(lambda z, w: z, np.array([1.0]), None, 0.0)


def test_rk4_self_convergence():
    f = lambda z, w: dyn.tracking_rhs(z, w, MODEL)
    z0 = np.array([0.3, -0.8, 0.5, -0.4])
    u = dyn.gravity(z0[:2], MODEL) + np.array([0.5, -0.2])

    def integrate(h, T=0.2):
        z = z0
        for _ in range(int(round(T / h))):
            z = rk4_step(f, z, u, h)
        return z

    ref = integrate(0.001)
    e1 = np.linalg.norm(integrate(0.02) - ref)
    e2 = np.linalg.norm(integrate(0.01) - ref)
    assert 8.0 <= e1 / e2 <= 32.0


def test_legendre_nodes():
    np.testing.assert_allclose(legendre_nodes(1), [0.5], atol=1e-15)
    np.testing.assert_allclose(legendre_nodes(2), [0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(legendre_nodes(3), [0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)],
                               atol=1e-15)
    for bad in (0, 6):
        with pytest.raises(ValueError):
            legendre_nodes(bad)


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_lagrange_coefficients(d):
    end, diff = lagrange_coefficients(d)
    assert end.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(diff.sum(axis=1), 0.0, atol=1e-10)
    tau = np.concatenate([[0.0], legendre_nodes(d)])
    # differentiates polynomials of degree <= d exactly
    for p in range(d + 1):
        np.testing.assert_allclose(diff @ tau ** p, p * tau ** max(p - 1, 0) if p else 0.0, atol=1e-10)
    if d == 1:
        np.testing.assert_allclose(end, [-1.0, 2.0], atol=1e-14)


def test_collocation_exact_for_double_integrator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    d, h = 3, 0.25
    end, D = lagrange_coefficients(d)
    z0 = np.array([0.7, -1.3])
    # unknown interior nodes z_1..z_d: A z_j - (1/h) sum_r D[j, r] z_r = 0
    n = 2 * d
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    for j in range(1, d + 1):
        rows = slice(2 * (j - 1), 2 * j)
        M[rows, rows] += A
        for r in range(d + 1):
            if r == 0:
                rhs[rows] += D[j, 0] * z0 / h
            else:
                M[rows, 2 * (r - 1): 2 * r] -= D[j, r] * np.eye(2) / h
    nodes = np.linalg.solve(M, rhs).reshape(d, 2)
    z_end = end[0] * z0 + end[1:] @ nodes
    np.testing.assert_allclose(z_end, [z0[0] + h * z0[1], z0[1]], atol=1e-10)


def test_rk4_feasibility_oracle():
    config = TranscriptionConfig(N_T=10)
    problem, layout = transcribe("mpfc", config, MODEL, TASK, XI0)
    rng = np.random.default_rng(3)
    inputs = rng.uniform(-2.0, 2.0, size=(10, 3))
    states = [XI0]
    for w in inputs:
        states.append(rk4_step(lambda z, w: dyn.extended_rhs(z, w, MODEL), states[-1], w, config.delta_t))
    q = layout.pack(np.array(states), inputs)
    np.testing.assert_allclose(problem.eq(q), 0.0, atol=1e-12)
    got_states, got_inputs = extract_trajectory(q, layout)
    np.testing.assert_array_equal(got_states, np.array(states))
    np.testing.assert_array_equal(got_inputs, inputs)


def test_cost_zero_at_path_end():
    y = dyn.inverse_kinematics(pth.path_point(TASK.path.s_f, TASK.path), MODEL)
    xi = np.array([*y, 0.0, 0.0, TASK.path.s_f, 0.0])
    for method in ("rk4", "collocation"):
        problem, layout = transcribe("mpfc", TranscriptionConfig(method=method, N_T=5), MODEL, TASK, xi)
        q = layout.pack(np.tile(xi, (6, 1)), np.zeros((5, 3)))
        assert problem.cost(q)[0] == pytest.approx(0.0, abs=1e-20)


def test_layout_ranges_cover_decision_vector():
    for method, d in (("rk4", 0), ("collocation", 3)):
        layout = DecisionLayout(method, 6, 3, 4, d)
        ranges = layout.ranges()
        covered = np.concatenate([np.arange(a, b) for a, b in ranges])
        np.testing.assert_array_equal(np.sort(covered), np.arange(layout.n))


def test_shift_moves_intervals_forward():
    layout = DecisionLayout("rk4", 2, 1, 3)
    states = np.arange(8.0).reshape(4, 2)
    inputs = np.array([[10.0], [11.0], [12.0]])
    shifted = extract_trajectory(layout.shift(layout.pack(states, inputs)), layout)
    np.testing.assert_array_equal(shifted[0], [[2, 3], [4, 5], [6, 7], [6, 7]])
    np.testing.assert_array_equal(shifted[1], [[11.0], [12.0], [12.0]])
    with pytest.raises(ValueError):
        layout.shift(np.zeros(3))


def test_initial_state_clamping():
    config = TranscriptionConfig(N_T=2)
    drift = XI0.copy()
    drift[5] = -1e-10
    problem, layout = transcribe("mpfc", config, MODEL, TASK, drift)
    q = np.zeros(layout.n)
    # the pin row holds the clamped value 0
    assert problem.eq(q)[5] == 0.0
    drift[5] = -1e-5
    with pytest.raises(InfeasibleBoundsError):
        transcribe("mpfc", config, MODEL, TASK, drift)


def test_config_validation():
    with pytest.raises(ValueError):
        TranscriptionConfig(method="euler")
    with pytest.raises(ValueError):
        TranscriptionConfig(N_T=0)
    with pytest.raises(ValueError):
        TranscriptionConfig.from_horizon(0.205, 0.01)
    assert TranscriptionConfig.from_horizon(0.6, 0.01).N_T == 60


def test_ttmpc_time_shift_changes_cost_only():
    x0 = XI0[:4]
    config = TranscriptionConfig(N_T=4)
    p0, layout = transcribe("ttmpc", config, MODEL, TASK, x0, t_k=0.0)
    p1, _ = transcribe("ttmpc", config, MODEL, TASK, x0, t_k=1.0)
    q = layout.pack(np.tile(x0, (5, 1)), np.zeros((4, 2)))
    np.testing.assert_array_equal(p0.eq(q), p1.eq(q))
    assert p0.cost(q)[0] != p1.cost(q)[0]
