import numpy as np
import pytest

from mpfckit import dynamics as dyn
from mpfckit import mpc
from mpfckit import path as pth
from mpfckit.dynamics import ManipulatorModel
from mpfckit.path import CirclePath, CostWeights

MODEL = ManipulatorModel()
PATH = CirclePath()


def goal_state():
    y = dyn.inverse_kinematics(pth.path_point(PATH.s_f, PATH), MODEL)
    return np.array([*y, 0.0, 0.0, PATH.s_f, 0.0])


def test_plant_equilibrium():
    xi = np.array([0.7, -0.9, 0.0, 0.0, 1.0, 0.0])
    u = [*dyn.gravity(xi[:2], MODEL), 0.0]
    np.testing.assert_allclose(mpc.simulate_plant(xi, u, 0.01, MODEL), xi, atol=1e-10)


def test_plant_timing_block_is_exact_and_clamped():
    xi = np.array([0.7, -0.9, 0.0, 0.0, 1.0, 1.0])
    out = mpc.simulate_plant(xi, [0.0, 0.0, 0.0], 0.01, MODEL)
    assert out[4] == pytest.approx(1.01, abs=1e-15)
    assert out[5] == 1.0
    out = mpc.simulate_plant(xi, [0.0, 0.0, -1000.0], 0.01, MODEL)
    assert out[5] == 0.0
    out = mpc.simulate_plant([*xi[:4], PATH.s_f, 2.0], [0.0, 0.0, 10.0], 0.01, MODEL)
    assert (out[4], out[5]) == (PATH.s_f, 2.0)


def test_plant_substep_refinement():
    chi = np.array([0.4, -1.1, 0.6, -0.3])
    u = np.array([4.0, 1.0])
    coarse = mpc.simulate_plant(chi, u, 0.01, MODEL, substeps=10)
    fine = mpc.simulate_plant(chi, u, 0.01, MODEL, substeps=100)
    assert np.max(np.abs(coarse - fine)) < 1e-9
    assert coarse.shape == (4,)


def test_scenario_validation():
    with pytest.raises(ValueError):
        mpc.ScenarioConfig(controller="pid")
    with pytest.raises(ValueError):
        mpc.ScenarioConfig(duration=0.1, horizon=0.2)
    with pytest.raises(ValueError):
        mpc.ScenarioConfig(horizon=0.205)
    assert mpc.ScenarioConfig(duration=0.0).steps == 0


def test_zero_duration_gives_empty_log():
    log = mpc.run_closed_loop(mpc.approach_scenario(duration=0.0))
    assert len(log) == 0
    assert list(log.rows()) == []
    np.testing.assert_array_equal(log.final_state, log.scenario.initial_state())


def test_scenario_presets():
    a = mpc.approach_scenario("ttmpc")
    np.testing.assert_allclose(dyn.forward_kinematics(a.y0, MODEL), [0.5, 0.5], atol=1e-15)
    assert a.joint_speed_max == pytest.approx(0.5 * np.pi)
    b = mpc.obstacle_scenario("mpfc", "collocation")
    np.testing.assert_allclose(dyn.forward_kinematics(b.y0, MODEL), pth.path_point(0.0, PATH), atol=1e-12)
    assert b.joint_speed_max is None and len(b.obstacles) == 2
    assert b.initial_state().shape == (6,) and a.initial_state().shape == (4,)


def test_mpfc_at_goal_keeps_timing_still():
    # at s = s_f with zero path speed the only feasible timing is v = 0, so the
    # NLP has no strict interior; the applied path acceleration must still vanish
    xi = goal_state()
    step = mpc.controller_step(xi, 0.0, mpc.ScenarioConfig("mpfc", duration=0.2))
    assert step.status != "numerical_failure"
    assert abs(step.applied[2]) < 1e-3


def test_warm_start_is_deterministic():
    scenario = mpc.approach_scenario("mpfc")
    state = scenario.initial_state()
    first = mpc.controller_step(state, 0.0, scenario)
    a = mpc.controller_step(state, 0.0, scenario, first.solution, first.applied)
    b = mpc.controller_step(state, 0.0, scenario, first.solution, first.applied)
    np.testing.assert_allclose(a.applied, b.applied, atol=1e-6)
    np.testing.assert_array_equal(a.applied, b.applied)


@pytest.mark.parametrize("r, atol", [(1e-9, 1e-3), (1e-3, 0.2)])
def test_ttmpc_reference_freezes_after_path_end(r, atol):
    # the torque penalty pulls the optimum off gravity by O(R); it vanishes with R
    chi = goal_state()[:4]
    scenario = mpc.ScenarioConfig("ttmpc", duration=0.2, weights=CostWeights(R=r * np.eye(2)))
    step = mpc.controller_step(chi, PATH.s_f + 1.0, scenario)
    assert step.status == "optimal"
    np.testing.assert_allclose(step.applied, dyn.gravity(chi[:2], MODEL), atol=atol)


def test_failed_solve_holds_previous_input(monkeypatch):
    scenario = mpc.approach_scenario("mpfc")
    state = scenario.initial_state()
    real_solve = mpc.ipm.solve

    def failing(problem, guess, options=None):
        res = real_solve(problem, guess, options)
        res.status = mpc.ipm.NUMERICAL_FAILURE
        return res

    monkeypatch.setattr(mpc.ipm, "solve", failing)
    held = np.array([1.0, 2.0, 0.5])
    step = mpc.controller_step(state, 0.0, scenario, None, held)
    assert step.held
    np.testing.assert_array_equal(step.applied, held)


def test_short_closed_loop_log():
    scenario = mpc.approach_scenario("mpfc", duration=0.2)
    log = mpc.run_closed_loop(scenario)
    assert len(log) == 20
    assert np.all(np.diff(log.t) > 0)
    np.testing.assert_allclose(np.diff(log.t), 0.01, atol=1e-12)
    assert np.all(np.diff(log.s) >= 0)
    assert np.all(np.abs(log.u) <= 30 + 1e-6)
    assert all(s == "optimal" for s in log.status)
    row = next(log.rows())
    assert len(row) == len(mpc.LOG_COLUMNS)
