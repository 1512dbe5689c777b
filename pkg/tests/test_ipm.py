import numpy as np
import pytest

from mpfckit import ipm
from mpfckit.autodiff import DifferentiableFunction as DF
from mpfckit.dynamics import ManipulatorModel
from mpfckit.mpc import cold_guess
from mpfckit.selftest import analytic_battery
from mpfckit.transcription import NlpProblem, TaskDefinition, TranscriptionConfig, transcribe

BATTERY = {case.name: case for case in analytic_battery()}


@pytest.mark.parametrize("name", sorted(BATTERY))
def test_analytic_battery(name):
    case = BATTERY[name]
    res = ipm.solve(case.problem, case.initial_guess)
    assert res.status == ipm.OPTIMAL
    np.testing.assert_allclose(res.q_star, case.solution, atol=1e-6)
    assert max(ipm.kkt_residuals(case.problem, res.point)) <= 1e-8


def test_scalar_bound_multiplier():
    # min (x - 2)^2  s.t.  x <= 1  ->  x* = 1 with multiplier 2
    problem = NlpProblem.build(DF.from_callable(lambda z: [(z[0] - 2.0) ** 2], 1, 1),
                               ineq=DF.from_callable(lambda z: [z[0] - 1.0], 1, 1))
    res = ipm.solve(problem, [0.0])
    assert res.status == ipm.OPTIMAL
    assert res.q_star[0] == pytest.approx(1.0, abs=1e-7)
    assert res.lam_ineq[0] == pytest.approx(2.0, abs=1e-6)


def test_equality_multiplier_sign():
    # L = x^2 + y^2 + lam (x + y - 1): stationarity gives lam = -1
    res = ipm.solve(BATTERY["equality_qp"].problem, [3.0, -1.0])
    assert res.lam_eq[0] == pytest.approx(-1.0, abs=1e-8)


def test_kkt_residuals_at_feasible_point():
    case = BATTERY["equality_qp"]
    point = ipm.PrimalDual(np.array([0.25, 0.75]), np.zeros(0), np.zeros(1), np.zeros(0), np.zeros(2), np.zeros(2))
    _, feasibility, _ = ipm.kkt_residuals(case.problem, point)
    assert feasibility <= 1e-15
    point.slack = np.array([-1.0])
    with pytest.raises(ValueError):
        ipm.kkt_residuals(case.problem, point)


def test_residuals_decrease_at_the_end():
    for case in BATTERY.values():
        res = ipm.solve(case.problem, case.initial_guess)
        errs = [h[2] for h in res.stats.history[-3:]]
        assert errs == sorted(errs, reverse=True), case.name


def test_slacks_stay_interior():
    case = BATTERY["inequality_qp"]
    res = ipm.solve(case.problem, case.initial_guess)
    assert np.all(res.point.slack > 0)
    box = BATTERY["box_qp"]
    q = ipm.solve(box.problem, box.initial_guess).q_star
    # iterates stay strictly inside the bounds relaxed by the default factor
    relax = ipm.IpmOptions().bound_relax_factor
    assert np.all(q > box.problem.lb - relax) and np.all(q < box.problem.ub + relax)
    exact = ipm.solve(box.problem, box.initial_guess, ipm.IpmOptions(bound_relax_factor=0.0)).q_star
    assert np.all(exact > box.problem.lb) and np.all(exact < box.problem.ub)


def test_max_iterations_status():
    case = BATTERY["rosenbrock_box"]
    res = ipm.solve(case.problem, case.initial_guess, ipm.IpmOptions(max_iterations=2))
    assert res.status == ipm.MAX_ITER
    assert res.stats.iterations == 2


def test_infeasible_problem_detected():
    # x^2 + y^2 + 1 = 0 has no real solution
    problem = NlpProblem.build(DF.from_callable(lambda z: [z[0] ** 2 + z[1] ** 2], 2, 1),
                               eq=DF.from_callable(lambda z: [z[0] ** 2 + z[1] ** 2 + 1.0], 2, 1))
    res = ipm.solve(problem, [1.0, 1.0])
    assert res.status == ipm.INFEASIBLE
    assert not res.success


def test_invalid_input_and_options():
    case = BATTERY["equality_qp"]
    with pytest.raises(ValueError):
        ipm.solve(case.problem, [np.nan, 0.0])
    with pytest.raises(ValueError):
        ipm.solve(case.problem, [0.0])
    with pytest.raises(ValueError):
        ipm.IpmOptions(fraction_to_boundary=1.0)
    with pytest.raises(ValueError):
        ipm.IpmOptions(barrier_decrease=0.0)
    with pytest.raises(ValueError):
        ipm.IpmOptions(kkt_tolerance=0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_evaluation_is_a_status():
    problem = NlpProblem.build(DF.from_callable(lambda z: [np.log(z[0])], 1, 1))
    res = ipm.solve(problem, [-1.0])
    assert res.status == ipm.NUMERICAL_FAILURE


@pytest.fixture(scope="module")
def mpfc_problem():
    model = ManipulatorModel()
    x0 = np.array([1.2, -1.0, 0.0, 0.0, 0.0, 0.0])
    problem, layout = transcribe("mpfc", TranscriptionConfig(N_T=20), model, TaskDefinition(), x0)
    return problem, cold_guess(x0, layout, model)


def test_cold_mpfc_solve(mpfc_problem):
    problem, guess = mpfc_problem
    res = ipm.solve(problem, guess)
    assert res.status == ipm.OPTIMAL
    assert res.stats.iterations <= 100
    assert max(ipm.kkt_residuals(problem, res.point)) <= 1e-6
    assert res.stats.calls["hessian"] == res.stats.iterations
    assert res.stats.wall_time > 0


def test_determinism(mpfc_problem):
    problem, guess = mpfc_problem
    a = ipm.solve(problem, guess)
    b = ipm.solve(problem, guess)
    assert a.stats.history == b.stats.history
    np.testing.assert_array_equal(a.q_star, b.q_star)
