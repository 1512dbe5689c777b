"""Primal-dual interior-point solver for sparse NLPs.

Solves ``min cost(q)  s.t.  eq(q) = 0,  ineq(q) <= 0,  lb <= q <= ub``.
Inequalities are turned into equalities with nonnegative slacks, so the
solver works on ``x = [q, slack]`` with equality constraints
``c(x) = [eq(q), ineq(q) + slack]`` and simple bounds on ``x``. Bound
constraints are handled with a logarithmic barrier and bound multipliers;
the barrier parameter follows a monotone decreasing schedule.

Each Newton step solves the regularized primal-dual system::

    [ W + Sigma + dw I    J^T  ] [ dx  ]     [ grad phi_mu ]
    [ J                -dc I   ] [ lam ] = - [ c           ]

with a stage-wise block LDL^T factorization (see :mod:`mpfckit.kkt`) whose
pivot blocks give the inertia.
Steps are cut back by the fraction-to-the-boundary rule and a backtracking
line search on an l1 exact-penalty merit function.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import NonFiniteEvaluationError
from .dynamics import SingularMatrixError
from .kkt import BlockStructure, BlockTridiagonalLDL
from .transcription import NlpProblem

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible_detected"
NUMERICAL_FAILURE = "numerical_failure"

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class IpmOptions:
    mu_init: float = 0.1
    kkt_tolerance: float = 1e-8
    max_iterations: int = 200
    fraction_to_boundary: float = 0.995
    barrier_decrease: float = 0.2
    barrier_exponent: float = 1.5
    regularization_floor: float = 1e-8
    warm_start: bool = False
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    warm_bound_push: float = 1e-3
    constraint_regularization: float = 1e-8  # times mu**0.25, only for rank-deficient Jacobians
    max_backtracks: int = 30
    barrier_tolerance_factor: float = 10.0
    scaling_max_gradient: float = 100.0  # <= 0 disables problem scaling
    bound_relax_factor: float = 1e-8  # variable bounds widened by this times max(1, |bound|)

    def __post_init__(self):
        if not 0 < self.fraction_to_boundary < 1:
            raise ValueError("fraction_to_boundary must lie in (0, 1)")
        if not 0 < self.barrier_decrease < 1:
            raise ValueError("barrier_decrease must lie in (0, 1)")
        if not (self.kkt_tolerance > 0 and self.mu_init > 0 and self.regularization_floor > 0):
            raise ValueError("tolerances must be positive")
        if self.bound_relax_factor < 0:
            raise ValueError("bound_relax_factor must be nonnegative")


@dataclass
class SolveStats:
    iterations: int = 0
    wall_time: float = 0.0
    times: dict = field(default_factory=lambda: dict.fromkeys(
        ("constraints", "constraint_jacobian", "hessian", "cost", "gradient", "linear_solve"), 0.0))
    calls: dict = field(default_factory=lambda: dict.fromkeys(
        ("constraints", "constraint_jacobian", "hessian", "cost", "gradient", "linear_solve"), 0))
    factorizations: int = 0
    final_mu: float = float("nan")
    objective: float = float("nan")
    residuals: tuple = (float("nan"),) * 3
    history: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)

    def per_call(self, key: str) -> float:
        n = self.calls[key]
        return self.times[key] / n if n else float("nan")


@dataclass
class PrimalDual:
    """Primal-dual point in the slack-augmented space ``x = [q, slack]``."""

    q: np.ndarray
    slack: np.ndarray
    lam_eq: np.ndarray
    lam_ineq: np.ndarray
    z_lower: np.ndarray  # length n + m_ineq; zero where the bound is infinite
    z_upper: np.ndarray


@dataclass
class IpmResult:
    point: PrimalDual
    status: str
    stats: SolveStats

    @property
    def q_star(self) -> np.ndarray:
        return self.point.q

    @property
    def lam_eq(self) -> np.ndarray:
        return self.point.lam_eq

    @property
    def lam_ineq(self) -> np.ndarray:
        return self.point.lam_ineq

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


class _Evaluator:
    """Problem callbacks on the augmented vector, with timing and scaling.

    The solver sees ``df * cost`` and ``dc * [eq, ineq] + [0, slack]``.
    """

    def __init__(self, problem: NlpProblem, stats: SolveStats):
        self.p = problem
        self.n = problem.n
        self.mi = problem.m_ineq
        self.stats = stats
        self.df = 1.0
        self.dc = np.ones(problem.m_eq + problem.m_ineq)

    def _timed(self, key, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.stats.times[key] += time.perf_counter() - t0
        self.stats.calls[key] += 1
        return out

    def set_scaling(self, x, max_gradient):
        """Gradient-based scaling: largest row gradient entry at ``x`` capped at ``max_gradient``."""
        q = x[: self.n]
        g = self.p.cost.jacobian(q)
        self.df = float(min(1.0, max_gradient / max(abs(g).max(), 1e-300)))
        rows = []
        for fn in (self.p.eq, self.p.ineq):
            if fn.n_out:
                rows.append(abs(fn.jacobian(q)).max(axis=1).toarray().ravel())
        if rows:
            gmax = np.concatenate(rows)
            self.dc = np.minimum(1.0, max_gradient / np.maximum(gmax, 1e-300))

    def cost(self, x):
        return self.df * float(self._timed("cost", self.p.cost, x[: self.n])[0])

    def gradient(self, x):
        g = self._timed("gradient", self.p.cost.jacobian, x[: self.n]).toarray().ravel()
        return np.concatenate([self.df * g, np.zeros(self.mi)])

    def constraints(self, x):
        def both(q):
            return np.concatenate([self.p.eq(q), self.p.ineq(q)])
        c = self.dc * self._timed("constraints", both, x[: self.n])
        c[self.p.m_eq:] += x[self.n:]
        return c

    def jacobian(self, x):
        def both(q):
            if not self.mi:
                return self.p.eq.jacobian(q)
            return sp.vstack([self.p.eq.jacobian(q), self.p.ineq.jacobian(q)])
        J = sp.diags(self.dc) @ self._timed("constraint_jacobian", both, x[: self.n])
        if self.mi:
            J = sp.hstack([J, sp.vstack([sp.csr_matrix((self.p.m_eq, self.mi)), sp.eye(self.mi)])])
        return J.tocsc()

    def hessian(self, x, lam, sigma=1.0):
        w = lam * self.dc

        def lag(q):
            h = self.p.cost.hessian(q, np.array([sigma * self.df]))
            if self.p.m_eq:
                h = h + self.p.eq.hessian(q, w[: self.p.m_eq])
            if self.mi:
                h = h + self.p.ineq.hessian(q, w[self.p.m_eq:])
                h = sp.block_diag([h, sp.csr_matrix((self.mi, self.mi))])
            return h.tocsc()
        return self._timed("hessian", lag, x[: self.n])

    def unscale(self, x, lam, zl, zu):
        """Map a scaled primal-dual point back to the original problem."""
        n, me = self.n, self.p.m_eq
        dci = self.dc[me:]
        xu = np.concatenate([x[:n], x[n:] / dci])
        w = np.concatenate([np.full(n, 1.0 / self.df), dci / self.df])
        return xu, lam * self.dc / self.df, zl * w, zu * w


class _KKTFailure(Exception):
    pass


def _refined_solve(fac, K, rhs, steps=3):
    sol = fac.solve(rhs)
    scale = max(1.0, np.max(np.abs(rhs)))
    res = rhs - K @ sol
    for _ in range(steps):
        if np.max(np.abs(res)) <= 1e-12 * scale:
            break
        sol = sol + fac.solve(res)
        res = rhs - K @ sol
    return sol, np.max(np.abs(res)) / scale


def _kkt_structure(problem: NlpProblem) -> BlockStructure:
    n, me, mi = problem.n, problem.m_eq, problem.m_ineq
    size = n + mi + me + mi
    if not problem.stages:
        return BlockStructure.single(size)
    nx = n + mi
    blocks = []
    for var, eq, ineq in problem.stages:
        var, eq, ineq = (np.asarray(a, dtype=np.int64) for a in (var, eq, ineq))
        blocks.append(np.concatenate([var, n + ineq, nx + eq, nx + me + ineq]))
    try:
        return BlockStructure(blocks, size)
    except ValueError:
        log.warning("stage partition does not cover the problem; using a dense factorization")
        return BlockStructure.single(size)


class _Solver:
    def __init__(self, problem: NlpProblem, options: IpmOptions):
        self.p = problem
        self.opt = options
        self.stats = SolveStats()
        self.ev = _Evaluator(problem, self.stats)
        n, mi = problem.n, problem.m_ineq
        self.nx = n + mi
        self.m = problem.m_eq + mi
        relax = options.bound_relax_factor
        lb = np.where(np.isfinite(problem.lb), problem.lb - relax * np.maximum(1.0, np.abs(problem.lb)), -np.inf)
        ub = np.where(np.isfinite(problem.ub), problem.ub + relax * np.maximum(1.0, np.abs(problem.ub)), np.inf)
        self.xl = np.concatenate([lb, np.zeros(mi)])
        self.xu = np.concatenate([ub, np.full(mi, np.inf)])
        self.il = np.isfinite(self.xl)
        self.iu = np.isfinite(self.xu)
        self.nb = int(self.il.sum() + self.iu.sum())
        self.delta_w_last = 0.0
        self.structure = _kkt_structure(problem)
        self._checked = False

    # -- helpers -----------------------------------------------------------
    def _dist(self, x):
        dl = np.where(self.il, x - self.xl, 1.0)
        du = np.where(self.iu, self.xu - x, 1.0)
        return dl, du

    def _barrier(self, x, mu):
        dl, du = self._dist(x)
        if np.any(dl[self.il] <= 0) or np.any(du[self.iu] <= 0):
            return np.inf
        return -mu * (np.sum(np.log(dl[self.il])) + np.sum(np.log(du[self.iu])))

    def _push(self, x, push):
        """Move ``x`` strictly inside its bounds."""
        x = x.copy()
        frac = self.opt.bound_frac
        xl, xu = self.xl, self.xu
        both = self.il & self.iu
        width = np.where(both, xu - xl, np.inf)
        pl = np.where(self.il, np.minimum(push * np.maximum(1.0, np.abs(xl)), frac * width), 0.0)
        pu = np.where(self.iu, np.minimum(push * np.maximum(1.0, np.abs(xu)), frac * width), 0.0)
        lo = np.where(self.il, xl + pl, -np.inf)
        hi = np.where(self.iu, xu - pu, np.inf)
        mid = np.where(both, 0.5 * (np.where(both, xl, 0.0) + np.where(both, xu, 0.0)), 0.0)
        x = np.clip(x, lo, hi)
        # degenerate intervals narrower than the push
        bad = both & (lo > hi)
        x[bad] = mid[bad]
        return x

    def _assemble(self, W, J, sigma_diag, dw, dc):
        n, m = self.nx, self.m
        H = W + sp.diags(sigma_diag + dw, format="csc")
        return sp.bmat([[H, J.T], [J, -dc * sp.eye(m, format="csc")]], format="csc")

    def _factor(self, K):
        if not self._checked:
            if not self.structure.is_compatible(K):
                log.warning("KKT matrix is not block tridiagonal in stage order; using a dense factorization")
                self.structure = BlockStructure.single(K.shape[0])
            self._checked = True
        return BlockTridiagonalLDL(K, self.structure)

    def _solve_kkt(self, W, J, sigma_diag, bgrad, c, lam, mu):
        """Factorize with inertia correction.

        Solves for the step and the new multipliers. A zero pivot or a
        singular block switches on the constraint regularization.
        """
        floor = self.opt.regularization_floor
        dw = floor
        dc = 0.0
        attempts = 0
        while True:
            attempts += 1
            K = self._assemble(W, J, sigma_diag, dw, dc)
            rhs = np.concatenate([-bgrad, -c - dc * lam])
            t0 = time.perf_counter()
            ok = False
            try:
                fac = self._factor(K)
                self.stats.factorizations += 1
                pos, neg, zero = fac.inertia
                if zero and dc == 0.0:
                    dc = self.opt.constraint_regularization * mu ** 0.25
                    continue
                if pos == self.nx and neg == self.m and zero == 0:
                    sol, rel = _refined_solve(fac, K, rhs)
                    ok = rel < 1e-6 and np.all(np.isfinite(sol))
            except np.linalg.LinAlgError:
                if dc == 0.0:
                    dc = self.opt.constraint_regularization * mu ** 0.25
                    continue
            finally:
                self.stats.times["linear_solve"] += time.perf_counter() - t0
                self.stats.calls["linear_solve"] += 1
            if ok:
                if dw > floor:
                    self.delta_w_last = dw
                return sol, dw, dc, K, fac
            if attempts == 1:
                dw = max(10 * floor, self.delta_w_last / 3.0)
            else:
                dw *= 10.0
            if dw > 1e40:
                raise _KKTFailure("inertia correction failed")

    def _errors(self, grad, J, c, lam, zl, zu, dl, du, mu):
        return self._residual_norms(grad + J.T @ lam - zl + zu, c, lam, zl, zu, dl, du, mu)

    def _unscaled_errors(self, x, grad, J, c, lam, zl, zu):
        """Errors of the original problem at the current (scaled) iterate, mu = 0."""
        ev = self.ev
        w = np.concatenate([np.full(self.p.n, 1.0 / ev.df), ev.dc[self.p.m_eq:] / ev.df])
        dual = (grad + J.T @ lam - zl + zu) * w
        x_u, lam_u, zl_u, zu_u = ev.unscale(x, lam, zl, zu)
        dl, du = self._dist(x_u)
        return self._residual_norms(dual, c / ev.dc, lam_u, zl_u, zu_u, dl, du, 0.0)

    def _residual_norms(self, dual, c, lam, zl, zu, dl, du, mu):
        comp_l = np.where(self.il, dl * zl - mu, 0.0)
        comp_u = np.where(self.iu, du * zu - mu, 0.0)
        smax = 100.0
        zsum = np.sum(np.abs(zl)) + np.sum(np.abs(zu))
        sd = max(smax, (np.sum(np.abs(lam)) + zsum) / max(1, self.m + self.nb)) / smax
        sc = max(smax, zsum / max(1, self.nb)) / smax
        stat = np.max(np.abs(dual), initial=0.0)
        feas = np.max(np.abs(c), initial=0.0)
        comp = max(np.max(np.abs(comp_l), initial=0.0), np.max(np.abs(comp_u), initial=0.0))
        return max(stat / sd, feas, comp / sc), (stat, feas, comp)

    def _initial_multipliers(self, x, grad, J, zl, zu):
        """Least-squares equality multipliers; zero if they come out large."""
        if self.m == 0:
            return np.zeros(0)
        rhs = np.concatenate([-(grad - zl + zu), np.zeros(self.m)])
        I = sp.eye(self.nx, format="csc")
        try:
            K = sp.bmat([[I, J.T], [J, -1e-8 * sp.eye(self.m)]], format="csc")
            lam = self._factor(K).solve(rhs)[self.nx:]
        except np.linalg.LinAlgError:
            return np.zeros(self.m)
        if not np.all(np.isfinite(lam)) or np.max(np.abs(lam)) > 1e3:
            return np.zeros(self.m)
        return lam

    # -- main loop ---------------------------------------------------------
    def run(self, q0) -> IpmResult:
        opt, p = self.opt, self.p
        t_start = time.perf_counter()
        tol = opt.kkt_tolerance
        mu = max(0.1 * opt.mu_init, 1e-4) if opt.warm_start else opt.mu_init
        push = opt.warm_bound_push if opt.warm_start else opt.bound_push
        mu_min = tol / 10.0
        status = MAX_ITER
        stall = 0
        ls_failures = 0

        q0 = np.asarray(q0, dtype=float)
        if q0.shape != (p.n,) or not np.all(np.isfinite(q0)):
            raise ValueError("initial guess must be a finite vector of length n")
        try:
            q = self._push(np.concatenate([q0, np.zeros(p.m_ineq)]), push)[: p.n]
            if opt.scaling_max_gradient > 0:
                self.ev.set_scaling(q, opt.scaling_max_gradient)
            h0 = self.ev.dc[p.m_eq:] * p.ineq(q) if p.m_ineq else np.zeros(0)
            x = self._push(np.concatenate([q, np.maximum(-h0, 0.0)]), push)
            dl, du = self._dist(x)
            zl = np.where(self.il, mu / dl, 0.0)
            zu = np.where(self.iu, mu / du, 0.0)
            f = self.ev.cost(x)
            c = self.ev.constraints(x)
            grad = self.ev.gradient(x)
            J = self.ev.jacobian(x)
            lam = self._initial_multipliers(x, grad, J, zl, zu)
        except (NonFiniteEvaluationError, SingularMatrixError, FloatingPointError) as exc:
            log.debug("initial evaluation failed: %s", exc)
            return self._finish(np.asarray(q0, dtype=float), None, NUMERICAL_FAILURE, mu, t_start)

        nu = 1.0
        it = 0
        x_best = x
        raw = (np.nan,) * 3
        try:
            while True:
                dl, du = self._dist(x)
                err0, _ = self._errors(grad, J, c, lam, zl, zu, dl, du, 0.0)
                err_u, raw = self._unscaled_errors(x, grad, J, c, lam, zl, zu)
                self.stats.history.append((it, mu, err0, *raw))
                if err0 <= tol and err_u <= tol:
                    status = OPTIMAL
                    break
                if it >= opt.max_iterations:
                    status = MAX_ITER
                    break
                if raw[1] > 1e-4 and mu <= 1e-6:
                    stall += 1
                    if stall >= 20:
                        status = INFEASIBLE
                        break
                else:
                    stall = 0
                # barrier update
                while mu > mu_min:
                    err_mu, _ = self._errors(grad, J, c, lam, zl, zu, dl, du, mu)
                    if err_mu > opt.barrier_tolerance_factor * mu:
                        break
                    mu = max(mu_min, min(opt.barrier_decrease * mu, mu ** opt.barrier_exponent))
                tau = max(opt.fraction_to_boundary, 1.0 - mu)

                W = self.ev.hessian(x, lam)
                sig = np.where(self.il, zl / dl, 0.0) + np.where(self.iu, zu / du, 0.0)
                bgrad = grad - np.where(self.il, mu / dl, 0.0) + np.where(self.iu, mu / du, 0.0)
                sol, dw, dc, K, _ = self._solve_kkt(W, J, sig, bgrad, c, lam, mu)
                dx, lam_new = sol[: self.nx], sol[self.nx:]
                dzl = np.where(self.il, mu / dl - zl - _sigma(zl, dl, self.il) * dx, 0.0)
                dzu = np.where(self.iu, mu / du - zu + _sigma(zu, du, self.iu) * dx, 0.0)

                a_max = _max_step(dl, dx, self.il, tau, sign=1.0)
                a_max = min(a_max, _max_step(du, dx, self.iu, tau, sign=-1.0))
                a_z = min(_max_step(zl, dzl, self.il, tau, 1.0), _max_step(zu, dzu, self.iu, tau, 1.0))

                # merit penalty update
                cnorm = np.sum(np.abs(c))
                dphi = float(bgrad @ dx)
                if cnorm > 0:
                    Hdx = W @ dx + (sig + dw) * dx
                    curv = max(float(dx @ Hdx), 0.0)
                    nu_trial = (dphi + 0.5 * curv) / (0.9 * cnorm)
                    if nu < nu_trial:
                        nu = nu_trial
                D = dphi - nu * cnorm
                merit0 = f + self._barrier(x, mu) + nu * cnorm

                alpha = a_max
                accepted = False
                for _ in range(opt.max_backtracks + 1):
                    xt = x + alpha * dx
                    ft, ct, mt = self._trial(xt, mu, nu)
                    if self._armijo(mt, merit0, alpha, D):
                        accepted = True
                        break
                    alpha *= 0.5
                if not accepted:
                    # take the shortest step anyway; repeated failures end the solve
                    if not np.isfinite(mt):
                        raise _KKTFailure("line search could not find a finite trial point")
                    ls_failures += 1
                    if ls_failures >= 10:
                        raise _KKTFailure("line search failed repeatedly")
                else:
                    ls_failures = 0

                self.stats.step_sizes.append((alpha, a_z))
                x, f, c = xt, ft, ct
                lam = lam + alpha * (lam_new - lam)
                zl = zl + a_z * dzl
                zu = zu + a_z * dzu
                dl, du = self._dist(x)
                # keep bound multipliers within a factor of the central path
                kappa = 1e10
                zl = np.where(self.il, np.clip(zl, mu / (kappa * dl), kappa * mu / dl), 0.0)
                zu = np.where(self.iu, np.clip(zu, mu / (kappa * du), kappa * mu / du), 0.0)
                it += 1
                grad = self.ev.gradient(x)
                J = self.ev.jacobian(x)
                x_best = x
        except (_KKTFailure, NonFiniteEvaluationError, SingularMatrixError, FloatingPointError) as exc:
            log.debug("solve aborted: %s", exc)
            status = INFEASIBLE if self._stalled_infeasible() else NUMERICAL_FAILURE
            x = x_best

        self.stats.iterations = it
        self.stats.residuals = raw
        return self._finish(x, (lam, zl, zu), status, mu, t_start, f=f)

    def _stalled_infeasible(self, window=10, threshold=1e-4):
        """True if the primal infeasibility stayed large and flat over the last ``window`` iterations."""
        feas = np.array([h[4] for h in self.stats.history])
        if feas.size <= window or feas[-1] <= threshold:
            return False
        return bool(feas[-window:].min() >= 0.99 * feas[:-window].min())

    @staticmethod
    def _armijo(mt, merit0, alpha, D):
        return np.isfinite(mt) and mt - merit0 <= 1e-4 * alpha * min(D, 0.0) + 10 * _EPS * abs(merit0)

    def _trial(self, xt, mu, nu):
        b = self._barrier(xt, mu)
        if not np.isfinite(b):
            return np.inf, None, np.inf
        try:
            ft = self.ev.cost(xt)
            ct = self.ev.constraints(xt)
        except (NonFiniteEvaluationError, SingularMatrixError, FloatingPointError):
            return np.inf, None, np.inf
        return ft, ct, ft + b + nu * np.sum(np.abs(ct))

    def _finish(self, x, duals, status, mu, t_start, f=np.nan):
        p = self.p
        n, me = p.n, p.m_eq
        if duals is None:
            x = np.concatenate([x, np.zeros(p.m_ineq)])
            lam = np.zeros(self.m)
            zl = np.zeros(self.nx)
            zu = np.zeros(self.nx)
        else:
            x, lam, zl, zu = self.ev.unscale(x, *duals)
        point = PrimalDual(x[:n].copy(), x[n:].copy(), lam[:me].copy(), lam[me:].copy(), zl.copy(), zu.copy())
        self.stats.final_mu = mu
        self.stats.objective = float(f) / self.ev.df
        self.stats.wall_time = time.perf_counter() - t_start
        return IpmResult(point, status, self.stats)


def _sigma(z, d, mask):
    return np.where(mask, z / d, 0.0)


def _max_step(v, dv, mask, tau, sign):
    """Largest alpha in (0, 1] keeping ``v + sign*alpha*dv >= (1 - tau) v`` on ``mask``."""
    step = sign * dv
    neg = mask & (step < 0)
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / step[neg])))


def solve(problem: NlpProblem, initial_guess, options: IpmOptions | None = None) -> IpmResult:
    """Solve ``problem`` from ``initial_guess``. Never raises on non-convergence;
    inspect ``result.status``."""
    return _Solver(problem, options or IpmOptions()).run(initial_guess)


def kkt_residuals(problem: NlpProblem, point: PrimalDual, mu: float = 0.0) -> tuple[float, float, float]:
    """Infinity norms of stationarity, primal feasibility and complementarity
    (perturbed by ``mu``) at ``point``."""
    if np.any(point.slack < 0):
        raise ValueError("slacks must be nonnegative")
    s = _Solver(problem, IpmOptions())
    x = np.concatenate([point.q, point.slack])
    grad = s.ev.gradient(x)
    J = s.ev.jacobian(x)
    c = s.ev.constraints(x)
    lam = np.concatenate([point.lam_eq, point.lam_ineq])
    dl, du = s._dist(x)
    _, raw = s._errors(grad, J, c, lam, point.z_lower, point.z_upper, dl, du, mu)
    return raw
