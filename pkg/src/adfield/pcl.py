"""Newton solves with implicit-function-theorem adjoints, and implicit time marching.

A nonlinear problem exposes its residual ``F(u, nu)``, the state Jacobian
``dF/du`` as a CSR matrix, and the transposed parameter action
``(dF/dnu)^T lam``.  The parameter Jacobian itself is never formed.

At a converged state ``u*`` the gradient of ``J(u*(nu))`` is
``-(dF/dnu)^T lam`` with ``(dF/du)^T lam = dJ/du``, so one transposed solve
against the factorized Jacobian replaces differentiating through the
Newton iterations.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from . import la
from .errors import InvalidArgumentError, SolverDivergedError
from .graph import Operator

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


class NonlinearProblem:
    """Interface for ``F(u, nu) = 0``.  Evaluators must be pure."""

    def residual(self, u, nu) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u, nu) -> sp.csr_matrix:
        raise NotImplementedError

    def param_vjp(self, u, nu, lam) -> np.ndarray:
        """``(dF/dnu)^T lam``."""
        raise NotImplementedError


class FunctionProblem(NonlinearProblem):
    """Wraps plain callables; handy for small or scalar problems."""

    def __init__(self, residual: Callable, jacobian: Callable, param_vjp: Callable | None = None):
        self._residual = residual
        self._jacobian = jacobian
        self._param_vjp = param_vjp

    def residual(self, u, nu):
        return np.atleast_1d(np.asarray(self._residual(u, nu), dtype=float))

    def jacobian(self, u, nu):
        J = self._jacobian(u, nu)
        return J if sp.issparse(J) else sp.csr_matrix(np.atleast_2d(J))

    def param_vjp(self, u, nu, lam):
        if self._param_vjp is None:
            raise InvalidArgumentError("problem has no parameter sensitivity")
        return np.atleast_1d(np.asarray(self._param_vjp(u, nu, lam), dtype=float))


@dataclass
class NewtonReport:
    iterations: int = 0
    residual: float = np.inf
    converged: bool = False
    history: list = field(default_factory=list)


class NewtonResult(NamedTuple):
    state: np.ndarray
    report: NewtonReport
    jacobian: sp.csr_matrix
    factorization: la.Factorization


class NewtonLog:
    """Collects ``step,iter,residual_inf`` rows."""

    def __init__(self):
        self.rows = []

    def __call__(self, step, iteration, residual):
        self.rows.append((step, iteration, residual))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "iter", "residual_inf"])
            w.writerows((s, i, repr(r)) for s, i, r in self.rows)


def newton_solve(problem: NonlinearProblem, u0, nu=None, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, log: Callable | None = None,
                 step: int = 0) -> NewtonResult:
    """Undamped Newton-Raphson on ``problem.residual(u, nu) = 0``.

    Returns the converged state together with the Jacobian at that state
    and its factorization, which the adjoint reuses.
    """
    u = np.array(u0, dtype=float, ndmin=1)
    report = NewtonReport()
    for it in range(max_iter + 1):
        F = problem.residual(u, nu)
        res = float(np.max(np.abs(F))) if F.size else 0.0
        report.history.append(res)
        report.residual = res
        if log is not None:
            log(step, it, res)
        if not np.isfinite(res):
            break
        if res <= tol:
            report.converged = True
            break
        if it == max_iter:
            break
        J = problem.jacobian(u, nu)
        u = u - la.solve(J, F)
        report.iterations += 1
    if not report.converged:
        raise SolverDivergedError(
            f"Newton did not converge: residual {report.residual:.3e} after "
            f"{report.iterations} iterations", report=report, step=step)
    J = problem.jacobian(u, nu)
    return NewtonResult(u, report, J, la.Factorization(J))


def pcl_adjoint(result: NewtonResult, dJdu, problem: NonlinearProblem, nu=None) -> np.ndarray:
    """Gradient of ``J(u*(nu))`` with respect to ``nu`` at a converged solve."""
    dJdu = np.atleast_1d(np.asarray(dJdu, dtype=float))
    lam = result.factorization.solve(dJdu, transpose=True)
    return -problem.param_vjp(result.state, nu, lam)


def newton_operator(problem: NonlinearProblem, u0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                    log=None) -> Operator:
    """Tape node ``nu -> u*`` whose reverse rule is the implicit-function adjoint."""

    def forward(nu):
        result = newton_solve(problem, u0, nu, tol, max_iter, log)
        return result.state, (result, nu)

    def vjp(ctx, ubar):
        result, nu = ctx
        return (pcl_adjoint(result, ubar, problem, nu),)

    return Operator("newton_solve", forward, vjp)


class StepFamily:
    """Interface for implicit steps ``F_t(u_t, u_{t-1}, nu) = 0``."""

    def residual(self, u, u_prev, nu) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u, u_prev, nu) -> sp.csr_matrix:
        raise NotImplementedError

    def param_vjp(self, u, u_prev, nu, lam) -> np.ndarray:
        """``(dF_t/dnu)^T lam``."""
        raise NotImplementedError

    def prev_vjp(self, u, u_prev, nu, lam) -> np.ndarray:
        """``(dF_t/du_{t-1})^T lam``."""
        raise NotImplementedError


class _BoundStep(NonlinearProblem):
    def __init__(self, family: StepFamily, u_prev):
        self.family = family
        self.u_prev = u_prev

    def residual(self, u, nu):
        return self.family.residual(u, self.u_prev, nu)

    def jacobian(self, u, nu):
        return self.family.jacobian(u, self.u_prev, nu)

    def param_vjp(self, u, nu, lam):
        return self.family.param_vjp(u, self.u_prev, nu, lam)


@dataclass
class Trajectory:
    """States ``u_0 .. u_T`` (``u_0`` is the initial condition) and per-step solves."""
    states: list
    solves: list

    @property
    def steps(self) -> int:
        return len(self.solves)

    def stacked(self) -> np.ndarray:
        return np.array(self.states[1:])


def time_march(family: StepFamily, u_init, steps: int, nu=None, tol=DEFAULT_TOL,
               max_iter=DEFAULT_MAX_ITER, log=None) -> Trajectory:
    """Solve every implicit step with Newton, warm-started from the previous state.

    All states and converged Jacobians are kept for the reverse sweep.
    """
    states = [np.array(u_init, dtype=float, ndmin=1)]
    solves = []
    for t in range(1, steps + 1):
        problem = _BoundStep(family, states[-1])
        try:
            result = newton_solve(problem, states[-1], nu, tol, max_iter, log, step=t)
        except SolverDivergedError as exc:
            raise SolverDivergedError(f"time step {t}: {exc}", report=exc.report, step=t) from None
        states.append(result.state)
        solves.append(result)
    return Trajectory(states, solves)


def time_march_adjoint(trajectory: Trajectory, dJdu, family: StepFamily, nu=None) -> np.ndarray:
    """Gradient of ``sum_t J_t(u_t)`` with respect to ``nu``.

    ``dJdu[t-1]`` is the loss gradient with respect to ``u_t``.  The sweep
    runs from the last step back to the first:
    ``(dF_t/du_t)^T lam_t = dJ_t/du_t - (dF_{t+1}/du_t)^T lam_{t+1}``, and
    the gradient accumulates ``-(dF_t/dnu)^T lam_t``.
    """
    dJdu = np.asarray(dJdu, dtype=float)
    T = trajectory.steps
    if dJdu.shape[0] != T:
        raise InvalidArgumentError(f"got loss gradients for {dJdu.shape[0]} steps, trajectory has {T}")
    states = trajectory.states
    grad = None
    carry = np.zeros_like(states[0])
    for t in range(T, 0, -1):
        rhs = dJdu[t - 1] - carry
        if not np.any(rhs):
            carry = np.zeros_like(carry)
            continue
        lam = trajectory.solves[t - 1].factorization.solve(rhs, transpose=True)
        g = family.param_vjp(states[t], states[t - 1], nu, lam)
        grad = -g if grad is None else grad - g
        carry = family.prev_vjp(states[t], states[t - 1], nu, lam)
    if grad is None:
        grad = np.zeros_like(np.asarray(nu, dtype=float))
    return grad


def time_march_operator(family: StepFamily, u_init, steps: int, tol=DEFAULT_TOL,
                        max_iter=DEFAULT_MAX_ITER, log=None) -> Operator:
    """Tape node ``nu -> [u_1, ..., u_T]`` (a ``(T, n)`` array)."""

    def forward(nu):
        traj = time_march(family, u_init, steps, nu, tol, max_iter, log)
        return traj.stacked(), (traj, nu)

    def vjp(ctx, ubar):
        traj, nu = ctx
        return (time_march_adjoint(traj, ubar, family, nu),)

    return Operator("time_march", forward, vjp)
