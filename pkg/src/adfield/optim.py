"""L-BFGS with a strong-Wolfe line search, and a finite-difference gradient checker.

Objectives map ``x -> (f, g)``.  An objective signals that the underlying
simulation broke down by raising :class:`~adfield.errors.SolverFailure`;
the minimizer then stops and returns the last accepted iterate with
termination reason ``solver_failure``.

With bounds, iterates are projected onto the box, directions are zeroed on
the active set, and the line search falls back to Armijo backtracking
along the projected path.  This is a projected-gradient L-BFGS, not the
full L-BFGS-B active-set method.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, SolverFailure

log = logging.getLogger(__name__)

REASONS = ("grad_tol", "f_tol", "max_iter", "solver_failure", "line_search_failure")


@dataclass
class OptimOptions:
    memory: int = 10
    max_iter: int = 1000
    grad_tol: float = 1e-12
    f_tol: float = 1e-12
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25
    initial_step: float = 1.0  # length of the first trial step, before any curvature pairs
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise InvalidArgumentError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1:
            raise InvalidArgumentError("memory must be at least 1")
        if not self.initial_step > 0:
            raise InvalidArgumentError("initial_step must be positive")

    @property
    def bounded(self) -> bool:
        return self.lower is not None or self.upper is not None


@dataclass
class IterRecord:
    iter: int
    loss: float
    grad_inf: float
    step: float
    fevals: int


@dataclass
class OptimTrace:
    records: list = field(default_factory=list)
    reason: str | None = None
    message: str = ""

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def iterations(self) -> int:
        return self.records[-1].iter if self.records else 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "grad_inf", "step", "fevals"])
            for r in self.records:
                w.writerow([r.iter, repr(r.loss), repr(r.grad_inf), repr(r.step), r.fevals])


def project_bounds(x, lower=None, upper=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo = -np.inf if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    hi = np.inf if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise InvalidArgumentError("lower bound exceeds upper bound")
    return np.minimum(np.maximum(x, lo), hi)


class _Counted:
    def __init__(self, fun):
        self.fun = fun
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        f, g = self.fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise SolverFailure("objective returned non-finite values")
        return f, g


class LineSearchError(Exception):
    pass


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic matching values and slopes at a and b, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(fg, x, f0, g0, d, alpha0, c1=1e-4, c2=0.9, max_evals=25):
    """Bracketing + zoom search for a step meeting the strong Wolfe conditions.

    Returns ``(alpha, f, g)``.  Raises :class:`LineSearchError` when no such
    step is found within ``max_evals`` evaluations.  A :class:`SolverFailure`
    at the first trial propagates; once some step with sufficient decrease is
    known, a failing trial beyond it is treated as an overshoot and the
    search bisects back toward the known step.
    """
    dphi0 = float(g0 @ d)
    evals = 0

    def phi(a, fallible):
        nonlocal evals
        evals += 1
        try:
            f, g = fg(x + a * d)
        except SolverFailure as exc:
            if not fallible:
                raise
            log.debug("trial step %.3e failed (%s); shrinking", a, exc)
            return np.inf, None, np.nan
        return f, g, float(g @ d)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evals < max_evals:
            a = None
            if np.isfinite(f_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if a is None or not (left + margin <= a <= right - margin):
                a = 0.5 * (lo + hi)
            f, g, da = phi(a, lo > 0)
            if f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, da
            else:
                if abs(da) <= -c2 * dphi0:
                    return a, f, g
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, da
        raise LineSearchError("zoom did not satisfy the Wolfe conditions")

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha0
    first = True
    while evals < max_evals:
        f, g, da = phi(a, not first)
        if f > f0 + c1 * a * dphi0 or (not first and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f, da)
        if abs(da) <= -c2 * dphi0:
            return a, f, g
        if da >= 0:
            return zoom(a, f, da, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f, da
        a *= 2.0
        first = False
    raise LineSearchError("no acceptable step within the evaluation budget")


def _two_loop(g, memory):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _projected_grad(x, g, lower, upper):
    return project_bounds(x - g, lower, upper) - x


def lbfgs_minimize(objective, x0, opts: OptimOptions | None = None, callback=None):
    """Minimize ``objective`` from ``x0``; returns ``(x, trace)``.

    ``callback(iter, x, f)`` is called after every accepted iterate.
    """
    opts = opts or OptimOptions()
    fg = _Counted(objective)
    x = np.array(x0, dtype=float)
    if opts.bounded:
        x = project_bounds(x, opts.lower, opts.upper)
    f, g = fg(x)  # failures at the start point propagate
    trace = OptimTrace()

    def ginf(x, g):
        pg = _projected_grad(x, g, opts.lower, opts.upper) if opts.bounded else g
        return float(np.max(np.abs(pg))) if pg.size else 0.0

    trace.records.append(IterRecord(0, f, ginf(x, g), 0.0, fg.calls))
    memory = deque(maxlen=opts.memory)
    if trace.records[-1].grad_inf <= opts.grad_tol:
        trace.reason = "grad_tol"
        return x, trace

    for it in range(1, opts.max_iter + 1):
        d = _two_loop(g, memory)
        if opts.bounded:
            d = _zero_active(d, x, g, opts.lower, opts.upper)
        if not g @ d < 0:
            memory.clear()
            d = -g if not opts.bounded else _zero_active(-g, x, g, opts.lower, opts.upper)
        alpha0 = 1.0 if memory else min(1.0, opts.initial_step / max(np.linalg.norm(d), 1e-300))
        try:
            if opts.bounded:
                alpha, x_new, f_new, g_new = _projected_armijo(fg, x, f, g, d, alpha0, opts)
            else:
                alpha, f_new, g_new = strong_wolfe(fg, x, f, g, d, alpha0, opts.c1, opts.c2,
                                                   opts.max_line_search)
                x_new = x + alpha * d
        except SolverFailure as exc:
            trace.reason, trace.message = "solver_failure", str(exc)
            log.info("iteration %d: solver failure: %s", it, exc)
            return x, trace
        except LineSearchError as exc:
            trace.reason, trace.message = "line_search_failure", str(exc)
            return x, trace

        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y) and sy > 0:
            memory.append((s, y, 1.0 / sy))
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.records.append(IterRecord(it, f, ginf(x, g), float(alpha), fg.calls))
        if callback is not None:
            callback(it, x, f)
        if trace.records[-1].grad_inf <= opts.grad_tol:
            trace.reason = "grad_tol"
            break
        if f_old - f <= opts.f_tol * (1.0 + abs(f)):
            trace.reason = "f_tol"
            break
    else:
        trace.reason = "max_iter"
    return x, trace


def _zero_active(d, x, g, lower, upper):
    d = d.copy()
    if lower is not None:
        d[(x <= np.broadcast_to(lower, x.shape)) & (g > 0)] = 0.0
    if upper is not None:
        d[(x >= np.broadcast_to(upper, x.shape)) & (g < 0)] = 0.0
    return d


def _projected_armijo(fg, x, f, g, d, alpha, opts):
    for _ in range(opts.max_line_search):
        x_new = project_bounds(x + alpha * d, opts.lower, opts.upper)
        f_new, g_new = fg(x_new)
        if f_new <= f + opts.c1 * float(g @ (x_new - x)) and f_new < f:
            return alpha, x_new, f_new, g_new
        alpha *= 0.5
    raise LineSearchError("projected backtracking found no decrease")


def fd_gradient_check(objective, x, step: float = 1e-5, directions: int = 10, seed: int = 0,
                      details: list | None = None) -> float:
    """Relative mismatch between central differences and ``grad . d``.

    Directions are seeded random unit vectors.  The score is
    ``max_k |fd_k - an_k| / max_k |an_k|`` over the directional derivatives,
    i.e. a relative error in the infinity norm.  A direction whose perturbed
    evaluation fails makes the score ``inf``; if ``details`` is given, one
    ``(direction, analytic, finite_difference)`` tuple (or
    ``(direction, exception)`` on failure) is appended per direction.
    """
    if not step > 0:
        raise InvalidArgumentError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float)
    _, g = objective(x)
    g = np.asarray(g, dtype=float)
    rng = np.random.default_rng(seed)
    analytic, fd = [], []
    failed = False
    for k in range(directions):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        an = float(g @ d)
        try:
            fp = float(objective(x + step * d)[0])
            fm = float(objective(x - step * d)[0])
        except SolverFailure as exc:
            log.warning("direction %d: objective failed: %s", k, exc)
            if details is not None:
                details.append((k, exc))
            failed = True
            continue
        analytic.append(an)
        fd.append((fp - fm) / (2.0 * step))
        if details is not None:
            details.append((k, an, fd[-1]))
    if failed:
        return np.inf
    analytic, fd = np.array(analytic), np.array(fd)
    scale = np.max(np.abs(analytic)) if analytic.size else 0.0
    diff = np.max(np.abs(fd - analytic)) if analytic.size else 0.0
    if scale == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return float(diff / scale)
