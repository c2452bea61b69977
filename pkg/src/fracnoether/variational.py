"""Mixed classical/fractional functionals: value, Euler-Lagrange residual, extremals.

Two transcriptions of the functional are available.  The nodal one is

    I[q] = sum_k W_k L(t_k, q_k, (D q)_k, (A q)_k)

with trapezoid weights ``W``, the classical differentiation matrix ``D`` and
the left RL derivative matrix ``A``.  Central differences do not see the
odd-even mode, so when nothing but ``D`` constrains that mode (``alpha = 1``, or
an integrand free of ``w``) the nodal minimizer zig-zags.  Those problems use
the cell transcription

    I[q] = h * sum_k L(t_k+1/2, (q_k + q_k+1)/2, (q_k+1 - q_k)/h, (J_k+1 - J_k)/h)

with ``J = I_left^(1-alpha) q``: both derivatives are two-point slopes on each
cell, and at ``alpha = 1`` the last two arguments coincide.

Either way the gradient is assembled exactly through the transposes of the
three sampling operators, so stationarity of the discrete problem is the
discrete counterpart of the Euler-Lagrange equation.

Residuals and Noether quantities are evaluated nodewise, with the classical
differentiation matrix for ``dq/dt``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import fracops
from .exprdsl import DomainError, Lagrangian, evaluate_on, is_zero
from .fracops import FracOpsError, Grid, GridFunction

log = logging.getLogger(__name__)


class VariationalError(ValueError):
    pass


class SolverError(RuntimeError):
    """The optimizer stopped before reaching the requested tolerance."""

    def __init__(self, message: str, iterations: int, gradient_norm: float):
        super().__init__(f"{message} after {iterations} iterations (gradient sup-norm {gradient_norm:.3e})")
        self.iterations = iterations
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 50_000
    initialization: str = "linear"
    #: "newton" (Hessian-preconditioned descent) or "gradient" (plain steepest descent)
    method: str = "newton"
    armijo_c: float = 1e-4
    shrink: float = 0.5

    def __post_init__(self):
        if self.initialization not in ("linear", "constant"):
            raise VariationalError(f"unknown initialization {self.initialization!r}")
        if self.method not in ("newton", "gradient"):
            raise VariationalError(f"unknown method {self.method!r}")
        if not (self.tol > 0 and self.max_iter >= 1):
            raise VariationalError("tol must be positive and max_iter at least 1")


TRANSCRIPTIONS = ("auto", "nodal", "cells")


@dataclass(frozen=True, eq=False)
class Transcription:
    """Where the integrand is sampled, how ``(q, v, w)`` are formed there, and the quadrature weights."""

    kind: str
    t: np.ndarray
    ops: dict
    weights: np.ndarray

    @property
    def on_cells(self) -> bool:
        return self.kind == "cells"


def _depends_on_w(L: Lagrangian) -> bool:
    return not all(is_zero(e) for e in L.gradient("w"))


@dataclass(frozen=True, eq=False)
class VariationalProblem:
    lagrangian: Lagrangian
    alpha: float
    grid: Grid
    q_a: np.ndarray
    q_b: Optional[np.ndarray] = None
    #: "auto", "nodal" or "cells"; see the module docstring
    transcription: str = "auto"

    def __post_init__(self):
        if self.transcription not in TRANSCRIPTIONS:
            raise VariationalError(f"unknown transcription {self.transcription!r}")
        if not (0.0 < self.alpha <= 1.0):
            raise VariationalError(f"alpha must lie in (0, 1], got {self.alpha}")
        n = self.lagrangian.dim
        object.__setattr__(self, "q_a", _boundary_vector(self.q_a, n, "q_a"))
        if self.q_b is not None:
            object.__setattr__(self, "q_b", _boundary_vector(self.q_b, n, "q_b"))

    @property
    def dim(self) -> int:
        return self.lagrangian.dim

    @property
    def free_end(self) -> bool:
        return self.q_b is None

    @cached_property
    def classical(self) -> np.ndarray:
        return fracops.classical_derivative_op(self.grid).weights

    @cached_property
    def left_derivative(self) -> np.ndarray:
        return fracops.left_rl_derivative_op(self.grid, self.alpha).weights

    @cached_property
    def right_derivative(self) -> np.ndarray:
        return fracops.right_rl_derivative_op(self.grid, self.alpha).weights

    @cached_property
    def scheme(self) -> Transcription:
        kind = self.transcription
        if kind == "auto":
            kind = "nodal" if self.alpha < 1.0 and _depends_on_w(self.lagrangian) else "cells"
        if kind == "nodal":
            ops = {"q": np.eye(self.grid.n_nodes), "v": self.classical, "w": self.left_derivative}
            return Transcription("nodal", self.grid.nodes, ops, self.grid.trapezoid_weights())
        n, h = self.grid.n_nodes, self.grid.h
        rows = np.arange(n - 1)
        avg = np.zeros((n - 1, n))
        diff = np.zeros((n - 1, n))
        avg[rows, rows] = avg[rows, rows + 1] = 0.5
        diff[rows, rows], diff[rows, rows + 1] = -1.0 / h, 1.0 / h
        # the fractional derivative on a cell is the two-point slope of I^(1-alpha) q
        J = fracops.integral_weights(self.grid, 1.0 - self.alpha, "left")
        t = self.grid.nodes
        ops = {"q": avg, "v": diff, "w": (J[1:] - J[:-1]) / h}
        return Transcription("cells", 0.5 * (t[:-1] + t[1:]), ops, np.full(n - 1, h))

    @cached_property
    def free_rows(self) -> np.ndarray:
        stop = self.grid.n_nodes if self.free_end else self.grid.n_nodes - 1
        return np.arange(1, stop)

    def initial_guess(self, initialization: str = "linear") -> GridFunction:
        t = self.grid.nodes
        if initialization == "constant" or self.free_end:
            values = np.tile(self.q_a, (self.grid.n_nodes, 1))
        else:
            s = ((t - self.grid.a) / (self.grid.b - self.grid.a))[:, None]
            values = (1 - s) * self.q_a + s * self.q_b
        return GridFunction(self.grid, values)


def _boundary_vector(value, n: int, label: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.shape != (n,):
        raise VariationalError(f"{label} must have {n} components, got {v.size}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A grid function together with its classical and left RL derivatives."""

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def env(self) -> dict[str, np.ndarray]:
        env = {"t": self.t}
        for i in range(self.q.shape[1]):
            env[f"q{i + 1}"] = self.q[:, i]
            env[f"v{i + 1}"] = self.v[:, i]
            env[f"w{i + 1}"] = self.w[:, i]
        return env


def trajectory(p: VariationalProblem, q: GridFunction, check_boundary: bool = True) -> Trajectory:
    if not q.grid.same_as(p.grid):
        raise VariationalError("trajectory grid does not match the problem grid")
    if q.dim != p.dim:
        raise VariationalError(f"trajectory has {q.dim} components, problem has {p.dim}")
    if check_boundary:
        if np.max(np.abs(q.values[0] - p.q_a)) > 1e-12:
            raise VariationalError("trajectory does not match q_a at node 0")
        if p.q_b is not None and np.max(np.abs(q.values[-1] - p.q_b)) > 1e-12:
            raise VariationalError(f"trajectory does not match q_b at node {p.grid.n_nodes - 1}")
    qv = q.values
    return Trajectory(p.grid.nodes, qv, p.classical @ qv, p.left_derivative @ qv)


def sampled_trajectory(p: VariationalProblem, q: GridFunction) -> Trajectory:
    """``(t, q, v, w)`` at the points where the transcription samples the integrand."""
    sc = p.scheme
    qv = q.values
    return Trajectory(sc.t, sc.ops["q"] @ qv, sc.ops["v"] @ qv, sc.ops["w"] @ qv)


def _eval(expr, env, n: int, cells: bool = False) -> np.ndarray:
    try:
        return evaluate_on(expr, env, n)
    except DomainError as exc:
        if cells and exc.index is not None:
            k = exc.index
            raise VariationalError(
                f"Lagrangian evaluation failed on the cell between node {k} and node {k + 1}"
            ) from exc
        raise VariationalError(f"Lagrangian evaluation failed: {exc}") from exc


def _on_cells(p: VariationalProblem, tr: Trajectory) -> bool:
    return len(tr.t) < p.grid.n_nodes


def lagrangian_values(p: VariationalProblem, tr: Trajectory) -> np.ndarray:
    return _eval(p.lagrangian.expr, tr.env(), len(tr.t), _on_cells(p, tr))


def partials(p: VariationalProblem, tr: Trajectory, slot: str) -> np.ndarray:
    """``len(tr.t) x dim`` array of dL/d(slot_i) along the trajectory."""
    env = tr.env()
    cols = [_eval(e, env, len(tr.t), _on_cells(p, tr)) for e in p.lagrangian.gradient(slot)]
    return np.column_stack(cols)


def _objective(p: VariationalProblem, sampled: Trajectory) -> float:
    return float(p.scheme.weights @ lagrangian_values(p, sampled))


def functional_value(p: VariationalProblem, q: GridFunction) -> float:
    trajectory(p, q)  # boundary and shape checks
    return _objective(p, sampled_trajectory(p, q))


def _gradient_matrix(p: VariationalProblem, sampled: Trajectory) -> np.ndarray:
    sc = p.scheme
    return sum(sc.ops[s].T @ (sc.weights[:, None] * partials(p, sampled, s)) for s in "qvw")


def discrete_gradient(p: VariationalProblem, q: GridFunction) -> np.ndarray:
    """dI/dq at every node (``n_nodes x dim``), boundary rows included."""
    trajectory(p, q)
    return _gradient_matrix(p, sampled_trajectory(p, q))


def _hessian(p: VariationalProblem, sampled: Trajectory) -> np.ndarray:
    # variables ordered component-major: x = [q_1(all nodes), q_2(all nodes), ...]
    n, N = p.dim, p.grid.n_nodes
    sc = p.scheme
    env = sampled.env()
    hess = np.zeros((n * N, n * N))
    L = p.lagrangian
    for i in range(n):
        for j in range(n):
            block = np.zeros((N, N))
            for sx in "qvw":
                for sy in "qvw":
                    expr = L.second(f"{sx}{i + 1}", f"{sy}{j + 1}")
                    coeff = sc.weights * _eval(expr, env, len(sc.t), sc.on_cells)
                    if not np.any(coeff):
                        continue
                    block += sc.ops[sx].T @ (coeff[:, None] * sc.ops[sy])
            hess[i * N : (i + 1) * N, j * N : (j + 1) * N] = block
    return hess


@dataclass(frozen=True, eq=False)
class SolveResult:
    q: GridFunction
    objective: float
    gradient_norm: float
    iterations: int
    initial_objective: float
    history: list = field(default_factory=list, repr=False)


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    shift = 0.0
    scale = max(1e-300, np.max(np.abs(np.diag(hess))))
    for _ in range(60):
        try:
            factor = cho_factor(hess + shift * np.eye(hess.shape[0]))
            return -cho_solve(factor, grad)
        except LinAlgError:
            shift = max(2 * shift, 1e-10 * scale)
    return -grad


def minimize_functional(p: VariationalProblem, opts: SolverOptions = SolverOptions()) -> SolveResult:
    """Find a stationary point of the discrete functional by line-searched descent."""
    if p.grid.n_nodes < 21:
        raise VariationalError(f"solver needs at least 21 nodes, got {p.grid.n_nodes}")
    N, n = p.grid.n_nodes, p.dim
    rows = p.free_rows
    # flat index of each (row, component) decision variable, component-major
    idx = (np.arange(n)[:, None] * N + rows[None, :]).ravel()

    q = p.initial_guess(opts.initialization).values.copy()

    def objective(values):
        sampled = sampled_trajectory(p, GridFunction(p.grid, values))
        return _objective(p, sampled), sampled

    f, tr = objective(q)
    f0 = f
    history = []
    for it in range(opts.max_iter + 1):
        grad = _gradient_matrix(p, tr).T.ravel()[idx]
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        history.append((f, gnorm))
        if gnorm <= opts.tol:
            return SolveResult(GridFunction(p.grid, q), f, gnorm, it, f0, history)
        if it == opts.max_iter:
            break
        if opts.method == "newton":
            direction = _newton_direction(_hessian(p, tr)[np.ix_(idx, idx)], grad)
            if direction @ grad >= 0:
                direction = -grad
        else:
            direction = -grad
        slope = float(direction @ grad)
        step = 1.0
        while True:
            trial = q.T.ravel().copy()
            trial[idx] += step * direction
            trial = trial.reshape(n, N).T
            try:
                f_trial, tr_trial = objective(trial)
            except (VariationalError, FracOpsError):
                f_trial = np.inf
            if f_trial <= f + opts.armijo_c * step * slope:
                break
            step *= opts.shrink
            if step < 1e-20:
                raise SolverError("line search failed", it, gnorm)
        q, f, tr = trial, f_trial, tr_trial
    raise SolverError("no convergence", opts.max_iter, gnorm)


def solve_extremal(p: VariationalProblem, opts: SolverOptions = SolverOptions()) -> GridFunction:
    return minimize_functional(p, opts).q


@dataclass(frozen=True, eq=False)
class ELReport:
    residual: GridFunction
    interior_sup_norm: float
    l2_norm: float


def el_residual(p: VariationalProblem, q: GridFunction) -> ELReport:
    """``d2L - d/dt d3L + D_right^alpha d4L`` along ``q``."""
    tr = trajectory(p, q)
    res = partials(p, tr, "q") - p.classical @ partials(p, tr, "v") + p.right_derivative @ partials(p, tr, "w")
    inner = res[p.grid.interior]
    l2 = float(np.sqrt(p.grid.integrate(np.sum(res**2, axis=1))))
    return ELReport(GridFunction(p.grid, res), float(np.max(np.abs(inner))), l2)


def discrete_gradient_check(
    p: VariationalProblem, q: GridFunction, n_samples: int = 10, step: float = 1e-6, seed: int = 0
) -> float:
    """Worst ``|g - g_fd| / max(1, |g_fd|)`` over random decision coordinates."""
    grad = discrete_gradient(p, q)
    rng = np.random.default_rng(seed)
    rows = p.free_rows
    worst = 0.0
    for _ in range(n_samples):
        k = int(rng.choice(rows))
        i = int(rng.integers(p.dim))
        plus = q.values.copy()
        minus = q.values.copy()
        plus[k, i] += step
        minus[k, i] -= step
        fd = (functional_value(p, GridFunction(p.grid, plus)) - functional_value(p, GridFunction(p.grid, minus))) / (2 * step)
        worst = max(worst, abs(grad[k, i] - fd) / max(1.0, abs(fd)))
    return worst
