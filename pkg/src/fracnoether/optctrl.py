"""Optimal control with a classical state equation and an RL fractional one.

The problem is

    minimize  int_a^b L(t, q, u, mu) dt
    subject to  dq/dt = phi(t, q, u),   D_left^alpha q = rho(t, q, mu),   q(a) = q_a

with Hamiltonian ``H = L + p.phi + p_alpha.rho``.  Only stationarity-form
Pontryagin conditions are checked; a general solver is not provided.  The one
built-in problem (the scalar linear-quadratic example) is solved by eliminating
the controls and minimizing over ``q`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import fracops
from .exprdsl import (
    DomainError,
    Expression,
    Lagrangian,
    differentiate,
    evaluate_on,
    find_path,
    free_symbols,
    indexed,
    parse,
    rename,
)
from .fracops import Grid, GridFunction
from .noether import DriftReport, SymmetryGenerator, _check_truncation, _report, series_terms
from .variational import (
    SolveResult,
    SolverOptions,
    VariationalProblem,
    functional_value,
    minimize_functional,
    partials,
    trajectory,
)


class ControlError(ValueError):
    pass


def control_symbols(n: int, m: int, d: int) -> list[str]:
    return ["t"] + indexed("q", n) + indexed("u", m) + indexed("mu", d)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    lagrangian: Expression
    phi: tuple
    rho: tuple
    alpha: float
    grid: Grid
    q_a: np.ndarray
    n_controls: int = 1
    n_frac_controls: int = 1

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(self.phi))
        object.__setattr__(self, "rho", tuple(self.rho))
        q_a = np.atleast_1d(np.asarray(self.q_a, dtype=float))
        q_a.setflags(write=False)
        object.__setattr__(self, "q_a", q_a)
        n = q_a.size
        if len(self.phi) != n or len(self.rho) != n:
            raise ControlError(f"phi and rho need {n} components each, got {len(self.phi)} and {len(self.rho)}")
        if not (0.0 < self.alpha < 1.0):
            raise ControlError(f"alpha must lie strictly inside (0, 1), got {self.alpha}")
        base = ["t"] + indexed("q", n)
        self._require(self.lagrangian, control_symbols(n, self.n_controls, self.n_frac_controls), "lagrangian")
        for i, e in enumerate(self.phi):
            self._require(e, base + indexed("u", self.n_controls), f"phi[{i}]")
        for i, e in enumerate(self.rho):
            self._require(e, base + indexed("mu", self.n_frac_controls), f"rho[{i}]")

    @staticmethod
    def _require(e: Expression, allowed: Sequence[str], label: str) -> None:
        extra = free_symbols(e) - set(allowed)
        if extra:
            raise ControlError(f"{label} refers to undeclared symbol {sorted(extra)[0]!r}")

    @classmethod
    def parse(
        cls,
        lagrangian: str,
        phi: Sequence[str],
        rho: Sequence[str],
        alpha: float,
        grid: Grid,
        q_a,
        n_controls: int = 1,
        n_frac_controls: int = 1,
    ) -> ControlProblem:
        symbols = control_symbols(len(phi), n_controls, n_frac_controls)
        return cls(
            parse(lagrangian, symbols),
            tuple(parse(e, symbols) for e in phi),
            tuple(parse(e, symbols) for e in rho),
            alpha,
            grid,
            q_a,
            n_controls,
            n_frac_controls,
        )

    @property
    def dim(self) -> int:
        return self.q_a.size

    def d(self, e: Expression, var: str) -> Expression:
        cache = self.__dict__.setdefault("_partials", {})
        key = (id(e), var)
        if key not in cache:
            cache[key] = (e, differentiate(e, var))
        return cache[key][1]


@dataclass(frozen=True, eq=False)
class PontryaginTuple:
    q: GridFunction
    u: GridFunction
    mu: GridFunction
    p: GridFunction
    p_alpha: GridFunction

    def __post_init__(self):
        grid = self.q.grid
        for name in ("u", "mu", "p", "p_alpha"):
            if not getattr(self, name).grid.same_as(grid):
                raise ControlError(f"{name} lives on a different grid than q")
        if self.p.dim != self.q.dim or self.p_alpha.dim != self.q.dim:
            raise ControlError("p and p_alpha must have the same dimension as q")

    @property
    def grid(self) -> Grid:
        return self.q.grid


def _check_tuple(cp: ControlProblem, tup: PontryaginTuple) -> None:
    if not tup.grid.same_as(cp.grid):
        raise ControlError("tuple grid does not match the problem grid")
    if tup.q.dim != cp.dim:
        raise ControlError(f"q has {tup.q.dim} components, problem has {cp.dim}")
    if tup.u.dim != cp.n_controls or tup.mu.dim != cp.n_frac_controls:
        raise ControlError(
            f"controls have dims ({tup.u.dim}, {tup.mu.dim}), problem expects ({cp.n_controls}, {cp.n_frac_controls})"
        )
    if np.max(np.abs(tup.q.values[0] - cp.q_a)) > 1e-12:
        raise ControlError("q does not match q_a at node 0")


def _env(tup: PontryaginTuple) -> dict[str, np.ndarray]:
    env = {"t": tup.grid.nodes}
    for prefix, f in (("q", tup.q), ("u", tup.u), ("mu", tup.mu)):
        for i in range(f.dim):
            env[f"{prefix}{i + 1}"] = f.values[:, i]
    return env


def _eval(e: Expression, env, n: int) -> np.ndarray:
    try:
        return evaluate_on(e, env, n)
    except DomainError as exc:
        raise ControlError(f"evaluation failed: {exc}") from exc


def _fields(cp: ControlProblem, tup: PontryaginTuple, env=None):
    env = env or _env(tup)
    n = cp.grid.n_nodes
    L = _eval(cp.lagrangian, env, n)
    phi = np.column_stack([_eval(e, env, n) for e in cp.phi])
    rho = np.column_stack([_eval(e, env, n) for e in cp.rho])
    return L, phi, rho


def hamiltonian(cp: ControlProblem, tup: PontryaginTuple) -> GridFunction:
    _check_tuple(cp, tup)
    L, phi, rho = _fields(cp, tup)
    H = L + np.sum(tup.p.values * phi, axis=1) + np.sum(tup.p_alpha.values * rho, axis=1)
    return GridFunction(cp.grid, H)


@dataclass(frozen=True)
class PontryaginResiduals:
    """Interior sup-norms of the five stationarity-form Pontryagin conditions."""

    state: float
    fractional_state: float
    costate: float
    control: float
    fractional_control: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)

    @property
    def worst(self) -> float:
        return max(self.as_dict().values())


def _sup(grid: Grid, values: np.ndarray) -> float:
    block = values[grid.interior]
    return float(np.max(np.abs(block))) if block.size else 0.0


def _partial_h(cp, env, var, p, pa):
    """``dL/dvar + p.dphi/dvar + p_alpha.drho/dvar`` nodewise."""
    n = cp.grid.n_nodes
    out = _eval(cp.d(cp.lagrangian, var), env, n).copy()
    for j in range(cp.dim):
        out += p[:, j] * _eval(cp.d(cp.phi[j], var), env, n)
        out += pa[:, j] * _eval(cp.d(cp.rho[j], var), env, n)
    return out


def pontryagin_residuals(cp: ControlProblem, tup: PontryaginTuple) -> PontryaginResiduals:
    _check_tuple(cp, tup)
    grid = cp.grid
    env = _env(tup)
    _, phi, rho = _fields(cp, tup, env)
    D = fracops.classical_derivative_op(grid).weights
    A = fracops.left_rl_derivative_op(grid, cp.alpha).weights
    AR = fracops.right_rl_derivative_op(grid, cp.alpha).weights
    q, p, pa = tup.q.values, tup.p.values, tup.p_alpha.values
    dHdq = np.column_stack([_partial_h(cp, env, f"q{i + 1}", p, pa) for i in range(cp.dim)])
    dHdu = [_partial_h(cp, env, name, p, pa) for name in indexed("u", cp.n_controls)]
    dHdmu = [_partial_h(cp, env, name, p, pa) for name in indexed("mu", cp.n_frac_controls)]
    empty = np.zeros((grid.n_nodes, 0))
    return PontryaginResiduals(
        state=_sup(grid, phi - D @ q),
        fractional_state=_sup(grid, rho - A @ q),
        costate=_sup(grid, dHdq + D @ p - AR @ pa),
        control=_sup(grid, np.column_stack(dHdu) if dHdu else empty),
        fractional_control=_sup(grid, np.column_stack(dHdmu) if dHdmu else empty),
    )


def fractional_correction(alpha: float, p_alpha: np.ndarray, frac_dq: np.ndarray) -> np.ndarray:
    """``(1 - alpha) p_alpha . D_left^alpha q`` nodewise.  Exactly zero at ``alpha = 1``."""
    p_alpha = np.asarray(p_alpha, dtype=float).reshape(len(p_alpha), -1)
    frac_dq = np.asarray(frac_dq, dtype=float).reshape(p_alpha.shape)
    if alpha == 1.0:
        return np.zeros(p_alpha.shape[0])
    return (1.0 - alpha) * np.sum(p_alpha * frac_dq, axis=1)


def _frac_dq(cp: ControlProblem, tup: PontryaginTuple) -> np.ndarray:
    return fracops.left_rl_derivative_op(cp.grid, cp.alpha).weights @ tup.q.values


def control_conserved_quantity(
    cp: ControlProblem, tup: PontryaginTuple, gen: SymmetryGenerator, R: int = 3
) -> DriftReport:
    """Hamiltonian-form Noether quantity for the generator ``gen`` over ``(t, q)``."""
    R = _check_truncation(R)
    _check_tuple(cp, tup)
    if gen.dim != cp.dim:
        raise ControlError(f"generator has {gen.dim} components, problem has {cp.dim}")
    tau, xi = gen.compose(cp.grid.nodes, tup.q.values)
    H = hamiltonian(cp, tup).column()
    terms = series_terms(cp.grid, xi, tup.p_alpha.values, cp.alpha, R)
    momentum = -np.sum(xi * tup.p.values, axis=1)
    tau_part = tau * (H - fractional_correction(cp.alpha, tup.p_alpha.values, _frac_dq(cp, tup)))
    C = momentum - np.sum(terms, axis=0) + tau_part
    parts = {"xi_part": momentum, **{f"term_r{r}": -t for r, t in enumerate(terms)}, "tau_part": tau_part}
    return _report(cp.grid, C, R, _sup(cp.grid, terms[-1]), parts)


def explicit_time_path(cp: ControlProblem) -> Optional[str]:
    """Where ``t`` first appears in L, phi or rho, or ``None`` for an autonomous problem."""
    labelled = [("lagrangian", cp.lagrangian)]
    labelled += [(f"phi[{i}]", e) for i, e in enumerate(cp.phi)]
    labelled += [(f"rho[{i}]", e) for i, e in enumerate(cp.rho)]
    for label, e in labelled:
        path = find_path(e, "t")
        if path is not None:
            return f"{label} at {path}"
    return None


def autonomous_invariant(cp: ControlProblem, tup: PontryaginTuple) -> DriftReport:
    """``H - (1 - alpha) p_alpha . D_left^alpha q``, which autonomous problems conserve."""
    where = explicit_time_path(cp)
    if where is not None:
        raise ControlError(f"problem is not autonomous: t appears in {where}")
    H = hamiltonian(cp, tup).column()
    C = H - fractional_correction(cp.alpha, tup.p_alpha.values, _frac_dq(cp, tup))
    return _report(cp.grid, C, 0, 0.0, {})


def alpha_weighted_hamiltonian(cp: ControlProblem, tup: PontryaginTuple) -> DriftReport:
    """``L + p.phi + alpha p_alpha.rho``.

    Along an exact extremal ``rho`` equals ``D_left^alpha q``, so this is the
    autonomous invariant with the state equation substituted in.
    """
    _check_tuple(cp, tup)
    L, phi, rho = _fields(cp, tup)
    C = L + np.sum(tup.p.values * phi, axis=1) + cp.alpha * np.sum(tup.p_alpha.values * rho, axis=1)
    return _report(cp.grid, C, 0, 0.0, {})


def tuple_columns(cp: ControlProblem, tup: PontryaginTuple) -> dict[str, np.ndarray]:
    """CSV columns ``t, q.., u.., mu.., p.., p_alpha.., H, C_eq12, C_eq13``."""
    cols = {"t": cp.grid.nodes}
    for prefix, f in (("q", tup.q), ("u", tup.u), ("mu", tup.mu), ("p", tup.p), ("p_alpha", tup.p_alpha)):
        for i in range(f.dim):
            cols[f"{prefix}{i + 1}"] = f.values[:, i]
    cols["H"] = hamiltonian(cp, tup).column()
    cols["C_eq12"] = autonomous_invariant(cp, tup).C.column()
    cols["C_eq13"] = alpha_weighted_hamiltonian(cp, tup).C.column()
    return cols


# -- reduction from the calculus of variations ---------------------------------


def tuple_from_extremal(vp: VariationalProblem, q: GridFunction) -> tuple[ControlProblem, PontryaginTuple]:
    """Recast a variational problem as control with ``phi = u``, ``rho = mu``.

    The costates come from stationarity, ``p = -dL/dv`` and ``p_alpha = -dL/dw``.
    """
    n = vp.dim
    mapping = {**{f"v{i}": f"u{i}" for i in range(1, n + 1)}, **{f"w{i}": f"mu{i}" for i in range(1, n + 1)}}
    cp = ControlProblem(
        rename(vp.lagrangian.expr, mapping),
        tuple(parse(f"u{i}", control_symbols(n, n, n)) for i in range(1, n + 1)),
        tuple(parse(f"mu{i}", control_symbols(n, n, n)) for i in range(1, n + 1)),
        vp.alpha,
        vp.grid,
        q.values[0],
        n,
        n,
    )
    tr = trajectory(vp, q, check_boundary=False)
    grid = vp.grid
    tup = PontryaginTuple(
        q,
        GridFunction(grid, tr.v),
        GridFunction(grid, tr.w),
        GridFunction(grid, -partials(vp, tr, "v")),
        GridFunction(grid, -partials(vp, tr, "w")),
    )
    return cp, tup


# -- the built-in linear-quadratic example -------------------------------------

LQ_LAGRANGIAN = "0.5*(q1^2 + u1^2 + mu1^2)"
LQ_PHI = "-q1 + u1"
LQ_RHO = "-q1 + mu1"
LQ_REDUCED = "0.5*(q1^2 + (v1 + q1)^2 + (w1 + q1)^2)"


def lq_control_problem(alpha: float, grid: Grid, q0: float) -> ControlProblem:
    return ControlProblem.parse(LQ_LAGRANGIAN, [LQ_PHI], [LQ_RHO], alpha, grid, [q0])


@dataclass(frozen=True, eq=False)
class LQResult:
    problem: ControlProblem
    tuple: PontryaginTuple
    objective: float
    initial_objective: float
    #: objective of the feasible constant trajectory ``q = q0``
    constant_objective: float
    solve: SolveResult


def lq_example(alpha: float, grid: Grid, q0: float, opts: SolverOptions = SolverOptions()) -> LQResult:
    if grid.a != 0.0 or grid.b != 1.0:
        raise ControlError(f"the example is posed on [0, 1], got [{grid.a}, {grid.b}]")
    cp = lq_control_problem(alpha, grid, q0)
    vp = VariationalProblem(Lagrangian.parse(LQ_REDUCED, 1), alpha, grid, [q0], None)
    result = minimize_functional(vp, opts)
    q = result.q
    tr = trajectory(vp, q)
    u = tr.v + tr.q
    mu = tr.w + tr.q
    tup = PontryaginTuple(
        q, GridFunction(grid, u), GridFunction(grid, mu), GridFunction(grid, -u), GridFunction(grid, -mu)
    )
    constant = functional_value(vp, GridFunction(grid, np.full(grid.n_nodes, float(q0))))
    return LQResult(cp, tup, result.objective, result.initial_objective, constant, result)


def solve_lq_example(alpha: float, grid: Grid, q0: float) -> PontryaginTuple:
    return lq_example(alpha, grid, q0).tuple
