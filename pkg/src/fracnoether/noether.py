"""Invariance checks, the transfer-formula series and Noether conserved quantities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fracops
from .exprdsl import DomainError, Expression, Lagrangian, evaluate_on, free_symbols, indexed, is_zero, parse
from .fracops import R_MAX, FracOpsError, Grid, GridFunction, TruncationOrderError
from .variational import VariationalProblem, lagrangian_values, partials, trajectory


class NoetherError(ValueError):
    pass


def generator_symbols(n: int) -> list[str]:
    return ["t"] + indexed("q", n)


@dataclass(frozen=True, eq=False)
class SymmetryGenerator:
    """Infinitesimal generators ``t -> t + eps*tau``, ``q -> q + eps*xi`` over ``(t, q)``."""

    tau: Expression
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(self.xi))
        allowed = set(generator_symbols(self.dim))
        for e in (self.tau, *self.xi):
            extra = free_symbols(e) - allowed
            if extra:
                raise NoetherError(f"generator refers to {sorted(extra)[0]!r}; only t and q1..q{self.dim} are allowed")

    @property
    def dim(self) -> int:
        return len(self.xi)

    @classmethod
    def parse(cls, tau: str, xi: Sequence[str]) -> SymmetryGenerator:
        symbols = generator_symbols(len(xi))
        return cls(parse(tau, symbols), tuple(parse(x, symbols) for x in xi))

    def compose(self, t: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``tau(t, q(t))`` (length N) and ``xi(t, q(t))`` (N x n) along a trajectory."""
        env = {"t": t, **{f"q{i + 1}": q[:, i] for i in range(q.shape[1])}}
        n = len(t)
        try:
            tau = evaluate_on(self.tau, env, n)
            xi = np.column_stack([evaluate_on(e, env, n) for e in self.xi])
        except DomainError as exc:
            raise NoetherError(f"generator evaluation failed: {exc}") from exc
        return tau, xi


@dataclass(frozen=True)
class DriftStats:
    drift_abs: float
    drift_rel: float
    dCdt_sup: float


@dataclass(frozen=True, eq=False)
class DriftReport:
    C: GridFunction
    drift_abs: float
    drift_rel: float
    dCdt_sup: float
    truncation_order: int
    tail_estimate: float
    #: named contributions to C on the full grid (series terms, tau part, ...)
    parts: dict = field(default_factory=dict, repr=False)

    @property
    def interior_values(self) -> np.ndarray:
        return self.C.column()[self.C.grid.interior]


def drift_of(f: GridFunction) -> DriftStats:
    """Deviation from constancy over the interior window, relative to its first node."""
    if f.dim != 1:
        raise NoetherError("drift_of expects a scalar function")
    window = f.grid.interior
    c = f.column()[window]
    c0 = float(c[0])
    drift_abs = float(np.max(np.abs(c - c0)))
    dcdt = fracops.differentiate_samples(f.column(), f.grid.h)[window]
    return DriftStats(drift_abs, drift_abs / max(1.0, abs(c0)), float(np.max(np.abs(dcdt))))


def _check_truncation(R: int, low: int = 0) -> int:
    if int(R) != R or not (low <= R <= R_MAX):
        raise TruncationOrderError(f"truncation order must lie in [{low}, {R_MAX}], got {R}")
    return int(R)


def _interior_sup(grid: Grid, values: np.ndarray) -> float:
    return float(np.max(np.abs(values[grid.interior])))


def series_terms(grid: Grid, f: np.ndarray, g: np.ndarray, alpha: float, R: int) -> list[np.ndarray]:
    """Per-order terms ``(-1)^r g^(r) . I_left^(r+1-alpha) f + f^(r) . I_right^(r+1-alpha) g``.

    ``f`` and ``g`` are ``N x n``; the dot products sum over components.
    """
    left, right = [], []
    _series_parts(grid, f, g, alpha, R, left, right)
    return [lt + rt for lt, rt in zip(left, right)]


def _series_parts(grid, f, g, alpha, R, left_out, right_out):
    f = np.asarray(f, dtype=float).reshape(grid.n_nodes, -1)
    g = np.asarray(g, dtype=float).reshape(grid.n_nodes, -1)
    fr = GridFunction(grid, f)
    gr = GridFunction(grid, g)
    for r in range(R + 1):
        order = r + 1.0 - alpha
        il = fracops.integral_weights(grid, order, "left")
        ir = fracops.integral_weights(grid, order, "right")
        dg = fracops.nth_time_derivative(gr, r).values
        df = fracops.nth_time_derivative(fr, r).values
        left_out.append((-1) ** r * np.sum(dg * (il @ f), axis=1))
        right_out.append(np.sum(df * (ir @ g), axis=1))


def _scalar(f: GridFunction, label: str) -> np.ndarray:
    if f.dim != 1:
        raise NoetherError(f"{label} must be scalar")
    return f.column()


def transfer_series_residual(f: GridFunction, g: GridFunction, alpha: float, R: int) -> tuple[float, float]:
    """Interior sup-norms of ``g D_left f - f D_right g - d/dt S_R`` and of the order-R term.

    The outer ``d/dt`` differentiates the left-integral part of ``S_R`` with the
    backward stencil and the right-integral part with the forward stencil, the
    same one-sided stencils the RL derivatives are built from.
    """
    R = _check_truncation(R, low=1)
    fracops._check_same_grid(f.grid, g.grid)
    grid = f.grid
    fv, gv = _scalar(f, "f"), _scalar(g, "g")
    lhs = gv * (fracops.left_rl_derivative_op(grid, alpha).weights @ fv) - fv * (
        fracops.right_rl_derivative_op(grid, alpha).weights @ gv
    )
    left, right = [], []
    _series_parts(grid, fv, gv, alpha, R, left, right)
    d_series = fracops.backward_difference(np.sum(left, axis=0), grid.h) + fracops.forward_difference(
        np.sum(right, axis=0), grid.h
    )
    residual = _interior_sup(grid, lhs - d_series)
    tail = _interior_sup(grid, left[-1] + right[-1])
    return residual, tail


def _zero_tau(gen: SymmetryGenerator) -> bool:
    return is_zero(gen.tau)


def invariance_residual(L: Lagrangian, gen: SymmetryGenerator, q: GridFunction, alpha: float) -> float:
    """Interior sup of ``d2L.xi + d3L.xi' + d4L.D_left^alpha xi`` (no time transformation)."""
    if not _zero_tau(gen):
        raise NoetherError("invariance_residual only handles generators with tau = 0")
    p = _problem(L, alpha, q)
    tr = trajectory(p, q, check_boundary=False)
    _, xi = gen.compose(tr.t, tr.q)
    xi_dot = p.classical @ xi
    xi_frac = p.left_derivative @ xi
    total = np.sum(
        partials(p, tr, "q") * xi + partials(p, tr, "v") * xi_dot + partials(p, tr, "w") * xi_frac, axis=1
    )
    return _interior_sup(q.grid, total)


def _problem(L: Lagrangian, alpha: float, q: GridFunction) -> VariationalProblem:
    if q.dim != L.dim:
        raise NoetherError(f"trajectory has {q.dim} components, Lagrangian has {L.dim}")
    return VariationalProblem(L, alpha, q.grid, q.values[0], None)


def _check_dims(L: Lagrangian, gen: SymmetryGenerator):
    if gen.dim != L.dim:
        raise NoetherError(f"generator has {gen.dim} components, Lagrangian has {L.dim}")


def _report(grid: Grid, C: np.ndarray, R: int, tail: float, parts: dict) -> DriftReport:
    bad = ~np.isfinite(C[grid.interior])
    if np.any(bad):
        raise NoetherError(f"conserved quantity is not finite at node {int(np.flatnonzero(bad)[0]) + grid.interior.start}")
    # endpoint nodes may legitimately be singular; keep them finite for storage
    C = np.where(np.isfinite(C), C, 0.0)
    f = GridFunction(grid, C)
    stats = drift_of(f)
    return DriftReport(f, stats.drift_abs, stats.drift_rel, stats.dCdt_sup, R, tail, parts)


def conserved_quantity(
    L: Lagrangian, gen: SymmetryGenerator, q: GridFunction, alpha: float, R: int = 3
) -> DriftReport:
    """The bracketed Noether quantity including the time-transformation part."""
    R = _check_truncation(R)
    _check_dims(L, gen)
    p = _problem(L, alpha, q)
    tr = trajectory(p, q, check_boundary=False)
    tau, xi = gen.compose(tr.t, tr.q)
    d3, d4 = partials(p, tr, "v"), partials(p, tr, "w")
    momentum = np.sum(xi * d3, axis=1)
    terms = series_terms(q.grid, xi, d4, alpha, R)
    energy = lagrangian_values(p, tr) - np.sum(tr.v * d3, axis=1) - alpha * np.sum(d4 * tr.w, axis=1)
    tau_part = tau * energy
    C = momentum + np.sum(terms, axis=0) + tau_part
    parts = {"xi_part": momentum, **{f"term_r{r}": t for r, t in enumerate(terms)}, "tau_part": tau_part}
    return _report(q.grid, C, R, _interior_sup(q.grid, terms[-1]), parts)


def momentum_quantity(L: Lagrangian, xi: Sequence[Expression], q: GridFunction, alpha: float, R: int = 3) -> np.ndarray:
    """The time-independent Noether quantity, assembled termwise without any tau algebra."""
    R = _check_truncation(R)
    grid = q.grid
    p = _problem(L, alpha, q)
    tr = trajectory(p, q, check_boundary=False)
    env = {"t": tr.t, **{f"q{i + 1}": tr.q[:, i] for i in range(L.dim)}}
    xi_vals = np.column_stack([evaluate_on(e, env, grid.n_nodes) for e in xi])
    d3, d4 = partials(p, tr, "v"), partials(p, tr, "w")
    total = np.zeros(grid.n_nodes)
    for i in range(L.dim):
        total += xi_vals[:, i] * d3[:, i]
        xi_i = GridFunction(grid, xi_vals[:, i])
        d4_i = GridFunction(grid, d4[:, i])
        for r in range(R + 1):
            order = r + 1.0 - alpha
            total += (-1) ** r * fracops.nth_time_derivative(d4_i, r).column() * (
                fracops.integral_weights(grid, order, "left") @ xi_i.column()
            )
            total += fracops.nth_time_derivative(xi_i, r).column() * (
                fracops.integral_weights(grid, order, "right") @ d4_i.column()
            )
    return total


def terms_columns(report: DriftReport) -> dict[str, np.ndarray]:
    """Columns ``t, C, term_r0..term_rR, tau_part`` for CSV export."""
    cols = {"t": report.C.grid.nodes, "C": report.C.column()}
    n = report.C.grid.n_nodes
    for r in range(report.truncation_order + 1):
        cols[f"term_r{r}"] = report.parts.get(f"term_r{r}", np.zeros(n))
    cols["tau_part"] = report.parts.get("tau_part", np.zeros(n))
    return cols


def naive_energy(L: Lagrangian, q: GridFunction, alpha: float) -> DriftReport:
    """``L - v . d3L``: the classical energy, without the fractional correction."""
    p = _problem(L, alpha, q)
    tr = trajectory(p, q, check_boundary=False)
    C = lagrangian_values(p, tr) - np.sum(tr.v * partials(p, tr, "v"), axis=1)
    return _report(q.grid, C, 0, 0.0, {})


__all__ = [
    "DriftReport",
    "DriftStats",
    "FracOpsError",
    "NoetherError",
    "SymmetryGenerator",
    "conserved_quantity",
    "drift_of",
    "invariance_residual",
    "momentum_quantity",
    "naive_energy",
    "series_terms",
    "terms_columns",
    "transfer_series_residual",
]
