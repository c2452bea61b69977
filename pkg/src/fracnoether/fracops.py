"""Riemann-Liouville integrals and derivatives as dense matrices on uniform grids.

Fractional integrals use product-trapezoid weights (exact for piecewise-linear
samples).  Fractional derivatives are the literal composition
``d/dt o I^(1-alpha)`` where the outer ``d/dt`` is a second-order one-sided
difference that looks only towards the integration endpoint, so left operators
stay lower triangular and right operators upper triangular.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import gamma

#: Number of nodes excluded at each end of the grid by the interior window.
INTERIOR_OFFSET = 10

#: Highest repeated differentiation order allowed by :func:`nth_time_derivative`.
R_MAX = 5


class FracOpsError(ValueError):
    """Invalid grid, order or operand."""


class TruncationOrderError(FracOpsError):
    """Requested derivative order exceeds the configured maximum."""


class Kind(enum.Enum):
    LeftIntegral = "left_integral"
    RightIntegral = "right_integral"
    LeftDerivative = "left_derivative"
    RightDerivative = "right_derivative"
    ClassicalDerivative = "classical_derivative"


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform partition of ``[a, b]`` into ``n_nodes`` nodes."""

    a: float
    b: float
    n_nodes: int
    nodes: np.ndarray = field(repr=False)
    h: float

    @property
    def interior(self) -> slice:
        """Index window ``[a + 10h, b - 10h]``, clipped for coarse grids."""
        k = min(INTERIOR_OFFSET, (self.n_nodes - 1) // 4)
        return slice(k, self.n_nodes - k)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid rule along the node axis."""
        return self.trapezoid_weights() @ np.asarray(values)

    def same_as(self, other: Grid) -> bool:
        return self is other or (
            self.a == other.a and self.b == other.b and self.n_nodes == other.n_nodes
        )


def build_grid(a: float, b: float, n_nodes: int) -> Grid:
    a, b = float(a), float(b)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise FracOpsError(f"grid endpoints must be finite, got a={a}, b={b}")
    if a >= b:
        raise FracOpsError(f"grid requires a < b, got a={a}, b={b}")
    if int(n_nodes) != n_nodes or n_nodes < 3:
        raise FracOpsError(f"grid requires an integer n_nodes >= 3, got {n_nodes}")
    n_nodes = int(n_nodes)
    h = (b - a) / (n_nodes - 1)
    nodes = a + h * np.arange(n_nodes)
    nodes[-1] = b
    nodes.setflags(write=False)
    return Grid(a, b, n_nodes, nodes, h)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of an ``n``-vector valued function, one row per grid node."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise FracOpsError(
                f"values must have {self.grid.n_nodes} rows, got shape {np.shape(self.values)}"
            )
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise FracOpsError(f"non-finite sample at node {bad}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def column(self, i: int = 0) -> np.ndarray:
        return self.values[:, i]

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> GridFunction:
        return cls(grid, fn(grid.nodes))

    def __add__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> GridFunction:
        return GridFunction(self.grid, c * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class FracOperator:
    kind: Kind
    order: float
    grid: Grid
    weights: np.ndarray = field(repr=False)

    def __matmul__(self, f):
        return apply(self, f)

    def dump_csv(self, path: str | Path) -> None:
        """Write the weight matrix row-major in full-precision scientific notation."""
        np.savetxt(path, self.weights, fmt="%.16e", delimiter=",")


def _check_same_grid(g1: Grid, g2: Grid) -> None:
    if not g1.same_as(g2):
        raise FracOpsError(
            f"grid mismatch: [{g1.a}, {g1.b}] x {g1.n_nodes} vs [{g2.a}, {g2.b}] x {g2.n_nodes}"
        )


def _frozen(m: np.ndarray) -> np.ndarray:
    m.setflags(write=False)
    return m


def _flip(m: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(m[::-1, ::-1])


def _left_integral_weights(n: int, h: float, order: float) -> np.ndarray:
    # int_0^{t_j} (t_j - s)^(order-1) f(s) ds with f linear on every cell
    # = h^order / Gamma(order + 2) * sum_k c_{j,k} f_k
    j = np.arange(n, dtype=float)
    p = order + 1.0
    # interior weights depend only on the lag m = j - k
    lag = np.zeros(n)
    lag[0] = 1.0
    m = j[1:]
    lag[1:] = (m + 1) ** p - 2 * m**p + (m - 1) ** p
    w = toeplitz(lag, np.zeros(n))
    w[0, 0] = 0.0
    w[1:, 0] = (m - 1) ** p - (m - 1 - order) * m**order
    return w * (h**order / gamma(order + 2.0))


@functools.lru_cache(maxsize=16)
def _cached(kind: Kind, n: int, h: float, order: float) -> np.ndarray:
    if kind is Kind.LeftIntegral:
        w = _left_integral_weights(n, h, order)
    elif kind is Kind.RightIntegral:
        w = _flip(_cached(Kind.LeftIntegral, n, h, order))
    elif kind is Kind.LeftDerivative:
        if order == 1.0:
            w = _classical_matrix(n, h)
        else:
            w = _backward_rows(_cached(Kind.LeftIntegral, n, h, 1.0 - order), h)
    elif kind is Kind.RightDerivative:
        w = _flip(_cached(Kind.LeftDerivative, n, h, order))
    else:
        w = _classical_matrix(n, h)
    return _frozen(w)


def _classical_matrix(n: int, h: float) -> np.ndarray:
    d = np.zeros((n, n))
    i = np.arange(1, n - 1)
    d[i, i - 1] = -0.5
    d[i, i + 1] = 0.5
    d[0, :3] = (-1.5, 2.0, -0.5)
    d[-1, -3:] = (0.5, -2.0, 1.5)
    return d / h


def _backward_rows(m: np.ndarray, h: float) -> np.ndarray:
    """Backward differences of every column of ``m`` (row-wise stencil).

    BDF2 from node 2 on; node 1 uses the first-order difference and node 0
    keeps a zero row (left operands of the derivative vanish there).
    """
    d = np.zeros_like(m)
    d[2:] = 1.5 * m[2:] - 2.0 * m[1:-1] + 0.5 * m[:-2]
    d[1] = m[1] - m[0]
    return d / h


def classical_derivative_op(grid: Grid) -> FracOperator:
    """Central differences inside, second-order one-sided at the two ends."""
    return FracOperator(
        Kind.ClassicalDerivative, 1.0, grid, _cached(Kind.ClassicalDerivative, grid.n_nodes, grid.h, 1.0)
    )


def _check_integral_order(order: float) -> float:
    order = float(order)
    if not (math.isfinite(order) and order > 0):
        raise FracOpsError(f"integral order must be positive, got {order}")
    return order


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise FracOpsError(f"derivative order alpha must lie in (0, 1], got {alpha}")
    return alpha


def left_frac_integral_op(grid: Grid, order: float) -> FracOperator:
    order = _check_integral_order(order)
    return FracOperator(Kind.LeftIntegral, order, grid, _cached(Kind.LeftIntegral, grid.n_nodes, grid.h, order))


def right_frac_integral_op(grid: Grid, order: float) -> FracOperator:
    order = _check_integral_order(order)
    return FracOperator(Kind.RightIntegral, order, grid, _cached(Kind.RightIntegral, grid.n_nodes, grid.h, order))


def integral_weights(grid: Grid, order: float, side: str) -> np.ndarray:
    """Left/right integral weights, with order 0 meaning the identity (alpha = 1 limit)."""
    if order == 0:
        return np.eye(grid.n_nodes)
    kind = Kind.LeftIntegral if side == "left" else Kind.RightIntegral
    return _cached(kind, grid.n_nodes, grid.h, _check_integral_order(order))


def left_rl_derivative_op(grid: Grid, alpha: float) -> FracOperator:
    alpha = _check_alpha(alpha)
    return FracOperator(Kind.LeftDerivative, alpha, grid, _cached(Kind.LeftDerivative, grid.n_nodes, grid.h, alpha))


def right_rl_derivative_op(grid: Grid, alpha: float) -> FracOperator:
    """``-d/dt o I_b^(1-alpha)``; at ``alpha = 1`` this is minus the classical matrix."""
    alpha = _check_alpha(alpha)
    return FracOperator(Kind.RightDerivative, alpha, grid, _cached(Kind.RightDerivative, grid.n_nodes, grid.h, alpha))


def apply(op: FracOperator, f: GridFunction) -> GridFunction:
    _check_same_grid(op.grid, f.grid)
    return GridFunction(f.grid, op.weights @ f.values)


def differentiate_samples(v: np.ndarray, h: float) -> np.ndarray:
    """Classical differentiation matrix applied along axis 0, as a stencil."""
    v = np.asarray(v, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    d[0] = (-1.5 * v[0] + 2.0 * v[1] - 0.5 * v[2]) / h
    d[-1] = (0.5 * v[-3] - 2.0 * v[-2] + 1.5 * v[-1]) / h
    return d


def backward_difference(v: np.ndarray, h: float) -> np.ndarray:
    """The one-sided stencil inside left RL derivatives, applied along axis 0."""
    return _backward_rows(np.asarray(v, dtype=float), h)


def forward_difference(v: np.ndarray, h: float) -> np.ndarray:
    """Mirror image of :func:`backward_difference`, as used by right RL derivatives."""
    return -_backward_rows(np.asarray(v, dtype=float)[::-1], h)[::-1]


def nth_time_derivative(f: GridFunction, r: int, r_max: int = R_MAX) -> GridFunction:
    """Apply the classical differentiation matrix ``r`` times."""
    if int(r) != r or r < 0:
        raise FracOpsError(f"derivative order must be a non-negative integer, got {r}")
    if r > r_max:
        raise TruncationOrderError(f"derivative order {r} exceeds r_max={r_max}")
    if r == 0:
        return f
    if f.grid.n_nodes - 1 < 2 * r + 2:
        raise FracOpsError(
            f"grid with {f.grid.n_nodes} nodes is too coarse for a derivative of order {r}"
        )
    v = f.values
    for _ in range(r):
        v = differentiate_samples(v, f.grid.h)
    return GridFunction(f.grid, v)


def _vanishes_at_ends(f: np.ndarray, tol: float = 1e-12) -> bool:
    return abs(f[0]) <= tol and abs(f[-1]) <= tol


def ibp_residual(f: GridFunction, g: GridFunction, alpha: float) -> float:
    """``|int f * D_left^alpha g - int g * D_right^alpha f|`` by the trapezoid rule."""
    alpha = _check_alpha(alpha)
    _check_same_grid(f.grid, g.grid)
    if f.dim != 1 or g.dim != 1:
        raise FracOpsError("ibp_residual expects scalar functions")
    fv, gv = f.column(), g.column()
    if alpha == 1.0 and not (_vanishes_at_ends(fv) or _vanishes_at_ends(gv)):
        raise FracOpsError(
            "alpha = 1 requires f or g to vanish at both endpoints (|value| <= 1e-12)"
        )
    grid = f.grid
    lhs = grid.integrate(fv * (left_rl_derivative_op(grid, alpha).weights @ gv))
    rhs = grid.integrate(gv * (right_rl_derivative_op(grid, alpha).weights @ fv))
    return float(abs(lhs - rhs))
