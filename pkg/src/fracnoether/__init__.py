"""Fractional variational calculus on uniform grids.

Riemann-Liouville operators (:mod:`fracops`), a small expression language for
Lagrangians (:mod:`exprdsl`), extremals of mixed classical/fractional
functionals (:mod:`variational`), Noether quantities (:mod:`noether`) and
stationarity-form Pontryagin checks (:mod:`optctrl`).
"""

from .fracops import Grid, GridFunction, build_grid
from .exprdsl import Lagrangian, parse
from .variational import SolverOptions, VariationalProblem, el_residual, solve_extremal
from .noether import SymmetryGenerator, conserved_quantity
from .optctrl import ControlProblem, PontryaginTuple, pontryagin_residuals, solve_lq_example

__version__ = "0.1.0"

__all__ = [
    "ControlProblem",
    "Grid",
    "GridFunction",
    "Lagrangian",
    "PontryaginTuple",
    "SolverOptions",
    "SymmetryGenerator",
    "VariationalProblem",
    "build_grid",
    "conserved_quantity",
    "el_residual",
    "parse",
    "pontryagin_residuals",
    "solve_extremal",
    "solve_lq_example",
]
