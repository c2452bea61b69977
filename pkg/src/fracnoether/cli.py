"""Command-line front end: read a problem file, run one computation, write CSV and a summary.

Problem files are INI documents::

    [problem]
    kind = variational          # variational | control | lq_example
    alpha = 0.9
    interval = 0 1
    n_nodes = 1001
    dim = 1

    [lagrangian]
    expression = 0.5*(v1^2 + w1^2)

    [dynamics]                  # control kind only
    phi = -q1 + u1              # one expression per state, separated by ';'
    rho = -q1 + mu1
    controls = 1
    frac_controls = 1

    [boundary]
    q_a = 0
    q_b = 1                     # omit for a free right end

    [generator]
    tau = 1
    xi = 0

    [solver]
    tol = 1e-8
    max_iter = 50000
    init = linear               # linear | constant
    method = newton             # newton | gradient

    [noether]
    truncation = 3

    [output]
    directory = out
    precision = 17

    [tuple]                     # control kind: externally supplied tuple CSV
    file = tuple.csv

Command-line flags override file values.  The output directory is taken from
``--output-dir``, then ``$FRACNOETHER_OUTPUT_DIR``, then ``[output] directory``,
then ``./fracnoether_out``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge,
4 drift above ``--fail-above``.
"""

from __future__ import annotations

import argparse
import configparser
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fracops, noether, optctrl, variational
from .exprdsl import ExprError, Lagrangian, parse
from .fracops import FracOpsError, GridFunction, build_grid
from .tables import DEFAULT_DIGITS, write_table

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3
EXIT_DRIFT = 4

OUTPUT_ENV = "FRACNOETHER_OUTPUT_DIR"
DEFAULT_OUTPUT = "fracnoether_out"

KINDS = ("variational", "control", "lq_example")

OPERATORS = {
    "left-integral": fracops.left_frac_integral_op,
    "right-integral": fracops.right_frac_integral_op,
    "left-derivative": fracops.left_rl_derivative_op,
    "right-derivative": fracops.right_rl_derivative_op,
}


class ConfigError(ValueError):
    """Invalid problem file or flag; the message names the section at fault."""

    def __init__(self, section: str, message: str):
        super().__init__(f"[{section}] {message}")
        self.section = section


# -- problem file ---------------------------------------------------------------


@dataclass
class ProblemFile:
    kind: str = "variational"
    alpha: Optional[float] = None
    a: float = 0.0
    b: float = 1.0
    n_nodes: Optional[int] = None
    dim: int = 1
    lagrangian: Optional[str] = None
    phi: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    controls: int = 1
    frac_controls: int = 1
    q_a: Optional[list] = None
    q_b: Optional[list] = None
    tau: Optional[str] = None
    xi: Optional[list] = None
    tol: float = 1e-8
    max_iter: int = 50_000
    init: str = "linear"
    method: str = "newton"
    truncation: int = 3
    directory: Optional[str] = None
    precision: int = DEFAULT_DIGITS
    tuple_file: Optional[Path] = None
    base_dir: Path = field(default_factory=Path.cwd)


def _split_expressions(text: str) -> list[str]:
    return [part.strip() for part in text.split(";") if part.strip()]


def _numbers(section: str, key: str, text: str) -> list[float]:
    try:
        return [float(x) for x in re.split(r"[\s,;]+", text.strip()) if x]
    except ValueError:
        raise ConfigError(section, f"{key} must be a list of numbers, got {text!r}") from None


def _get(cp: configparser.ConfigParser, section: str, key: str, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(section, f"{key} has invalid value {raw!r}") from None


def load_problem(path: Optional[Path]) -> ProblemFile:
    pf = ProblemFile()
    if path is None:
        return pf
    path = Path(path)
    if not path.is_file():
        raise ConfigError("problem", f"problem file {str(path)!r} not found")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError("problem", f"cannot parse {path}: {exc}") from None
    pf.base_dir = path.parent
    if cp.has_section("problem"):
        pf.kind = cp.get("problem", "kind", fallback=pf.kind).strip()
        pf.alpha = _get(cp, "problem", "alpha", float, None)
        if cp.has_option("problem", "interval"):
            ab = _numbers("problem", "interval", cp.get("problem", "interval"))
            if len(ab) != 2:
                raise ConfigError("problem", "interval needs exactly two numbers 'a b'")
            pf.a, pf.b = ab
        pf.n_nodes = _get(cp, "problem", "n_nodes", int, None)
        pf.dim = _get(cp, "problem", "dim", int, pf.dim)
    if cp.has_section("lagrangian"):
        pf.lagrangian = cp.get("lagrangian", "expression", fallback=None)
    if cp.has_section("dynamics"):
        pf.phi = _split_expressions(cp.get("dynamics", "phi", fallback=""))
        pf.rho = _split_expressions(cp.get("dynamics", "rho", fallback=""))
        pf.controls = _get(cp, "dynamics", "controls", int, pf.controls)
        pf.frac_controls = _get(cp, "dynamics", "frac_controls", int, pf.frac_controls)
    if cp.has_section("boundary"):
        if cp.has_option("boundary", "q_a"):
            pf.q_a = _numbers("boundary", "q_a", cp.get("boundary", "q_a"))
        if cp.has_option("boundary", "q_b"):
            pf.q_b = _numbers("boundary", "q_b", cp.get("boundary", "q_b"))
    if cp.has_section("generator"):
        pf.tau = cp.get("generator", "tau", fallback="0")
        pf.xi = _split_expressions(cp.get("generator", "xi", fallback=""))
    if cp.has_section("solver"):
        pf.tol = _get(cp, "solver", "tol", float, pf.tol)
        pf.max_iter = _get(cp, "solver", "max_iter", int, pf.max_iter)
        pf.init = cp.get("solver", "init", fallback=pf.init).strip()
        pf.method = cp.get("solver", "method", fallback=pf.method).strip()
    if cp.has_section("noether"):
        pf.truncation = _get(cp, "noether", "truncation", int, pf.truncation)
    if cp.has_section("output"):
        pf.directory = cp.get("output", "directory", fallback=None)
        pf.precision = _get(cp, "output", "precision", int, pf.precision)
    if cp.has_section("tuple") and cp.has_option("tuple", "file"):
        pf.tuple_file = pf.base_dir / cp.get("tuple", "file").strip()
    return pf


def apply_flags(pf: ProblemFile, args: argparse.Namespace) -> ProblemFile:
    """Flags win over file values."""
    for flag, attr in (
        ("alpha", "alpha"),
        ("n", "n_nodes"),
        ("a", "a"),
        ("b", "b"),
        ("tol", "tol"),
        ("max_iter", "max_iter"),
        ("init", "init"),
        ("method", "method"),
        ("R", "truncation"),
        ("precision", "precision"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(pf, attr, value)
    q0 = getattr(args, "q0", None)
    if q0 is not None:
        pf.q_a = [q0]
    return pf


def output_dir(args: argparse.Namespace, pf: ProblemFile) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    if pf.directory:
        return pf.base_dir / pf.directory
    return Path(DEFAULT_OUTPUT)


# -- validation helpers ---------------------------------------------------------


def _require_kind(pf: ProblemFile, *kinds: str) -> None:
    if pf.kind not in KINDS:
        raise ConfigError("problem", f"kind must be one of {', '.join(KINDS)}, got {pf.kind!r}")
    if pf.kind not in kinds:
        raise ConfigError("problem", f"this subcommand needs kind {' or '.join(kinds)}, got {pf.kind!r}")


def _grid(pf: ProblemFile, default_n: Optional[int] = None):
    n = pf.n_nodes if pf.n_nodes is not None else default_n
    if n is None:
        raise ConfigError("problem", "n_nodes is required")
    try:
        return build_grid(pf.a, pf.b, n)
    except FracOpsError as exc:
        raise ConfigError("problem", str(exc)) from None


def _alpha(pf: ProblemFile, default: Optional[float] = None) -> float:
    alpha = pf.alpha if pf.alpha is not None else default
    if alpha is None:
        raise ConfigError("problem", "alpha is required")
    upper_ok = alpha <= 1.0 if pf.kind == "variational" else alpha < 1.0
    if not (alpha > 0.0 and upper_ok):
        bound = "(0, 1]" if pf.kind == "variational" else "(0, 1)"
        raise ConfigError("problem", f"alpha must lie in {bound}, got {alpha}")
    return alpha


def _lagrangian(pf: ProblemFile) -> Lagrangian:
    if not pf.lagrangian:
        raise ConfigError("lagrangian", "section with an 'expression' key is required")
    try:
        return Lagrangian.parse(pf.lagrangian, pf.dim)
    except ExprError as exc:
        raise ConfigError("lagrangian", str(exc)) from None


def _options(pf: ProblemFile) -> variational.SolverOptions:
    try:
        return variational.SolverOptions(tol=pf.tol, max_iter=pf.max_iter, initialization=pf.init, method=pf.method)
    except variational.VariationalError as exc:
        raise ConfigError("solver", str(exc)) from None


def _variational_problem(pf: ProblemFile) -> variational.VariationalProblem:
    _require_kind(pf, "variational")
    L = _lagrangian(pf)
    if pf.q_a is None:
        raise ConfigError("boundary", "q_a is required")
    try:
        return variational.VariationalProblem(L, _alpha(pf), _grid(pf), pf.q_a, pf.q_b)
    except variational.VariationalError as exc:
        raise ConfigError("boundary", str(exc)) from None


def _generator(pf: ProblemFile, dim: int) -> noether.SymmetryGenerator:
    if pf.tau is None or pf.xi is None:
        raise ConfigError("generator", "section with 'tau' and 'xi' keys is required")
    if len(pf.xi) != dim:
        raise ConfigError("generator", f"xi needs {dim} components, got {len(pf.xi)}")
    try:
        return noether.SymmetryGenerator.parse(pf.tau, pf.xi)
    except (ExprError, noether.NoetherError) as exc:
        raise ConfigError("generator", str(exc)) from None


def _control_problem(pf: ProblemFile) -> optctrl.ControlProblem:
    if not pf.lagrangian:
        raise ConfigError("lagrangian", "section with an 'expression' key is required")
    if not pf.phi or not pf.rho:
        raise ConfigError("dynamics", "phi and rho are required for kind control")
    if pf.q_a is None:
        raise ConfigError("boundary", "q_a is required")
    alpha, grid = _alpha(pf), _grid(pf)
    try:
        return optctrl.ControlProblem.parse(
            pf.lagrangian, pf.phi, pf.rho, alpha, grid, pf.q_a, pf.controls, pf.frac_controls
        )
    except ExprError as exc:
        raise ConfigError("dynamics", str(exc)) from None
    except optctrl.ControlError as exc:
        raise ConfigError("dynamics", str(exc)) from None


def _read_tuple(pf: ProblemFile, cp: optctrl.ControlProblem) -> optctrl.PontryaginTuple:
    if pf.tuple_file is None:
        raise ConfigError("tuple", "kind control needs a [tuple] file with q, u, mu, p, p_alpha columns")
    try:
        data = np.genfromtxt(pf.tuple_file, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError("tuple", f"cannot read {pf.tuple_file}: {exc}") from None
    if data.ndim != 1 or data.shape[0] != cp.grid.n_nodes:
        raise ConfigError("tuple", f"file must have {cp.grid.n_nodes} data rows to match n_nodes")

    def block(prefix: str, count: int) -> GridFunction:
        names = [f"{prefix}{i}" for i in range(1, count + 1)]
        missing = [n for n in names if n not in data.dtype.names]
        if missing:
            raise ConfigError("tuple", f"missing column {missing[0]!r}")
        try:
            return GridFunction(cp.grid, np.column_stack([data[n] for n in names]))
        except FracOpsError as exc:
            raise ConfigError("tuple", f"column {prefix}: {exc}") from None

    try:
        return optctrl.PontryaginTuple(
            block("q", cp.dim),
            block("u", cp.n_controls),
            block("mu", cp.n_frac_controls),
            block("p", cp.dim),
            block("p_alpha", cp.dim),
        )
    except optctrl.ControlError as exc:
        raise ConfigError("tuple", str(exc)) from None


# -- output ---------------------------------------------------------------------


class Run:
    """Collects summary values and CSV artifacts for one invocation."""

    def __init__(self, directory: Path, digits: int):
        if not 1 <= digits <= DEFAULT_DIGITS:
            raise ConfigError("output", f"precision must lie in [1, {DEFAULT_DIGITS}], got {digits}")
        self.directory = directory
        self.digits = digits
        self.summary: dict[str, object] = {}
        self.started = time.perf_counter()

    def csv(self, name: str, columns) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = write_table(self.directory / name, columns, self.digits)
        self.summary.setdefault("artifacts", [])
        self.summary["artifacts"].append(path.name)
        return path

    def finish(self, stream=None) -> None:
        stream = stream or sys.stdout
        self.summary["wall_seconds"] = time.perf_counter() - self.started
        lines = []
        for key, value in self.summary.items():
            if isinstance(value, list):
                value = ";".join(value)
            elif isinstance(value, (float, np.floating)):
                value = repr(float(value))
            lines.append(f"{key}={value}")
        text = "\n".join(lines) + "\n"
        stream.write(text)
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / "summary.txt").write_text(text)


def _trajectory_columns(vp, q: GridFunction) -> dict[str, np.ndarray]:
    tr = variational.trajectory(vp, q)
    cols = {"t": vp.grid.nodes}
    for prefix, arr in (("q", tr.q), ("v", tr.v), ("w", tr.w)):
        for i in range(arr.shape[1]):
            cols[f"{prefix}{i + 1}"] = arr[:, i]
    return cols


def _record_solve(run: Run, vp, result: variational.SolveResult) -> None:
    run.summary["objective"] = result.objective
    run.summary["gradient_norm"] = result.gradient_norm
    run.summary["iterations"] = result.iterations
    run.csv("trajectory.csv", _trajectory_columns(vp, result.q))


def _record_drift(run: Run, report: noether.DriftReport, prefix: str = "") -> None:
    run.summary[f"{prefix}drift_abs"] = report.drift_abs
    run.summary[f"{prefix}drift_rel"] = report.drift_rel
    run.summary[f"{prefix}dCdt_sup"] = report.dCdt_sup
    if not prefix:
        run.summary["tail_estimate"] = report.tail_estimate


# -- subcommands ----------------------------------------------------------------


def cmd_frac_op(pf: ProblemFile, args, run: Run) -> None:
    grid = _grid(pf, default_n=101)
    if args.op == "classical":
        op = fracops.classical_derivative_op(grid)
    else:
        order = args.order if args.order is not None else pf.alpha
        if order is None:
            raise ConfigError("problem", "operator order is required (--order or alpha)")
        try:
            op = OPERATORS[args.op](grid, order)
        except FracOpsError as exc:
            raise ConfigError("problem", str(exc)) from None
    run.directory.mkdir(parents=True, exist_ok=True)
    path = run.directory / "weights.csv"
    op.dump_csv(path)
    run.summary["operator"] = op.kind.value
    run.summary["order"] = float(op.order)
    run.summary["n_nodes"] = grid.n_nodes
    run.summary["artifacts"] = [path.name]


def cmd_solve(pf: ProblemFile, args, run: Run) -> None:
    vp = _variational_problem(pf)
    result = variational.minimize_functional(vp, _options(pf))
    _record_solve(run, vp, result)


def cmd_check_el(pf: ProblemFile, args, run: Run) -> None:
    vp = _variational_problem(pf)
    result = variational.minimize_functional(vp, _options(pf))
    _record_solve(run, vp, result)
    report = variational.el_residual(vp, result.q)
    run.summary["el_interior_sup"] = report.interior_sup_norm
    run.summary["el_l2"] = report.l2_norm
    cols = {"t": vp.grid.nodes}
    for i in range(vp.dim):
        cols[f"residual{i + 1}"] = report.residual.values[:, i]
    run.csv("el_residual.csv", cols)
    run.summary["gradient_check"] = variational.discrete_gradient_check(vp, result.q)


def cmd_check_noether(pf: ProblemFile, args, run: Run) -> None:
    vp = _variational_problem(pf)
    gen = _generator(pf, vp.dim)
    result = variational.minimize_functional(vp, _options(pf))
    _record_solve(run, vp, result)
    run.summary["el_interior_sup"] = variational.el_residual(vp, result.q).interior_sup_norm
    try:
        report = noether.conserved_quantity(vp.lagrangian, gen, result.q, vp.alpha, pf.truncation)
    except fracops.TruncationOrderError as exc:
        raise ConfigError("noether", str(exc)) from None
    _record_drift(run, report)
    run.summary["truncation"] = report.truncation_order
    run.csv("noether.csv", noether.terms_columns(report))
    fail_on(run, args, report.drift_rel)


def _lq_tuple(pf: ProblemFile, run: Run):
    grid = _grid(pf, default_n=501)
    if (pf.a, pf.b) != (0.0, 1.0):
        raise ConfigError("problem", "the lq example is posed on interval 0 1")
    alpha = _alpha(pf, default=0.5)
    q0 = pf.q_a[0] if pf.q_a else 1.0
    if pf.q_a is not None and len(pf.q_a) != 1:
        raise ConfigError("boundary", "the lq example has a scalar state")
    result = optctrl.lq_example(alpha, grid, q0, _options(pf))
    run.summary["alpha"] = alpha
    run.summary["n_nodes"] = grid.n_nodes
    run.summary["q0"] = float(q0)
    run.summary["objective"] = result.objective
    run.summary["initial_objective"] = result.initial_objective
    run.summary["constant_objective"] = result.constant_objective
    run.summary["gradient_norm"] = result.solve.gradient_norm
    run.summary["iterations"] = result.solve.iterations
    return result.problem, result.tuple


def _record_pmp(run: Run, cp, tup) -> float:
    residuals = optctrl.pontryagin_residuals(cp, tup)
    for key, value in residuals.as_dict().items():
        run.summary[f"residual_{key}"] = value
    run.summary["residual_max"] = residuals.worst
    drift = None
    if optctrl.explicit_time_path(cp) is None:
        invariant = optctrl.autonomous_invariant(cp, tup)
        weighted = optctrl.alpha_weighted_hamiltonian(cp, tup)
        _record_drift(run, weighted)
        _record_drift(run, invariant, prefix="invariant_")
        drift = weighted.drift_rel
        run.csv("tuple.csv", optctrl.tuple_columns(cp, tup))
    else:
        run.summary["autonomous"] = "no"
    return drift


def cmd_lq_example(pf: ProblemFile, args, run: Run) -> None:
    pf.kind = "lq_example"
    cp, tup = _lq_tuple(pf, run)
    fail_on(run, args, _record_pmp(run, cp, tup))


def cmd_check_pmp(pf: ProblemFile, args, run: Run) -> None:
    _require_kind(pf, "control", "lq_example")
    if pf.kind == "lq_example":
        cp, tup = _lq_tuple(pf, run)
    else:
        cp = _control_problem(pf)
        tup = _read_tuple(pf, cp)
    fail_on(run, args, _record_pmp(run, cp, tup))


def cmd_verify_ibp(pf: ProblemFile, args, run: Run) -> None:
    alpha = _alpha(pf, default=0.5)
    grid = _grid(pf, default_n=4001)
    t = grid.nodes
    if alpha == 1.0:
        f, g, label = np.sin(np.pi * (t - grid.a) / (grid.b - grid.a)), t, "sin(pi*s), t"
    else:
        f, g, label = (t - grid.a) * (grid.b - t), (t - grid.a) ** 2, "(t-a)*(b-t), (t-a)^2"
    run.summary["pair"] = label
    run.summary["alpha"] = alpha
    run.summary["n_nodes"] = grid.n_nodes
    run.summary["residual"] = fracops.ibp_residual(GridFunction(grid, f), GridFunction(grid, g), alpha)


def cmd_transfer(pf: ProblemFile, args, run: Run) -> None:
    alpha = _alpha(pf, default=0.5)
    grid = _grid(pf, default_n=2001)
    t = grid.nodes - grid.a
    R = pf.truncation
    try:
        residual, tail = noether.transfer_series_residual(GridFunction(grid, t), GridFunction(grid, t**2), alpha, R)
    except fracops.TruncationOrderError as exc:
        raise ConfigError("noether", str(exc)) from None
    run.summary["pair"] = "t-a, (t-a)^2"
    run.summary["alpha"] = alpha
    run.summary["n_nodes"] = grid.n_nodes
    run.summary["truncation"] = R
    run.summary["residual"] = residual
    run.summary["tail_estimate"] = tail


class DriftExceeded(Exception):
    pass


def fail_on(run: Run, args, drift: Optional[float]) -> None:
    threshold = getattr(args, "fail_above", None)
    if threshold is not None and drift is not None and drift > threshold:
        run.summary["status"] = f"drift_rel {drift!r} exceeds --fail-above {threshold!r}"
        raise DriftExceeded(run.summary["status"])


COMMANDS = {
    "frac-op": cmd_frac_op,
    "solve": cmd_solve,
    "check-el": cmd_check_el,
    "check-noether": cmd_check_noether,
    "check-pmp": cmd_check_pmp,
    "lq-example": cmd_lq_example,
    "verify-ibp": cmd_verify_ibp,
    "transfer": cmd_transfer,
}

NEEDS_FILE = {"solve", "check-el", "check-noether", "check-pmp"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracnoether", description="Fractional variational calculus toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("file", nargs="?", type=Path, help="INI problem file")
        p.add_argument("--alpha", type=float)
        p.add_argument("--n", type=int, help="number of grid nodes")
        p.add_argument("--a", type=float)
        p.add_argument("--b", type=float)
        p.add_argument("--output-dir", type=Path)
        p.add_argument("--precision", type=int, help="significant digits in CSV output")
        if name in ("solve", "check-el", "check-noether", "check-pmp", "lq-example"):
            p.add_argument("--tol", type=float)
            p.add_argument("--max-iter", dest="max_iter", type=int)
            p.add_argument("--init", choices=("linear", "constant"))
            p.add_argument("--method", choices=("newton", "gradient"))
        if name in ("check-noether", "check-pmp", "lq-example"):
            p.add_argument("--fail-above", dest="fail_above", type=float, help="exit 4 if drift_rel exceeds this")
        if name in ("check-noether", "transfer"):
            p.add_argument("--R", type=int, help="series truncation order")
        if name in ("lq-example", "check-pmp"):
            p.add_argument("--q0", type=float)
        if name == "frac-op":
            p.add_argument("--op", choices=(*OPERATORS, "classical"), default="left-derivative")
            p.add_argument("--order", type=float)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        if args.command in NEEDS_FILE and args.file is None:
            raise ConfigError("problem", f"{args.command} needs a problem file")
        pf = apply_flags(load_problem(args.file), args)
        run = Run(output_dir(args, pf), pf.precision)
        COMMANDS[args.command](pf, args, run)
    except DriftExceeded as exc:
        run.finish()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DRIFT
    except variational.SolverError as exc:
        print(f"error: [solver] {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ExprError, FracOpsError, variational.VariationalError, noether.NoetherError, optctrl.ControlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run.finish()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
