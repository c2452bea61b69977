import numpy as np
import pytest

from fracnoether import fracops
from fracnoether.exprdsl import Lagrangian
from fracnoether.fracops import GridFunction, build_grid
from fracnoether.noether import SymmetryGenerator
from fracnoether.optctrl import (
    ControlError,
    ControlProblem,
    PontryaginTuple,
    alpha_weighted_hamiltonian,
    autonomous_invariant,
    control_conserved_quantity,
    fractional_correction,
    hamiltonian,
    lq_control_problem,
    lq_example,
    pontryagin_residuals,
    solve_lq_example,
    tuple_columns,
    tuple_from_extremal,
)
from fracnoether.variational import VariationalProblem, el_residual, solve_extremal


def const(grid, value, dim=1):
    return GridFunction(grid, np.full((grid.n_nodes, dim), float(value)))


def make_tuple(grid, q, u, mu, p, pa):
    return PontryaginTuple(*(const(grid, x) if np.isscalar(x) else GridFunction(grid, x) for x in (q, u, mu, p, pa)))


@pytest.fixture(scope="module")
def lq501():
    return lq_example(0.5, build_grid(0, 1, 501), 1.0)


def zero_problem(grid):
    return ControlProblem.parse("0", ["0"], ["0"], 0.5, grid, [0.0])


def test_problem_validation():
    g = build_grid(0, 1, 51)
    with pytest.raises(ControlError, match="alpha"):
        ControlProblem.parse("u1^2", ["u1"], ["mu1"], 1.0, g, [0])
    with pytest.raises(ControlError, match="phi"):
        ControlProblem.parse("u1^2", ["u1", "u1"], ["mu1"], 0.5, g, [0])
    with pytest.raises(ControlError, match="mu1"):
        ControlProblem.parse("u1^2", ["mu1"], ["mu1"], 0.5, g, [0])
    cp = lq_control_problem(0.5, g, 1.0)
    with pytest.raises(ControlError, match="q_a"):
        hamiltonian(cp, make_tuple(g, 0, 0, 0, 0, 0))


def test_hamiltonian_examples():
    g = build_grid(0, 1, 51)
    assert np.all(hamiltonian(zero_problem(g), make_tuple(g, 0, 0, 0, 0, 0)).column() == 0)
    cp = lq_control_problem(0.5, g, 1.0)
    tup = make_tuple(g, 1, 0, 0, 1, 1)
    assert np.allclose(hamiltonian(cp, tup).column(), -1.5, atol=0, rtol=1e-15)
    rng = np.random.default_rng(3)
    q = 1 + np.concatenate([[0], rng.normal(size=50)])
    u, mu, p, dp = (rng.normal(size=51) for _ in range(4))
    base = hamiltonian(cp, make_tuple(g, q, u, mu, p, 0.3))
    shifted = hamiltonian(cp, make_tuple(g, q, u, mu, p + dp, 0.3))
    assert np.allclose(shifted.column() - base.column(), dp * (u - q), rtol=1e-14, atol=1e-14)


def test_zero_problem_has_zero_residuals():
    g = build_grid(0, 1, 101)
    res = pontryagin_residuals(zero_problem(g), make_tuple(g, 0, 0, 0, 0, 0))
    assert res.worst == 0.0 and set(res.as_dict()) == {
        "state", "fractional_state", "costate", "control", "fractional_control"
    }


def test_zero_generator_gives_zero_quantity(lq501):
    rep = control_conserved_quantity(lq501.problem, lq501.tuple, SymmetryGenerator.parse("0", ["0"]))
    assert np.all(rep.C.column() == 0) and rep.drift_abs == 0


def test_reduction_from_variational_extremal():
    g = build_grid(0, 1, 501)
    vp = VariationalProblem(Lagrangian.parse("0.5*(v1^2 + w1^2) + q1", 1), 0.5, g, [0], [1])
    q = solve_extremal(vp)
    cp, tup = tuple_from_extremal(vp, q)
    res = pontryagin_residuals(cp, tup)
    el = el_residual(vp, q).interior_sup_norm
    assert res.control <= 1e-12 and res.fractional_control <= 1e-12
    assert res.state <= 1e-12 and res.fractional_state <= 1e-12
    assert res.costate <= 2 * el


def test_lq_residuals_at_501(lq501):
    res = pontryagin_residuals(lq501.problem, lq501.tuple)
    assert res.worst <= 5e-3


def test_lq_objective_bounds(lq501):
    assert 0 < lq501.objective <= lq501.constant_objective
    assert lq501.objective <= lq501.initial_objective


def test_lq_objective_grows_logarithmically():
    # q(0) = 1 forces D^0.5 q ~ 1/sqrt(pi t), so mu^2 / 2 ~ 1/(2 pi t) is not integrable
    # and each halving of h adds about ln(2) / (2 pi) to the discrete optimum
    objectives = [lq_example(0.5, build_grid(0, 1, n), 1.0).objective for n in (251, 501, 1001)]
    steps = np.diff(objectives)
    assert np.allclose(steps, np.log(2) / (2 * np.pi), rtol=0.1)


def test_lq_zero_initial_value():
    tup = solve_lq_example(0.5, build_grid(0, 1, 201), 0.0)
    for f in (tup.q, tup.u, tup.mu, tup.p, tup.p_alpha):
        assert np.max(np.abs(f.values)) <= 1e-12


def test_lq_rejects_other_intervals():
    with pytest.raises(ControlError):
        lq_example(0.5, build_grid(0, 2, 101), 1.0)


def test_time_generator_reproduces_the_autonomous_invariant(lq501):
    cp, tup = lq501.problem, lq501.tuple
    full = control_conserved_quantity(cp, tup, SymmetryGenerator.parse("1", ["0"]))
    auto = autonomous_invariant(cp, tup)
    assert np.max(np.abs(full.C.column() - auto.C.column())) <= 1e-12


def test_explicit_time_is_rejected():
    g = build_grid(0, 1, 51)
    cp = ControlProblem.parse("t*u1^2", ["u1"], ["mu1"], 0.5, g, [0])
    with pytest.raises(ControlError, match="lagrangian"):
        autonomous_invariant(cp, make_tuple(g, 0, 0, 0, 0, 0))
    cp = ControlProblem.parse("u1^2", ["u1"], ["mu1 + sin(t)"], 0.5, g, [0])
    with pytest.raises(ControlError, match=r"rho\[0\]"):
        autonomous_invariant(cp, make_tuple(g, 0, 0, 0, 0, 0))


def test_fractional_correction_limits(lq501):
    pa, dq = np.linspace(1, 2, 11), np.linspace(-3, 3, 11)
    assert np.all(fractional_correction(1.0, pa, dq) == 0)
    alpha = 1 - 1e-6
    g = lq501.problem.grid
    tup = lq501.tuple
    frac_dq = fracops.left_rl_derivative_op(g, alpha).weights @ tup.q.values
    corr = fractional_correction(alpha, tup.p_alpha.values, frac_dq)
    scale = np.max(np.abs(tup.p_alpha.values[:, 0] * frac_dq[:, 0]))
    assert np.max(np.abs(corr)) <= 1e-3 * scale


def test_hamiltonian_forms_agree_on_the_lq_tuple(lq501):
    # with rho = D^alpha q imposed exactly the two invariants coincide
    a = autonomous_invariant(lq501.problem, lq501.tuple).C.column()
    b = alpha_weighted_hamiltonian(lq501.problem, lq501.tuple).C.column()
    window = lq501.problem.grid.interior
    assert np.max(np.abs(a[window] - b[window])) <= 1e-8 * np.max(np.abs(a[window]))


@pytest.mark.xfail(strict=True, reason="mu carries a t^(-1/2) singularity from q(0) = 1, so the objective diverges (see ledger)")
def test_lq_drift_at_1001():
    r = lq_example(0.5, build_grid(0, 1, 1001), 1.0)
    assert alpha_weighted_hamiltonian(r.problem, r.tuple).drift_rel <= 2e-2


@pytest.mark.xfail(strict=True, reason="the alpha-weighted Hamiltonian does not settle under refinement (see ledger)")
def test_lq_drift_refines():
    drifts = [alpha_weighted_hamiltonian(r.problem, r.tuple).drift_rel
              for r in (lq_example(0.5, build_grid(0, 1, n), 1.0) for n in (1001, 2001))]
    assert drifts[1] * 1.4 <= drifts[0]


def test_tuple_columns(lq501):
    cols = tuple_columns(lq501.problem, lq501.tuple)
    assert list(cols) == ["t", "q1", "u1", "mu1", "p1", "p_alpha1", "H", "C_eq12", "C_eq13"]
    assert all(len(v) == 501 for v in cols.values())
