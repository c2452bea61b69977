import mpmath as mp
import numpy as np
import pytest
from scipy.special import gamma

from fracnoether import fracops
from fracnoether.exprdsl import Lagrangian, parse
from fracnoether.fracops import GridFunction, TruncationOrderError, build_grid
from fracnoether.noether import (
    NoetherError,
    SymmetryGenerator,
    conserved_quantity,
    drift_of,
    invariance_residual,
    momentum_quantity,
    naive_energy,
    series_terms,
    terms_columns,
    transfer_series_residual,
)
from fracnoether.variational import VariationalProblem, solve_extremal

from oracles import left_integral_quad, right_integral_quad


def gf(grid, values):
    return GridFunction(grid, values)


def test_generator_validation():
    gen = SymmetryGenerator.parse("1", ["q1", "t*q2"])
    assert gen.dim == 2
    with pytest.raises(Exception):
        SymmetryGenerator.parse("v1", ["0"])


def test_drift_statistics():
    g = build_grid(0, 1, 501)
    assert drift_of(gf(g, np.full(501, 3.0))).drift_abs == 0.0
    assert drift_of(gf(g, g.nodes)).drift_abs == pytest.approx(1 - 20 * g.h, abs=1e-12)
    s = np.sin(2 * np.pi * g.nodes)
    window = s[g.interior]
    stats = drift_of(gf(g, s))
    assert stats.drift_abs == pytest.approx(np.max(np.abs(window - window[0])), abs=1e-15)
    assert stats.drift_rel == stats.drift_abs / max(1.0, abs(window[0]))
    assert stats.dCdt_sup == pytest.approx(2 * np.pi, rel=1e-3)


# -- invariance -------------------------------------------------------------------


def test_invariance_residual_examples():
    g = build_grid(0, 1, 2001)
    q = gf(g, np.sin(g.nodes))
    assert invariance_residual(Lagrangian.parse("0.5*v1^2", 1), SymmetryGenerator.parse("0", ["0"]), q, 0.5) == 0.0
    free = invariance_residual(Lagrangian.parse("0.5*v1^2", 1), SymmetryGenerator.parse("0", ["1"]), q, 0.5)
    assert free <= 1e-10
    L = Lagrangian.parse("0.5*(v1^2 + w1^2)", 1)
    res = invariance_residual(L, SymmetryGenerator.parse("0", ["1"]), q, 0.5)
    w = fracops.left_rl_derivative_op(g, 0.5).weights @ q.column()
    t = g.nodes[g.interior]
    expected = np.max(np.abs(w[g.interior] * t**-0.5 / gamma(0.5)))
    assert res > 0.1 and res == pytest.approx(expected, rel=2e-2)


def test_invariance_residual_rejects_time_generators():
    g = build_grid(0, 1, 101)
    with pytest.raises(NoetherError):
        invariance_residual(Lagrangian.parse("v1^2", 1), SymmetryGenerator.parse("1", ["0"]), gf(g, g.nodes), 0.5)


# -- transfer formula ---------------------------------------------------------------


def test_transfer_zero_function():
    g = build_grid(0, 1, 201)
    assert transfer_series_residual(gf(g, np.zeros(201)), gf(g, g.nodes**2), 0.5, 3) == (0.0, 0.0)


def test_transfer_polynomial_pair():
    results = {}
    for n in (1001, 2001):
        g = build_grid(0, 1, n)
        results[n] = transfer_series_residual(gf(g, g.nodes), gf(g, g.nodes**2), 0.5, 3)
    residual, tail = results[2001]
    assert residual <= 5e-2 and tail <= 1e-8
    assert results[2001][0] < results[1001][0]


def test_transfer_series_against_quadrature():
    # continuum S_3 for f = t, g = t^2 at alpha = 0.5; its derivative is the left-hand side
    alpha = 0.5
    f, df = (lambda s: s), (lambda s: 1)
    g_, dg, d2g = (lambda s: s**2), (lambda s: 2 * s), (lambda s: 2)

    def series(t):
        t = mp.mpf(t)
        total = g_(t) * left_integral_quad(f, 1 - alpha, t) + f(t) * right_integral_quad(g_, 1 - alpha, t)
        total += -dg(t) * left_integral_quad(f, 2 - alpha, t) + df(t) * right_integral_quad(g_, 2 - alpha, t)
        total += d2g(t) * left_integral_quad(f, 3 - alpha, t)
        return total

    t0 = mp.mpf("0.4")
    d_left = mp.mpf(t0) ** (1 - alpha) / mp.gamma(2 - alpha)
    # t^2 = 1 - 2(1-t) + (1-t)^2, differentiated from the right
    u = 1 - t0
    d_right = sum(c * mp.gamma(k + 1) / mp.gamma(k + 1 - alpha) * u ** (k - alpha) for k, c in enumerate([1, -2, 1]))
    lhs = t0**2 * d_left - t0 * d_right
    assert abs(mp.diff(series, t0) - lhs) < 1e-12

    g = build_grid(0, 1, 2001)
    terms = np.sum(series_terms(g, g.nodes, g.nodes**2, alpha, 3), axis=0)
    k = 800
    assert terms[k] == pytest.approx(float(series(g.nodes[k])), abs=1e-5)


def test_transfer_residual_non_increasing_in_R():
    g = build_grid(0, 1, 1001)
    f = gf(g, g.nodes**2)
    res = [transfer_series_residual(f, f, 0.25, R)[0] for R in (1, 2, 3)]
    # the order-3 term vanishes exactly for t^2; a tie is only resolvable down to the
    # rounding carried by a third difference quotient, eps / h^3
    tie = np.finfo(float).eps / g.h**3
    assert res[1] <= res[0] + tie and res[2] <= res[1] + tie
    assert res[1] < 0.01 * res[0]


def test_transfer_rejects_truncation_order():
    g = build_grid(0, 1, 101)
    f = gf(g, g.nodes)
    for R in (0, 6, 1.5):
        with pytest.raises(TruncationOrderError):
            transfer_series_residual(f, f, 0.5, R)


# -- conserved quantities -------------------------------------------------------------


def test_free_particle_energy_and_momentum():
    g = build_grid(0, 1, 201)
    q = gf(g, g.nodes)
    L = Lagrangian.parse("0.5*v1^2", 1)
    energy = conserved_quantity(L, SymmetryGenerator.parse("1", ["0"]), q, 1.0)
    assert np.allclose(energy.interior_values, -0.5, atol=1e-12) and energy.drift_abs <= 1e-8
    momentum = conserved_quantity(L, SymmetryGenerator.parse("0", ["1"]), q, 1.0)
    assert np.allclose(momentum.interior_values, 1.0, atol=1e-12) and momentum.drift_abs <= 1e-8


def test_classical_limit_series_terms_vanish():
    g = build_grid(0, 1, 201)
    L = Lagrangian.parse("0.5*v1^2 + q1", 1)
    p = VariationalProblem(L, 1.0, g, [0], [0])
    q = solve_extremal(p)
    rep = conserved_quantity(L, SymmetryGenerator.parse("1", ["q1"]), q, 1.0, R=3)
    for r in range(4):
        assert np.max(np.abs(rep.parts[f"term_r{r}"])) <= 1e-14
    tr_v = fracops.classical_derivative_op(g).weights @ q.column()
    expected = q.column() * tr_v + (0.5 * tr_v**2 + q.column() - tr_v**2)
    assert np.max(np.abs(rep.C.column() - expected)) <= 1e-12


def test_tau_free_quantity_matches_termwise_sum():
    g = build_grid(0, 1, 401)
    L = Lagrangian.parse("0.5*(v1^2 + v2^2) + 0.5*(w1 - w2)^2 + q1*w2", 2)
    q = gf(g, np.column_stack([np.sin(g.nodes), np.cos(2 * g.nodes)]))
    gen = SymmetryGenerator.parse("0", ["1", "t*q2"])
    rep = conserved_quantity(L, gen, q, 0.6, R=2)
    direct = momentum_quantity(L, gen.xi, q, 0.6, R=2)
    assert np.max(np.abs(rep.C.column() - direct)) <= 1e-12


def test_quantity_is_additive_in_the_generator():
    g = build_grid(0, 1, 401)
    L = Lagrangian.parse("0.5*(v1^2 + w1^2)", 1)
    q = gf(g, g.nodes**1.5)
    a = SymmetryGenerator.parse("1", ["t"])
    b = SymmetryGenerator.parse("t", ["q1"])
    both = SymmetryGenerator.parse("1 + t", ["t + q1"])
    sums = conserved_quantity(L, a, q, 0.7).C.column() + conserved_quantity(L, b, q, 0.7).C.column()
    assert np.max(np.abs(conserved_quantity(L, both, q, 0.7).C.column() - sums)) <= 1e-10


def test_translation_invariant_pair_conserves_total_momentum():
    # L depends on w only through w1 - w2, so (xi1, xi2) = (1, 1) is an exact symmetry
    g = build_grid(0, 1, 1001)
    L = Lagrangian.parse("0.5*(v1^2 + v2^2) + 0.5*(w1 - w2)^2", 2)
    p = VariationalProblem(L, 0.6, g, [0, 0], [1, -1])
    q = solve_extremal(p)
    gen = SymmetryGenerator.parse("0", ["1", "1"])
    assert invariance_residual(L, gen, q, 0.6) <= 1e-10
    rep = conserved_quantity(L, gen, q, 0.6)
    assert rep.drift_rel <= 1e-6


def _mixed(n):
    g = build_grid(0, 1, n)
    L = Lagrangian.parse("0.5*(v1^2 + w1^2)", 1)
    q = solve_extremal(VariationalProblem(L, 0.9, g, [0], [1]))
    return conserved_quantity(L, SymmetryGenerator.parse("1", ["0"]), q, 0.9), naive_energy(L, q, 0.9)


@pytest.mark.xfail(strict=True, reason="the alpha-corrected energy is not conserved along the extremal (see ledger)")
def test_mixed_energy_beats_naive_energy():
    full, naive = _mixed(1001)
    assert full.drift_rel * 3 <= naive.drift_rel


def test_truncation_and_export():
    g = build_grid(0, 1, 101)
    L = Lagrangian.parse("0.5*(v1^2 + w1^2)", 1)
    q = gf(g, g.nodes)
    with pytest.raises(TruncationOrderError):
        conserved_quantity(L, SymmetryGenerator.parse("1", ["0"]), q, 0.5, R=6)
    rep = conserved_quantity(L, SymmetryGenerator.parse("1", ["1"]), q, 0.5, R=2)
    cols = terms_columns(rep)
    assert list(cols) == ["t", "C", "term_r0", "term_r1", "term_r2", "tau_part"]
    assert rep.tail_estimate >= 0 and rep.drift_abs >= 0


def test_generator_domain_error_is_reported():
    g = build_grid(0, 1, 101)
    L = Lagrangian.parse("0.5*v1^2", 1)
    q = gf(g, g.nodes - 0.5)
    with pytest.raises(NoetherError, match="node 0"):
        conserved_quantity(L, SymmetryGenerator.parse("0", ["ln(q1)"]), q, 1.0)
