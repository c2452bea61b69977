"""Independent reference values computed with mpmath at 30 digits.

Closed forms are used for speed; each one is cross-checked against direct
quadrature of the defining integral in the tests that rely on it.
"""

import mpmath as mp
import numpy as np

mp.mp.dps = 30


def left_integral_power(beta, order, t):
    """Left RL integral from 0 of s**beta."""
    return mp.gamma(beta + 1) / mp.gamma(beta + 1 + order) * mp.mpf(t) ** (beta + order)


def left_derivative_power(beta, alpha, t):
    return mp.gamma(beta + 1) / mp.gamma(beta + 1 - alpha) * mp.mpf(t) ** (beta - alpha)


def left_integral_quad(fn, order, t, a=0):
    # x = (t - s)**order turns the weakly singular kernel into a constant
    t = mp.mpf(t)
    top = (t - a) ** order
    return mp.quad(lambda x: fn(t - x ** (1 / mp.mpf(order))), [0, top]) / mp.gamma(order + 1)


def right_integral_quad(fn, order, t, b=1):
    t = mp.mpf(t)
    top = (b - t) ** order
    return mp.quad(lambda x: fn(t + x ** (1 / mp.mpf(order))), [0, top]) / mp.gamma(order + 1)


def left_derivative_quad(fn, alpha, t, a=0):
    return mp.diff(lambda x: left_integral_quad(fn, 1 - alpha, x, a), t)


def right_derivative_quad(fn, alpha, t, b=1):
    return -mp.diff(lambda x: right_integral_quad(fn, 1 - alpha, x, b), t)


def as_array(fn, ts):
    return np.array([float(fn(t)) for t in ts])


# -- polynomials: coefficients in powers of (t - a) on the left, (b - t) on the right


def poly_left_derivative(coeffs, alpha, t, a=0):
    x = mp.mpf(t) - a
    return sum(c * mp.gamma(k + 1) / mp.gamma(k + 1 - alpha) * x ** (k - alpha) for k, c in enumerate(coeffs) if c)


def poly_right_derivative(coeffs, alpha, t, b=1):
    x = b - mp.mpf(t)
    return sum(c * mp.gamma(k + 1) / mp.gamma(k + 1 - alpha) * x ** (k - alpha) for k, c in enumerate(coeffs) if c)


def poly(coeffs, x):
    return sum(c * mp.mpf(x) ** k for k, c in enumerate(coeffs))


def ibp_sides(f_right, g_left, alpha):
    """Left and right sides of fractional integration by parts on [0, 1].

    ``f_right`` holds coefficients of f in powers of (1 - t), ``g_left`` those
    of g in powers of t.
    """
    f = lambda t: poly(f_right, 1 - t)
    g = lambda t: poly(g_left, t)
    lhs = mp.quad(lambda t: f(t) * poly_left_derivative(g_left, alpha, t), [0, 1])
    rhs = mp.quad(lambda t: g(t) * poly_right_derivative(f_right, alpha, t), [0, 1])
    return lhs, rhs


def interior_rel_error(numeric, exact, grid):
    """Largest interior error scaled by the largest interior magnitude of the exact profile."""
    window = grid.interior
    err = np.max(np.abs(np.asarray(numeric)[window] - np.asarray(exact)[window]))
    return float(err / np.max(np.abs(np.asarray(exact)[window])))
