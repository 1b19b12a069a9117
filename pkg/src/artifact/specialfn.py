"""Special functions used by the estimator and the chaos coefficients.

Probabilists' Hermite polynomials, the elliptic integral
``I(lam) = int_0^{pi/2} sqrt(cos^2 t + lam^2 sin^2 t) dt`` and its derivative,
the map ``F(lam, theta)`` with its partial derivatives, the Gaussian half
moments ``F_p`` and product moments ``G_q``, a Gauss hypergeometric series in
integral normalization, and Beta/log-Gamma wrappers.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special as sp

HERMITE_MAX_ORDER = 64
MOMENT_MAX_ORDER = 32
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class FPoint(NamedTuple):
    """Image of ``(lam, theta)`` under F, in the basis ``(v*, v**)``."""

    x: float
    y: float


class JacobianValue(NamedTuple):
    value: float
    degenerate: bool


# ---------------------------------------------------------------------------
# Hermite polynomials
# ---------------------------------------------------------------------------

def hermite(k: int, x):
    """Probabilists' Hermite polynomial ``H_k(x)`` by the three-term recurrence."""
    if k < 0 or k > HERMITE_MAX_ORDER:
        raise ValueError(f"hermite order {k} outside [0, {HERMITE_MAX_ORDER}]")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for j in range(1, k):
        h_prev, h = h, x * h - j * h_prev
    return h if h.ndim else float(h)


def hermite_table(kmax: int, x) -> np.ndarray:
    """All ``H_0 .. H_kmax`` at ``x``; shape ``(kmax + 1,) + x.shape``."""
    if kmax < 0 or kmax > HERMITE_MAX_ORDER:
        raise ValueError(f"hermite order {kmax} outside [0, {HERMITE_MAX_ORDER}]")
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for j in range(1, kmax):
        out[j + 1] = x * out[j] - j * out[j - 1]
    return out


def hermite_monomial_coeffs(k: int) -> np.ndarray:
    """Ascending monomial coefficients of ``H_k``.

    Built from the explicit sums
    ``H_{2m}(x) = (2m)! sum_p (-2)^(p-m) x^(2p) / ((2p)! (m-p)!)`` and the odd
    analogue, which also serve as an independent check on the recurrence.
    """
    coeffs = np.zeros(k + 1)
    half, odd = divmod(k, 2)
    for p in range(half + 1):
        power = 2 * p + odd
        log_mag = (sp.gammaln(k + 1) - sp.gammaln(power + 1) - sp.gammaln(half - p + 1)
                   - (half - p) * math.log(2.0))
        sign = -1.0 if (half - p) % 2 else 1.0
        coeffs[power] = sign * math.exp(log_mag)
    return coeffs


# ---------------------------------------------------------------------------
# Elliptic integral I(lam)
# ---------------------------------------------------------------------------

def _check_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any((lam < 0.0) | (lam > 1.0)) or np.any(~np.isfinite(lam)):
        raise ValueError("lambda must lie in [0, 1]")
    return lam


def _k_minus_e_over_m(m):
    # (K(m) - E(m)) / m, with a power series near m = 0 where the difference
    # cancels: (pi/2) sum_n c_n^2 2n/(2n-1) m^(n-1), c_n = (2n)!/(4^n n!^2).
    m = np.asarray(m, dtype=float)
    out = np.empty_like(m)
    small = m < 0.05
    big = ~small
    out[big] = (sp.ellipk(m[big]) - sp.ellipe(m[big])) / m[big]
    if np.any(small):
        ms = m[small]
        acc = np.zeros_like(ms)
        c = 1.0
        term_pow = np.ones_like(ms)
        for n in range(1, 40):
            c *= (2 * n - 1) / (2 * n)
            acc += c * c * (2 * n) / (2 * n - 1) * term_pow
            term_pow = term_pow * ms
        out[small] = 0.5 * math.pi * acc
    return out


def elliptic_I(lam, want_derivative: bool = False):
    """``I(lam)`` or, with ``want_derivative``, ``I'(lam)``.

    ``I(lam) = E(1 - lam^2)`` with ``E`` the complete elliptic integral of the
    second kind (parameter convention), and
    ``I'(lam) = lam (K(m) - E(m)) / m`` with ``m = 1 - lam^2``.
    """
    lam = _check_lambda(lam)
    m = 1.0 - lam * lam
    if want_derivative:
        val = lam * _k_minus_e_over_m(np.atleast_1d(m)).reshape(m.shape)
    else:
        val = sp.ellipe(m)
    return val if np.ndim(val) else float(val)


# ---------------------------------------------------------------------------
# The map F and its derivatives
# ---------------------------------------------------------------------------

def _check_f_domain(lam, theta, open_theta=False):
    if not (0.0 < lam <= 1.0):
        raise ValueError("lambda must lie in (0, 1]")
    lo, hi = -0.5 * math.pi, 0.5 * math.pi
    if not (lo < theta <= hi) or (open_theta and theta >= hi):
        raise ValueError("theta_o must lie in (-pi/2, pi/2]")


def f_map(lam: float, theta: float) -> FPoint:
    """``F(lam, theta)``: the limit of ``(X_n, Y_n)``."""
    _check_f_domain(lam, theta)
    c, s = math.cos(theta), math.sin(theta)
    root = math.sqrt(c * c + lam * lam * s * s)
    i_val = elliptic_I(lam)
    return FPoint(root / i_val, s * c * (lam * lam - 1.0) / (i_val * root))


def f_partials(lam: float, theta: float) -> np.ndarray:
    """Closed-form matrix ``[[dF1/dlam, dF1/dtheta], [dF2/dlam, dF2/dtheta]]``."""
    c, s = math.cos(theta), math.sin(theta)
    l2 = lam * lam
    d2 = c * c + l2 * s * s
    root = math.sqrt(d2)
    i_val = elliptic_I(lam)
    ip = elliptic_I(lam, want_derivative=True)
    d1_dl = (lam * s * s * i_val - d2 * ip) / (i_val * i_val * root)
    d1_dt = (l2 - 1.0) * s * c / (i_val * root)
    d2_dl = s * c * ((lam * i_val - (l2 - 1.0) * ip) * d2 + lam * i_val) / (i_val * i_val * d2 * root)
    d2_dt = (l2 - 1.0) * (c ** 4 - l2 * s ** 4) / (i_val * d2 * root)
    return np.array([[d1_dl, d1_dt], [d2_dl, d2_dt]])


def jacobian_F(lam: float, theta: float) -> JacobianValue:
    """Jacobian determinant of F in the bracketed closed form.

    It vanishes exactly at ``lam = 1``, which is reported as degenerate.
    """
    if lam == 1.0:
        return JacobianValue(0.0, True)
    _check_f_domain(lam, theta, open_theta=True)
    c, s = math.cos(theta), math.sin(theta)
    l2 = lam * lam
    i_val = elliptic_I(lam)
    ip = elliptic_I(lam, want_derivative=True)
    value = (1.0 - l2) * (lam * s * s * i_val + (c * c - l2 * s * s) * ip) / (
        i_val ** 3 * (c * c + l2 * s * s))
    return JacobianValue(value, False)


def c_matrix(lam: float, theta: float) -> np.ndarray:
    """``C(lam, theta)``: the inverse of the derivative of F."""
    jac = jacobian_F(lam, theta)
    if jac.degenerate:
        raise ValueError("C(lambda, theta) undefined at lambda = 1")
    d = f_partials(lam, theta)
    return np.array([[d[1, 1], -d[0, 1]], [-d[1, 0], d[0, 0]]]) / jac.value


# ---------------------------------------------------------------------------
# Gaussian moments
# ---------------------------------------------------------------------------

def half_moment_Fp(p: int, a: float) -> float:
    """``F_p(a) = int_a^inf z^(2p+1) phi(z) dz``."""
    if p < 0 or p > MOMENT_MAX_ORDER:
        raise ValueError(f"p outside [0, {MOMENT_MAX_ORDER}]")
    total = 0.0
    for k in range(p + 1):
        total += 2.0 ** k * math.exp(sp.gammaln(p + 1) - sp.gammaln(p - k + 1)) * a ** (2 * (p - k))
    return _INV_SQRT_2PI * math.exp(-0.5 * a * a) * total


def gaussian_product_moment_Gq(q: int, x: float) -> float:
    """``G_q(x) = int y^(2q) phi(y) phi(x y) dy``."""
    if q < 0 or q > MOMENT_MAX_ORDER:
        raise ValueError(f"q outside [0, {MOMENT_MAX_ORDER}]")
    log_df = sp.gammaln(2 * q + 1) - q * math.log(2.0) - sp.gammaln(q + 1)
    return _INV_SQRT_2PI * (1.0 + x * x) ** (-(q + 0.5)) * math.exp(log_df)


# ---------------------------------------------------------------------------
# Gamma, Beta, hypergeometric series
# ---------------------------------------------------------------------------

def log_gamma(x: float) -> float:
    if x <= 0:
        raise ValueError("log_gamma needs a positive argument")
    return float(sp.gammaln(x))


def beta(x: float, y: float) -> float:
    if x <= 0 or y <= 0:
        raise ValueError("beta needs positive arguments")
    return math.exp(sp.gammaln(x) + sp.gammaln(y) - sp.gammaln(x + y))


def gauss_hypergeometric(a: float, b: float, c: float, z: float, max_terms: int = 100_000) -> float:
    """``int_0^1 u^(b-1) (1-u)^(c-b-1) (1-uz)^(-a) du`` as a power series in z.

    This is ``B(b, c-b) 2F1(a, b; c; z)``; the series is summed term by term
    until a term drops below ``1e-16`` of the partial sum.
    """
    if not (abs(z) < 1.0 and 0.0 < b < c and a > 0.0):
        raise ValueError("need |z| < 1, 0 < b < c and a > 0")
    # n = 0 term is Gamma(c-b) Gamma(b) / Gamma(c); later terms by ratio.
    term = math.exp(sp.gammaln(c - b) + sp.gammaln(b) - sp.gammaln(c))
    total = term
    for n in range(max_terms):
        term *= (a + n) * (b + n) / ((c + n) * (n + 1)) * z
        total += term
        if abs(term) < 1e-16 * abs(total):
            return total
    raise RuntimeError("hypergeometric series did not converge")
