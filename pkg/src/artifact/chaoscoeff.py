"""Hermite-chaos coefficients ``a_f(k, u) = a_f(k1, k2) a(k3, u)`` of the level functionals.

Closed forms are provided for ``f*`` (both components) and for the constant
function ``1``; ``a_generic_quadrature`` computes any ``a_f(k1, k2)`` by an
independent polar quadrature and is used as the oracle for the closed forms
and as the fallback when ``omega* = v*^t P`` has a zero component.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import IsotropicCovariance, second_spectral_moment
from .fieldsim import AffineModel
from .levelcurve import fstar_eval
from .specialfn import beta, hermite, hermite_monomial_coeffs

MAX_PAIR_INDEX = 10
_OMEGA_EPS = 1e-14


def _lf(n: int) -> float:
    return math.lgamma(n + 1)


def _double_factorial_ratio(j: int) -> float:
    """``(2j)! / (2^j j!)``, i.e. ``E[G^(2j)]`` for a standard Gaussian G."""
    return math.exp(_lf(2 * j) - j * math.log(2.0) - _lf(j))


# ---------------------------------------------------------------------------
# Level factor a(k3, u)
# ---------------------------------------------------------------------------

def a_level(k3: int, u: float, rz0: float) -> float:
    """``a(k3, u) = H_k3(u / sqrt(rz0)) phi(u / sqrt(rz0)) / (k3! sqrt(rz0))``."""
    if rz0 <= 0:
        raise ValueError("rz0 must be positive")
    if k3 < 0 or k3 > 64:
        raise ValueError("k3 outside [0, 64]")
    x = u / math.sqrt(rz0)
    phi = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return hermite(k3, x) * phi / (math.exp(_lf(k3)) * math.sqrt(rz0))


# ---------------------------------------------------------------------------
# Closed forms for f*
# ---------------------------------------------------------------------------

def _a_sum(l1, l2, w1, w2, m, ell, mu):
    """Even-index triple sum ``A``, with the ratio powers folded into ``s1, s2``."""
    norm = math.hypot(l1 * w1, l2 * w2)
    s1, s2 = l1 * w1 / norm, l2 * w2 / norm
    terms = []
    for p in range(m + 1):
        cp = (-2.0) ** (p - m) / math.exp(_lf(2 * p) + _lf(m - p))
        for k in range(p + 1):
            ck = cp * 2.0 ** k * math.exp(_lf(p) - _lf(p - k)) * s2 ** (2 * (p - k))
            for n in range(ell + 1):
                cn = (-2.0) ** (n - ell) / math.exp(_lf(2 * n) + _lf(ell - n))
                terms.append(ck * cn * s1 ** (2 * n + 1) * _double_factorial_ratio(n + p - k))
    return math.sqrt(2.0 * mu / math.pi) * l1 * math.fsum(terms)


def _b_sum(l1, l2, w1, w2, m, ell, mu):
    """Odd-index triple sum ``B``, folded the same way."""
    norm = math.hypot(l1 * w1, l2 * w2)
    s1, s2 = l1 * w1 / norm, l2 * w2 / norm
    terms = []
    for p in range(ell + 1):
        cp = (-2.0) ** (p - ell) / math.exp(_lf(2 * p + 1) + _lf(ell - p))
        for k in range(p + 1):
            ck = cp * 2.0 ** k * math.exp(_lf(p) - _lf(p - k)) * s1 ** (2 * (p - k))
            for n in range(m + 1):
                cn = (-2.0) ** (n - m) / math.exp(_lf(2 * n + 1) + _lf(m - n))
                terms.append(ck * cn * s2 ** (2 * n + 3) * _double_factorial_ratio(p - k + n + 1))
    return math.sqrt(2.0 * mu / math.pi) * l1 * math.fsum(terms)


def omega_star(model: AffineModel) -> np.ndarray:
    """``omega* = v*^t P``: coordinates of ``v*`` in the eigenbasis."""
    return model.vstar_array @ model.p_matrix


def a_fstar(parity_case: str, m: int, ell: int, model: AffineModel, mu: float) -> np.ndarray:
    """``(a_{f1*}, a_{f2*})`` at ``(2m, 2l)`` ("even") or ``(2m+1, 2l+1)`` ("odd").

    Mixed parity ("mixed") is identically zero.
    """
    if parity_case == "mixed":
        return np.zeros(2)
    if parity_case not in ("even", "odd"):
        raise ValueError("parity_case must be 'even', 'odd' or 'mixed'")
    if not (0 <= m <= MAX_PAIR_INDEX and 0 <= ell <= MAX_PAIR_INDEX):
        raise ValueError(f"m and l must lie in [0, {MAX_PAIR_INDEX}]")
    w1, w2 = omega_star(model)
    k1, k2 = (2 * m, 2 * ell) if parity_case == "even" else (2 * m + 1, 2 * ell + 1)
    if abs(w1) < _OMEGA_EPS or abs(w2) < _OMEGA_EPS:
        return _fstar_quadrature(k1, k2, model, mu)
    l1, l2 = model.lambda1, model.lambda2
    if parity_case == "even":
        col = np.array([_a_sum(l1, l2, w1, w2, m, ell, mu), _a_sum(l2, l1, w2, w1, ell, m, mu)])
    else:
        col = np.array([_b_sum(l1, l2, w1, w2, m, ell, mu), _b_sum(l2, l1, w2, w1, ell, m, mu)])
    out = model.p_matrix @ col
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite coefficient")
    return out


# ---------------------------------------------------------------------------
# Closed form for the constant function
# ---------------------------------------------------------------------------

def _inner_series(p: int, q: int, lam: float, max_terms: int = 100_000) -> float:
    """``sum_n C(q+n,q) C(2q+2n,q+n) / C(2q,q) 4^-n (1-lam^2)^n / beta(p+q+n+1, 1/2)``."""
    x = 1.0 - lam * lam
    log_c2q = _lf(2 * q) - 2 * _lf(q)
    total = 0.0
    prev = math.inf
    for n in range(max_terms):
        log_t = (_lf(q + n) - _lf(q) - _lf(n) + _lf(2 * q + 2 * n) - 2 * _lf(q + n) - log_c2q
                 - 2 * n * math.log(2.0) - math.log(beta(p + q + n + 1, 0.5)))
        term = math.exp(log_t) * x ** n
        total += term
        if x == 0.0:
            return total
        if n > 0 and term <= prev and term < 1e-16 * total:
            return total
        prev = term
    raise RuntimeError("a_one series did not converge (lambda too small)")


def a_one(m: int, ell: int, model: AffineModel, mu: float) -> float:
    """``a_1(2m, 2l)``: the coefficient of the constant function (other parities vanish)."""
    if not (0 <= m <= MAX_PAIR_INDEX and 0 <= ell <= MAX_PAIR_INDEX):
        raise ValueError(f"m and l must lie in [0, {MAX_PAIR_INDEX}]")
    l1, l2 = model.lambda1, model.lambda2
    lam = l2 / l1
    terms = []
    for p in range(ell + 1):
        for q in range(m + 1):
            sign = -1.0 if (p + q) % 2 else 1.0
            binom = math.comb(ell, p) * math.comb(m, q)
            terms.append(sign * binom * l2 * lam ** (2 * q + 1) * _inner_series(p, q, lam))
    pref = math.sqrt(2.0 * math.pi * mu) * (-2.0) ** (-(m + ell)) / math.exp(_lf(m) + _lf(ell))
    return pref * math.fsum(terms)


def a_one_index(k1: int, k2: int, model: AffineModel, mu: float) -> float:
    if k1 % 2 or k2 % 2:
        return 0.0
    return a_one(k1 // 2, k2 // 2, model, mu)


def a_fstar_index(k1: int, k2: int, model: AffineModel, mu: float) -> np.ndarray:
    if (k1 + k2) % 2:
        return np.zeros(2)
    if k1 % 2 == 0:
        return a_fstar("even", k1 // 2, k2 // 2, model, mu)
    return a_fstar("odd", k1 // 2, k2 // 2, model, mu)


# ---------------------------------------------------------------------------
# Independent quadrature
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _gl_nodes(n: int):
    return np.polynomial.legendre.leggauss(n)


def _radial_factor(k1: int, k2: int, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``int_0^inf r^2 H_k1(r c) H_k2(r s) exp(-r^2/2) dr / (2 pi)`` for each direction."""
    h1 = hermite_monomial_coeffs(k1)
    h2 = hermite_monomial_coeffs(k2)
    out = np.zeros_like(c)
    for i, ci in enumerate(h1):
        if ci == 0.0:
            continue
        for j, cj in enumerate(h2):
            if cj == 0.0:
                continue
            deg = i + j + 2
            moment = 2.0 ** ((deg - 1) / 2.0) * math.gamma((deg + 1) / 2.0)
            out += ci * cj * moment * c ** i * s ** j
    return out / (2.0 * math.pi)


def a_generic_quadrature(f, k1: int, k2: int, model: AffineModel, mu: float, nodes: int = 48,
                         breaks=(), panels: int = 8):
    """``a_f(k1, k2) = sqrt(mu)/(k1! k2!) int f(P L y / |L y|) |L y| H_k1(y1) H_k2(y2) phi_2(y) dy``.

    Polar coordinates ``y = r (cos a, sin a)``: the radial integral is done
    exactly through Gaussian moments, the angular one by composite
    Gauss-Legendre with ``nodes`` points on each of ``panels`` panels per arc.
    ``breaks`` lists the angles where ``f`` jumps, so that every panel sees a
    smooth integrand. ``f`` maps unit vectors ``(S, 2)`` to ``(S,)`` or ``(S, d)``.
    """
    if nodes < 32:
        raise ValueError("nodes must be at least 32")
    cuts = sorted({float(b) % (2 * math.pi) for b in breaks} | {0.0}) + [2 * math.pi]
    edges = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a > 1e-15:
            edges.extend(np.linspace(a, b, panels + 1)[:-1].tolist())
    edges.append(2 * math.pi)
    x, w = _gl_nodes(nodes)
    lo, hi = np.array(edges[:-1]), np.array(edges[1:])
    alpha = (0.5 * (hi - lo)[:, None] * x[None, :] + 0.5 * (hi + lo)[:, None]).ravel()
    weight = (0.5 * (hi - lo)[:, None] * w[None, :]).ravel()

    c, s = np.cos(alpha), np.sin(alpha)
    ly = np.column_stack([model.lambda1 * c, model.lambda2 * s])
    ly_norm = np.hypot(ly[:, 0], ly[:, 1])
    direction = (ly @ model.p_matrix.T) / ly_norm[:, None]
    fvals = np.asarray(f(direction), dtype=float)
    radial = _radial_factor(k1, k2, c, s) * ly_norm * weight
    scale = math.sqrt(mu) / math.exp(_lf(k1) + _lf(k2))
    if fvals.ndim == 1:
        return scale * float(fvals @ radial)
    return scale * (radial @ fvals)


def fstar_breaks(model: AffineModel) -> tuple[float, float]:
    """Angles ``a`` where ``<L (cos a, sin a), omega*>`` changes sign."""
    w1, w2 = omega_star(model)
    a0 = math.atan2(-model.lambda1 * w1, model.lambda2 * w2)
    return a0, a0 + math.pi


def _fstar_quadrature(k1: int, k2: int, model: AffineModel, mu: float) -> np.ndarray:
    vstar = model.vstar_array
    return np.asarray(a_generic_quadrature(lambda nu: fstar_eval(nu, vstar), k1, k2, model, mu,
                                           nodes=64, breaks=fstar_breaks(model), panels=16))


# ---------------------------------------------------------------------------
# Coefficient table
# ---------------------------------------------------------------------------

@dataclass
class CoefficientTable:
    """Map ``(k1, k2, k3) -> (a_f1*, a_f2*, a_1)`` for all ``|k| <= Q`` at level ``u``."""

    max_order: int
    level: float
    entries: dict = field(default_factory=dict)
    pair: dict = field(default_factory=dict)  # (k1, k2) -> (a_f1*, a_f2*, a_1)
    summary: dict = field(default_factory=dict)

    def vector(self, k) -> np.ndarray:
        return np.asarray(self.entries[tuple(k)])

    def at_zero(self) -> np.ndarray:
        return self.vector((0, 0, 0))


@functools.lru_cache(maxsize=256)
def _pair_coefficients(model: AffineModel, mu: float, max_order: int) -> dict:
    out = {}
    for k1 in range(max_order + 1):
        for k2 in range(max_order + 1 - k1):
            af = a_fstar_index(k1, k2, model, mu)
            out[(k1, k2)] = (float(af[0]), float(af[1]), a_one_index(k1, k2, model, mu))
    return out


def build_table(model: AffineModel, cov: IsotropicCovariance, u: float, Q: int = 8) -> CoefficientTable:
    """All coefficients ``a_f(k, u)`` with ``|k| <= Q`` for ``f`` in ``(f1*, f2*, 1)``."""
    if Q < 0 or Q > 12:
        raise ValueError("Q must lie in [0, 12]")
    mu = second_spectral_moment(cov)
    pair = _pair_coefficients(model, mu, Q)
    rz0 = cov.variance_at_zero
    level = [a_level(k3, u, rz0) for k3 in range(Q + 1)]
    entries = {}
    for (k1, k2), vals in pair.items():
        for k3 in range(Q + 1 - k1 - k2):
            entries[(k1, k2, k3)] = tuple(v * level[k3] for v in vals)
    summary = {"lambda1": model.lambda1, "lam": model.lam, "basis_angle": model.basis_angle,
               "mu": mu, "rz0": rz0, "vstar": model.vstar}
    return CoefficientTable(Q, float(u), entries, pair, summary)


def write_table_csv(path, table: CoefficientTable) -> None:
    with open(path, "w") as fh:
        fh.write("# schema=1\n")
        fh.write("k1,k2,k3,a_f1,a_f2,a_one\n")
        for k in sorted(table.entries, key=lambda k: (sum(k), k)):
            a = table.entries[k]
            fh.write(f"{k[0]},{k[1]},{k[2]},{a[0]:.17g},{a[1]:.17g},{a[2]:.17g}\n")


def pair_norm_series(table: CoefficientTable, kmax: int) -> float:
    """``sum_{k1 + k2 <= kmax} a_1(k1, k2)^2 k1! k2!``."""
    return math.fsum(v[2] ** 2 * math.exp(_lf(k1) + _lf(k2))
                     for (k1, k2), v in table.pair.items() if k1 + k2 <= kmax)

