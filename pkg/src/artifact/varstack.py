"""Asymptotic covariance of the level functionals and of the estimators.

The pipeline is: Mehler cross-moments of Hermite products, the correlation
matrix ``Gamma^Y(v)`` of the standardized vector ``Y = (grad X, X)``, the
spatial integrals ``R(k, m)``, the chaos-truncated ``Sigma`` matrices and the
derived matrices ``B``, ``C(lam, theta)`` and ``D_n``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .chaoscoeff import CoefficientTable, build_table
from .covariance import CovarianceFamily, IsotropicCovariance, second_spectral_moment
from .fieldsim import AffineModel
from .specialfn import c_matrix

MEHLER_MAX_ORDER = 24
EIG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Mehler moments
# ---------------------------------------------------------------------------

def _tables_with_margins(rows, cols):
    """3x3 nonnegative integer matrices with the given row and column sums."""
    r0, r1, r2 = rows
    c0, c1, c2 = cols
    for d00 in range(min(r0, c0) + 1):
        for d01 in range(min(r0 - d00, c1) + 1):
            d02 = r0 - d00 - d01
            if d02 > c2:
                continue
            for d10 in range(min(r1, c0 - d00) + 1):
                for d11 in range(min(r1 - d10, c1 - d01) + 1):
                    d12 = r1 - d10 - d11
                    if d12 > c2 - d02:
                        continue
                    d20, d21, d22 = c0 - d00 - d10, c1 - d01 - d11, c2 - d02 - d12
                    if d20 < 0 or d21 < 0 or d22 < 0 or d20 + d21 + d22 != r2:
                        continue
                    yield (d00, d01, d02, d10, d11, d12, d20, d21, d22)


def mehler_moment(k, m, rho) -> float:
    """``E[H_k(X) H_m(Y)]`` for standard 3-vectors with ``E[X_i Y_j] = rho[i, j]``."""
    k, m = tuple(int(x) for x in k), tuple(int(x) for x in m)
    if sum(k) != sum(m):
        return 0.0
    if sum(k) > MEHLER_MAX_ORDER:
        raise ValueError(f"chaos order above {MEHLER_MAX_ORDER}")
    rho = np.asarray(rho, dtype=float).ravel()
    base = sum(math.lgamma(x + 1) for x in k + m)
    total = []
    for d in _tables_with_margins(k, m):
        term = math.exp(base - sum(math.lgamma(x + 1) for x in d))
        for r, e in zip(rho, d):
            if e:
                term *= r ** e
        total.append(term)
    return math.fsum(total)


# ---------------------------------------------------------------------------
# Gamma^Y(v)
# ---------------------------------------------------------------------------

def gamma_Y(cov: IsotropicCovariance, model: AffineModel, v) -> np.ndarray:
    """Cross-correlation ``E[Y_i(0) Y_j(v)]`` of ``Y = Delta^-1 (grad X, X)``.

    With ``w = A v``: the gradient block is ``-P^t Hess r_z(w) P / mu``, the
    corner is ``r_z(w) / r_z(0)``, and the coupling entries are
    ``-(P^t grad r_z(w))_i / sqrt(mu r_z(0))`` in column 3 and the opposite
    sign in row 3, so that ``Gamma(v)^t = Gamma(-v)``.
    """
    v = np.asarray(v, dtype=float)
    w = v @ model.a_matrix.T
    p = model.p_matrix
    mu = second_spectral_moment(cov)
    rz0 = cov.variance_at_zero
    out = np.empty(v.shape[:-1] + (3, 3))
    out[..., :2, :2] = -(p.T @ cov.hessian(w) @ p) / mu
    g = (cov.gradient(w) @ p) / math.sqrt(mu * rz0)
    out[..., :2, 2] = -g
    out[..., 2, :2] = g
    out[..., 2, 2] = cov.value(w) / rz0
    return out


def _reduced_gamma(cov: IsotropicCovariance, model: AffineModel, w: np.ndarray) -> np.ndarray:
    """``Gamma^Y`` at ``w = A v`` divided by the common factor ``exp(-|w|^2 / (2 rho^2))``.

    Only meaningful for the squared exponential family, where every entry is
    that factor times a polynomial of degree at most two.
    """
    rho2 = cov.length_scale ** 2
    p = model.p_matrix
    mu = second_spectral_moment(cov)
    rz0 = cov.variance_at_zero
    wp = w @ p  # P^t w
    out = np.empty(w.shape[:-1] + (3, 3))
    outer = wp[..., :, None] * wp[..., None, :] / rho2 ** 2
    out[..., :2, :2] = -rz0 * (outer - np.eye(2) / rho2) / mu
    g = -rz0 * wp / rho2 / math.sqrt(mu * rz0)
    out[..., :2, 2] = -g
    out[..., 2, :2] = g
    out[..., 2, 2] = 1.0
    return out


# ---------------------------------------------------------------------------
# R(k, m)
# ---------------------------------------------------------------------------

def _mehler_on_points(k, m, gam: np.ndarray) -> np.ndarray:
    """Vectorized Mehler moment for a single index pair over points ``gam (P, 3, 3)``."""
    flat = gam.reshape(-1, 9)
    base = sum(math.lgamma(x + 1) for x in tuple(k) + tuple(m))
    out = np.zeros(len(flat))
    for d in _tables_with_margins(tuple(k), tuple(m)):
        term = np.full(len(flat), math.exp(base - sum(math.lgamma(x + 1) for x in d)))
        for a, e in enumerate(d):
            if e:
                term *= flat[:, a] ** e
        out += term
    return out


def _panel_quadrature(func, radius: float, panel: float, nodes: int = 8):
    """Tensor Gauss-Legendre over ``[-radius, radius]^2`` with square panels."""
    npanel = max(1, int(math.ceil(2 * radius / panel)))
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(-radius, radius, npanel + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    total = 0.0
    # one strip of rows at a time keeps memory flat
    for i in range(len(pts)):
        row = np.column_stack([np.full(len(pts), pts[i]), pts])
        total += wts[i] * float(func(row) @ wts)
    return total


def r_km(k, m, cov: IsotropicCovariance, model: AffineModel, tol: float = 1e-8) -> float:
    """``R(k, m) = int_{R^2} E[H_k(Y(0)) H_m(Y(v))] dv`` by panel Gauss-Legendre.

    The integral is taken in ``w = A v`` over the square where the covariance
    profile exceeds ``1e-12``; panels are halved until two successive values
    agree to ``tol``.
    """
    k, m = tuple(k), tuple(m)
    if sum(k) != sum(m):
        return 0.0
    if sum(k) > 12:
        raise ValueError("chaos order above 12")
    radius = cov.decay_radius(1e-12)
    jac = 1.0 / (model.lambda1 * model.lambda2)
    a_inv = np.linalg.inv(model.a_matrix)

    def integrand(w):
        return _mehler_on_points(k, m, gamma_Y(cov, model, w @ a_inv.T))

    panel = cov.length_scale / 2.0
    prev = _panel_quadrature(integrand, radius, panel) * jac
    for _ in range(4):
        panel /= 2.0
        cur = _panel_quadrature(integrand, radius, panel) * jac
        if abs(cur - prev) <= tol:
            return cur
        prev = cur
    return prev


@functools.lru_cache(maxsize=256)
def r_table(q: int, cov: IsotropicCovariance, model: AffineModel) -> np.ndarray:
    """All ``R(k, m)`` with ``|k| = |m| = q``, indexed as ``kernels.multi_indices(q)``.

    For the squared exponential family the integrand is
    ``exp(-q |w|^2 / (2 rho^2))`` times a polynomial of degree ``<= 2q`` in
    ``w = A v``, so tensor Gauss-Hermite with ``q + 2`` nodes per axis is exact.
    """
    if cov.family is not CovarianceFamily.SQUARED_EXPONENTIAL:
        idx = kernels.multi_indices(q)
        return np.array([[r_km(a, b, cov, model) for b in idx] for a in idx])
    x, w = np.polynomial.hermite.hermgauss(q + 2)
    scale = cov.length_scale * math.sqrt(2.0 / q)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()]) * scale
    weights = np.outer(w, w).ravel() * scale ** 2 / (model.lambda1 * model.lambda2)
    gam = _reduced_gamma(cov, model, pts).reshape(-1, 9).T  # (9, P)
    powers = np.empty((q + 1, 9, gam.shape[1]))
    powers[0] = 1.0
    for e in range(1, q + 1):
        powers[e] = powers[e - 1] * gam
    return kernels.mehler_table(q, powers, weights)


# ---------------------------------------------------------------------------
# Sigma matrices
# ---------------------------------------------------------------------------

class SigmaResult(NamedTuple):
    value: float
    per_order: np.ndarray  # V_q for q = 1..Q
    tail_estimate: float


def _series_tail(per_order: np.ndarray) -> float:
    """Extrapolated size of the omitted orders ``q > Q``.

    The last two nonzero terms ``V_a, V_b`` (``a < b``) fix a power law
    ``V_q ~ V_b (q / b)^-s``; the tail sums it over the orders ``b + g, b + 2g, ...``
    where ``g = b - a`` is the observed spacing of nonzero terms (odd orders
    vanish at ``u = 0``). Orders where the decay is not yet visible give ``inf``.
    """
    nz = [(q, abs(v)) for q, v in enumerate(per_order, start=1) if abs(v) > 0.0]
    if len(nz) < 2:
        return float("nan")
    (qa, va), (qb, vb) = nz[-2], nz[-1]
    if vb >= va:
        return float("inf")
    slope = math.log(va / vb) / math.log(qb / qa)
    gap = qb - qa
    if slope <= 1.0:
        return float("inf")
    steps = np.arange(1, 200_000)
    return float(vb * np.sum((1.0 + gap * steps / qb) ** -slope))


def _coeff_matrix(coeffs, q: int) -> np.ndarray:
    return np.array([coeffs.get(k, 0.0) for k in kernels.multi_indices(q)])


def sigma_fg(u: float, coeffs_f: dict, coeffs_g: dict, cov: IsotropicCovariance,
             model: AffineModel, Q: int) -> SigmaResult:
    """``Sigma_{f,g}(u) = sum_{q=1}^Q sum_{|k|=|m|=q} a_f(k, u) a_g(m, u) R(k, m)``.

    ``coeffs_f`` and ``coeffs_g`` map chaos indices ``(k1, k2, k3)`` to
    ``a_f(k, u)``; missing indices count as zero.
    """
    per_q = []
    for q in range(1, Q + 1):
        af = _coeff_matrix(coeffs_f, q)
        ag = _coeff_matrix(coeffs_g, q)
        per_q.append(float(af @ r_table(q, cov, model) @ ag))
    per_q = np.array(per_q)
    return SigmaResult(float(math.fsum(per_q)), per_q, _series_tail(per_q))


def component_coeffs(table: CoefficientTable, which: int) -> dict:
    """Extract one function's coefficients (0: f1*, 1: f2*, 2: 1) from a table."""
    return {k: v[which] for k, v in table.entries.items()}


def per_order_triple(table: CoefficientTable, cov: IsotropicCovariance, model: AffineModel) -> np.ndarray:
    """``V_q`` as 3x3 matrices for ``(f1*, f2*, 1)``, ``q = 1..Q``; shape ``(Q, 3, 3)``."""
    out = []
    for q in range(1, table.max_order + 1):
        coeffs = np.array([table.entries[k] for k in kernels.multi_indices(q)])
        vq = coeffs.T @ r_table(q, cov, model) @ coeffs
        out.append(0.5 * (vq + vq.T))
    return np.array(out)


def b_matrix(table: CoefficientTable) -> np.ndarray:
    af1, af2, a1 = table.at_zero()
    return np.array([[1.0, 0.0, -af1 / a1], [0.0, 1.0, -af2 / a1]]) / a1


def q_basis(model: AffineModel) -> np.ndarray:
    """Rows ``v*`` and ``v**``: canonical coordinates to the ``(v*, v**)`` basis."""
    return np.vstack([model.vstar_array, model.vstarstar])


def sym_sqrt_inv(mat: np.ndarray):
    """``(R, Gamma, R Gamma^-1/2 R^t)`` from a symmetric eigendecomposition with floor."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.maximum(vals, EIG_FLOOR)
    return vecs, vals, vecs @ np.diag(vals ** -0.5) @ vecs.T


@dataclass
class CovarianceStack:
    sigma_triple: np.ndarray
    sigma_star: np.ndarray
    sigma_star_basis: np.ndarray
    sigma_param: np.ndarray | None
    b_matrix: np.ndarray
    c_matrix: np.ndarray | None
    q_basis: np.ndarray
    d_matrix: np.ndarray | None
    truncation: int
    tail_estimate: float
    per_order: np.ndarray
    isotropic: bool = False
    table: CoefficientTable | None = field(default=None, repr=False)

    def d_n(self, n: float) -> np.ndarray | None:
        """``D_n``; the ``2n`` scaling lives in the statistic, so this is ``n``-free."""
        return self.d_matrix


class DegenerateVariance(RuntimeError):
    pass


def build_stack(u: float, cov: IsotropicCovariance, model: AffineModel, Q: int = 8) -> CovarianceStack:
    """Assemble every covariance matrix of the pipeline at level ``u``."""
    table = build_table(model, cov, u, Q)
    per_q = per_order_triple(table, cov, model)
    triple = per_q.sum(axis=0)
    bm = b_matrix(table)
    s_star = bm @ triple @ bm.T
    s_star = 0.5 * (s_star + s_star.T)
    if np.linalg.det(s_star) <= 0:
        raise DegenerateVariance("variance degenerate (increase Q or check model)")
    qb = q_basis(model)
    s_basis = qb @ s_star @ qb.T
    star_per_q = np.array([np.trace(bm @ v @ bm.T) for v in per_q])
    tail = _series_tail(star_per_q)
    if model.lam < 1.0:
        cm = c_matrix(model.lam, model.theta_o)
        s_param = cm @ s_basis @ cm.T
        _, _, inv_root = sym_sqrt_inv(s_star)
        d_mat = np.linalg.inv(cm).T @ qb @ inv_root
        return CovarianceStack(triple, s_star, s_basis, 0.5 * (s_param + s_param.T), bm, cm, qb,
                               d_mat, Q, tail, per_q, False, table)
    return CovarianceStack(triple, s_star, s_basis, None, bm, None, qb, None, Q, tail, per_q, True, table)


def det_lower_bound_check(u: float, cov: IsotropicCovariance, model: AffineModel, Q: int = 8) -> float:
    """``det(Sigma*) - det(B V_2 B^t)``; nonnegative by the determinant inequality."""
    stack = build_stack(u, cov, model, Q)
    bm = stack.b_matrix
    partial = bm @ stack.per_order[1] @ bm.T
    return float(np.linalg.det(stack.sigma_star) - np.linalg.det(partial))


def partial_star_det(stack: CovarianceStack, q: int) -> float:
    """Determinant of the order-``q`` contribution to ``Sigma*``."""
    bm = stack.b_matrix
    return float(np.linalg.det(bm @ stack.per_order[q - 1] @ bm.T))


def w_statistic(lam: float, max_terms: int = 100_000) -> float:
    """``W = sum_n V_n / (4(n+1)) / sum_n V_n``, ``V_n = (2n)!(2n+1)!/(n!^4 2^(4n+1)) (1-lam^2)^n``."""
    x = 1.0 - lam * lam
    num = den = 0.0
    for n in range(max_terms):
        log_v = (math.lgamma(2 * n + 1) + math.lgamma(2 * n + 2) - 4 * math.lgamma(n + 1)
                 - (4 * n + 1) * math.log(2.0))
        vn = math.exp(log_v) * x ** n
        num += vn / (4.0 * (n + 1))
        den += vn
        if x == 0.0 or vn < 1e-17 * den:
            break
    return num / den


def v1_closed_form(a_f00: float, u: float, cov: IsotropicCovariance, model: AffineModel) -> float:
    """First-order term ``a_f(0,0)^2 (u^2 / r0^2) phi^2(u/sqrt r0) (2 pi)^2 f_z(0) / (l1 l2 r0)``."""
    rz0 = cov.variance_at_zero
    x = u / math.sqrt(rz0)
    phi = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    fz0 = float(cov.spectral_density(np.zeros(2)))
    return (a_f00 ** 2 * u * u / rz0 ** 2 * phi * phi * (2 * math.pi) ** 2 * fz0
            / (model.lambda1 * model.lambda2 * rz0))


def write_stack_csv(path, stack: CovarianceStack) -> None:
    """All matrices flattened row-major, then the per-order trace diagnostics."""
    rows = [("sigma_triple", stack.sigma_triple), ("sigma_star", stack.sigma_star),
            ("sigma_star_basis", stack.sigma_star_basis), ("b_matrix", stack.b_matrix),
            ("q_basis", stack.q_basis)]
    if stack.sigma_param is not None:
        rows += [("sigma_param", stack.sigma_param), ("c_matrix", stack.c_matrix),
                 ("d_matrix", stack.d_matrix)]
    with open(path, "w") as fh:
        fh.write("# schema=1\n")
        fh.write("name,i,j,value\n")
        for name, mat in rows:
            for (i, j), val in np.ndenumerate(np.atleast_2d(mat)):
                fh.write(f"{name},{i},{j},{val:.17g}\n")
        for q, vq in enumerate(stack.per_order, start=1):
            fh.write(f"V_q_trace,{q},0,{np.trace(vq):.17g}\n")
        fh.write(f"tail_estimate,0,0,{stack.tail_estimate:.17g}\n")
