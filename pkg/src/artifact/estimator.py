"""Inversion of the observed ratio ``(x_n, y_n)`` into ``(lambda_hat, theta_hat)``.

Also estimates the scale parameters ``tau`` and ``lambda1``, builds
asymptotic confidence regions and evaluates the limit density ``f_U`` of
``(2n (1 - lambda_hat))^2`` under isotropy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from statistics import NormalDist

import numpy as np

from .covariance import IsotropicCovariance, second_spectral_moment
from .fieldsim import GridField
from .levelcurve import extract_level_curve, functional_triple
from .specialfn import elliptic_I
from .varstack import CovarianceStack

LAMBDA_TOL = 1e-12
TIE_WINDOW = 1e-12
ARCSIN_SLACK = 1e-10
FU_NODES = 2048
TWO_OVER_PI = 2.0 / math.pi


class EstimateCase(enum.Enum):
    INTERIOR = "Interior"
    AXIS_Y_ZERO_X_LARGE = "AxisYzeroXlarge"
    ISOTROPIC = "Isotropic"


@dataclass(frozen=True)
class ConfidenceRegion:
    """Asymptotic region for ``(lambda, theta_o)``.

    The ellipse is ``{z : (z - c)^t M (z - c) <= radius_sq / (2n)^2}`` with
    ``M = D D^t`` and ``c`` the point estimate.
    """

    lambda_interval: tuple[float, float]
    theta_interval: tuple[float, float]
    alpha: float
    d_matrix: np.ndarray
    radius_sq: float
    n: float

    @property
    def shape_matrix(self) -> np.ndarray:
        return self.d_matrix @ self.d_matrix.T

    def contains(self, centre, point) -> bool:
        z = 2.0 * self.n * (np.asarray(point, dtype=float) - np.asarray(centre, dtype=float))
        return float(z @ self.shape_matrix @ z) <= self.radius_sq

    def area(self) -> float:
        det = float(np.linalg.det(self.shape_matrix))
        return math.pi * self.radius_sq / ((2.0 * self.n) ** 2 * math.sqrt(det))


@dataclass(frozen=True)
class EstimateResult:
    lambda_hat: float
    theta_hat: float  # nan when the case is isotropic (theta is not identified)
    case: EstimateCase
    x_n: float
    y_n: float
    n: float
    u: float = math.nan
    j_one: float = math.nan
    ci: ConfidenceRegion | None = None


class InadmissibleRatio(ValueError):
    pass


# ---------------------------------------------------------------------------
# Scalar solvers
# ---------------------------------------------------------------------------

def _bisect(func, lo: float, hi: float, tol: float = LAMBDA_TOL) -> float:
    """Root of ``func`` on ``[lo, hi]`` assuming ``func(lo) > 0 > func(hi)``."""
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if func(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def inverse_I(target: float) -> float:
    """``lambda`` with ``I(lambda) = target`` for ``target`` in ``[1, pi/2]``."""
    if not (1.0 <= target <= 0.5 * math.pi + 1e-15):
        raise ValueError("I takes values in [1, pi/2]")
    return _bisect(lambda lam: target - elliptic_I(lam), 0.0, 1.0)


def solver_functions(lam: float, x: float, y: float) -> tuple[float, float]:
    """``(f1, f2)`` at ``lam``: ``x^2 (I/lam)^2`` and ``(x^2 I^2 - 1) / ((x^2 + y^2) I^2 - 1)``."""
    i2 = elliptic_I(lam) ** 2
    f1 = x * x * i2 / (lam * lam)
    den = (x * x + y * y) * i2 - 1.0
    f2 = (x * x * i2 - 1.0) / den if den != 0.0 else math.inf
    return f1, f2


def lambda_zero(x: float, y: float) -> float:
    """Upper end of the bracket: the root of ``(x^2 + y^2) I(lam)^2 = 1`` or 1."""
    r2 = x * x + y * y
    if r2 * (0.5 * math.pi) ** 2 < 1.0:
        return 1.0
    return _bisect(lambda lam: 1.0 - r2 * elliptic_I(lam) ** 2, 0.0, 1.0)


def quartic_residual(lam: float, x: float, y: float) -> float:
    """``x^2 I^4 (x^2 + y^2) - x^2 I^2 (lam^2 + 1) + lam^2``, zero at the estimate."""
    i2 = elliptic_I(lam) ** 2
    return x * x * i2 * i2 * (x * x + y * y) - x * x * i2 * (lam * lam + 1.0) + lam * lam


def estimate(x_n: float, y_n: float, tol: float = LAMBDA_TOL, n: float = math.nan) -> EstimateResult:
    """Invert ``F`` at the observed ratio ``(x_n, y_n)``."""
    x, y = float(x_n), float(y_n)
    if not (x > 0.0 and x * x + y * y < 1.0):
        raise InadmissibleRatio("observed ratio outside admissible disk")
    if abs(y) < TIE_WINDOW and abs(x - TWO_OVER_PI) < TIE_WINDOW:
        return EstimateResult(1.0, math.nan, EstimateCase.ISOTROPIC, x, y, n)
    if y == 0.0 and x > TWO_OVER_PI:
        lam = _bisect(lambda t: 1.0 / x - elliptic_I(t), 0.0, 1.0, tol)
        return EstimateResult(lam, 0.0, EstimateCase.AXIS_Y_ZERO_X_LARGE, x, y, n)

    def gap(lam):
        f1, f2 = solver_functions(lam, x, y)
        return f1 - f2

    lam = _bisect(gap, 0.0, lambda_zero(x, y), tol)
    i_val = elliptic_I(lam)
    ratio = (1.0 - x * x * i_val * i_val) / (1.0 - lam * lam)
    if ratio < -ARCSIN_SLACK:
        raise ArithmeticError(f"negative arcsin argument {ratio:.3e}")
    theta = math.asin(math.sqrt(min(max(ratio, 0.0), 1.0)))
    if y > 0.0:
        theta = -theta
    return EstimateResult(lam, theta, EstimateCase.INTERIOR, x, y, n)


def estimate_from_field(field: GridField, u: float, vstar) -> EstimateResult:
    """Level curve, then ratio coordinates in the ``(v*, v**)`` basis, then ``estimate``.

    Raises ``NoCrossing`` when ``u`` is not crossed.
    """
    triple = functional_triple(extract_level_curve(field, u), vstar, field.half_width)
    res = estimate(triple.x_n, triple.y_n, n=field.half_width)
    return replace(res, u=float(u), j_one=triple.j_one)


# ---------------------------------------------------------------------------
# Scale parameters
# ---------------------------------------------------------------------------

def estimate_tau(j_one: float, u: float, cov: IsotropicCovariance) -> float:
    """``tau_hat = 2 J_1 sqrt(r_z(0) / mu) exp(u^2 / (2 r_z(0)))``."""
    if not j_one > 0:
        raise ValueError("J_1 must be positive")
    rz0 = cov.variance_at_zero
    return 2.0 * j_one * math.sqrt(rz0 / second_spectral_moment(cov)) * math.exp(u * u / (2.0 * rz0))


def phi_scale(u: float, lam: float, cov: IsotropicCovariance) -> float:
    """``Phi(u, lam, P) = p_{Z(0)}(u) E|| diag(1, lam) P^t grad Z(0) ||``.

    ``grad Z(0) = sqrt(mu) G`` with G standard, and the law of G is rotation
    invariant, so P drops out. In polar coordinates ``|G|`` is Rayleigh with
    mean ``sqrt(pi/2)`` and the angular mean of ``sqrt(cos^2 + lam^2 sin^2)``
    is ``(2/pi) I(lam)``.
    """
    rz0 = cov.variance_at_zero
    density = math.exp(-u * u / (2.0 * rz0)) / math.sqrt(2.0 * math.pi * rz0)
    return density * math.sqrt(second_spectral_moment(cov)) * math.sqrt(0.5 * math.pi) * TWO_OVER_PI * elliptic_I(lam)


def estimate_lambda1(j_one: float, u: float, lambda_hat: float, cov: IsotropicCovariance) -> float:
    """``lambda1_hat = J_1 / Phi(u, lambda_hat)``."""
    if not j_one > 0:
        raise ValueError("J_1 must be positive")
    return j_one / phi_scale(u, lambda_hat, cov)


# ---------------------------------------------------------------------------
# Confidence regions
# ---------------------------------------------------------------------------

def confidence_region(est: EstimateResult, stack: CovarianceStack, n: float, alpha: float) -> EstimateResult:
    """Attach the ellipse and the marginal intervals at level ``1 - alpha``."""
    if est.case is not EstimateCase.INTERIOR:
        raise ValueError("confidence regions need an interior estimate")
    if stack.sigma_param is None or stack.d_matrix is None:
        raise ValueError("covariance stack is degenerate (isotropic)")
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    radius_sq = -2.0 * math.log(alpha)
    z = NormalDist().inv_cdf(1.0 - 0.5 * alpha) if alpha < 1.0 else 0.0
    half = z * np.sqrt(np.diag(stack.sigma_param)) / (2.0 * n)
    lam_iv = (max(est.lambda_hat - half[0], 0.0), min(est.lambda_hat + half[0], 1.0))
    th_iv = (max(est.theta_hat - half[1], -0.5 * math.pi), min(est.theta_hat + half[1], 0.5 * math.pi))
    region = ConfidenceRegion(lam_iv, th_iv, float(alpha), np.array(stack.d_matrix), radius_sq, float(n))
    return replace(est, ci=region)


# ---------------------------------------------------------------------------
# Limit law under isotropy
# ---------------------------------------------------------------------------

def _fu_parameters(sigma: np.ndarray):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (2, 2) or not np.allclose(sigma, sigma.T, atol=1e-12):
        raise ValueError("expected a symmetric 2x2 matrix")
    if np.linalg.eigvalsh(sigma).min() <= 0.0:
        raise ValueError("matrix is not positive definite")
    s11 = math.pi ** 2 * sigma[0, 0]
    s22 = (0.5 * math.pi) ** 2 * sigma[1, 1]
    s12 = 0.5 * math.pi ** 2 * sigma[0, 1]
    a = s12 / s11
    tilde22 = (s11 * s22 - s12 * s12) / s11
    return s11, tilde22, a


def _fu_quadratic(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """Angular quadratic form on the trapezoid nodes and the normalizing constant."""
    s11, tilde22, a = _fu_parameters(sigma)
    ang = 2.0 * math.pi * np.arange(FU_NODES) / FU_NODES
    c, s = np.cos(ang), np.sin(ang)
    q = (c - a * s) ** 2 / (s11 * (1.0 + a * a)) + s * s * (1.0 + a * a) / tilde22
    return q, 1.0 / (4.0 * math.pi * math.sqrt(s11 * tilde22))


def _angular_sum(t, integrand, const: float, chunk: int = 2048):
    """``const * dtheta * sum_theta integrand(t)[theta]`` for ``t > 0``, else 0, in row blocks."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    flat = t_arr.ravel()
    out = np.zeros_like(flat)
    idx = np.flatnonzero(flat > 0)
    dtheta = 2.0 * math.pi / FU_NODES
    for start in range(0, idx.size, chunk):
        block = idx[start:start + chunk]
        out[block] = const * dtheta * integrand(flat[block]).sum(axis=1)
    return out.reshape(t_arr.shape) if np.ndim(t) else float(out[0])


def limit_density_fU(t, sigma_star_star) -> np.ndarray | float:
    """Density of ``U = pi^2 V1^2 + (pi/2)^2 V2^2`` with ``V ~ N(0, Sigma**)``.

    ``f_U(t) = (1 / (4 pi sigma11 sigma22~)) int_0^{2 pi} exp(-t q(theta) / 2) dtheta``
    by the periodic trapezoid rule; ``0`` for ``t <= 0``.
    """
    q, const = _fu_quadratic(sigma_star_star)
    return _angular_sum(t, lambda tt: np.exp(-0.5 * np.outer(tt, q)), const)


def limit_cdf_fU(t, sigma_star_star) -> np.ndarray | float:
    """Distribution function of U, integrating ``f_U`` in t under the angular sum."""
    q, const = _fu_quadratic(sigma_star_star)
    return _angular_sum(t, lambda tt: 2.0 / q * -np.expm1(-0.5 * np.outer(tt, q)), const)


def sample_U(sigma_star_star, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of U from its defining quadratic form."""
    v = rng.multivariate_normal(np.zeros(2), np.asarray(sigma_star_star, dtype=float), size=size)
    return math.pi ** 2 * v[:, 0] ** 2 + (0.5 * math.pi) ** 2 * v[:, 1] ** 2


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

ESTIMATE_COLUMNS = ("n", "u", "x_n", "y_n", "lambda_hat", "theta_hat", "case",
                    "lambda_lo", "lambda_hi", "theta_lo", "theta_hi")


def estimate_row(est: EstimateResult) -> list[str]:
    """One CSV row in ``ESTIMATE_COLUMNS`` order; empty cells for a missing region."""
    ci = est.ci
    bounds = ([*ci.lambda_interval, *ci.theta_interval] if ci is not None else [None] * 4)
    cells = [est.n, est.u, est.x_n, est.y_n, est.lambda_hat, est.theta_hat]
    text = [f"{v:.17g}" for v in cells] + [est.case.value]
    text += ["" if b is None else f"{b:.17g}" for b in bounds]
    return text
