"""The isotropy test built on the direction functional ``J_{f*}``.

Under isotropy ``T = 2n (J_{f*} / J_1 - (2/pi) v*)`` is asymptotically
centred Gaussian with covariance ``Sigma*(u, 1, I) / tau^2``. Standardizing
with the estimated scale gives ``S`` and ``Xi = |S|^2``, which is
asymptotically chi-square with two degrees of freedom.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .covariance import IsotropicCovariance
from .fieldsim import AffineModel, GridField
from .levelcurve import FunctionalTriple, NoCrossing, extract_level_curve, functional_triple
from .estimator import estimate_tau
from .varstack import EIG_FLOOR, build_stack

TWO_OVER_PI = 2.0 / math.pi


@dataclass(frozen=True)
class IsoFactor:
    """``Sigma*(u, 1, I) = R diag(gamma) R^t``."""

    sigma_star: np.ndarray
    rotation: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    t_vec: np.ndarray
    s_vec: np.ndarray
    xi: float
    p_value: float
    alpha: float
    reject: bool
    tau_hat: float
    n: float
    u: float = math.nan


def factorize(sigma_star: np.ndarray) -> IsoFactor:
    sym = 0.5 * (sigma_star + sigma_star.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() <= EIG_FLOOR:
        raise ValueError("Sigma* is not positive definite")
    return IsoFactor(sym, vecs, vals)


_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def iso_factor(cov: IsotropicCovariance, u: float, vstar=(1.0, 0.0), Q: int = 8) -> IsoFactor:
    """``Sigma*(u, 1, I)`` factorized, cached by the covariance content, ``u``, ``v*`` and ``Q``."""
    model = AffineModel(1.0, 1.0, 0.0, tuple(vstar))
    key = (tuple(sorted(cov.to_dict().items())), float(u), model.vstar, int(Q))
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    factor = factorize(build_stack(u, cov, model, Q).sigma_star)
    with _CACHE_LOCK:
        return _CACHE.setdefault(key, factor)


def statistic_T(triple: FunctionalTriple, vstar, n: float) -> np.ndarray:
    """``2n (J_{f*} / J_1 - (2/pi) v*)`` in canonical coordinates."""
    if not triple.j_one > 0:
        raise NoCrossing("empty level set")
    vstar = np.asarray(vstar, dtype=float)
    return 2.0 * n * (np.asarray(triple.j_star) / triple.j_one - TWO_OVER_PI * vstar)


def decide(xi: float, alpha: float) -> tuple[bool, float]:
    """Reject when ``xi`` exceeds ``gamma = -2 ln(alpha)``."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    gamma = -2.0 * math.log(alpha)
    return bool(xi > gamma), gamma


def statistic_Xi(t_vec, tau_hat: float, factor: IsoFactor, alpha: float = 0.05,
                 n: float = math.nan, u: float = math.nan) -> TestResult:
    """``S = tau_hat Gamma^-1/2 R^t T`` and ``Xi = S^t S`` with the chi-square p-value."""
    if factor.gamma.min() <= 0.0:
        raise ValueError("Gamma* is not positive definite")
    t_vec = np.asarray(t_vec, dtype=float)
    s_vec = tau_hat * (factor.rotation.T @ t_vec) / np.sqrt(factor.gamma)
    xi = float(s_vec @ s_vec)
    p_value = math.exp(-0.5 * xi)
    reject, _ = decide(xi, alpha)
    return TestResult(t_vec, s_vec, xi, p_value, float(alpha), reject, float(tau_hat), float(n), float(u))


def run_test(field: GridField, u: float, cov: IsotropicCovariance, vstar=(1.0, 0.0),
             alpha: float = 0.05, Q: int = 8) -> TestResult:
    """Run the test on one sampled or imported field."""
    triple = functional_triple(extract_level_curve(field, u), vstar, field.half_width)
    t_vec = statistic_T(triple, vstar, field.half_width)
    tau = estimate_tau(triple.j_one, u, cov)
    return statistic_Xi(t_vec, tau, iso_factor(cov, u, vstar, Q), alpha, field.half_width, u)


TEST_COLUMNS = ("n", "u", "xi", "p_value", "reject", "tau_hat", "alpha")


def result_row(res: TestResult) -> list[str]:
    return [f"{res.n:.17g}", f"{res.u:.17g}", f"{res.xi:.17g}", f"{res.p_value:.17g}",
            str(int(res.reject)), f"{res.tau_hat:.17g}", f"{res.alpha:.17g}"]
