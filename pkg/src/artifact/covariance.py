"""Isotropic covariance ``r_z`` of the underlying field Z."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class CovarianceFamily(enum.Enum):
    SQUARED_EXPONENTIAL = "squared_exponential"


@dataclass(frozen=True)
class IsotropicCovariance:
    """``r_z(t) = variance_at_zero * exp(-|t|^2 / (2 length_scale^2))``."""

    variance_at_zero: float = 1.0
    length_scale: float = 1.0
    family: CovarianceFamily = CovarianceFamily.SQUARED_EXPONENTIAL

    def __post_init__(self):
        if not self.variance_at_zero > 0:
            raise ValueError("variance_at_zero must be positive")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not isinstance(self.family, CovarianceFamily):
            object.__setattr__(self, "family", CovarianceFamily(self.family))

    # -- profile -----------------------------------------------------------
    def profile(self, radius_sq):
        """``Psi`` evaluated through ``|t|^2``: ``exp(-|t|^2 / (2 rho^2))``."""
        return np.exp(-0.5 * np.asarray(radius_sq) / self.length_scale ** 2)

    def decay_radius(self, threshold: float = 1e-12) -> float:
        """Radius beyond which ``r_z(t) / r_z(0)`` falls under ``threshold``."""
        return self.length_scale * math.sqrt(-2.0 * math.log(threshold))

    # -- values and derivatives ---------------------------------------------
    def value(self, t):
        """``r_z`` at points ``t`` of shape ``(..., 2)``."""
        t = np.asarray(t, dtype=float)
        return self.variance_at_zero * self.profile(np.sum(t * t, axis=-1))

    def gradient(self, t):
        t = np.asarray(t, dtype=float)
        return -(self.value(t) / self.length_scale ** 2)[..., None] * t

    def hessian(self, t):
        t = np.asarray(t, dtype=float)
        rho2 = self.length_scale ** 2
        outer = t[..., :, None] * t[..., None, :] / rho2 ** 2
        return self.value(t)[..., None, None] * (outer - np.eye(2) / rho2)

    def spectral_density(self, w):
        """``f_z(w) = r_z(0) (rho^2 / 2 pi) exp(-rho^2 |w|^2 / 2)``."""
        w = np.asarray(w, dtype=float)
        rho2 = self.length_scale ** 2
        return self.variance_at_zero * rho2 / (2.0 * math.pi) * np.exp(-0.5 * rho2 * np.sum(w * w, axis=-1))

    def to_dict(self) -> dict:
        return {"family": self.family.value, "variance": self.variance_at_zero,
                "length_scale": self.length_scale}

    @classmethod
    def from_dict(cls, spec: dict) -> "IsotropicCovariance":
        return cls(float(spec.get("variance", 1.0)), float(spec.get("length_scale", 1.0)),
                   CovarianceFamily(spec.get("family", "squared_exponential")))


def evaluate(cov: IsotropicCovariance, t, order=()):
    """Partial derivative of ``r_z`` at the 2-vector ``t``.

    ``order`` lists the differentiated coordinates (0-based), e.g. ``()`` for
    the value, ``(0,)`` for d/dt1 and ``(0, 1)`` for d2/dt1dt2.
    """
    order = tuple(order)
    if len(order) > 2 or any(i not in (0, 1) for i in order):
        raise ValueError(f"unsupported derivative order {order!r}")
    t = np.asarray(t, dtype=float)
    if not order:
        return float(cov.value(t))
    if len(order) == 1:
        return float(cov.gradient(t)[order[0]])
    return float(cov.hessian(t)[order[0], order[1]])


def second_spectral_moment(cov: IsotropicCovariance) -> float:
    """``mu = -d^2 r_z / dt_i^2 (0)``."""
    return cov.variance_at_zero / cov.length_scale ** 2


def spectral_density(cov: IsotropicCovariance, w) -> float:
    return float(cov.spectral_density(w))
