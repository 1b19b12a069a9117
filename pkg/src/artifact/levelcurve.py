"""Level curves of a gridded field and the level functionals ``J_f(u)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .fieldsim import GridField, gradient_field

GRAD_EPS = 1e-10


@dataclass
class LevelCurve:
    """Polyline segments of ``{X = u}`` with unit gradients at segment midpoints."""

    segments: np.ndarray  # (S, 4): x0, y0, x1, y1
    lengths: np.ndarray   # (S,)
    nu: np.ndarray        # (S, 2)
    level: float
    domain_area: float

    @property
    def empty(self) -> bool:
        return len(self.lengths) == 0

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())


@dataclass
class FunctionalTriple:
    """``J_1``, ``J_{f*}`` and the ratio coordinates ``(x_n, y_n)`` in the basis ``(v*, v**)``."""

    j_one: float
    j_star: np.ndarray
    x_n: float
    y_n: float
    n: float


class NoCrossing(Exception):
    """The level set is empty; batch drivers treat this as a skipped replicate."""


def _bilinear(grid_values: np.ndarray, origin: float, h: float, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of node data ``(..., N, N)`` at points ``(S, 2)``."""
    n = grid_values.shape[-1]
    s = (pts - origin) / h
    i0 = np.clip(np.floor(s).astype(int), 0, n - 2)
    f = s - i0
    fx, fy = f[:, 0], f[:, 1]
    ix, iy = i0[:, 0], i0[:, 1]
    g = grid_values
    return ((1 - fx) * (1 - fy) * g[..., ix, iy] + fx * (1 - fy) * g[..., ix + 1, iy]
            + fx * fy * g[..., ix + 1, iy + 1] + (1 - fx) * fy * g[..., ix, iy + 1])


def extract_level_curve(field: GridField, u: float) -> LevelCurve:
    """Marching squares with linear interpolation along cell edges."""
    if field.gradient is None:
        gradient_field(field)
    vals = field.values
    empty = LevelCurve(np.empty((0, 4)), np.empty(0), np.empty((0, 2)), float(u), field.domain_area)
    if not (vals.min() <= u <= vals.max()):
        return empty
    origin = -field.half_width
    segs = kernels.march_squares(vals, float(u), origin, field.spacing)
    if len(segs) == 0:
        return empty
    lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
    mid = 0.5 * (segs[:, :2] + segs[:, 2:])
    grad = _bilinear(field.gradient, origin, field.spacing, mid).T
    norm = np.hypot(grad[:, 0], grad[:, 1])
    keep = (norm >= GRAD_EPS) & (lengths > 0)
    nu = grad[keep] / norm[keep, None]
    return LevelCurve(segs[keep], lengths[keep], nu, float(u), field.domain_area)


def fstar_eval(theta, vstar) -> np.ndarray:
    """``f*(theta) = theta`` if ``<theta, v*> >= 0`` else ``-theta`` (row-wise for arrays)."""
    theta = np.asarray(theta, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    if abs(np.linalg.norm(vstar) - 1.0) > 1e-9:
        raise ValueError("vstar must be a unit vector")
    norms = np.linalg.norm(np.atleast_2d(theta), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("theta must be a unit vector")
    sign = np.where(theta @ vstar >= 0.0, 1.0, -1.0)
    return theta * sign[..., None] if theta.ndim > 1 else theta * float(sign)


def fstar(vstar):
    """``f*`` as a function of unit vectors, for use with ``level_functional``."""
    return lambda nu: fstar_eval(nu, vstar)


def one(nu) -> np.ndarray:
    return np.ones(len(nu))


def level_functional(curve: LevelCurve, f) -> np.ndarray:
    """``(1 / sigma_2(T)) sum_segments f(nu) * length``."""
    if curve.empty:
        probe = np.asarray(f(np.array([[1.0, 0.0]])))
        return np.zeros(probe.shape[1:] if probe.ndim > 1 else ())
    vals = np.asarray(f(curve.nu), dtype=float)
    weighted = vals * curve.lengths.reshape((-1,) + (1,) * (vals.ndim - 1))
    return weighted.sum(axis=0) / curve.domain_area


def functional_triple(curve: LevelCurve, vstar, n: float) -> FunctionalTriple:
    """Observed ``J_1``, ``J_{f*}`` and the ratio coordinates."""
    if curve.empty:
        raise NoCrossing(f"level {curve.level} is not crossed")
    vstar = np.asarray(vstar, dtype=float)
    j_one = float(level_functional(curve, one))
    j_star = level_functional(curve, fstar(vstar))
    ratio = j_star / j_one
    vss = np.array([-vstar[1], vstar[0]])
    return FunctionalTriple(j_one, j_star, float(ratio @ vstar), float(ratio @ vss), float(n))


def epanechnikov(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1.0, 0.75 * (1.0 - x * x), 0.0)


def smoothed_functional(field: GridField, u: float, sigma: float, f=one) -> np.ndarray:
    """Coarea-smoothed functional ``(1/sigma_2(T)) int f(nu) K_sigma(u - X) |grad X| dt``.

    Evaluated as a weighted sum over the grid nodes with composite Simpson
    weights (the node count is odd by construction), which integrates the
    piecewise quadratic kernel exactly on a linear field when ``sigma`` is an
    even multiple of the spacing.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if field.gradient is None:
        gradient_field(field)
    g = field.gradient.reshape(2, -1).T
    norm = np.hypot(g[:, 0], g[:, 1])
    weight = epanechnikov((u - field.values.ravel()) / sigma) / sigma * norm
    npts = field.values.shape[0]
    simpson = np.where(np.arange(npts) % 2 == 1, 4.0, 2.0) / 3.0
    simpson[[0, -1]] = 1.0 / 3.0
    weight = weight * np.outer(simpson, simpson).ravel() * field.spacing ** 2
    active = weight > 0
    if not np.any(active):
        probe = np.asarray(f(np.array([[1.0, 0.0]])))
        return np.zeros(probe.shape[1:] if probe.ndim > 1 else ())
    nu = g[active] / norm[active, None]
    vals = np.asarray(f(nu), dtype=float)
    w = weight[active].reshape((-1,) + (1,) * (vals.ndim - 1))
    return (vals * w).sum(axis=0) / field.domain_area


def write_curve_csv(path, curve: LevelCurve) -> None:
    table = np.column_stack([curve.segments, curve.lengths, curve.nu]) if not curve.empty else np.empty((0, 7))
    with open(path, "w") as fh:
        fh.write("# schema=1\n")
        np.savetxt(fh, table, delimiter=",", header="x0,y0,x1,y1,len,nux,nuy", comments="", fmt="%.17g")

