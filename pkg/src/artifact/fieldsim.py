"""Sampling of the affine field ``X(t) = Z(A t)`` on a regular grid.

Samples are drawn by circulant embedding on a (at least) doubled torus, so
the covariance on the grid is exact up to the eigenvalue clipping tolerance.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .covariance import IsotropicCovariance

_MASK64 = (1 << 64) - 1
GRID_MAGIC = b"GRF2"
_HEADER = struct.Struct("<4sidiiQ")  # magic, n, h, rows, cols, seed
assert _HEADER.size == 32


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function applied to counter ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def replicate_seed(base_seed: int, index: int) -> int:
    """Seed of replicate ``index``: ``base_seed XOR splitmix64(index)``."""
    return (int(base_seed) & _MASK64) ^ splitmix64(int(index))


def _reduce_half_turn(angle: float) -> float:
    """Map an angle into ``(-pi/2, pi/2]`` modulo pi."""
    a = math.remainder(angle, math.pi)
    if a <= -0.5 * math.pi:
        a += math.pi
    return a


@dataclass(frozen=True)
class AffineModel:
    """``A = P diag(lambda1, lam * lambda1) P^t`` with P the rotation by ``basis_angle``."""

    lambda1: float = 1.0
    lam: float = 1.0
    basis_angle: float = 0.0
    vstar: tuple = (1.0, 0.0)

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ValueError("lambda1 must be positive")
        if not (0.0 < self.lam <= 1.0):
            raise ValueError("lambda must lie in (0, 1]")
        v = np.asarray(self.vstar, dtype=float)
        if v.shape != (2,) or abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("vstar must be a unit 2-vector")
        object.__setattr__(self, "vstar", (float(v[0]), float(v[1])))

    @classmethod
    def from_theta(cls, lambda1: float, lam: float, theta_o: float, vstar=(1.0, 0.0)) -> "AffineModel":
        """Model whose reference vector sits at angle ``theta_o`` in the eigenbasis."""
        phi = math.atan2(vstar[1], vstar[0]) - theta_o
        return cls(lambda1, lam, _reduce_half_turn(phi), tuple(vstar))

    @property
    def lambda2(self) -> float:
        return self.lam * self.lambda1

    @property
    def p_matrix(self) -> np.ndarray:
        c, s = math.cos(self.basis_angle), math.sin(self.basis_angle)
        return np.array([[c, -s], [s, c]])

    @property
    def a_matrix(self) -> np.ndarray:
        p = self.p_matrix
        return p @ np.diag([self.lambda1, self.lambda2]) @ p.T

    @property
    def vstar_array(self) -> np.ndarray:
        return np.array(self.vstar)

    @property
    def vstarstar(self) -> np.ndarray:
        """``v**``: ``v*`` rotated by +pi/2."""
        return np.array([-self.vstar[1], self.vstar[0]])

    def _raw_theta(self) -> float:
        p = self.p_matrix
        v = self.vstar_array
        return math.atan2(v @ p[:, 1], v @ p[:, 0])

    @property
    def theta_o(self) -> float:
        return _reduce_half_turn(self._raw_theta())

    @property
    def p_canonical(self) -> np.ndarray:
        """``P`` or ``-P``, chosen so that ``v* = cos(theta_o) v1 + sin(theta_o) v2``."""
        p = self.p_matrix
        if abs(self._raw_theta() - self.theta_o) > 1.0:
            return -p
        return p

    def with_lambda1(self, lambda1: float) -> "AffineModel":
        return AffineModel(lambda1, self.lam, self.basis_angle, self.vstar)


@dataclass
class GridField:
    """Field values on ``[-n, n]^2``; ``values[i, j]`` sits at ``(-n + i h, -n + j h)``."""

    half_width: float
    spacing: float
    values: np.ndarray
    gradient: np.ndarray | None = None
    seed: int = 0
    meta: dict = dc_field(default_factory=dict)

    @property
    def coords(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.values.shape[0])

    @property
    def domain_area(self) -> float:
        return (2.0 * self.half_width) ** 2


def grid_points(n: float, h: float) -> int:
    cells = 2.0 * n / h
    k = int(round(cells))
    if abs(cells - k) > 1e-9 or k % 2 or k < 8:
        raise ValueError("2n/h must be an even integer >= 8")
    return k + 1


@functools.lru_cache(maxsize=16)
def _embedding_sqrt(cov: IsotropicCovariance, affine: AffineModel, n_points: int, h: float):
    # Torus side: at least twice the grid, and long enough that the
    # covariance has decayed below 1e-12 at half the side in every direction.
    reach = cov.decay_radius() / (affine.lambda2 * h)
    m = max(2 * (n_points - 1), int(math.ceil(n_points - 1 + reach)))
    m = sfft.next_fast_len(m)
    m += m % 2
    lags = np.fft.fftfreq(m, d=1.0 / m) * h
    t = np.stack(np.meshgrid(lags, lags, indexing="ij"), axis=-1) @ affine.a_matrix.T
    base = cov.value(t)
    eig = sfft.fft2(base).real
    floor = 1e-8 * eig.max()
    if eig.min() < -floor:
        raise RuntimeError("embedding failed: enlarge domain")
    # Round-off negatives are clipped and counted (reported in GridField.meta).
    clipped = int(np.count_nonzero(eig < 0))
    return np.sqrt(np.clip(eig, 0.0, None) / (m * m)), clipped


def sample_field(cov: IsotropicCovariance, affine: AffineModel, n: float, h: float, seed: int,
                 with_gradient: bool = True) -> GridField:
    """Draw one stationary sample with covariance ``r_z(A tau)`` on ``[-n, n]^2``."""
    if h > cov.length_scale / (3.0 * affine.lambda1) + 1e-12:
        raise ValueError("grid too coarse: need h <= rho / (3 lambda1)")
    n_points = grid_points(n, h)
    root, clipped = _embedding_sqrt(cov, affine, n_points, float(h))
    m = root.shape[0]
    rng = np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
    noise = rng.standard_normal((2, m, m))
    spectrum = root * (noise[0] + 1j * noise[1])
    values = sfft.fft2(spectrum).real[:n_points, :n_points].copy()
    grid = GridField(float(n), float(h), values, seed=int(seed), meta={"clipped": clipped})
    if with_gradient:
        gradient_field(grid)
    return grid


def gradient_field(grid: GridField) -> np.ndarray:
    """Central differences inside, one-sided at the boundary; stored on ``grid``."""
    d1, d2 = np.gradient(grid.values, grid.spacing, edge_order=1)
    grid.gradient = np.stack([d1, d2])
    return grid.gradient


def field_from_function(func, n: float, h: float) -> GridField:
    """Grid a deterministic function ``func(t1, t2)`` (handy for exact test fields)."""
    n_points = grid_points(n, h)
    x = -n + h * np.arange(n_points)
    t1, t2 = np.meshgrid(x, x, indexing="ij")
    grid = GridField(float(n), float(h), np.asarray(func(t1, t2), dtype=float) + 0.0 * t1)
    gradient_field(grid)
    return grid


# ---------------------------------------------------------------------------
# Grid files
# ---------------------------------------------------------------------------

def write_grid(path, grid: GridField) -> None:
    """Binary export: 32-byte header then little-endian float64 values, row-major."""
    rows, cols = grid.values.shape
    header = _HEADER.pack(GRID_MAGIC, int(round(grid.half_width)), grid.spacing, rows, cols,
                          int(grid.seed) & _MASK64)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_grid(path) -> GridField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("grid file too short")
    magic, n, h, rows, cols, seed = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise ValueError("not a GRF2 grid file")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if values.size != rows * cols:
        raise ValueError("grid file size does not match its header")
    grid = GridField(float(n), float(h), values.reshape(rows, cols).astype(float), seed=seed)
    gradient_field(grid)
    return grid


def write_grid_csv(path, grid: GridField) -> None:
    x = grid.coords
    t1, t2 = np.meshgrid(x, x, indexing="ij")
    table = np.column_stack([t1.ravel(), t2.ravel(), grid.values.ravel()])
    with open(path, "w") as fh:
        fh.write("# schema=1\n")
        np.savetxt(fh, table, delimiter=",", header="t1,t2,value", comments="", fmt="%.17g")
