"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation; the compiled module is
preferred when it imports, and the two are cross-checked in the test suite.
"""

from __future__ import annotations

import functools
import math

import numpy as np


def march_squares(values: np.ndarray, level: float, origin: float, spacing: float) -> np.ndarray:
    """Marching squares on a square grid, returning ``(S, 4)`` segments ``x0, y0, x1, y1``.

    ``values[i, j]`` sits at ``(origin + i h, origin + j h)``. Segments come out
    ordered by cell (row-major over ``(i, j)``); a saddle cell contributes two
    segments, paired by the sign of the cell-centre average.
    """
    v = np.ascontiguousarray(values, dtype=float)
    n = v.shape[0]
    xs = origin + np.arange(n) * spacing
    above = v >= level

    # Edge crossings. Horizontal edges join (i, j)-(i+1, j); vertical edges
    # join (i, j)-(i, j+1).
    hcross = above[:-1, :] != above[1:, :]
    vcross = above[:, :-1] != above[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        th = (level - v[:-1, :]) / (v[1:, :] - v[:-1, :])
        tv = (level - v[:, :-1]) / (v[:, 1:] - v[:, :-1])
    hx = xs[:-1, None] + th * spacing
    hy = np.broadcast_to(xs[None, :], hx.shape)
    vx = np.broadcast_to(xs[:, None], tv.shape)
    vy = xs[None, :-1] + tv * spacing

    # Per-cell edge points: e0 bottom, e1 right, e2 top, e3 left.
    ex = np.stack([hx[:, :-1], vx[1:, :], hx[:, 1:], vx[:-1, :]], axis=-1)
    ey = np.stack([hy[:, :-1], vy[1:, :], hy[:, 1:], vy[:-1, :]], axis=-1)
    flags = np.stack([hcross[:, :-1], vcross[1:, :], hcross[:, 1:], vcross[:-1, :]], axis=-1)
    count = flags.sum(axis=-1)

    m = n - 1
    cell_id = np.arange(m * m).reshape(m, m)
    pieces = []

    two = count == 2
    if np.any(two):
        f = flags[two]
        first = np.argmax(f, axis=1)
        second = 3 - np.argmax(f[:, ::-1], axis=1)
        sx, sy = ex[two], ey[two]
        rows = np.arange(len(first))
        seg = np.column_stack([sx[rows, first], sy[rows, first], sx[rows, second], sy[rows, second]])
        pieces.append((cell_id[two] * 2, seg))

    four = count == 4
    if np.any(four):
        v00, v10 = v[:-1, :-1][four], v[1:, :-1][four]
        v11, v01 = v[1:, 1:][four], v[:-1, 1:][four]
        centre = 0.25 * (((v00 + v10) + v11) + v01)
        keep_diag = (v00 >= level) == (centre >= level)
        # keep_diag: v10 and v01 are cut off -> (e0, e1), (e2, e3)
        # otherwise: v00 and v11 are cut off -> (e0, e3), (e1, e2)
        a1 = np.zeros(len(v00), dtype=int)
        b1 = np.where(keep_diag, 1, 3)
        a2 = np.where(keep_diag, 2, 1)
        b2 = np.where(keep_diag, 3, 2)
        sx, sy = ex[four], ey[four]
        rows = np.arange(len(v00))
        seg1 = np.column_stack([sx[rows, a1], sy[rows, a1], sx[rows, b1], sy[rows, b1]])
        seg2 = np.column_stack([sx[rows, a2], sy[rows, a2], sx[rows, b2], sy[rows, b2]])
        ids = cell_id[four] * 2
        pieces.append((ids, seg1))
        pieces.append((ids + 1, seg2))

    if not pieces:
        return np.empty((0, 4))
    keys = np.concatenate([p[0] for p in pieces])
    segs = np.concatenate([p[1] for p in pieces])
    return segs[np.argsort(keys, kind="stable")]


@functools.lru_cache(maxsize=32)
def contingency_tables(q: int) -> np.ndarray:
    """All 3x3 nonnegative integer matrices with entry sum ``q``, flattened row-major."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for x in range(remaining + 1):
            rec(prefix + [x], remaining - x, slots - 1)

    rec([], q, 9)
    return np.array(out, dtype=np.int64)


def multi_indices(q: int) -> list[tuple[int, int, int]]:
    """Chaos indices of order ``q`` in ascending lexicographic order."""
    return [(k1, k2, q - k1 - k2) for k1 in range(q + 1) for k2 in range(q - k1 + 1)]


def index_of(q: int, k1: int, k2: int) -> int:
    """Position of ``(k1, k2, q - k1 - k2)`` in ``multi_indices(q)``."""
    return k1 * (q + 1) - k1 * (k1 - 1) // 2 + k2


def mehler_table(q: int, powers: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Integrated Mehler moments ``sum_p w_p E[H_k(Y0) H_m(Yv_p)]`` for all ``|k| = |m| = q``.

    ``powers[e, a, p]`` holds ``Gamma_a(v_p)^e`` for the row-major entry ``a``
    of the 3x3 cross-correlation at quadrature point ``p``.
    """
    tables = contingency_tables(q)
    lf = np.array([math.lgamma(i + 1) for i in range(q + 1)])
    rows = tables.reshape(-1, 3, 3).sum(axis=2)
    cols = tables.reshape(-1, 3, 3).sum(axis=1)
    log_coef = (lf[rows].sum(axis=1) + lf[cols].sum(axis=1) - lf[tables].sum(axis=1))
    coef = np.exp(log_coef)
    kidx = np.array([index_of(q, r[0], r[1]) for r in rows])
    midx = np.array([index_of(q, c[0], c[1]) for c in cols])

    nk = (q + 1) * (q + 2) // 2
    out = np.zeros((nk, nk))
    chunk = max(1, 2_000_000 // max(1, powers.shape[2]))
    for start in range(0, len(tables), chunk):
        d = tables[start:start + chunk]
        prod = powers[d[:, 0], 0, :].copy()
        for a in range(1, 9):
            prod *= powers[d[:, a], a, :]
        vals = prod @ weights * coef[start:start + chunk]
        np.add.at(out, (kidx[start:start + chunk], midx[start:start + chunk]), vals)
    return out
