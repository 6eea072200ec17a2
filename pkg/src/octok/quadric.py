"""Quadric error metrics: squared point-to-plane energies and their minimizers.

A quadric is stored as ``(A, b, c)`` with energy ``E(x) = x'Ax + 2b'x + c``.
For a single plane through ``p`` with unit normal ``n``: ``A = nn'``,
``b = -nn'p`` and ``c = p'nn'p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, PreconditionError

#: Smallest reciprocal condition number accepted for a direct solve.
RCOND_MIN = 1e-8
#: Tikhonov weight relative to ``trace(A)`` on the regularized path.
TIKHONOV_SCALE = 1e-9


@dataclass(frozen=True)
class Quadric:
    A: np.ndarray
    b: np.ndarray
    c: float
    weight: int = 0

    @classmethod
    def zero(cls):
        return cls(np.zeros((3, 3)), np.zeros(3), 0.0, 0)

    def energy(self, x):
        """E at one point (3,) or many points (N, 3)."""
        x = np.asarray(x, dtype=np.float64)
        return np.einsum("...i,ij,...j->...", x, self.A, x) + 2.0 * x @ self.b + self.c

    def __add__(self, other):
        return quadric_sum(self, other)

    @property
    def matrix(self):
        """The equivalent symmetric 4x4 form acting on homogeneous ``[x, 1]``."""
        Q = np.empty((4, 4))
        Q[:3, :3] = self.A
        Q[:3, 3] = Q[3, :3] = self.b
        Q[3, 3] = self.c
        return Q


@dataclass(frozen=True)
class QuadricMin:
    x_star: np.ndarray
    e_star: float
    regularized: bool


def quadric_from_point_plane(p, n):
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise PreconditionError("plane normal must have unit length")
    d = float(n @ p)
    return Quadric(np.outer(n, n), -n * d, d * d, 1)


def quadric_from_points(positions, normals):
    """Summed quadric of many oriented points (one plane per point)."""
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    N = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    d = np.einsum("ij,ij->i", N, P)
    return Quadric(N.T @ N, -(N.T @ d), float(d @ d), len(P))


def quadric_sum(q1, q2):
    return Quadric(q1.A + q2.A, q1.b + q2.b, q1.c + q2.c, q1.weight + q2.weight)


def quadric_minimize(q, fallback_target, epsilon=None):
    """Minimize the quadric energy.

    Solves ``A x = -b`` directly when ``A`` is well conditioned. Otherwise the
    energy plus ``epsilon * |x - fallback_target|^2`` is minimized, which
    picks the minimizer closest to the target along flat directions.
    ``epsilon`` defaults to ``1e-9 * trace(A)``. The returned energy is always
    that of the unregularized quadric, clamped at zero.
    """
    t = np.asarray(fallback_target, dtype=np.float64)
    # work relative to the target so the energy at x* does not cancel badly
    bt = q.A @ t + q.b
    ct = float(q.energy(t))
    y, regularized = _solve_shifted(q.A, bt, epsilon)
    e = ct + 2.0 * float(bt @ y) + float(y @ q.A @ y)
    return QuadricMin(t + y, max(e, 0.0), regularized)


def _solve_shifted(A, bt, epsilon):
    w = np.linalg.eigvalsh(A)
    if w[-1] > 0 and w[0] / w[-1] >= RCOND_MIN:
        return np.linalg.solve(A, -bt), False
    if epsilon is None:
        epsilon = TIKHONOV_SCALE * np.trace(A)
    if epsilon < 0:
        raise PreconditionError("epsilon must be non-negative")
    if epsilon == 0:
        if not w[-1] > 0:
            return np.zeros(3), True
        return -np.linalg.pinv(A, hermitian=True) @ bt, True
    return np.linalg.solve(A + epsilon * np.eye(3), -bt), True


def cell_error(positions, normals, fallback_target=None):
    """Average minimized quadric error of the planes of ``positions``.

    Returns ``(e_star, x_star, regularized)`` where ``e_star`` is the summed
    quadric minimum divided by the number of points. The fallback target
    defaults to the centroid of the points.
    """
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(P) == 0:
        raise EmptyInputError("cell has no points")
    target = P.mean(axis=0) if fallback_target is None else np.asarray(fallback_target, dtype=np.float64)
    # build the quadric around the target; quadric_minimize then shifts by 0
    q = quadric_from_points(P - target, normals)
    m = quadric_minimize(q, np.zeros(3))
    return m.e_star / len(P), m.x_star + target, m.regularized


def batched_cell_errors(positions, normals, starts, counts):
    """Vectorized ``cell_error`` for contiguous point ranges.

    ``positions[starts[k]:starts[k]+counts[k]]`` belongs to cell ``k``.
    Returns ``(e_star, x_star, regularized)`` arrays over the cells; every
    cell uses its centroid as fallback target.
    """
    P = np.asarray(positions, dtype=np.float64)
    N = np.asarray(normals, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    k = len(starts)
    if k == 0:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=bool)
    if np.any(counts <= 0):
        raise EmptyInputError("cell has no points")
    owner = np.repeat(np.arange(k), counts)
    idx = np.concatenate([np.arange(s, s + c) for s, c in zip(starts, counts)]) if k > 1 \
        else np.arange(starts[0], starts[0] + counts[0])
    Pc, Nc = P[idx], N[idx]
    bounds = np.concatenate([[0], np.cumsum(counts)[:-1]])
    centroid = np.add.reduceat(Pc, bounds, axis=0) / counts[:, None]
    Pl = Pc - centroid[owner]
    d = np.einsum("ij,ij->i", Nc, Pl)
    A = np.add.reduceat(Nc[:, :, None] * Nc[:, None, :], bounds, axis=0)
    b = -np.add.reduceat(Nc * d[:, None], bounds, axis=0)
    c = np.add.reduceat(d * d, bounds)

    w = np.linalg.eigvalsh(A)
    direct = (w[:, -1] > 0) & (w[:, 0] >= RCOND_MIN * w[:, -1])
    eps = np.where(direct, 0.0, TIKHONOV_SCALE * np.trace(A, axis1=1, axis2=2))
    M = A + eps[:, None, None] * np.eye(3)
    y = np.zeros((k, 3))
    ok = direct | (eps > 0)
    if ok.any():
        y[ok] = np.linalg.solve(M[ok], -b[ok][:, :, None])[:, :, 0]
    e = c + 2.0 * np.einsum("ki,ki->k", b, y) + np.einsum("ki,kij,kj->k", y, A, y)
    return np.maximum(e, 0.0) / counts, centroid + y, ~direct
