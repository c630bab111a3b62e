"""Points, d-planes, projections, angles, and normalized plane distances.

A d-plane is stored as a base point plus an orthonormal tangent frame, so
projections are two small matrix products and frames compose directly with
Jacobians downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

FRAME_TOL = 1e-12


class DimensionMismatch(ValueError):
    pass


class PlaneMissesBall(ValueError):
    pass


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Plane:
    """Affine d-plane: base point (n,) and orthonormal frame rows (d, n)."""

    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=np.float64)
        frame = np.atleast_2d(np.asarray(self.frame, dtype=np.float64))
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "frame", frame)
        if frame.shape[1] != base.shape[0]:
            raise DimensionMismatch(
                f"frame is {frame.shape[1]}-dimensional, base is {base.shape[0]}-dimensional"
            )
        gram = frame @ frame.T
        if not np.allclose(gram, np.eye(frame.shape[0]), atol=FRAME_TOL * 10):
            raise ValueError("frame rows must be orthonormal")
        if not (np.all(np.isfinite(base)) and np.all(np.isfinite(frame))):
            raise ValueError("plane entries must be finite")

    @property
    def d(self) -> int:
        return self.frame.shape[0]

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @classmethod
    def from_spanning(cls, base, vectors) -> "Plane":
        """Build a plane from (possibly non-orthonormal) spanning vectors."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        q, r = np.linalg.qr(vectors.T)
        rank = int(np.sum(np.abs(np.diag(r)) > 1e-13 * max(1.0, np.abs(r).max())))
        if rank < vectors.shape[0]:
            raise ValueError("spanning vectors are linearly dependent")
        return cls(np.asarray(base, dtype=np.float64), q.T[: vectors.shape[0]])

    def tangent_projector(self) -> np.ndarray:
        """The n x n matrix projecting onto the direction span."""
        return self.frame.T @ self.frame

    def shifted_to(self, point) -> "Plane":
        """Parallel plane through ``point``."""
        return Plane(np.asarray(point, dtype=np.float64), self.frame)


def _check_dim(plane: Plane, y: np.ndarray):
    if y.shape[-1] != plane.n:
        raise DimensionMismatch(f"point has dimension {y.shape[-1]}, plane lives in R^{plane.n}")


def project(plane: Plane, y) -> np.ndarray:
    """Orthogonal projection of y (or rows of y) onto the plane."""
    y = np.asarray(y, dtype=np.float64)
    _check_dim(plane, y)
    rel = y - plane.base
    return plane.base + (rel @ plane.frame.T) @ plane.frame


def project_linear(plane: Plane, y) -> np.ndarray:
    """Projection onto the direction span through the origin."""
    y = np.asarray(y, dtype=np.float64)
    _check_dim(plane, y)
    return (y @ plane.frame.T) @ plane.frame


def normal_project(plane: Plane, y) -> np.ndarray:
    """Projection onto the orthogonal complement of the direction span."""
    y = np.asarray(y, dtype=np.float64)
    _check_dim(plane, y)
    return y - project_linear(plane, y)


def dist_to_plane(plane: Plane, y) -> np.ndarray | float:
    """Euclidean distance from y (or rows of y) to the affine plane."""
    y = np.asarray(y, dtype=np.float64)
    _check_dim(plane, y)
    rel = y - plane.base
    resid = rel - (rel @ plane.frame.T) @ plane.frame
    if resid.ndim == 1:
        return float(np.linalg.norm(resid))
    return np.linalg.norm(resid, axis=-1)


def plane_angle(p: Plane, q: Plane) -> float:
    """Largest principal angle between the direction spans, in [0, pi/2]."""
    if p.n != q.n or p.d != q.d:
        raise DimensionMismatch("planes must share ambient and intrinsic dimensions")
    sv = np.linalg.svd(p.frame @ q.frame.T, compute_uv=False)
    return float(np.arccos(np.clip(sv.min(), -1.0, 1.0)))


@lru_cache(maxsize=32)
def unit_ball_samples(d: int, m: int) -> np.ndarray:
    """Deterministic quasi-uniform samples of the closed unit d-ball.

    For d >= 2 a quarter of the budget is spent on the boundary sphere so
    sup-type distances are not systematically under-read.
    """
    if d == 1:
        t = -1.0 + (2.0 * np.arange(m) + 1.0) / m
        return np.concatenate([t, [-1.0, 1.0]])[:, None]
    if d == 2:
        idx = np.arange(m)
        half = _halton(idx, 2)
        rad = np.sqrt(half)
        ang = 2.0 * np.pi * _halton(idx, 3)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        nb = max(m // 4, 8)
        bang = 2.0 * np.pi * (np.arange(nb) + 0.5) / nb
        ring = np.stack([np.cos(bang), np.sin(bang)], axis=1)
        return np.concatenate([pts, ring], axis=0)
    rng = np.random.default_rng(727)
    dirs = rng.normal(size=(m, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rad = _halton(np.arange(m), 2) ** (1.0 / d)
    rad[: max(m // 4, 8)] = 1.0
    return rad[:, None] * dirs


def _halton(idx: np.ndarray, base: int) -> np.ndarray:
    result = np.zeros(len(idx), dtype=np.float64)
    f = 1.0
    i = idx.astype(np.int64) + 1
    while np.any(i > 0):
        f /= base
        result += f * (i % base)
        i //= base
    return result


def ball_slice(plane: Plane, x, r: float):
    """Center and radius of plane ∩ B(x, r) as a d-disk on the plane."""
    x = np.asarray(x, dtype=np.float64)
    c = project(plane, x)
    off2 = float(np.dot(x - c, x - c))
    if off2 > r * r:
        raise PlaneMissesBall(
            f"plane at distance {np.sqrt(off2):.3g} misses ball of radius {r:.3g}"
        )
    return c, float(np.sqrt(max(r * r - off2, 0.0)))


def plane_dist(x, r: float, p: Plane, q: Plane, m: int = 1024) -> float:
    """Normalized Hausdorff distance between the planes inside B(x, r).

    Each one-sided sup is taken over quasi-uniform samples of that plane's
    slice of the ball, so the result is symmetric in (p, q) by construction.
    """
    if m < 32:
        raise ValueError(f"need at least 32 samples, got {m}")
    if p.n != q.n or p.d != q.d:
        raise DimensionMismatch("planes must share ambient and intrinsic dimensions")
    sup_pq = _one_sided_sup(x, r, p, q, m)
    sup_qp = _one_sided_sup(x, r, q, p, m)
    return max(sup_pq, sup_qp) / r


def _one_sided_sup(x, r, src: Plane, dst: Plane, m: int) -> float:
    c, rho = ball_slice(src, x, r)
    pts = c + (rho * unit_ball_samples(src.d, m)) @ src.frame
    return float(np.max(dist_to_plane(dst, pts)))
