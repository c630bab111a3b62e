"""Best-fit d-planes under L2 / L1 / sup objectives.

The L2 fit is the exact weighted principal-directions minimizer. The sup and
L1 fits start from it and are refined by a deterministic pattern search over
frame rotations (offsets are re-solved in closed form or by a fixed-point
inner loop at every evaluation). Values are scale-normalized:

    sup:  max_i dist_i / r
    L1:   sum_i w_i dist_i / r^(d+1)
    L2:   sqrt( sum_i w_i dist_i^2 / r^(d+2) )
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import Plane

OBJECTIVES = ("sup", "l1", "l2")
_OBJ_CODE = {"sup": 0, "l1": 1}


class DegenerateBall(ValueError):
    """Fewer than d+1 affinely independent points: the fit is undetermined."""


def stride_cap(idx: np.ndarray, cap: int) -> np.ndarray:
    """Deterministic stride subsample of an index array down to ``cap``."""
    if idx.size <= cap:
        return idx
    stride = idx.size / cap
    return idx[(np.arange(cap) * stride).astype(np.int64)]


@dataclass
class PlaneFit:
    plane: Plane
    value: float
    objective: str
    degenerate: bool = False


def _principal_frame(pts, w, d):
    """Weighted centroid and descending principal directions."""
    wsum = w.sum()
    mean = (w[:, None] * pts).sum(axis=0) / wsum
    rel = pts - mean
    cov = (w[:, None] * rel).T @ rel
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    return mean, evals[order], evecs[:, order].T


def fit_plane(points, weights, center, r, objective: str, d: int, max_iter: int = 200) -> PlaneFit:
    """Best-fit d-plane to weighted points in B(center, r).

    Degenerate inputs (rank below d) return a zero-value fit flagged
    ``degenerate``; callers decide how to fall back.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[1]
    if not 1 <= d < n:
        raise ValueError(f"need 1 <= d < n, got d={d}, n={n}")
    if len(pts) == 0:
        raise ValueError("need at least one point")
    w = (
        np.full(len(pts), 1.0 / len(pts))
        if weights is None
        else np.asarray(weights, dtype=np.float64)
    )
    center = np.asarray(center, dtype=np.float64)

    mean, evals, basis = _principal_frame(pts, w, d)
    span_scale = max(float(np.linalg.norm(pts - mean, axis=1).max()), 1e-300)
    rank = int(np.sum(evals > (1e-13 * span_scale) ** 2 * max(evals.max(), 1.0)))
    if len(pts) <= d or rank < d:
        frame = _complete_frame(basis, d, n)
        return PlaneFit(Plane(mean, frame), 0.0, objective, degenerate=True)

    frame = basis[:d]
    if objective == "l2":
        resid2 = float((w * _sq_dists(pts, mean, frame)).sum())
        return PlaneFit(Plane(mean, frame), float(np.sqrt(resid2 / r ** (d + 2))), "l2")

    q0 = basis  # full orthonormal basis, frame rows first
    qq, t, value = kernels.refine_plane(
        pts, w, center, q0, d, _OBJ_CODE[objective], r, max_iter
    )
    # re-orthonormalize against rotation roundoff, then restate the value
    q_polished = np.linalg.qr(qq.T)[0].T
    q_polished *= np.sign(np.einsum("ij,ij->i", q_polished, qq))[:, None]
    base = center + t @ q_polished[d:]
    plane = Plane(base, q_polished[:d])
    value = _objective_value(pts, w, plane, objective, r, d)
    return PlaneFit(plane, value, objective)


def _sq_dists(pts, base, frame):
    rel = pts - base
    resid = rel - (rel @ frame.T) @ frame
    return np.einsum("ij,ij->i", resid, resid)


def _objective_value(pts, w, plane: Plane, objective: str, r: float, d: int) -> float:
    dists = np.sqrt(_sq_dists(pts, plane.base, plane.frame))
    if objective == "sup":
        return float(dists.max() / r)
    if objective == "l1":
        return float((w * dists).sum() / r ** (d + 1))
    return float(np.sqrt((w * dists**2).sum() / r ** (d + 2)))


def _complete_frame(basis, d, n):
    """First d rows of a full orthonormal basis (padded if rank-deficient)."""
    if basis.shape[0] >= d:
        return basis[:d]
    rows = [row for row in basis]
    for e in np.eye(n):
        if len(rows) == d:
            break
        v = e.copy()
        for row in rows:
            v -= (row @ v) * row
        nv = np.linalg.norm(v)
        if nv > 1e-10:
            rows.append(v / nv)
    return np.array(rows[:d])
