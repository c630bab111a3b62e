"""Maximal separated nets across scales r_k = 10^-k and their dilations.

Net selection is greedy in ascending point-index order, so rebuilding from
the same cloud reproduces the identical net. Each scale carries two hashed
grid indexes: one over the net points (dilated-ball queries) and one over the
whole cloud (ball membership for fitting).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cloud import PointCloud


def scale_radius(k: int) -> float:
    return 10.0**-k


@dataclass
class GridIndex:
    """Sorted-hash uniform grid over a fixed point set."""

    points: np.ndarray
    cell: float
    codes_sorted: np.ndarray = field(init=False)
    order: np.ndarray = field(init=False)

    def __post_init__(self):
        self.codes_sorted, self.order = kernels.grid_build(self.points, self.cell)

    def query(self, y, radius: float) -> np.ndarray:
        """Indices of points within ``radius`` of ``y``, ascending."""
        return kernels.query_radius(
            self.points, self.codes_sorted, self.order, self.cell, np.asarray(y, dtype=np.float64), radius
        )


@dataclass
class NetScale:
    k: int
    r: float
    indices: np.ndarray  # rows into the cloud
    points: np.ndarray  # (J, n)
    net_grid: GridIndex
    cloud_grid: GridIndex


@dataclass
class MultiscaleNet:
    cloud: PointCloud
    K: int
    scales: list[NetScale]

    def scale(self, k: int) -> NetScale:
        if not 0 <= k <= self.K:
            raise ValueError(f"scale {k} outside built range 0..{self.K}")
        return self.scales[k]

    def cloud_ball(self, x, k: int, radius_mult: float = 1.0) -> np.ndarray:
        """Cloud rows within radius_mult * r_k of x."""
        sc = self.scale(k)
        return sc.cloud_grid.query(x, radius_mult * sc.r)

    def nearest_net(self, y, k: int) -> tuple[int, float]:
        """(index into scale-k net, distance); ties go to the lowest index.

        Grid-accelerated: a radius-r_k query succeeds for any point the net
        covers; the radius doubles until a certified nearest hit, falling
        back to a linear scan for far-away queries.
        """
        sc = self.scale(k)
        y = np.asarray(y, dtype=np.float64)
        radius = sc.r
        for _ in range(4):
            cand = sc.net_grid.query(y, radius)
            if cand.size:
                diff = sc.points[cand] - y
                d2 = np.einsum("ij,ij->i", diff, diff)
                best = int(np.argmin(d2))
                dist = float(np.sqrt(d2[best]))
                if dist <= radius:
                    return int(cand[best]), dist
            radius *= 2.0
        diff = sc.points - y
        d2 = np.einsum("ij,ij->i", diff, diff)
        i = int(np.argmin(d2))
        return i, float(np.sqrt(d2[i]))


def build_net(cloud: PointCloud, K: int, recenter: bool = False) -> MultiscaleNet:
    """Greedy maximal r_k-separated nets for k = 0..K.

    ``recenter`` snaps each net point to a nearby cloud point that minimizes
    the local L1 plane-fit residual, keeping only snaps that preserve the
    separation. Coverage may then degrade to 1.25 r_k; leave it off when the
    strict net invariants matter.
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    scales = []
    for k in range(K + 1):
        r = scale_radius(k)
        idx = kernels.greedy_net(cloud.points, r)
        pts = cloud.points[idx]
        scales.append(
            NetScale(
                k=k,
                r=r,
                indices=idx,
                points=pts,
                net_grid=GridIndex(pts, 11.0 * r),
                cloud_grid=GridIndex(cloud.points, 10.0 * r),
            )
        )
    net = MultiscaleNet(cloud, K, scales)
    if recenter:
        _recenter(net)
    return net


def _recenter(net: MultiscaleNet):
    """Snap net points toward local L1-fit-minimizing cloud points."""
    from .fitting import fit_plane  # local import to avoid a cycle

    cloud = net.cloud
    for sc in net.scales:
        new_pts = sc.points.copy()
        for row, x in enumerate(sc.points):
            cand = sc.cloud_grid.query(x, 0.25 * sc.r)
            if cand.size <= 1:
                continue
            cand = cand[:8]
            ball = sc.cloud_grid.query(x, sc.r)
            pts = cloud.points[ball]
            w = cloud.effective_weights()[ball]
            best, best_val = None, np.inf
            for ci in cand:
                fit = fit_plane(pts, w, cloud.points[ci], sc.r, "l1", cloud.d)
                if fit.value < best_val:
                    best, best_val = ci, fit.value
            if best is None:
                continue
            moved = cloud.points[best]
            others = np.delete(new_pts, row, axis=0)
            if others.size and np.linalg.norm(others - moved, axis=1).min() < sc.r:
                continue
            new_pts[row] = moved
            sc.indices[row] = best
        sc.points = new_pts
        sc.net_grid = GridIndex(new_pts, 11.0 * sc.r)


def in_V(net: MultiscaleNet, y, k: int, lam: float) -> tuple[bool, int]:
    """Whether y lies in the union of lam-dilated scale-k balls.

    Returns (membership, index of the nearest net point at scale k).
    """
    if lam < 1.0:
        raise ValueError(f"dilation must be >= 1, got {lam}")
    i, dist = net.nearest_net(y, k)
    return dist <= lam * net.scale(k).r, i
