"""Flatness coefficients: beta numbers, density ratios, Jones-type square
functions, plane-variation coefficients gamma_k, and the local coefficients
epsilon_k over a coherent collection.

Integrals against d-dimensional measure are discretized as weighted sums over
the sample (uniform unit-total weights by default), so measure-weighted and
unweighted variants share one code path. Square-function sums are always
reported as partial sums with their per-scale terms; scales finer than the
cloud's median nearest-neighbor spacing carry no information and are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ccbp import CCBP
from .cloud import PointCloud
from .fitting import PlaneFit, fit_plane, stride_cap
from .geometry import Plane, PlaneMissesBall, plane_dist
from .nets import MultiscaleNet, scale_radius


@dataclass
class BetaRecord:
    x: np.ndarray
    k: int
    p: str  # objective tag: sup | l1 | l2
    value: float
    plane: Plane | None
    ball_count: int = 0
    degenerate: bool = False


@dataclass
class JonesRecord:
    x: np.ndarray
    alpha: float
    p: str
    value: float
    terms: list[float]
    scales: list[int]
    log_gamma: float | None = None
    truncated_at: int | None = None


@dataclass
class GammaRecord:
    x: np.ndarray
    k: int
    value: float
    cross_term: float
    nearby_term: float
    skipped_neighbors: int = 0


def beta(
    cloud: PointCloud,
    net: MultiscaleNet,
    x,
    k: int,
    p: str = "sup",
    max_fit_points: int = 20000,
) -> BetaRecord:
    """Scale-normalized distance to the best d-plane in B(x, r_k).

    An empty ball scores 0 with no witness plane. Balls above
    ``max_fit_points`` are stride-subsampled before the fit.
    """
    x = np.asarray(x, dtype=np.float64)
    ball = net.cloud_ball(x, k)
    if ball.size == 0:
        return BetaRecord(x, k, p, 0.0, None, 0)
    count = int(ball.size)
    ball = stride_cap(ball, max_fit_points)
    w = cloud.effective_weights()[ball]
    fit = fit_plane(cloud.points[ball], w, x, net.scale(k).r, p, cloud.d)
    return BetaRecord(x, k, p, fit.value, fit.plane, count, fit.degenerate)


def beta_compare(cloud: PointCloud, net: MultiscaleNet, x, k: int):
    """(beta_1, beta_2, bound) against the shared L2-optimal witness plane.

    The bound (mass(B)/r^d)^(1/2) * beta_2 dominates beta_1 by the integral
    comparison of first and second moments; with one witness plane this is
    exact up to roundoff.
    """
    x = np.asarray(x, dtype=np.float64)
    sc = net.scale(k)
    ball = net.cloud_ball(x, k)
    if ball.size == 0:
        return 0.0, 0.0, 0.0
    pts = cloud.points[ball]
    w = cloud.effective_weights()[ball]
    fit = fit_plane(pts, w, x, sc.r, "l2", cloud.d)
    rel = pts - fit.plane.base
    resid = rel - (rel @ fit.plane.frame.T) @ fit.plane.frame
    dists = np.linalg.norm(resid, axis=1)
    d = cloud.d
    r = sc.r
    b1 = float((w * dists).sum() / r ** (d + 1))
    b2 = float(np.sqrt((w * dists**2).sum() / r ** (d + 2)))
    mass_ratio = float(w.sum() / r**d)
    bound = np.sqrt(mass_ratio) * b2
    if b1 > bound + 1e-9:
        raise AssertionError(f"moment comparison violated: {b1} > {bound}")
    return b1, b2, bound


def upper_density(cloud: PointCloud, x, scales) -> tuple[dict[int, float], float]:
    """Per-scale mass ratios mass(B(x, r_k)) / r_k^d and their fine-scale max."""
    x = np.asarray(x, dtype=np.float64)
    w = cloud.effective_weights()
    diff = cloud.points - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    ratios = {}
    for k in scales:
        r = scale_radius(k)
        ratios[k] = float(w[d2 <= r * r].sum() / r**cloud.d)
    finest = sorted(scales)[-5:]
    proxy = max(ratios[k] for k in finest)
    return ratios, proxy


def scale_floor(cloud: PointCloud, K: int) -> int:
    """Largest usable scale index: r_k at or above the median NN spacing."""
    nn = cloud.median_nn_distance()
    if nn <= 0:
        return K
    k = 0
    while k + 1 <= K and scale_radius(k + 1) >= nn:
        k += 1
    return k


def jones(
    cloud: PointCloud,
    net: MultiscaleNet,
    x,
    alpha: float,
    p: str = "sup",
    K: int | None = None,
    log_gamma: float | None = None,
) -> JonesRecord:
    """Partial square-function sum sum_k beta(x, r_k)^2 / r_k^(2 alpha).

    At alpha = 1 the scale weight degenerates, so the log-corrected variant
    beta^2 log(1/r_k)^(2 gamma) / r_k^2 is required (log_gamma > 1/2); its
    k = 0 term vanishes identically and is skipped.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if alpha == 1.0 and log_gamma is None:
        raise ValueError(
            "alpha = 1 diverges without the log correction; pass log_gamma > 1/2"
        )
    if log_gamma is not None and log_gamma <= 0.5:
        raise ValueError(f"log_gamma must exceed 1/2, got {log_gamma}")
    if K is None:
        K = net.K
    kmax = min(K, scale_floor(cloud, K))
    terms, scales = [], []
    for k in range(kmax + 1):
        rec = beta(cloud, net, x, k, p)
        r = scale_radius(k)
        if log_gamma is not None:
            if k == 0:
                continue
            term = rec.value**2 * np.log(1.0 / r) ** (2 * log_gamma) / r**2
        else:
            term = rec.value**2 / r ** (2 * alpha)
        terms.append(float(term))
        scales.append(k)
    return JonesRecord(
        np.asarray(x, dtype=np.float64),
        alpha,
        p,
        float(sum(terms)),
        terms,
        scales,
        log_gamma,
        truncated_at=kmax if kmax < K else None,
    )


def jones_from_terms(beta_values, alpha: float, log_gamma: float | None = None) -> float:
    """Assemble the square-function sum from per-scale beta values."""
    total = 0.0
    for k, b in enumerate(beta_values):
        r = scale_radius(k)
        if log_gamma is not None:
            if k == 0:
                continue
            total += b**2 * np.log(1.0 / r) ** (2 * log_gamma) / r**2
        else:
            total += b**2 / r ** (2 * alpha)
    return float(total)


def gamma_k(cloud: PointCloud, ccbp: CCBP, x, k: int, samples: int = 1024) -> GammaRecord:
    """Plane variation between scales k and k+1 plus across B(x, 35 r_k).

    Planes are resolved at the net point nearest the query, and the sup over
    nearby cloud points is taken over the distinct planes of net points
    within 36 r_k (every nearby cloud point resolves to one of these).
    Neighbor planes that miss B(x, r_k) are skipped and counted.
    """
    if k + 1 > ccbp.K:
        raise ValueError(f"gamma_k needs planes at scale {k + 1}; CCBP depth is {ccbp.K}")
    x = np.asarray(x, dtype=np.float64)
    r = scale_radius(k)
    p_here, row_here = ccbp.plane_near(x, k)
    p_fine, _ = ccbp.plane_near(x, k + 1)
    cross = plane_dist(x, r, p_fine, p_here, samples)

    sc = ccbp.net.scale(k)
    nearby = sc.net_grid.query(x, 36.0 * r)
    sup_term = 0.0
    skipped = 0
    for row in nearby:
        if row == row_here:
            continue
        try:
            val = plane_dist(x, r, p_here, ccbp.planes[k][row], samples)
        except PlaneMissesBall:
            skipped += 1
            continue
        sup_term = max(sup_term, val)
    return GammaRecord(x, k, cross + sup_term, cross, sup_term, skipped)


def jones_gamma(cloud: PointCloud, ccbp: CCBP, x, alpha: float, K: int, samples: int = 1024):
    """Partial sum of gamma_k(x)^2 / r_k^(2 alpha) with its per-scale terms."""
    terms = []
    for k in range(min(K, ccbp.K - 1) + 1):
        rec = gamma_k(cloud, ccbp, x, k, samples)
        terms.append(rec.value**2 / scale_radius(k) ** (2 * alpha))
    return float(sum(terms)), terms


def epsilon_k(
    ccbp: CCBP, y, k: int, samples: int = 1024, literal_scale_k_balls: bool = False
) -> float:
    """Local plane-variation coefficient at scales {k-1, k} near y.

    Zero outside the 10-dilated scale-k neighborhood; otherwise the sup of
    normalized plane distances over admissible pairs. The membership ball of
    the second index is read at its own scale (11 B_{i,l}); set
    ``literal_scale_k_balls`` to read it at scale k instead.
    """
    if k < 1:
        raise ValueError("epsilon_k is defined for k >= 1")
    if k > ccbp.K:
        raise ValueError(f"CCBP depth {ccbp.K} has no scale {k}")
    y = np.asarray(y, dtype=np.float64)
    sc_k = ccbp.net.scale(k)
    js = sc_k.net_grid.query(y, 10.0 * sc_k.r)
    if js.size == 0:
        return 0.0
    best = 0.0
    for l in (k - 1, k):
        sc_l = ccbp.net.scale(l)
        radius = 11.0 * (sc_k.r if literal_scale_k_balls else sc_l.r)
        is_ = sc_l.net_grid.query(y, radius)
        for i in is_:
            x_i = sc_l.points[i]
            p_i = ccbp.planes[l][i]
            for j in js:
                if l == k and i == j:
                    continue
                val = plane_dist(x_i, 100.0 * sc_l.r, ccbp.planes[k][j], p_i, samples)
                best = max(best, val)
    return best
