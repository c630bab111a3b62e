"""Coherent collections of balls and planes: assembly and validation.

Assembly fits a sup-objective plane over B(x_jk, A r_k) for every net point
and re-bases it through the net point; balls that cannot determine a d-plane
inherit the parent plane from the nearest coarser net point. The flatness
budget eps is an input, never estimated: validation reports the measured
defects so callers can tighten or reject.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .fitting import fit_plane, stride_cap
from .geometry import Plane, PlaneMissesBall, plane_dist
from .nets import MultiscaleNet, build_net

EPS_MAX_DEFAULT = 0.02
SCHEMA_VERSION = "betaflow.ccbp.v1"

CONDITIONS = ("same-scale", "sigma0", "cross-scale", "initial-proximity")


@dataclass
class CCBP:
    net: MultiscaleNet
    planes: list[list[Plane]]  # [k][row] aligned with net.scales[k].points
    sigma0: Plane
    eps: float
    fit_radius_mult: float = 10.0
    samples: int = 1024

    def __post_init__(self):
        if not 0 < self.eps:
            raise ValueError(f"eps must be positive, got {self.eps}")
        for k, sc in enumerate(self.net.scales):
            for row, plane in enumerate(self.planes[k]):
                if np.linalg.norm(plane.base - sc.points[row]) > 1e-12:
                    raise ValueError(f"plane at scale {k} row {row} misses its net point")

    @property
    def K(self) -> int:
        return self.net.K

    def plane_at(self, k: int, row: int) -> Plane:
        return self.planes[k][row]

    def plane_near(self, x, k: int) -> tuple[Plane, int]:
        """CCBP plane of the net point nearest x at scale k."""
        row, _ = self.net.nearest_net(x, k)
        return self.planes[k][row], row


@dataclass
class CoherenceReport:
    violations: list[tuple[str, tuple, float]]
    max_defect: float
    checked_pairs: int
    eps: float
    truncated: bool = False

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "schema_version": "betaflow.coherence.v1",
            "eps": self.eps,
            "max_defect": self.max_defect,
            "checked_pairs": self.checked_pairs,
            "truncated": self.truncated,
            "violations": [
                {"condition": c, "indices": list(idx), "defect": v}
                for c, idx, v in self.violations
            ],
        }


def assemble(
    cloud: PointCloud,
    net: MultiscaleNet,
    eps: float,
    fit_radius_mult: float = 10.0,
    eps_max: float = EPS_MAX_DEFAULT,
    samples: int = 1024,
    max_fit_points: int = 4096,
) -> CCBP:
    """Fit a plane through every net point; degenerate balls inherit upward.

    Balls holding more than ``max_fit_points`` points are stride-subsampled
    before fitting: the minimax plane of a dense subsample is within the
    coherence budget of the full-ball one at a fraction of the cost.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if eps > eps_max:
        raise ValueError(f"eps={eps} exceeds the configured budget cap {eps_max}")
    if cloud.d >= cloud.n:
        raise ValueError("assembly needs d < n")
    w_all = cloud.effective_weights()

    def subsample(idx):
        if idx.size <= max_fit_points:
            return idx
        stride = idx.size / max_fit_points
        return idx[(np.arange(max_fit_points) * stride).astype(np.int64)]

    bary = cloud.points.mean(axis=0)
    all_idx = subsample(np.arange(len(cloud)))
    fit0 = fit_plane(cloud.points[all_idx], w_all[all_idx], bary, fit_radius_mult, "sup", cloud.d)
    if fit0.degenerate:
        raise ValueError("cloud does not determine a d-plane at the coarsest scale")
    sigma0 = fit0.plane

    planes: list[list[Plane]] = []
    for k, sc in enumerate(net.scales):
        level = []
        for row, x in enumerate(sc.points):
            ball = subsample(sc.cloud_grid.query(x, fit_radius_mult * sc.r))
            fit = fit_plane(
                cloud.points[ball], w_all[ball], x, sc.r, "sup", cloud.d
            ) if ball.size else None
            if fit is None or fit.degenerate:
                if k == 0:
                    raise ValueError(
                        f"scale-0 ball at net row {row} does not determine a d-plane"
                    )
                parent_row, _ = net.nearest_net(x, k - 1)
                level.append(planes[k - 1][parent_row].shifted_to(x))
            else:
                level.append(fit.plane.shifted_to(x))
        planes.append(level)
    return CCBP(net, planes, sigma0, eps, fit_radius_mult, samples)


def _pair_sample(count: int, limit: int) -> np.ndarray:
    """Deterministic subset of range(count) of size <= limit."""
    if count <= limit:
        return np.arange(count)
    stride = count / limit
    return np.unique((np.arange(limit) * stride).astype(np.int64))


def validate(ccbp: CCBP, cloud: PointCloud, max_pairs_per_scale: int = 20000) -> CoherenceReport:
    """Measure the four coherence families and report every observed defect.

    Pair families larger than ``max_pairs_per_scale`` are subsampled
    deterministically (report flags ``truncated``).
    """
    net = ccbp.net
    eps = ccbp.eps
    m = ccbp.samples
    violations = []
    max_defect = 0.0
    checked = 0
    truncated = False

    def record(cond, idx, val):
        nonlocal max_defect, checked
        checked += 1
        if val > max_defect:
            max_defect = val
        if val > eps:
            violations.append((cond, idx, val))

    for k, sc in enumerate(net.scales):
        centers = _pair_sample(len(sc.points), max_pairs_per_scale)
        if len(centers) < len(sc.points):
            truncated = True
        budget = max(1, max_pairs_per_scale // max(len(centers), 1))
        # same-scale pairs within 100 r_k
        for row in centers:
            x = sc.points[row]
            nbr = sc.net_grid.query(x, 100.0 * sc.r)
            nbr = nbr[nbr > row]
            if nbr.size > budget:
                truncated = True
                nbr = nbr[_pair_sample(nbr.size, budget)]
            for other in nbr:
                val = plane_dist(x, 100.0 * sc.r, ccbp.planes[k][row], ccbp.planes[k][other], m)
                record("same-scale", (k, int(row), int(other)), val)
        # cross-scale pairs within 2 r_k
        if k < net.K:
            fine = net.scales[k + 1]
            for row in centers:
                x = sc.points[row]
                nbr = fine.net_grid.query(x, 2.0 * sc.r)
                if nbr.size > budget:
                    truncated = True
                    nbr = nbr[_pair_sample(nbr.size, budget)]
                for other in nbr:
                    val = plane_dist(
                        x, 20.0 * sc.r, ccbp.planes[k][row], ccbp.planes[k + 1][other], m
                    )
                    record("cross-scale", (k, int(row), int(other)), val)

    sc0 = net.scales[0]
    for row, x in enumerate(sc0.points):
        val = plane_dist(x, 100.0, ccbp.planes[0][row], ccbp.sigma0, m)
        record("sigma0", (0, row), val)
        prox = float(np.linalg.norm(x - np.asarray(_project(ccbp.sigma0, x))))
        record("initial-proximity", (0, row), prox)

    return CoherenceReport(violations, max_defect, checked, eps, truncated)


def _project(plane: Plane, y):
    rel = np.asarray(y, dtype=np.float64) - plane.base
    return plane.base + (rel @ plane.frame.T) @ plane.frame


@dataclass
class FlatnessReport:
    eps: float
    containment: list[tuple[int, int, float]]  # (k, row, defect)
    consecutive: list[tuple[int, int, float]]
    nearby: list[tuple[int, int, int, float]]
    truncated: bool = False

    @property
    def max_defect(self) -> float:
        vals = (
            [v for _, _, v in self.containment]
            + [v for _, _, v in self.consecutive]
            + [v for *_, v in self.nearby]
        )
        return max(vals) if vals else 0.0

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.eps

    def to_dict(self) -> dict:
        return {
            "schema_version": "betaflow.flatness.v1",
            "eps": self.eps,
            "passed": bool(self.passed),
            "max_defect": self.max_defect,
            "truncated": self.truncated,
            "containment_max": max((v for *_, v in self.containment), default=0.0),
            "consecutive_max": max((v for *_, v in self.consecutive), default=0.0),
            "nearby_max": max((v for *_, v in self.nearby), default=0.0),
        }


def check_one_sided_flat(
    cloud: PointCloud,
    eps: float,
    K: int,
    net: MultiscaleNet | None = None,
    samples: int = 1024,
    max_centers_per_scale: int = 400,
) -> FlatnessReport:
    """One-sided flatness: containment of the cloud near per-scale planes
    plus compatibility of those planes across consecutive scales and nearby
    points.

    The exhibited family consists of best sup-fit planes re-based through
    their net points: an independently fitted coarse plane may sit a whole
    coarse-beta offset away from the center, which would charge the
    compatibility defect a factor of the scale ratio for reasons unrelated
    to flatness. Holes are permitted: only cloud-side distances enter.
    """
    if net is None:
        net = build_net(cloud, K)
    w_all = cloud.effective_weights()
    containment, consecutive, nearby = [], [], []
    truncated = False

    fits: list[dict[int, Plane]] = [dict() for _ in range(K + 1)]

    def fit_through(x, ball, r) -> Plane | None:
        if ball.size == 0:
            return None
        fit = fit_plane(cloud.points[ball], w_all[ball], x, r, "sup", cloud.d)
        if fit.degenerate:
            return None
        return fit.plane.shifted_to(x)

    def fitted(k: int, row: int) -> Plane | None:
        if row in fits[k]:
            return fits[k][row]
        sc = net.scales[k]
        ball = stride_cap(sc.cloud_grid.query(sc.points[row], sc.r), 8192)
        plane = fit_through(sc.points[row], ball, sc.r)
        fits[k][row] = plane
        if plane is not None:
            dists = np.linalg.norm(
                (cloud.points[ball] - plane.base)
                - ((cloud.points[ball] - plane.base) @ plane.frame.T) @ plane.frame,
                axis=1,
            )
            containment.append((k, row, float(dists.max() / sc.r)))
        return plane

    for k in range(K + 1):
        sc = net.scales[k]
        centers = _pair_sample(len(sc.points), max_centers_per_scale)
        if len(centers) < len(sc.points):
            truncated = True
        for row in centers:
            row = int(row)
            x = sc.points[row]
            p_here = fitted(k, row)
            if p_here is None:
                continue
            # consecutive scales at the same center: fit over the coarser ball
            if k >= 1:
                ball_coarse = stride_cap(
                    net.scales[k - 1].cloud_grid.query(x, net.scales[k - 1].r), 8192
                )
                coarse = fit_through(x, ball_coarse, net.scales[k - 1].r)
                if coarse is not None:
                    try:
                        val = plane_dist(x, sc.r, p_here, coarse, samples)
                        consecutive.append((k, row, val))
                    except PlaneMissesBall:
                        pass
            # nearby points at the same scale, within 100 r_k
            nbr = sc.net_grid.query(x, 100.0 * sc.r)
            nbr = nbr[nbr > row][:8]
            for other in nbr:
                p_other = fitted(k, int(other))
                if p_other is None:
                    continue
                try:
                    val = plane_dist(x, 100.0 * sc.r, p_here, p_other, samples)
                    nearby.append((k, row, int(other), val))
                except PlaneMissesBall:
                    pass

    return FlatnessReport(eps, containment, consecutive, nearby, truncated)


def lower_regularity(cloud: PointCloud, x, r: float, eps: float, c_const: float = 10.0):
    """Measured mass ratio in B(x, r) against the flat-set floor.

    Informational: hole-punched inputs may legitimately fall below.
    """
    x = np.asarray(x, dtype=np.float64)
    w = cloud.effective_weights()
    diff = cloud.points - x
    inside = np.einsum("ij,ij->i", diff, diff) <= r * r
    ratio = float(w[inside].sum() / r**cloud.d)
    omega_d = math.pi ** (cloud.d / 2.0) / math.gamma(cloud.d / 2.0 + 1.0)
    threshold = (1.0 - c_const * eps) * omega_d
    return ratio, threshold, ratio >= threshold


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def ccbp_to_dict(ccbp: CCBP) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "eps": ccbp.eps,
        "fit_radius_mult": ccbp.fit_radius_mult,
        "samples": ccbp.samples,
        "K": ccbp.K,
        "sigma0": {"base": ccbp.sigma0.base.tolist(), "frame": ccbp.sigma0.frame.tolist()},
        "scales": [
            {
                "k": sc.k,
                "r": sc.r,
                "net_indices": sc.indices.tolist(),
                "planes": [
                    {"base": p.base.tolist(), "frame": p.frame.tolist()}
                    for p in ccbp.planes[k]
                ],
            }
            for k, sc in enumerate(ccbp.net.scales)
        ],
    }


def save_ccbp(path, ccbp: CCBP, defects: dict | None = None):
    doc = ccbp_to_dict(ccbp)
    if defects:
        doc["defects"] = defects
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def load_ccbp(path, cloud: PointCloud) -> CCBP:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unexpected schema {doc.get('schema_version')!r}")
    net = build_net(cloud, doc["K"])
    for k, entry in enumerate(doc["scales"]):
        if entry["net_indices"] != net.scales[k].indices.tolist():
            raise ValueError("stored net does not match the cloud (different order?)")
    planes = [
        [Plane(np.array(p["base"]), np.array(p["frame"])) for p in entry["planes"]]
        for entry in doc["scales"]
    ]
    sigma0 = Plane(np.array(doc["sigma0"]["base"]), np.array(doc["sigma0"]["frame"]))
    return CCBP(net, planes, sigma0, doc["eps"], doc["fit_radius_mult"], doc["samples"])
