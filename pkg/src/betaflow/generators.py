"""Test-set constructions with known regularity.

Every generator returns clouds already normalized into the unit ball with
H^d-style arc-length weights and a metadata sidecar echoing the spec plus
diagnostics (angle sums, level measures, coefficient decay).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .geometry import Ball

MAX_POINTS = 10**7
ANGLE_CAP = math.pi / 8.0


@dataclass
class SnowflakeSpec:
    """Variable-angle snowflake parameters.

    ``angles`` assigns one tent angle per generation. For derivative-exponent
    experiments set ``scale_exponent``: each segment then receives the angle
    scale_coeff * length^scale_exponent instead, so branches that contract at
    different rates (end thirds vs tent sides) still share one spatial decay
    law. Per-generation angles cannot do that: at a fixed spatial scale the
    faster-contracting branches sit at shallower generations and their larger
    angles dominate the tangent envelope.
    """

    angles: list[float]  # one tent angle per generation
    depth: int
    samples_per_segment: int = 2
    target_alpha: float | None = None
    profile: str = "tent"  # "tent": sharp apexes; "smooth": C^2 bumps
    scale_exponent: float | None = None
    scale_coeff: float = 0.05
    base_levels: int = 0  # domain-wide pre-bumps (smooth + scale-coupled only)

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.profile not in ("tent", "smooth"):
            raise ValueError(f"profile must be 'tent' or 'smooth', got {self.profile!r}")
        if self.scale_exponent is None and len(self.angles) < self.depth:
            raise ValueError(f"need {self.depth} angles, got {len(self.angles)}")
        for a in self.angles:
            if a < 0 or a > ANGLE_CAP:
                raise ValueError(
                    f"tent angles must lie in [0, pi/8] for the first-order construction, got {a}"
                )
        if self.scale_exponent is not None and not 0 < self.scale_exponent <= 1:
            raise ValueError("scale_exponent must lie in (0, 1]")
        if self.scale_coeff > ANGLE_CAP:
            raise ValueError("scale_coeff exceeds the pi/8 angle cap")
        if self.base_levels and (self.profile != "smooth" or self.scale_exponent is None):
            raise ValueError("base_levels require the smooth scale-coupled construction")
        if 4**self.depth * self.samples_per_segment > MAX_POINTS:
            raise ValueError("depth * samples exceeds the point budget")


def angle_sequence(desc: str, depth: int) -> list[float]:
    """Parse an angle-sequence descriptor.

    geometric:q[:a0]   a_i = a0 * q^i          (a0 defaults to 0.25)
    holder:alpha[:c]   a_i = c * 3^(-alpha i)  (c defaults to 0.05; the
                       factor 3 is the per-level contraction of the
                       surviving end-thirds, so the tangent envelope decays
                       like distance^alpha)
    constant:v         a_i = v
    """
    kind, _, rest = desc.partition(":")
    parts = rest.split(":") if rest else []
    if kind == "geometric":
        q = float(parts[0])
        a0 = float(parts[1]) if len(parts) > 1 else 0.25
        return [a0 * q**i for i in range(1, depth + 1)]
    if kind == "holder":
        alpha = float(parts[0])
        c = float(parts[1]) if len(parts) > 1 else 0.05
        return [c * 3.0 ** (-alpha * i) for i in range(1, depth + 1)]
    if kind == "constant":
        return [float(parts[0])] * depth
    raise ValueError(f"unknown angle sequence {desc!r}")


def _segment_angles(spec_angles, level: int, lengths: np.ndarray, scale_exponent, scale_coeff):
    if scale_exponent is None:
        return np.full(len(lengths), spec_angles[level])
    return np.minimum(scale_coeff * lengths**scale_exponent, ANGLE_CAP)


def snowflake_polyline(angles, depth: int, scale_exponent=None, scale_coeff=0.05) -> np.ndarray:
    """Vertices of the variable-angle middle-third tent construction.

    Each generation replaces every segment's middle third with the two equal
    sides of an isosceles tent whose height is (segment length) * angle / 6,
    creating a turning angle of about ``angle`` at each new vertex.
    """
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    for i in range(depth):
        p = pts[:-1]
        q = pts[1:]
        e = q - p
        lengths = np.linalg.norm(e, axis=1)
        a = _segment_angles(angles, i, lengths, scale_exponent, scale_coeff)
        perp = np.column_stack([-e[:, 1], e[:, 0]]) / lengths[:, None]
        m1 = p + e / 3.0
        m2 = p + 2.0 * e / 3.0
        apex = p + 0.5 * e + perp * (lengths * a / 6.0)[:, None]
        block = np.stack([p, m1, apex, m2], axis=1).reshape(-1, 2)
        pts = np.concatenate([block, pts[-1:]], axis=0)
    return pts


def polyline_length(pts: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _sample_polyline(pts: np.ndarray, per_segment: int):
    """Midpoint samples along each segment with arc-length weights."""
    p = pts[:-1]
    q = pts[1:]
    seg = np.linalg.norm(q - p, axis=1)
    fracs = (np.arange(per_segment) + 0.5) / per_segment
    samples = (p[:, None, :] + fracs[None, :, None] * (q - p)[:, None, :]).reshape(-1, 2)
    weights = np.repeat(seg / per_segment, per_segment)
    return samples, weights


def _smooth_bump(s: np.ndarray) -> np.ndarray:
    """C^2 bump on the middle third of [0, 1], peak 1 at the center."""
    t = np.clip(1.0 - np.abs(s - 0.5) * 6.0, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def snowflake_smooth(
    angles,
    depth: int,
    samples_per_segment: int,
    scale_exponent=None,
    scale_coeff=0.05,
    base_levels: int = 0,
) -> np.ndarray:
    """C^2 variant of the snowflake: smooth mid-third bumps per level.

    The sharp construction leaves a tangent discontinuity of size a_i at
    every level-i apex, so the derivative of any parametrization has a flat
    increment envelope; mollifying each level's tent (same height, quintic
    profile, same 4-way cell subdivision) removes the corners while keeping
    the per-level angle bookkeeping at first order.

    ``base_levels`` prepends bumps wider than the domain (lengths 3^p) under
    the same length-coupled angle law, staggered in phase. Without them the
    geometric slope hierarchy starts abruptly at the domain scale and the
    tangent envelope approaches its limit constant from below over several
    octaves, which reads as a depressed exponent on shallow constructions.
    """
    m = 4**depth * samples_per_segment
    t = np.linspace(0.0, 1.0, m + 1)
    pts = np.column_stack([t, np.zeros_like(t)])
    for p in range(1, base_levels + 1):
        width = 3.0**p
        ang = min(scale_coeff * width**scale_exponent, ANGLE_CAP)
        offset = ((p * 0.37) % 1.0) * max(width / 3.0 - 1.0, 0.0)
        s = 1.0 / 3.0 + (t + offset) / width
        pts[:, 1] += (width * ang / 6.0) * _smooth_bump(s)
    for i in range(depth):
        cells = 4**i
        step = m // cells
        starts = pts[0 : m + 1 : step]  # cell corner positions, (cells+1, 2)
        chords = starts[1:] - starts[:-1]
        lengths = np.linalg.norm(chords, axis=1)
        a = _segment_angles(angles, i, lengths, scale_exponent, scale_coeff)
        normals = np.column_stack([-chords[:, 1], chords[:, 0]]) / lengths[:, None]
        cell_idx = np.minimum(np.arange(m + 1) // step, cells - 1)
        s = (np.arange(m + 1) - cell_idx * step) / step
        height = lengths * a / 6.0
        pts = pts + (height[cell_idx] * _smooth_bump(s))[:, None] * normals[cell_idx]
    return pts


def snowflake(spec: SnowflakeSpec):
    """Variable-angle snowflake: cloud + exact polyline + angle diagnostics."""
    poly = snowflake_polyline(spec.angles, spec.depth, spec.scale_exponent, spec.scale_coeff)
    if spec.profile == "smooth":
        curve = snowflake_smooth(
            spec.angles,
            spec.depth,
            spec.samples_per_segment,
            spec.scale_exponent,
            spec.scale_coeff,
            spec.base_levels,
        )
        seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
        weights = np.empty(len(curve))
        weights[0], weights[-1] = seg[0] / 2, seg[-1] / 2
        weights[1:-1] = 0.5 * (seg[1:] + seg[:-1])
        samples = curve
    else:
        samples, weights = _sample_polyline(poly, spec.samples_per_segment)
    if spec.scale_exponent is None:
        sum_sq = float(sum(a * a for a in spec.angles[: spec.depth]))
    else:
        nominal = [spec.scale_coeff * 3.0 ** (-spec.scale_exponent * i) for i in range(1, spec.depth + 1)]
        sum_sq = float(sum(a * a for a in nominal))
    diagnostics = {
        "sum_angle_sq": sum_sq,
        "length": polyline_length(poly),
        "segments": len(poly) - 1,
    }
    if spec.target_alpha is not None:
        al = spec.target_alpha
        diagnostics["sum_angle_sq_over_scale"] = float(
            sum(a * a * 2.0 ** (2 * al * (i + 1)) for i, a in enumerate(spec.angles[: spec.depth]))
        )
    cloud = PointCloud.normalized(
        samples,
        d=1,
        weights=weights,
        metadata={
            "generator": "snowflake",
            "depth": spec.depth,
            "profile": spec.profile,
            "diagnostics": diagnostics,
        },
    )
    return cloud, poly, diagnostics


@dataclass
class HaarGraphSpec:
    alpha: float
    depth: int
    grid: int = 4096
    amplitude: float = 1.0
    coeffs: list[float] | None = None  # per-level magnitudes overriding 2^(-alpha j)
    sign_seed: int | None = None  # None: all +; otherwise seeded +-1 per tent
    coarse_levels: int = 0  # extra tents at j = 0, -1, ... (transient control)

    def __post_init__(self):
        if self.coeffs is None and not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 <= self.depth <= 30:
            raise ValueError("depth must be in 0..30")
        if self.grid < 2:
            raise ValueError("grid must have at least 2 points")
        if self.coarse_levels < 0:
            raise ValueError("coarse_levels must be >= 0")


def _tent_level(x: np.ndarray, j: int) -> np.ndarray:
    """Unit-coefficient level-j primitive: a height-1/2 tent on each dyadic cell."""
    frac = x * 2**j
    frac = frac - np.floor(frac)
    return 0.5 - np.abs(frac - 0.5)


def haar_graph(spec: HaarGraphSpec):
    """Graph of f = integral of g, where g is a tent-sum with decaying peaks.

    Level j adds tents of exact peak a_j / 2, so consecutive partial sums of
    g differ by exactly a_j / 2 in sup norm. Optional coarse levels
    (j <= 0, same magnitude law) extend the geometric slope sum upward; the
    tangent envelope then reaches its limiting constant several octaves
    sooner, which matters when only a few octaves are measurable.
    """
    x = np.linspace(0.0, 1.0, spec.grid)
    g = np.zeros_like(x)
    levels = []
    rng = np.random.default_rng(spec.sign_seed) if spec.sign_seed is not None else None
    if spec.coarse_levels > 0:
        for j in range(1 - spec.coarse_levels, 1):
            g = g + 2.0 ** (-spec.alpha * j) * _tent_level(x, j)
    for j in range(1, spec.depth + 1):
        a_j = spec.coeffs[j - 1] if spec.coeffs is not None else 2.0 ** (-spec.alpha * j)
        tent = _tent_level(x, j)
        if rng is not None:
            cell = np.minimum((x * 2**j).astype(np.int64), 2**j - 1)
            signs = rng.choice([-1.0, 1.0], size=2**j)
            tent = tent * signs[cell]
        g = g + a_j * tent
        levels.append(a_j)
    g = spec.amplitude * g
    f = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(x))])
    pts = np.column_stack([x, f])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    w = np.empty(len(pts))
    w[0], w[-1] = seg[0] / 2, seg[-1] / 2
    w[1:-1] = 0.5 * (seg[1:] + seg[:-1])
    meta = {
        "generator": "haar_graph",
        "alpha": spec.alpha,
        "depth": spec.depth,
        "coeffs": levels,
        "amplitude": spec.amplitude,
    }
    cloud = PointCloud.normalized(pts, d=1, weights=w, metadata=meta)
    return cloud, g, meta


@dataclass
class CantorSpec:
    s: float
    a_seq: list[float]  # removal fractions, strictly decreasing in (0, 1)
    depth: int
    grid: int = 4096

    def __post_init__(self):
        if not 0 < self.s < 1:
            raise ValueError(f"s must be in (0, 1), got {self.s}")
        if not 0 <= self.depth <= 30:
            raise ValueError("depth must be in 0..30")
        if len(self.a_seq) < self.depth:
            raise ValueError(f"need {self.depth} removal fractions")
        seq = self.a_seq[: self.depth]
        if any(not 0 < a < 1 for a in seq):
            raise ValueError("removal fractions must lie in (0, 1)")
        if any(b >= a for a, b in zip(seq, seq[1:])):
            raise ValueError("removal fractions must be strictly decreasing")
        if sum(seq) >= 1.0:
            raise ValueError("removal fractions must sum below 1 so the set keeps mass")


def cantor_c1s(spec: CantorSpec):
    """Graph of f = integral of dist(., E)^s for a fat-Cantor-type set E.

    The retained set E is built by removing the middle a_n fraction of every
    depth-n interval; interval endpoints follow the exact length recursion
    l_{n+1} = l_n (1 - a_n) / 2.
    """
    lefts = np.array([0.0])
    l_n = 1.0
    measures = [1.0]
    for nlev in range(spec.depth):
        a_n = spec.a_seq[nlev]
        l_next = l_n * (1.0 - a_n) / 2.0
        lefts = np.sort(np.concatenate([lefts, lefts + (l_n - l_next)]))
        l_n = l_next
        measures.append(len(lefts) * l_n)

    x = np.linspace(0.0, 1.0, spec.grid)
    # distance to the retained set via its sorted endpoints
    ends = np.column_stack([lefts, lefts + l_n]).ravel()
    pos = np.searchsorted(ends, x)
    inside = pos % 2 == 1  # between a left and its right endpoint
    dist = np.zeros_like(x)
    right_gap = np.where(pos < len(ends), ends[np.minimum(pos, len(ends) - 1)] - x, np.inf)
    left_gap = np.where(pos > 0, x - ends[np.maximum(pos - 1, 0)], np.inf)
    dist[~inside] = np.minimum(right_gap, left_gap)[~inside]
    g = dist**spec.s
    f = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(x))])
    pts = np.column_stack([x, f])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    w = np.empty(len(pts))
    w[0], w[-1] = seg[0] / 2, seg[-1] / 2
    w[1:-1] = 0.5 * (seg[1:] + seg[:-1])
    meta = {
        "generator": "cantor_c1s",
        "s": spec.s,
        "depth": spec.depth,
        "level_measures": measures,
        "final_interval_length": l_n,
        "interval_count": len(lefts),
    }
    cloud = PointCloud.normalized(pts, d=1, weights=w, metadata=meta)
    return cloud, {"lefts": lefts, "length": l_n, "measures": measures, "g": g, "x": x}, meta


def graph_fixtures(kind: str, params: dict | None = None) -> PointCloud:
    """Graphs with a known regularity class recorded in metadata.

    kind = "lipschitz": piecewise-linear sawtooth.
    kind = "c1alpha": tent-sum graph (style "haar") or a sum of C^2 bumps
    (style "smooth").
    """
    params = dict(params or {})
    if kind == "lipschitz":
        amp = params.get("amplitude", 0.05)
        period = params.get("period", 0.25)
        m = params.get("points", 4096)
        x = np.linspace(0.0, 1.0, m)
        frac = x / period - np.floor(x / period)
        f = amp * (1.0 - 2.0 * np.abs(frac - 0.5))
        cls = "lipschitz"
    elif kind == "c1alpha":
        style = params.get("style", "haar")
        if style == "haar":
            spec = HaarGraphSpec(
                alpha=params.get("alpha", 0.5),
                depth=params.get("depth", 12),
                grid=params.get("points", 4096),
                amplitude=params.get("amplitude", 0.1),
            )
            cloud, _, _ = haar_graph(spec)
            cloud.metadata["regularity_class"] = f"c1alpha:{spec.alpha}"
            return cloud
        if style != "smooth":
            raise ValueError(f"unknown c1alpha style {style!r}")
        amp = params.get("amplitude", 0.05)
        m = params.get("points", 4096)
        x = np.linspace(0.0, 1.0, m)
        f = np.zeros_like(x)
        for c, wdt, a in ((0.3, 0.15, 1.0), (0.62, 0.2, -0.7), (0.85, 0.1, 0.5)):
            t = np.abs(x - c) / wdt
            s = np.clip(1.0 - t, 0.0, 1.0)
            f += a * amp * s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
        cls = "smooth"
    else:
        raise ValueError(f"unknown fixture kind {kind!r}")
    pts = np.column_stack([x, f])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    w = np.empty(len(pts))
    w[0], w[-1] = seg[0] / 2, seg[-1] / 2
    w[1:-1] = 0.5 * (seg[1:] + seg[:-1])
    return PointCloud.normalized(
        pts, d=1, weights=w, metadata={"generator": "graph_fixture", "regularity_class": cls, "params": params}
    )


def snowflake_holder_fixture(alpha: float, depth: int = 8, samples_per_segment: int = 4) -> SnowflakeSpec:
    """Calibrated snowflake recipe for derivative-exponent experiments.

    Smooth profile, length-coupled angles, and enough domain-wide pre-bumps
    to flatten the finite-size transient of the tangent envelope (the need
    grows with alpha as the coarse slope sum gets heavier).
    """
    base = max(0, round(8 * alpha) - 3)
    return SnowflakeSpec(
        [],
        depth,
        samples_per_segment=samples_per_segment,
        target_alpha=alpha,
        profile="smooth",
        scale_exponent=alpha,
        scale_coeff=0.002,
        base_levels=base,
    )


def haar_holder_fixture(alpha: float, depth: int = 18, grid: int = 1 << 18) -> HaarGraphSpec:
    """Calibrated tent-graph recipe for derivative-exponent experiments."""
    return HaarGraphSpec(alpha, depth, grid, amplitude=0.025, coarse_levels=5)


def punch_holes(cloud: PointCloud, holes: list[Ball]) -> PointCloud:
    """Remove points inside any of the given balls (holes are recorded)."""
    keep = np.ones(len(cloud), dtype=bool)
    for ball in holes:
        diff = cloud.points - np.asarray(ball.center, dtype=np.float64)
        keep &= np.einsum("ij,ij->i", diff, diff) > ball.radius**2
    if not keep.any():
        raise ValueError("holes would erase the entire cloud")
    meta = dict(cloud.metadata)
    meta["holes"] = list(meta.get("holes", [])) + [
        {"center": np.asarray(b.center).tolist(), "radius": b.radius} for b in holes
    ]
    return PointCloud(
        cloud.points[keep],
        cloud.d,
        cloud.weights[keep] if cloud.weights is not None else None,
        cloud.transform,
        meta,
    )
