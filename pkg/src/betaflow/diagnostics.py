"""Empirical regularity estimation and the prediction pipeline.

Holder exponents are read off a log-log regression of dyadically binned pair
increments, using per-bin maxima: the Holder constant is a sup bound, so the
envelope is the right statistic (per-pair averages systematically overstate
smoothness).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .beta import epsilon_k, jones, scale_floor
from .ccbp import CCBP, assemble, check_one_sided_flat
from .cloud import PointCloud
from .nets import build_net, scale_radius
from .parametrization import flow_batch, invert, sigma_apply, surface_mesh


class DegenerateSpan(ValueError):
    """Pair distances do not span enough scales for a slope fit."""


@dataclass
class RegularityReport:
    target: str
    eta: float
    band: float
    log_constant: float
    pair_count: int
    scale_range: tuple[float, float]
    prediction: float | None = None
    tolerance: float = 0.1
    constant_map: bool = False
    bins: list[tuple[float, float, int]] = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        if self.prediction is None:
            return True
        if self.constant_map:
            return True
        return abs(self.eta - self.prediction) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "eta": self.eta,
            "band": self.band,
            "log_constant": self.log_constant,
            "pair_count": self.pair_count,
            "scale_range": list(self.scale_range),
            "prediction": self.prediction,
            "tolerance": self.tolerance,
            "constant_map": self.constant_map,
            "verdict": bool(self.verdict),
            "bins": [{"distance": d, "max_increment": v, "pairs": c} for d, v, c in self.bins],
        }


def estimate_holder(
    points: np.ndarray,
    values: np.ndarray,
    target: str = "map",
    prediction: float | None = None,
    tolerance: float = 0.1,
    bins_per_octave: int = 2,
    min_pairs_per_bin: int = 3,
    dist_window: tuple[float, float] | None = None,
) -> RegularityReport:
    """Envelope slope of |v(x) - v(y)| against |x - y| on dyadic bins."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if len(points) < 200:
        raise ValueError(f"need at least 200 samples, got {len(points)}")

    span = np.linalg.norm(points.max(axis=0) - points.min(axis=0))
    if span <= 0:
        raise DegenerateSpan("all sample points coincide")
    lo = dist_window[0] if dist_window else span / 2.0**14
    hi = dist_window[1] if dist_window else span
    if not hi > lo > 0:
        raise DegenerateSpan(f"bad distance window [{lo}, {hi}]")
    lo_log2 = math.log2(lo)
    nbins = max(int(math.ceil((math.log2(hi) - lo_log2) * bins_per_octave)), 1)
    maxs, cnts, dmax = kernels.pair_bin_max(points, values, lo_log2, float(bins_per_octave), nbins)

    good = cnts >= min_pairs_per_bin
    if good.sum() == 0:
        raise DegenerateSpan("no populated distance bins")
    vscale = float(np.abs(values).max()) or 1.0
    if np.all(maxs[good] <= 1e-13 * vscale):
        rpt = RegularityReport(
            target, 0.0, 0.0, -np.inf, int(cnts.sum()), (float(lo), float(hi)),
            prediction, tolerance, constant_map=True,
        )
        rpt.bins = [(float(c), float(v), int(n)) for c, v, n in zip(dmax, maxs, cnts)]
        return rpt
    good &= maxs > 0
    xs = np.log(dmax[good])
    span_orders = (xs.max() - xs.min()) / math.log(2.0)
    if span_orders < 3.0:
        raise DegenerateSpan(
            f"populated bins span {span_orders:.2f} binary orders; need >= 3"
        )
    ys = np.log(maxs[good])
    A = np.column_stack([xs, np.ones_like(xs)])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ys - A @ coef
    dof = max(len(xs) - 2, 1)
    sxx = float(((xs - xs.mean()) ** 2).sum())
    band = float(2.0 * np.sqrt((resid @ resid) / dof / max(sxx, 1e-300)))
    rpt = RegularityReport(
        target,
        float(np.clip(slope, 0.0, 1.5)),
        band,
        intercept,
        int(cnts.sum()),
        (float(np.exp(xs.min())), float(np.exp(xs.max()))),
        prediction,
        tolerance,
    )
    rpt.bins = [(float(c), float(v), int(n)) for c, v, n in zip(dmax, maxs, cnts)]
    return rpt


@dataclass
class HolderLimitCase:
    A: float
    B: float

    def __post_init__(self):
        if self.A <= 1 or self.B <= 1:
            raise ValueError("both growth bases must exceed 1")

    @property
    def predicted(self) -> float:
        return math.log(self.B) / math.log(self.A * self.B)


def synthesize_limit(case: HolderLimitCase, x: np.ndarray, depth: int = 30):
    """Tent-sum limit with level slopes <= A^j and sup-gaps ~ B^-j.

    Level j contributes c_A * B^-j * tri((AB)^j x) with tri the 1-Lipschitz
    triangle wave of amplitude 1/2 and c_A = (A-1)/A, so the partial sums
    have slope at most A^j exactly and the level gaps sum geometrically.
    Levels beyond float phase accuracy (lam^j ~ 1e14) are dropped.
    """
    g = np.zeros_like(x)
    lam = case.A * case.B
    c_a = (case.A - 1.0) / case.A
    max_j = min(depth, int(math.floor(14.0 * math.log(10.0) / math.log(lam))))
    for j in range(1, max_j + 1):
        frac = x * lam**j
        frac -= np.floor(frac)
        g += c_a * case.B ** (-j) * np.abs(frac - 0.5)
    return g, max_j


def holder_limit_check(case: HolderLimitCase, depth: int = 30, tol: float = 0.05):
    """Measure the limit's exponent and compare with log B / log(AB).

    Bins are aligned one-per-level (finer binning reads the saturation
    sawtooth between level scales, not the trend) and the fit uses the
    finest resolvable levels, where the finite-level transient of the
    envelope constant has decayed. Samples zoom dyadically toward the
    origin, where all levels move together, so every level bin sees
    near-extremal pairs.
    """
    lam = case.A * case.B
    cap = min(depth, int(math.floor(14.0 * math.log(10.0) / math.log(lam))))
    j_hi = min(cap - 2, int(math.floor(10.5 * math.log(10.0) / math.log(lam))))
    j_lo = max(2, j_hi - 5)
    if j_hi <= j_lo:
        raise ValueError("growth bases too large to resolve enough levels")
    per_window = 3000
    xs_parts = [np.linspace(0.0, lam ** (-w), per_window) for w in range(j_lo - 1, j_hi)]
    xs = np.unique(np.concatenate(xs_parts))
    g, _ = synthesize_limit(case, xs, depth)
    window = (lam ** -(j_hi + 0.5), lam ** -(j_lo - 0.5))
    rpt = estimate_holder(
        xs[:, None],
        g,
        target="synthetic-limit",
        prediction=case.predicted,
        tolerance=tol,
        bins_per_octave=1.0 / math.log2(lam),
        min_pairs_per_bin=1,
        dist_window=window,
    )
    return rpt.verdict, rpt.eta, rpt


@dataclass
class PipelineConfig:
    eps: float = 0.02
    eps_max: float = 0.1
    fit_radius_mult: float = 10.0
    samples: int = 256
    jones_samples: int = 48
    trace_samples: int = 24
    grid_points: int = 2048
    inverse_points: int = 240
    tolerance: float = 0.1
    flatness_centers: int = 120
    seed: int = 0


@dataclass
class PredictionBundle:
    alpha: float
    K: int
    m_beta: float
    m_eps: float
    forward: RegularityReport
    inverse: RegularityReport | None
    flatness: dict
    log_gamma: float | None = None
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": "betaflow.regularity.v1",
            "alpha": self.alpha,
            "K": self.K,
            "log_gamma": self.log_gamma,
            "m_beta": self.m_beta,
            "m_eps": self.m_eps,
            "aborted": self.aborted,
            "flatness": self.flatness,
            "forward": self.forward.to_dict() if self.forward else None,
            "inverse": self.inverse.to_dict() if self.inverse else None,
        }


def predict_and_verify(
    cloud: PointCloud,
    alpha: float,
    K: int,
    cfg: PipelineConfig | None = None,
    log_gamma: float | None = None,
) -> PredictionBundle:
    """Square-function hypothesis in, measured derivative regularity out.

    Pipeline: flatness gate -> net -> coherent planes -> truncated square
    functions (beta-based at cloud points, epsilon-based along flow traces)
    -> finite-depth map -> envelope exponent of its derivative, plus an
    inverse-side exponent from nearest-point inversion differences.
    At alpha = 1 pass log_gamma > 1/2; the Lipschitz verdict band applies.
    """
    cfg = cfg or PipelineConfig()
    if alpha == 1.0 and log_gamma is None:
        raise ValueError("alpha = 1 needs log_gamma > 1/2 (log-corrected hypothesis)")

    flat = check_one_sided_flat(
        cloud, cfg.eps, min(K, 3), max_centers_per_scale=cfg.flatness_centers
    )
    if not flat.passed:
        return PredictionBundle(
            alpha, K, math.nan, math.nan, None, None, flat.to_dict(), log_gamma, aborted=True
        )

    # scales below the sample spacing carry no information; stop there
    kmax = min(K, scale_floor(cloud, K))
    net = build_net(cloud, kmax)
    cc = assemble(cloud, net, cfg.eps, cfg.fit_radius_mult, cfg.eps_max, cfg.samples)

    # beta-based square function at sampled cloud points
    stride = max(len(cloud) // cfg.jones_samples, 1)
    m_beta = 0.0
    for x in cloud.points[::stride][: cfg.jones_samples]:
        rec = jones(cloud, net, x, alpha, "sup", kmax, log_gamma)
        m_beta = max(m_beta, rec.value)

    # epsilon-based square function along flow traces
    frame = cc.sigma0.frame
    base = cc.sigma0.base
    rng = np.random.default_rng(cfg.seed)
    coords = _domain_coords(cloud, cc, rng.uniform(-0.9, 0.9, size=(cfg.trace_samples, cc.sigma0.d)))
    zs = base + coords @ frame
    jets = flow_batch(cc, zs, kmax)
    m_eps = 0.0
    for jet in jets:
        total = 0.0
        for k in range(1, kmax + 1):
            ek = epsilon_k(cc, jet.trace[k], k, cfg.samples)
            if log_gamma is not None:
                total += (ek * math.log(1.0 / scale_radius(k)) ** log_gamma / scale_radius(k)) ** 2
            else:
                total += ek**2 / scale_radius(k) ** (2 * alpha)
        m_eps = max(m_eps, total)

    forward = _forward_report(cloud, cc, kmax, alpha, cfg, log_gamma)
    inverse = _inverse_report(cloud, cc, kmax, alpha, cfg, log_gamma)
    return PredictionBundle(alpha, K, m_beta, m_eps, forward, inverse, flat.to_dict(), log_gamma)


def _domain_coords(cloud: PointCloud, cc: CCBP, coords: np.ndarray) -> np.ndarray:
    """Clip reference-plane coordinates to the projected cloud extent."""
    proj = (cloud.points - cc.sigma0.base) @ cc.sigma0.frame.T
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return mid + coords * half


def _grid_spec(cc: CCBP, cloud: PointCloud, count: int):
    proj = (cloud.points - cc.sigma0.base) @ cc.sigma0.frame.T
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    pad = 0.02 * (hi - lo)
    lo, hi = lo + pad, hi - pad
    if cc.sigma0.d == 1:
        return (float(lo[0]), float(hi[0]), count)
    side = max(int(math.sqrt(count)), 8)
    return ((float(lo[0]), float(hi[0]), side), (float(lo[1]), float(hi[1]), side))


def _fit_window(cloud: PointCloud, kmax: int, span: float) -> tuple[float, float]:
    """Distance range where the derivative envelope is informative.

    Below ~150 r_K the blending kernels smooth the map (unit slope bias);
    above a fraction of the domain the envelope saturates (zero slope bias).
    Shallow constructions cannot honor the floor, so it is capped to keep a
    usable fitting range.
    """
    hi = span / 8.0
    floor = max(150.0 * scale_radius(kmax), 4.0 * cloud.median_nn_distance())
    return (max(min(floor, hi / 8.0), 1e-12), hi)


def _forward_report(cloud, cc, kmax, alpha, cfg, log_gamma):
    grid = _grid_spec(cc, cloud, cfg.grid_points)
    mesh = surface_mesh(cc, grid, kmax)
    dfu = mesh.frames[:, 0, :]  # pushforward of the first reference direction
    span = float(np.linalg.norm(mesh.params.max(axis=0) - mesh.params.min(axis=0)))
    return estimate_holder(
        mesh.params,
        dfu,
        target="Df",
        prediction=1.0 if alpha == 1.0 else alpha,
        tolerance=cfg.tolerance,
        bins_per_octave=1,
        dist_window=_fit_window(cloud, kmax, span),
    )


def _inverse_report(cloud, cc, kmax, alpha, cfg, log_gamma):
    if cfg.inverse_points < 200:
        return None
    grid = _grid_spec(cc, cloud, cfg.inverse_points)
    mesh = surface_mesh(cc, grid, kmax)
    stride = max(len(mesh.vertices) // cfg.inverse_points, 1)
    idx = np.arange(len(mesh.vertices))[::stride]
    # Difference the inverse parameters along fixed ambient axes: the nearest
    # point inversion projects onto the local tangent, so these increments
    # carry the tangent-plane rotation (differencing along the moving tangent
    # frame would only read the derivative norm, which varies at second
    # order). FD noise is (inversion residual)/h; keep the residual far below
    # the increments measured.
    h = max(0.05 * scale_radius(kmax), 1e-7)
    tol = 1e-12
    axes = np.eye(mesh.vertices.shape[1])
    pts, vals = [], []
    for i in idx:
        p = mesh.vertices[i]
        try:
            z0 = invert(cc, mesh, p, kmax, tol=tol)
            rows = []
            for w in axes:
                z1 = invert(cc, mesh, p + h * w, kmax, tol=tol)
                rows.append((z1.params - z0.params) / h)
        except (ValueError, np.linalg.LinAlgError):
            continue
        pts.append(p)
        vals.append(np.concatenate(rows))
    if len(pts) < 200:
        return None
    pts = np.array(pts)
    span = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return estimate_holder(
        pts,
        np.array(vals),
        target="Df_inverse",
        prediction=1.0 if alpha == 1.0 else alpha,
        tolerance=cfg.tolerance,
        bins_per_octave=1,
        dist_window=_fit_window(cloud, kmax, span),
    )
