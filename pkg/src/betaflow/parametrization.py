"""Per-scale correction maps, their composition, inversion, and distortion.

sigma_k blends the identity with projections onto the local planes through
the scale-k partition of unity; composing them from the reference plane gives
the finite-depth parametrization f_K together with its Jacobian and a
directional second derivative propagated by the chain rule

    A_{k+1} = D2sigma_k(z_k) . (Df_k u) . (Df_k u) + Dsigma_k(z_k) . A_k.

f is only ever evaluated to finite depth; the discarded tail is bounded by
sum_{k>=K} 10 r_k = (100/9) r_K and reported alongside every flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ccbp import CCBP
from .geometry import Plane
from .partition import partition_jet

TAIL_FACTOR = 100.0 / 9.0


@dataclass
class SigmaJet:
    value: np.ndarray  # (n,)
    jac: np.ndarray  # (n, n)
    hess: np.ndarray  # (n, n, n): hess[a, l, m] = d^2 sigma^a / dy_l dy_m

    def hess_dir(self, u, v) -> np.ndarray:
        return np.einsum("alm,l,m->a", self.hess, u, v)


def _scale_arrays(ccbp: CCBP, k: int):
    sc = ccbp.net.scale(k)
    net_pts = sc.points
    proj = np.stack([p.tangent_projector() for p in ccbp.planes[k]])
    grid = sc.net_grid
    return net_pts, proj, sc.r, grid.codes_sorted, grid.order, grid.cell


def sigma_jet(ccbp: CCBP, y, k: int) -> SigmaJet:
    """Value, Jacobian, and full Hessian tensor of sigma_k at a point.

    Reference implementation assembled from the partition jets; the batched
    kernel path is pinned against it in the tests.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    pj = partition_jet(ccbp.net, y, k)
    sc = ccbp.net.scale(k)

    value = pj.psi * y
    jac = pj.psi * np.eye(n) + np.outer(y, pj.psi_grad)
    hess = np.zeros((n, n, n))
    # symmetrized products of psi derivatives with the identity component
    hess += np.einsum("lm,a->alm", pj.psi_hess, y)
    hess += np.einsum("l,am->alm", pj.psi_grad, np.eye(n))
    hess += np.einsum("m,al->alm", pj.psi_grad, np.eye(n))

    for i, row in enumerate(pj.active):
        plane = ccbp.planes[k][row]
        pmat = plane.tangent_projector()
        piy = plane.base + pmat @ (y - plane.base)
        th, gth, hth = pj.theta[i], pj.theta_grad[i], pj.theta_hess[i]
        value += th * piy
        jac += th * pmat + np.outer(piy, gth)
        hess += np.einsum("lm,a->alm", hth, piy)
        hess += np.einsum("l,am->alm", gth, pmat)
        hess += np.einsum("m,al->alm", gth, pmat)

    disp = float(np.linalg.norm(value - y))
    if disp > 10.0 * sc.r * (1.0 + 1e-9):
        raise AssertionError(f"displacement {disp} exceeds 10 r_k at scale {k}")
    return SigmaJet(value, jac, hess)


def sigma_apply(ccbp: CCBP, ys: np.ndarray, k: int, vs: np.ndarray | None = None):
    """Batched sigma_k: values, Jacobians, and direction-contracted Hessians."""
    net_pts, proj, r, codes, order, cell = _scale_arrays(ccbp, k)
    return kernels.sigma_batch(net_pts, proj, r, codes, order, cell, ys, vs)


@dataclass
class FlowJet:
    z: np.ndarray  # starting point on the reference plane
    trace: np.ndarray  # (K+1, n): z_0 .. z_K
    jac: np.ndarray  # (n, n) accumulated Jacobian
    dir2: np.ndarray  # (n,) directional second derivative along u
    direction: np.ndarray
    tail_bound: float
    displacements: np.ndarray  # (K,) per-step sup-norm displacements

    @property
    def value(self) -> np.ndarray:
        return self.trace[-1]


def flow(ccbp: CCBP, z, K: int, direction=None) -> FlowJet:
    """Compose the correction maps from a reference-plane point."""
    jets = flow_batch(ccbp, np.asarray(z, dtype=np.float64)[None, :], K, direction)
    return jets[0]


def flow_batch(ccbp: CCBP, zs: np.ndarray, K: int, direction=None) -> list[FlowJet]:
    if K > ccbp.K:
        raise ValueError(f"flow depth {K} exceeds CCBP depth {ccbp.K}")
    zs = np.ascontiguousarray(zs, dtype=np.float64)
    m, n = zs.shape
    off = zs - _project_rows(ccbp.sigma0, zs)
    if np.linalg.norm(off, axis=1).max() > 1e-8:
        raise ValueError("flow must start on the reference plane")
    if np.linalg.norm(zs, axis=1).max() > 2.0 + 1e-12:
        raise ValueError("flow must start inside B(0, 2)")
    if direction is None:
        direction = ccbp.sigma0.frame[0]
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)

    cur = zs.copy()
    jac = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    a_vec = np.zeros((m, n))
    traces = [cur.copy()]
    disps = []
    for k in range(K):
        v = np.einsum("mab,b->ma", jac, u)
        vals, jacs, hvv = sigma_apply(ccbp, cur, k, v)
        disp = np.linalg.norm(vals - cur, axis=1)
        r_k = ccbp.net.scale(k).r
        if disp.max() > 10.0 * r_k * (1.0 + 1e-9):
            raise AssertionError(f"step displacement {disp.max()} exceeds 10 r_k at scale {k}")
        a_vec = hvv + np.einsum("mab,mb->ma", jacs, a_vec)
        jac = np.einsum("mab,mbc->mac", jacs, jac)
        cur = vals
        traces.append(cur.copy())
        disps.append(disp)
    tail = TAIL_FACTOR * ccbp.net.scale(K).r if K <= ccbp.K else 0.0
    trace_arr = np.stack(traces, axis=1)  # (m, K+1, n)
    disp_arr = np.stack(disps, axis=1) if disps else np.zeros((m, 0))
    return [
        FlowJet(zs[i], trace_arr[i], jac[i], a_vec[i], u, tail, disp_arr[i])
        for i in range(m)
    ]


def _project_rows(plane: Plane, ys):
    rel = ys - plane.base
    return plane.base + (rel @ plane.frame.T) @ plane.frame


@dataclass
class SurfaceMesh:
    params: np.ndarray  # (m, d) coordinates on the reference plane
    vertices: np.ndarray  # (m, n)
    frames: np.ndarray  # (m, d, n) pushed-forward tangent frames
    edges: np.ndarray  # (e, 2) indices
    grid_shape: tuple
    K: int
    tail_bound: float


def surface_mesh(ccbp: CCBP, grid, K: int) -> SurfaceMesh:
    """Image of a reference-plane grid under f_K with tangent frames.

    ``grid``: (lo, hi, count) for d=1, or ((lo1, hi1, c1), (lo2, hi2, c2))
    for d=2, in reference-plane coordinates.
    """
    d = ccbp.sigma0.d
    if d == 1:
        lo, hi, cnt = grid
        coords = np.linspace(lo, hi, cnt)[:, None]
        shape = (cnt,)
        edges = np.column_stack([np.arange(cnt - 1), np.arange(1, cnt)])
    elif d == 2:
        (lo1, hi1, c1), (lo2, hi2, c2) = grid
        g1 = np.linspace(lo1, hi1, c1)
        g2 = np.linspace(lo2, hi2, c2)
        mg = np.meshgrid(g1, g2, indexing="ij")
        coords = np.column_stack([mg[0].ravel(), mg[1].ravel()])
        shape = (c1, c2)
        idx = np.arange(c1 * c2).reshape(c1, c2)
        edges = np.concatenate(
            [
                np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()]),
                np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
            ]
        )
    else:
        raise ValueError("surface meshes support d = 1 or 2")

    zs = ccbp.sigma0.base + coords @ ccbp.sigma0.frame
    jets = flow_batch(ccbp, zs, K)
    vertices = np.stack([j.value for j in jets])
    frames = np.stack([j.jac @ ccbp.sigma0.frame.T for j in jets]).transpose(0, 2, 1)
    return SurfaceMesh(coords, vertices, frames, edges, shape, K, jets[0].tail_bound)


@dataclass
class InverseResult:
    params: np.ndarray  # (d,) reference-plane coordinates
    point: np.ndarray  # f_K at params
    residual: float
    converged: bool
    iterations: int


def invert(ccbp: CCBP, mesh: SurfaceMesh, target, K: int, tol: float = 1e-8, max_iter: int = 50) -> InverseResult:
    """Damped Gauss-Newton on |f_K(z) - target|^2, seeded at the nearest vertex."""
    target = np.asarray(target, dtype=np.float64)
    seed_idx = int(np.argmin(np.linalg.norm(mesh.vertices - target, axis=1)))
    if np.linalg.norm(mesh.vertices[seed_idx] - target) > ccbp.net.scale(K).r + mesh.tail_bound + 0.5:
        raise ValueError("target too far from the meshed surface")
    coords = mesh.params[seed_idx].copy()
    frame = ccbp.sigma0.frame
    base = ccbp.sigma0.base

    def f_and_jac(c):
        z = base + c @ frame
        jet = flow(ccbp, z, K)
        return jet.value, jet.jac @ frame.T  # (n,), (n, d)

    val, J = f_and_jac(coords)
    res = val - target
    best = float(np.linalg.norm(res))
    it = 0
    for it in range(1, max_iter + 1):
        if best <= tol:
            break
        g = J.T @ res
        H = J.T @ J
        try:
            step = np.linalg.solve(H + 1e-14 * np.eye(H.shape[0]), -g)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        improved = False
        for _ in range(12):
            cand = coords + lam * step
            v2, J2 = f_and_jac(cand)
            r2 = float(np.linalg.norm(v2 - target))
            if r2 < best:
                coords, val, J, res, best = cand, v2, J2, v2 - target, r2
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    return InverseResult(coords, val, best, best <= tol, it)


def distortion_report(ccbp: CCBP, zs: np.ndarray, K: int, eps_fn=None) -> dict:
    """Measured distortion ratios of the per-scale maps along flow traces.

    For each bound the reported number is max(measured left side / stated
    right side with unit constant); 0/0 cases are guarded to 0. ``eps_fn``
    maps (y, k) to the local plane-variation coefficient; defaults to the
    module-level epsilon_k.
    """
    if eps_fn is None:
        from .beta import epsilon_k

        eps_fn = lambda y, k: epsilon_k(ccbp, y, k) if k >= 1 else 0.0

    zs = np.ascontiguousarray(zs, dtype=np.float64)
    m, n = zs.shape
    u = ccbp.sigma0.frame[0]
    eps = ccbp.eps
    table: dict[tuple[str, int], float] = {}

    def update(bound, k, num, den):
        key = (bound, k)
        ratio = 0.0 if num < 1e-14 else (np.inf if den < 1e-300 else num / den)
        table[key] = max(table.get(key, 0.0), ratio)

    cur = zs.copy()
    jac = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    for k in range(K):
        r_k = ccbp.net.scale(k).r
        for i in range(m):
            y = cur[i]
            partial = jac[i] @ u
            nrm = np.linalg.norm(partial)
            if nrm < 1e-300:
                continue
            tangent = partial / nrm
            sj = sigma_jet(ccbp, y, k)
            ek = float(eps_fn(y, k))
            dv = sj.jac @ tangent
            update("tangent-displacement", k, float(np.linalg.norm(dv - tangent)), eps)
            update("tangent-norm", k, abs(float(np.linalg.norm(dv)) - 1.0), ek * ek)
            update("second-derivative", k, float(np.linalg.norm(sj.hess)), ek / r_k)
            # reduced form: remove the symmetrized normal-projection term
            pj = partition_jet(ccbp.net, y, k)
            row, _ = ccbp.net.nearest_net(y, k)
            perp = np.eye(n) - ccbp.planes[k][row].tangent_projector()
            red = sj.hess.copy()
            red -= np.einsum("l,am->alm", pj.psi_grad, perp)
            red -= np.einsum("m,al->alm", pj.psi_grad, perp)
            update("reduced-second-derivative", k, float(np.linalg.norm(red)), eps / r_k)
        vals, jacs, _ = sigma_apply(ccbp, cur, k)
        jac = np.einsum("mab,mbc->mac", jacs, jac)
        cur = vals
    out = {}
    for (bound, k), val in sorted(table.items()):
        out.setdefault(bound, {})[k] = val if np.isfinite(val) else None
    return out


def export_mesh_csv(path, mesh: SurfaceMesh):
    """d=1 polyline export with cumulative arc parameter."""
    if len(mesh.grid_shape) != 1:
        raise ValueError("CSV polyline export is for d = 1 meshes")
    seg = np.linalg.norm(np.diff(mesh.vertices, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    with open(path, "w") as fh:
        fh.write("# betaflow.mesh.v1 arc," + ",".join(f"x{i}" for i in range(mesh.vertices.shape[1])) + "\n")
        for a, v in zip(arc, mesh.vertices):
            fh.write(",".join(repr(float(t)) for t in (a, *v)) + "\n")


def export_mesh_obj(path, mesh: SurfaceMesh):
    """d=2 OBJ export with vertex normals from the pushed frames (n = 3)."""
    if len(mesh.grid_shape) != 2 or mesh.vertices.shape[1] != 3:
        raise ValueError("OBJ export needs a d = 2 mesh in R^3")
    c1, c2 = mesh.grid_shape
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for fr in mesh.frames:
            nrm = np.cross(fr[0], fr[1])
            ln = np.linalg.norm(nrm)
            if ln > 0:
                nrm = nrm / ln
            fh.write(f"vn {nrm[0]!r} {nrm[1]!r} {nrm[2]!r}\n")
        idx = np.arange(c1 * c2).reshape(c1, c2)
        for i in range(c1 - 1):
            for j in range(c2 - 1):
                a, b, c, dd = idx[i, j] + 1, idx[i + 1, j] + 1, idx[i + 1, j + 1] + 1, idx[i, j + 1] + 1
                fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
                fh.write(f"f {a}//{a} {c}//{c} {dd}//{dd}\n")
