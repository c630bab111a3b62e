"""Hot numeric kernels: numba-jitted loops with a pure-numpy fallback.

The jitted path is used when numba imports cleanly and the environment
variable ``BETAFLOW_DISABLE_NUMBA`` is unset/empty. Both paths compute the
same quantities; ``benchmarks/bench_kernels.py`` times them side by side and
``tests/test_kernels.py`` pins their numerical agreement.

Spatial lookups use a hashed uniform grid: cell coordinates are mixed with
fixed primes and XOR-folded into an int64 key. Hash collisions merge buckets,
which only adds candidates that the explicit distance checks discard, so
results never depend on the hash.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = bool(os.environ.get("BETAFLOW_DISABLE_NUMBA", ""))

try:
    if _DISABLED:
        raise ImportError("numba disabled via BETAFLOW_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


USE_NUMBA = HAVE_NUMBA

# Primes for the spatial hash. Quantized coordinates stay below 2**35 for any
# realistic scale depth, so the int64 products never overflow.
_P1 = np.int64(73856093)
_P2 = np.int64(19349663)
_P3 = np.int64(83492791)


def neighbor_offsets(n: int, reach: int = 1) -> np.ndarray:
    """Integer offsets of the (2*reach+1)^n cell neighborhood."""
    axes = [np.arange(-reach, reach + 1, dtype=np.int64)] * n
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def hash_cells(cells: np.ndarray) -> np.ndarray:
    """XOR-fold integer cell coordinates (m, n) into int64 keys."""
    primes = np.array([_P1, _P2, _P3], dtype=np.int64)[: cells.shape[1]]
    return np.bitwise_xor.reduce(cells * primes, axis=1)


def grid_build(points: np.ndarray, cell: float):
    """Sorted-hash index over ``points`` with cell size ``cell``.

    Returns (codes_sorted, order): bucket lookup is a binary-search range in
    ``codes_sorted``; ``order`` maps range positions back to point rows.
    """
    cells = np.floor(points / cell).astype(np.int64)
    codes = hash_cells(cells)
    order = np.argsort(codes, kind="stable").astype(np.int64)
    return codes[order], order


@njit(cache=True)
def _hash_cell_nb(q, n):
    acc = q[0] * _P1
    if n > 1:
        acc ^= q[1] * _P2
    if n > 2:
        acc ^= q[2] * _P3
    return acc


@njit(cache=True)
def _quintic_jet(s):
    """Smoothstep s^3 (10 - 15 s + 6 s^2) with first/second derivatives."""
    v = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s)
    d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    return v, d1, d2


@njit(cache=True)
def _bump_jet_scalar(t, lo, hi):
    """Profile equal to 1 on [0, lo], 0 on [hi, inf), quintic in between.

    The value is clamped at 0: near s = 1 the complement 1 - s^3(...) loses
    all significant digits and can round to -1e-16, which would leak a
    negative partition weight.
    """
    if t <= lo:
        return 1.0, 0.0, 0.0
    if t >= hi:
        return 0.0, 0.0, 0.0
    w = hi - lo
    s = (t - lo) / w
    v, d1, d2 = _quintic_jet(s)
    return max(1.0 - v, 0.0), -d1 / w, -d2 / (w * w)


# ---------------------------------------------------------------------------
# greedy separated-net construction
# ---------------------------------------------------------------------------


@njit(cache=True)
def _greedy_net_nb(points, r):
    npts, n = points.shape
    tbits = 2
    while (1 << tbits) < 4 * npts:
        tbits += 1
    mask = np.int64((1 << tbits) - 1)
    head = -np.ones(1 << tbits, dtype=np.int64)
    nxt = -np.ones(npts, dtype=np.int64)
    accepted = np.empty(npts, dtype=np.int64)
    na = 0
    r2 = r * r
    q = np.empty(n, dtype=np.int64)
    qq = np.empty(n, dtype=np.int64)
    reach = 1
    span = 2 * reach + 1
    ncells = span**n
    for i in range(npts):
        for a in range(n):
            q[a] = np.int64(math.floor(points[i, a] / r))
        ok = True
        for c in range(ncells):
            rem = c
            for a in range(n):
                qq[a] = q[a] + (rem % span) - reach
                rem //= span
            slot = _hash_cell_nb(qq, n) & mask
            j = head[slot]
            while j >= 0:
                dist2 = 0.0
                for a in range(n):
                    diff = points[i, a] - points[j, a]
                    dist2 += diff * diff
                if dist2 < r2:
                    ok = False
                    break
                j = nxt[j]
            if not ok:
                break
        if ok:
            slot = _hash_cell_nb(q, n) & mask
            nxt[i] = head[slot]
            head[slot] = i
            accepted[na] = i
            na += 1
    return accepted[:na]


def _greedy_net_py(points, r):
    npts, n = points.shape
    buckets: dict = {}
    accepted = []
    r2 = r * r
    offs = neighbor_offsets(n)
    for i in range(npts):
        q = tuple(np.floor(points[i] / r).astype(np.int64))
        ok = True
        for off in offs:
            key = tuple(q + off)
            for j in buckets.get(key, ()):
                diff = points[i] - points[j]
                if float(diff @ diff) < r2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            buckets.setdefault(q, []).append(i)
            accepted.append(i)
    return np.array(accepted, dtype=np.int64)


def greedy_net(points: np.ndarray, r: float) -> np.ndarray:
    """Indices of a maximal r-separated subset, greedy in row order."""
    if USE_NUMBA:
        return _greedy_net_nb(points, r)
    return _greedy_net_py(points, r)


# ---------------------------------------------------------------------------
# radius queries against a sorted-hash grid
# ---------------------------------------------------------------------------


@njit(cache=True)
def _query_radius_nb(points, codes_sorted, order, cell, y, radius):
    n = points.shape[1]
    reach = int(math.ceil(radius / cell))
    span = 2 * reach + 1
    ncells = span**n
    cellcodes = np.empty(ncells, dtype=np.int64)
    q = np.empty(n, dtype=np.int64)
    qq = np.empty(n, dtype=np.int64)
    for a in range(n):
        q[a] = np.int64(math.floor(y[a] / cell))
    for c in range(ncells):
        rem = c
        for a in range(n):
            qq[a] = q[a] + (rem % span) - reach
            rem //= span
        cellcodes[c] = _hash_cell_nb(qq, n)
    cellcodes = np.sort(cellcodes)
    out = np.empty(points.shape[0], dtype=np.int64)
    cnt = 0
    r2 = radius * radius
    prev = np.int64(0)
    for c in range(ncells):
        code = cellcodes[c]
        if c > 0 and code == prev:
            continue
        prev = code
        lo = np.searchsorted(codes_sorted, code, side="left")
        hi = np.searchsorted(codes_sorted, code, side="right")
        for p in range(lo, hi):
            j = order[p]
            dist2 = 0.0
            for a in range(n):
                diff = y[a] - points[j, a]
                dist2 += diff * diff
            if dist2 <= r2:
                out[cnt] = j
                cnt += 1
    return np.sort(out[:cnt])


def _query_radius_np(points, codes_sorted, order, cell, y, radius):
    n = points.shape[1]
    reach = int(math.ceil(radius / cell))
    q = np.floor(y / cell).astype(np.int64)
    cellcodes = np.unique(hash_cells(q[None, :] + neighbor_offsets(n, reach)))
    los = np.searchsorted(codes_sorted, cellcodes, side="left")
    his = np.searchsorted(codes_sorted, cellcodes, side="right")
    cand = np.concatenate([order[lo:hi] for lo, hi in zip(los, his)]) if len(los) else np.empty(0, np.int64)
    if cand.size == 0:
        return cand
    diff = points[cand] - y
    keep = np.einsum("ij,ij->i", diff, diff) <= radius * radius
    return np.sort(cand[keep])


def query_radius(points, codes_sorted, order, cell, y, radius):
    """Indices of ``points`` within ``radius`` of ``y`` (sorted ascending)."""
    if USE_NUMBA:
        return _query_radius_nb(points, codes_sorted, order, cell, np.ascontiguousarray(y), radius)
    return _query_radius_np(points, codes_sorted, order, cell, y, radius)


# ---------------------------------------------------------------------------
# blended projection map sigma_k: value, Jacobian, directional Hessian
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sigma_batch_nb(net, proj, r, codes_sorted, order, cell, ys, vs, want_h):
    m, n = ys.shape
    vals = np.empty((m, n))
    jacs = np.empty((m, n, n))
    hvv = np.zeros((m, n))
    support = 10.0 * r

    for ip in range(m):
        y = ys[ip]
        cand = _query_radius_nb(net, codes_sorted, order, cell, y, support)
        ncand = cand.shape[0]
        if ncand == 0:
            for a in range(n):
                vals[ip, a] = y[a]
                for b in range(n):
                    jacs[ip, a, b] = 1.0 if a == b else 0.0
            continue

        # per-active jets of the radial profiles
        phi = np.empty(ncand)
        gphi = np.zeros((ncand, n))
        hphi = np.zeros((ncand, n, n))
        # running product of background factors (1 - inner-cutoff)
        bg = 1.0
        gbg = np.zeros(n)
        hbg = np.zeros((n, n))
        u = np.empty(n)
        for c in range(ncand):
            j = cand[c]
            dist2 = 0.0
            for a in range(n):
                diff = y[a] - net[j, a]
                u[a] = diff
                dist2 += diff * diff
            dist = math.sqrt(dist2)
            t = dist / r
            b, b1, b2 = _bump_jet_scalar(t, 8.0, 10.0)
            phi[c] = b
            if 8.0 < t < 10.0:
                inv = 1.0 / dist
                for a in range(n):
                    u[a] *= inv
                for a in range(n):
                    gphi[c, a] = b1 * u[a] / r
                    for bdx in range(n):
                        uu = u[a] * u[bdx]
                        eye = 1.0 if a == bdx else 0.0
                        hphi[c, a, bdx] = b2 * uu / (r * r) + b1 * (eye - uu) / (r * dist)
            g, g1, g2 = _bump_jet_scalar(t, 8.0, 9.0)
            gv = 1.0 - g
            if 8.0 < t < 9.0:
                # jets of the factor 1 - cutoff(t)
                ggrad = np.empty(n)
                for a in range(n):
                    ggrad[a] = -g1 * u[a] / r
                ghess = np.empty((n, n))
                for a in range(n):
                    for bdx in range(n):
                        uu = u[a] * u[bdx]
                        eye = 1.0 if a == bdx else 0.0
                        ghess[a, bdx] = -g2 * uu / (r * r) - g1 * (eye - uu) / (r * dist)
                for a in range(n):
                    for bdx in range(n):
                        hbg[a, bdx] = hbg[a, bdx] * gv + gbg[a] * ggrad[bdx] + ggrad[a] * gbg[bdx] + bg * ghess[a, bdx]
                for a in range(n):
                    gbg[a] = gbg[a] * gv + bg * ggrad[a]
                bg *= gv
            elif t <= 8.0:
                # factor identically zero in a neighborhood: product vanishes
                bg = 0.0
                for a in range(n):
                    gbg[a] = 0.0
                    for bdx in range(n):
                        hbg[a, bdx] = 0.0

        # normalizer S and its jets
        S = bg
        gS = gbg.copy()
        hS = hbg.copy()
        for c in range(ncand):
            S += phi[c]
            for a in range(n):
                gS[a] += gphi[c, a]
                for bdx in range(n):
                    hS[a, bdx] += hphi[c, a, bdx]

        invS = 1.0 / S
        psi = bg * invS
        gpsi = np.empty(n)
        for a in range(n):
            gpsi[a] = (gbg[a] - psi * gS[a]) * invS
        hpsi = np.empty((n, n))
        for a in range(n):
            for bdx in range(n):
                hpsi[a, bdx] = (hbg[a, bdx] - psi * hS[a, bdx] - gpsi[a] * gS[bdx] - gS[a] * gpsi[bdx]) * invS

        val = np.zeros(n)
        jac = np.zeros((n, n))
        for a in range(n):
            val[a] = psi * y[a]
            jac[a, a] = psi
            for bdx in range(n):
                jac[a, bdx] += y[a] * gpsi[bdx]

        v = vs[ip]
        if want_h:
            vhv = 0.0
            gpv = 0.0
            for a in range(n):
                gpv += gpsi[a] * v[a]
                for bdx in range(n):
                    vhv += v[a] * hpsi[a, bdx] * v[bdx]
            for a in range(n):
                hvv[ip, a] = vhv * y[a] + 2.0 * gpv * v[a]

        gth = np.empty(n)
        hth = np.empty((n, n))
        piy = np.empty(n)
        for c in range(ncand):
            j = cand[c]
            th = phi[c] * invS
            for a in range(n):
                gth[a] = (gphi[c, a] - th * gS[a]) * invS
            for a in range(n):
                for bdx in range(n):
                    hth[a, bdx] = (hphi[c, a, bdx] - th * hS[a, bdx] - gth[a] * gS[bdx] - gS[a] * gth[bdx]) * invS
            for a in range(n):
                acc = net[j, a]
                for bdx in range(n):
                    acc += proj[j, a, bdx] * (y[bdx] - net[j, bdx])
                piy[a] = acc
            for a in range(n):
                val[a] += th * piy[a]
                for bdx in range(n):
                    jac[a, bdx] += th * proj[j, a, bdx] + piy[a] * gth[bdx]
            if want_h:
                vhv = 0.0
                gtv = 0.0
                for a in range(n):
                    gtv += gth[a] * v[a]
                    for bdx in range(n):
                        vhv += v[a] * hth[a, bdx] * v[bdx]
                for a in range(n):
                    pv = 0.0
                    for bdx in range(n):
                        pv += proj[j, a, bdx] * v[bdx]
                    hvv[ip, a] += vhv * piy[a] + 2.0 * gtv * pv

        vals[ip] = val
        jacs[ip] = jac
    return vals, jacs, hvv


def _profile_jets_np(t, lo, hi):
    """Vectorized profile jets matching ``_bump_jet_scalar``."""
    w = hi - lo
    s = np.clip((t - lo) / w, 0.0, 1.0)
    v = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    d1 = 30.0 * s * s * (1.0 - s) ** 2
    d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    band = (t > lo) & (t < hi)
    return 1.0 - v, np.where(band, -d1 / w, 0.0), np.where(band, -d2 / (w * w), 0.0)


def _sigma_batch_np(net, proj, r, codes_sorted, order, cell, ys, vs, want_h):
    m, n = ys.shape
    vals = np.empty((m, n))
    jacs = np.empty((m, n, n))
    hvv = np.zeros((m, n))
    eye = np.eye(n)
    for ip in range(m):
        y = ys[ip]
        cand = _query_radius_np(net, codes_sorted, order, cell, y, 10.0 * r)
        if cand.size == 0:
            vals[ip] = y
            jacs[ip] = eye
            continue
        diff = y - net[cand]  # (c, n)
        dist = np.linalg.norm(diff, axis=1)
        t = dist / r
        safe = np.where(dist > 0, dist, 1.0)
        u = diff / safe[:, None]
        uu = u[:, :, None] * u[:, None, :]
        curv = (eye - uu) / (r * safe)[:, None, None]

        phi, p1, p2 = _profile_jets_np(t, 8.0, 10.0)
        gphi = (p1 / r)[:, None] * u
        hphi = p2[:, None, None] / (r * r) * uu + p1[:, None, None] * curv

        g, g1, g2 = _profile_jets_np(t, 8.0, 9.0)
        fval = 1.0 - g
        fgrad = -(g1 / r)[:, None] * u
        fhess = -(g2[:, None, None] / (r * r) * uu + g1[:, None, None] * curv)

        bg, gbg, hbg = 1.0, np.zeros(n), np.zeros((n, n))
        for c in range(cand.size):
            hbg = hbg * fval[c] + np.outer(gbg, fgrad[c]) + np.outer(fgrad[c], gbg) + bg * fhess[c]
            gbg = gbg * fval[c] + bg * fgrad[c]
            bg = bg * fval[c]

        S = bg + phi.sum()
        gS = gbg + gphi.sum(axis=0)
        hS = hbg + hphi.sum(axis=0)
        invS = 1.0 / S

        psi = bg * invS
        gpsi = (gbg - psi * gS) * invS
        hpsi = (hbg - psi * hS - np.outer(gpsi, gS) - np.outer(gS, gpsi)) * invS

        th = phi * invS
        gth = (gphi - th[:, None] * gS) * invS
        hth = (
            hphi
            - th[:, None, None] * hS
            - gth[:, :, None] * gS[None, None, :]
            - gS[None, :, None] * gth[:, None, :]
        ) * invS

        piy = net[cand] + np.einsum("cab,cb->ca", proj[cand], diff)
        vals[ip] = psi * y + th @ piy
        jacs[ip] = (
            psi * eye
            + np.einsum("c,cab->ab", th, proj[cand])
            + np.outer(y, gpsi)
            + piy.T @ gth
        )
        if want_h:
            v = vs[ip]
            pv = np.einsum("cab,b->ca", proj[cand], v)
            hvv[ip] = (v @ hpsi @ v) * y + 2.0 * (gpsi @ v) * v
            hvv[ip] += np.einsum("c,ca->a", np.einsum("a,cab,b->c", v, hth, v), piy)
            hvv[ip] += 2.0 * ((gth @ v) @ pv)
    return vals, jacs, hvv


def sigma_batch(net, proj, r, codes_sorted, order, cell, ys, vs=None):
    """Evaluate the blended projection map at ``ys``.

    Returns (values, jacobians, hess_vv) where hess_vv[i] is the second
    derivative contracted twice with ``vs[i]`` (zeros when vs is None).
    """
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    want_h = vs is not None
    if vs is None:
        vs = np.zeros_like(ys)
    vs = np.ascontiguousarray(vs, dtype=np.float64)
    if USE_NUMBA:
        return _sigma_batch_nb(net, proj, r, codes_sorted, order, cell, ys, vs, want_h)
    return _sigma_batch_np(net, proj, r, codes_sorted, order, cell, ys, vs, want_h)


# ---------------------------------------------------------------------------
# plane refinement under sup / L1 objectives
# ---------------------------------------------------------------------------


@njit(cache=True)
def _offset_value(R, w, obj, d, r):
    """Best offset in normal coordinates and the objective it attains."""
    m, nd = R.shape
    t = np.zeros(nd)
    if nd == 1:
        if obj == 0:
            lo = R[0, 0]
            hi = R[0, 0]
            for i in range(m):
                if R[i, 0] < lo:
                    lo = R[i, 0]
                if R[i, 0] > hi:
                    hi = R[i, 0]
            t[0] = 0.5 * (lo + hi)
            return 0.5 * (hi - lo) / r, t
        idx = np.argsort(R[:, 0])
        tot = 0.0
        for i in range(m):
            tot += w[i]
        acc = 0.0
        med = R[idx[m - 1], 0]
        for p in range(m):
            acc += w[idx[p]]
            if acc >= 0.5 * tot:
                med = R[idx[p], 0]
                break
        t[0] = med
        s = 0.0
        for i in range(m):
            s += w[i] * abs(R[i, 0] - med)
        return s / r ** (d + 1), t
    # multi-dimensional normal space: iterative center
    for a in range(nd):
        t[a] = R[0, a]
    if obj == 0:
        for it in range(1, 80):
            far = 0
            fd = -1.0
            for i in range(m):
                dist2 = 0.0
                for a in range(nd):
                    diff = R[i, a] - t[a]
                    dist2 += diff * diff
                if dist2 > fd:
                    fd = dist2
                    far = i
            stepw = 1.0 / (it + 1.0)
            for a in range(nd):
                t[a] += stepw * (R[far, a] - t[a])
        best = 0.0
        for i in range(m):
            dist2 = 0.0
            for a in range(nd):
                diff = R[i, a] - t[a]
                dist2 += diff * diff
            if dist2 > best:
                best = dist2
        return math.sqrt(best) / r, t
    # weighted geometric median (Weiszfeld)
    tot = 0.0
    for a in range(nd):
        t[a] = 0.0
    for i in range(m):
        tot += w[i]
        for a in range(nd):
            t[a] += w[i] * R[i, a]
    for a in range(nd):
        t[a] /= tot
    for it in range(80):
        num = np.zeros(nd)
        den = 0.0
        for i in range(m):
            dist2 = 0.0
            for a in range(nd):
                diff = R[i, a] - t[a]
                dist2 += diff * diff
            dist = math.sqrt(dist2)
            if dist < 1e-15:
                dist = 1e-15
            coef = w[i] / dist
            den += coef
            for a in range(nd):
                num[a] += coef * R[i, a]
        for a in range(nd):
            t[a] = num[a] / den
    s = 0.0
    for i in range(m):
        dist2 = 0.0
        for a in range(nd):
            diff = R[i, a] - t[a]
            dist2 += diff * diff
        s += w[i] * math.sqrt(dist2)
    return s / r ** (d + 1), t


@njit(cache=True)
def _eval_frame(pts, w, center, Q, d, obj, r):
    m, n = pts.shape
    nd = n - d
    R = np.empty((m, nd))
    for i in range(m):
        for b in range(nd):
            acc = 0.0
            for a in range(n):
                acc += (pts[i, a] - center[a]) * Q[d + b, a]
            R[i, b] = acc
    return _offset_value(R, w, obj, d, r)


@njit(cache=True)
def _rotate_pair(Q, a, b, ang):
    """Rotate frame row a toward normal row b (in place)."""
    ca = math.cos(ang)
    sa = math.sin(ang)
    n = Q.shape[1]
    for col in range(n):
        ua = ca * Q[a, col] + sa * Q[b, col]
        ub = -sa * Q[a, col] + ca * Q[b, col]
        Q[a, col] = ua
        Q[b, col] = ub


@njit(cache=True)
def _refine_plane_impl(pts, w, center, Q0, d, obj, r, max_iter):
    n = pts.shape[1]
    nd = n - d
    Q = Q0.copy()
    value, t = _eval_frame(pts, w, center, Q, d, obj, r)

    # coarse stage: the minimax objective has local minima the descent can
    # land in, so bracket the global basin first
    if d * nd == 1:
        nscan = 96
        for i in range(nscan):
            trial0 = Q0.copy()
            _rotate_pair(trial0, 0, d, math.pi * i / nscan)
            v, _tt = _eval_frame(pts, w, center, trial0, d, obj, r)
            if v < value:
                value = v
                Q = trial0
        step0 = math.pi / nscan
    else:
        angles = (-1.0471975511965976, -0.5235987755982988, 0.5235987755982988, 1.0471975511965976)
        for ang in angles:
            trial0 = Q0.copy()
            for a in range(d):
                for b in range(nd):
                    _rotate_pair(trial0, a, d + b, ang)
            v, _tt = _eval_frame(pts, w, center, trial0, d, obj, r)
            if v < value:
                value = v
                Q = trial0
        step0 = 0.2

    step = step0
    trial = np.empty_like(Q)
    for _ in range(max_iter):
        improved = False
        best_val = value
        best_a = -1
        best_b = -1
        best_s = 0.0
        for a in range(d):
            for b in range(nd):
                for sgn in range(2):
                    ang = step if sgn == 0 else -step
                    ca = math.cos(ang)
                    sa = math.sin(ang)
                    for col in range(n):
                        trial[a, col] = ca * Q[a, col] + sa * Q[d + b, col]
                        trial[d + b, col] = -sa * Q[a, col] + ca * Q[d + b, col]
                    for row in range(n):
                        if row != a and row != d + b:
                            for col in range(n):
                                trial[row, col] = Q[row, col]
                    v, _tt = _eval_frame(pts, w, center, trial, d, obj, r)
                    if v < best_val - 1e-15:
                        best_val = v
                        best_a = a
                        best_b = b
                        best_s = ang
                        improved = True
        if improved:
            ca = math.cos(best_s)
            sa = math.sin(best_s)
            for col in range(n):
                ua = ca * Q[best_a, col] + sa * Q[d + best_b, col]
                ub = -sa * Q[best_a, col] + ca * Q[d + best_b, col]
                Q[best_a, col] = ua
                Q[d + best_b, col] = ub
            value = best_val
        else:
            step *= 0.5
            if step < 1e-8:
                break
    value, t = _eval_frame(pts, w, center, Q, d, obj, r)
    return Q, t, value


def refine_plane(pts, w, center, Q0, d, obj, r, max_iter=200):
    """Pattern-search refinement of a d-plane frame under sup/L1 objectives.

    ``Q0`` is an orthonormal (n, n) basis whose first d rows span the initial
    plane. Returns the refined basis, the offset of the plane base in normal
    coordinates, and the attained objective value.
    """
    fn = _refine_plane_impl
    return fn(
        np.ascontiguousarray(pts, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(center, dtype=np.float64),
        np.ascontiguousarray(Q0, dtype=np.float64),
        d,
        obj,
        r,
        max_iter,
    )


# ---------------------------------------------------------------------------
# all-pairs dyadic increment binning (Holder envelope estimation)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _pair_bin_max_nb(X, V, lo_log2, inv_w, nbins):
    m, q = X.shape
    p = V.shape[1]
    maxs = np.zeros(nbins)
    dmax = np.zeros(nbins)
    cnts = np.zeros(nbins, dtype=np.int64)
    for i in range(m):
        for j in range(i + 1, m):
            dist2 = 0.0
            for a in range(q):
                diff = X[i, a] - X[j, a]
                dist2 += diff * diff
            if dist2 <= 0.0:
                continue
            b = int(math.floor((0.5 * math.log2(dist2) - lo_log2) * inv_w))
            if b < 0 or b >= nbins:
                continue
            dv2 = 0.0
            for a in range(p):
                diff = V[i, a] - V[j, a]
                dv2 += diff * diff
            dv = math.sqrt(dv2)
            cnts[b] += 1
            if dv > maxs[b]:
                maxs[b] = dv
            dist = math.sqrt(dist2)
            if dist > dmax[b]:
                dmax[b] = dist
    return maxs, cnts, dmax


def _pair_bin_max_np(X, V, lo_log2, inv_w, nbins, block=512):
    m = X.shape[0]
    maxs = np.zeros(nbins)
    dmax = np.zeros(nbins)
    cnts = np.zeros(nbins, dtype=np.int64)
    for start in range(0, m, block):
        stop = min(start + block, m)
        diff = X[start:stop, None, :] - X[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        rows, cols = np.nonzero(dist2 > 0)
        keep = cols > rows + start
        rows, cols = rows[keep], cols[keep]
        if rows.size == 0:
            continue
        d2 = dist2[rows, cols]
        b = np.floor((0.5 * np.log2(d2) - lo_log2) * inv_w).astype(np.int64)
        ok = (b >= 0) & (b < nbins)
        rows, cols, b, d2 = rows[ok], cols[ok], b[ok], d2[ok]
        dv = np.linalg.norm(V[rows + start] - V[cols], axis=1)
        np.add.at(cnts, b, 1)
        np.maximum.at(maxs, b, dv)
        np.maximum.at(dmax, b, np.sqrt(d2))
    return maxs, cnts, dmax


def pair_bin_max(X, V, lo_log2, inv_w, nbins):
    """Per-log-bin max of |V_i - V_j| over all pairs, with pair counts and
    the largest pair distance seen in each bin (the envelope's natural
    abscissa: regressing on bin centers biases the slope wherever bins are
    only partially filled)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    V = np.ascontiguousarray(V, dtype=np.float64)
    if USE_NUMBA:
        return _pair_bin_max_nb(X, V, lo_log2, inv_w, nbins)
    return _pair_bin_max_np(X, V, lo_log2, inv_w, nbins)
