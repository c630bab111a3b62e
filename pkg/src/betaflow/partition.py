"""Smooth partition of unity subordinate to the dilated net balls.

Per scale k, each net point carries a radial bump equal to 1 inside 8 r_k and
vanishing beyond 10 r_k. The background weight is the product of complementary
cutoffs (1 inside 8 r_k, 0 beyond 9 r_k), so it vanishes identically on the
8-dilated neighborhood and equals 1 outside the 9-dilated one. Normalizing by
the total gives theta_j and psi with exact closed-form first and second
derivatives; the normalizer never drops below 1/2 anywhere.

Profiles are C^2 piecewise quintics: two derivatives are all the downstream
maps consume, and the closed-form jets stay exact at the band edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import _bump_jet_scalar
from .nets import MultiscaleNet


def bump_jet(t: float) -> tuple[float, float, float]:
    """Radial profile (value, d/dt, d2/dt2): 1 on [0,8], 0 on [10,inf)."""
    if t < 0:
        raise ValueError(f"profile argument must be nonnegative, got {t}")
    return _bump_jet_scalar(float(t), 8.0, 10.0)


def cutoff_jet(t: float) -> tuple[float, float, float]:
    """Inner cutoff (value, d/dt, d2/dt2): 1 on [0,8], 0 on [9,inf)."""
    if t < 0:
        raise ValueError(f"profile argument must be nonnegative, got {t}")
    return _bump_jet_scalar(float(t), 8.0, 9.0)


@dataclass
class PartitionJet:
    """Values, gradients and Hessians of theta_j and psi at one point."""

    active: np.ndarray  # rows into the scale-k net
    theta: np.ndarray  # (m,)
    theta_grad: np.ndarray  # (m, n)
    theta_hess: np.ndarray  # (m, n, n)
    psi: float
    psi_grad: np.ndarray  # (n,)
    psi_hess: np.ndarray  # (n, n)
    normalizer: float

    def sum_check(self) -> float:
        return float(self.psi + self.theta.sum())


def _radial_jets(y, centers, r, lo, hi):
    """Jets of profile(|y - c| / r) for each center c; rows with t >= hi drop."""
    n = y.shape[0]
    diff = y - centers
    dist = np.linalg.norm(diff, axis=1)
    t = dist / r
    vals = np.empty(len(centers))
    grads = np.zeros((len(centers), n))
    hesses = np.zeros((len(centers), n, n))
    eye = np.eye(n)
    for i in range(len(centers)):
        v, d1, d2 = _bump_jet_scalar(t[i], lo, hi)
        vals[i] = v
        if lo < t[i] < hi:
            u = diff[i] / dist[i]
            uu = np.outer(u, u)
            grads[i] = d1 * u / r
            hesses[i] = d2 * uu / (r * r) + d1 * (eye - uu) / (r * dist[i])
    return t, vals, grads, hesses


def partition_jet(net: MultiscaleNet, y, k: int) -> PartitionJet:
    """Evaluate the scale-k partition of unity and its jets at y."""
    sc = net.scale(k)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    cand = sc.net_grid.query(y, 10.0 * sc.r)
    if cand.size == 0:
        return PartitionJet(
            active=np.empty(0, dtype=np.int64),
            theta=np.empty(0),
            theta_grad=np.empty((0, n)),
            theta_hess=np.empty((0, n, n)),
            psi=1.0,
            psi_grad=np.zeros(n),
            psi_hess=np.zeros((n, n)),
            normalizer=1.0,
        )

    centers = sc.points[cand]
    t, phi, gphi, hphi = _radial_jets(y, centers, sc.r, 8.0, 10.0)
    _, cut, gcut, hcut = _radial_jets(y, centers, sc.r, 8.0, 9.0)

    # background: product of (1 - cutoff) factors
    bg, gbg, hbg = 1.0, np.zeros(n), np.zeros((n, n))
    for i in range(len(cand)):
        fv, fg, fh = 1.0 - cut[i], -gcut[i], -hcut[i]
        hbg = hbg * fv + np.outer(gbg, fg) + np.outer(fg, gbg) + bg * fh
        gbg = gbg * fv + bg * fg
        bg = bg * fv

    S = bg + phi.sum()
    if S < 0.5:
        raise AssertionError(f"partition normalizer {S} < 1/2; net invariants violated")
    gS = gbg + gphi.sum(axis=0)
    hS = hbg + hphi.sum(axis=0)
    inv = 1.0 / S

    psi = bg * inv
    gpsi = (gbg - psi * gS) * inv
    hpsi = (hbg - psi * hS - np.outer(gpsi, gS) - np.outer(gS, gpsi)) * inv

    keep = phi > 0.0
    phi, gphi, hphi = phi[keep], gphi[keep], hphi[keep]
    theta = phi * inv
    gth = (gphi - theta[:, None] * gS) * inv
    hth = (
        hphi
        - theta[:, None, None] * hS
        - gth[:, :, None] * gS[None, None, :]
        - gS[None, :, None] * gth[:, None, :]
    ) * inv

    return PartitionJet(
        active=cand[keep],
        theta=theta,
        theta_grad=gth,
        theta_hess=hth,
        psi=float(psi),
        psi_grad=gpsi,
        psi_hess=hpsi,
        normalizer=float(S),
    )
