import numpy as np
import pytest

from betaflow.cloud import PointCloud
from betaflow.nets import build_net
from betaflow.partition import bump_jet, cutoff_jet, partition_jet


@pytest.fixture(scope="module")
def line_net():
    pts = np.column_stack([np.linspace(-0.8, 0.8, 600), np.zeros(600)])
    return build_net(PointCloud(pts, d=1), 2)


def test_bump_plateau_and_support():
    assert bump_jet(0.0) == (1.0, 0.0, 0.0)
    assert bump_jet(7.9999) == (1.0, 0.0, 0.0)
    assert bump_jet(10.0) == (0.0, 0.0, 0.0)
    assert bump_jet(25.0) == (0.0, 0.0, 0.0)
    v, d1, d2 = bump_jet(9.0)
    assert 0 < v < 1 and d1 < 0


def test_bump_monotone_on_band():
    ts = np.linspace(8.0, 10.0, 200)
    vals = [bump_jet(t)[0] for t in ts]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_bump_derivatives_match_finite_differences():
    h = 1e-5
    for t in (8.3, 9.0, 9.7):
        v, d1, d2 = bump_jet(t)
        fd1 = (bump_jet(t + h)[0] - bump_jet(t - h)[0]) / (2 * h)
        fd2 = (bump_jet(t + h)[1] - bump_jet(t - h)[1]) / (2 * h)
        assert abs(d1 - fd1) < 1e-6 * max(abs(d1), 1e-6)
        assert abs(d2 - fd2) < 1e-6 * max(abs(d2), 1e-6)


def test_bump_c2_at_band_edges():
    for edge in (8.0, 10.0):
        inside = bump_jet(edge + 1e-9) if edge == 8.0 else bump_jet(edge - 1e-9)
        outside = bump_jet(edge)
        assert abs(inside[1] - outside[1]) < 1e-7
        assert abs(inside[2] - outside[2]) < 1e-3


def test_cutoff_jet_band():
    assert cutoff_jet(8.0) == (1.0, 0.0, 0.0)
    assert cutoff_jet(9.0) == (0.0, 0.0, 0.0)


def test_negative_argument_rejected():
    with pytest.raises(ValueError):
        bump_jet(-0.5)


def test_far_outside_pure_background(line_net):
    pj = partition_jet(line_net, np.array([0.0, 0.5]), 2)
    assert pj.psi == 1.0
    assert pj.active.size == 0
    assert np.all(pj.psi_grad == 0.0) and np.all(pj.psi_hess == 0.0)


def test_isolated_net_point_plateau():
    cloud = PointCloud(np.array([[0.0, 0.0]]), d=1)
    net = build_net(cloud, 1)
    pj = partition_jet(net, np.array([0.0, 0.0]), 1)
    assert pj.active.size == 1
    assert abs(pj.theta[0] - 1.0) < 1e-15
    assert np.linalg.norm(pj.theta_grad[0]) == 0.0
    assert pj.psi == 0.0


def test_partition_of_unity_identity(line_net):
    rng = np.random.default_rng(0)
    for _ in range(60):
        y = rng.uniform(-1.0, 1.0, size=2) * np.array([1.0, 0.02])
        k = int(rng.integers(0, 3))
        pj = partition_jet(line_net, y, k)
        assert abs(pj.sum_check() - 1.0) < 1e-12
        assert pj.normalizer >= 0.5
        assert np.all(pj.theta >= 0.0)


def test_theta_support_exact(line_net):
    sc = line_net.scale(1)
    j = len(sc.points) // 2
    x = sc.points[j]
    pj = partition_jet(line_net, x + np.array([10.0 * sc.r, 0.0]), 1)
    assert j not in {int(r) for r in pj.active}
    pj2 = partition_jet(line_net, x + np.array([10.5 * sc.r, 0.0]), 1)
    assert j not in {int(r) for r in pj2.active}
    # weights are never negative anywhere near the support edge
    for t in (9.99, 9.999999, 10.0 - 1e-12):
        pj3 = partition_jet(line_net, x + np.array([t * sc.r, 0.0]), 1)
        assert np.all(pj3.theta >= 0.0)


def test_gradients_match_finite_differences(line_net):
    rng = np.random.default_rng(1)
    k = 1
    r = line_net.scale(k).r
    h = 1e-6 * r
    for _ in range(15):
        y = np.array([rng.uniform(-0.7, 0.7), rng.uniform(-1.5, 1.5) * r])
        pj = partition_jet(line_net, y, k)
        if pj.active.size == 0:
            continue
        for b in range(2):
            e = np.zeros(2)
            e[b] = h
            plus = partition_jet(line_net, y + e, k)
            minus = partition_jet(line_net, y - e, k)
            fd_psi = (plus.psi - minus.psi) / (2 * h)
            assert abs(pj.psi_grad[b] - fd_psi) < 1e-5 * max(abs(fd_psi), 1e-3 / r)
            rows = {int(rr): i for i, rr in enumerate(pj.active)}
            prow = {int(rr): i for i, rr in enumerate(plus.active)}
            mrow = {int(rr): i for i, rr in enumerate(minus.active)}
            for row, i in rows.items():
                if row in prow and row in mrow:
                    fd = (plus.theta[prow[row]] - minus.theta[mrow[row]]) / (2 * h)
                    assert abs(pj.theta_grad[i][b] - fd) < 1e-5 * max(abs(fd), 1e-3 / r)


def test_hessians_match_finite_differences(line_net):
    rng = np.random.default_rng(2)
    k = 1
    r = line_net.scale(k).r
    h = 1e-5 * r
    for _ in range(10):
        y = np.array([rng.uniform(-0.7, 0.7), rng.uniform(-1.5, 1.5) * r])
        pj = partition_jet(line_net, y, k)
        for b in range(2):
            e = np.zeros(2)
            e[b] = h
            plus = partition_jet(line_net, y + e, k)
            minus = partition_jet(line_net, y - e, k)
            fd = (plus.psi_grad - minus.psi_grad) / (2 * h)
            scale = max(np.abs(fd).max(), 1.0 / r**2 * 1e-4)
            assert np.abs(pj.psi_hess[:, b] - fd).max() < 1e-4 * scale


def test_psi_vanishes_with_derivatives_inside_v8(line_net):
    sc = line_net.scale(1)
    rng = np.random.default_rng(3)
    for _ in range(40):
        j = rng.integers(0, len(sc.points))
        offset = rng.uniform(-1, 1, size=2)
        offset *= rng.uniform(0, 7.9) * sc.r / np.linalg.norm(offset)
        y = sc.points[j] + offset
        pj = partition_jet(line_net, y, 1)
        assert pj.psi == 0.0
        assert np.abs(pj.psi_grad).max() < 1e-12
        assert np.abs(pj.psi_hess).max() < 1e-12
        assert abs(pj.theta.sum() - 1.0) < 1e-12


def test_scale_normalized_derivative_bounds_stable():
    # one master configuration presented at five scales: the r_k-normalized
    # derivative sups must be scale-covariant
    rng = np.random.default_rng(7)
    master = np.column_stack([np.sort(rng.uniform(-0.9, 0.9, 700)), np.zeros(700)])
    offsets = [(0.3, 0.4), (1.7, 0.6), (4.5, 0.2), (8.3, 0.5), (8.9, 0.1), (9.4, 0.7), (9.9, 0.3)]
    sup_grad, sup_hess = {}, {}
    for k in range(1, 6):
        cloud = PointCloud(master * 10.0 ** -(k - 1), d=1)
        net = build_net(cloud, k)
        sc = net.scale(k)
        g_max = h_max = 0.0
        mid = len(sc.points) // 2
        for j in (mid - 1, mid, mid + 1):
            x = sc.points[j]
            for a, b in offsets:
                y = x + sc.r * np.array([a, b])
                pj = partition_jet(net, y, k)
                if pj.active.size:
                    g_max = max(g_max, sc.r * np.abs(pj.theta_grad).max())
                    h_max = max(h_max, sc.r**2 * np.abs(pj.theta_hess).max())
        sup_grad[k], sup_hess[k] = g_max, h_max
    gs = np.array(list(sup_grad.values()))
    hs = np.array(list(sup_hess.values()))
    assert gs.min() > 0 and hs.min() > 0
    assert (gs.max() - gs.min()) / gs.max() < 0.05
    assert (hs.max() - hs.min()) / hs.max() < 0.05
