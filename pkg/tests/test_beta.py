import numpy as np
import pytest

from betaflow.beta import (
    beta,
    beta_compare,
    epsilon_k,
    gamma_k,
    jones,
    jones_from_terms,
    jones_gamma,
    scale_floor,
    upper_density,
)
from betaflow.ccbp import CCBP, assemble, validate
from betaflow.cloud import PointCloud
from betaflow.geometry import Plane
from betaflow.nets import build_net, scale_radius


def line_cloud(n=400, lo=-0.8, hi=0.8):
    pts = np.column_stack([np.linspace(lo, hi, n), np.zeros(n)])
    return PointCloud(pts, d=1)


@pytest.fixture(scope="module")
def flat_setup():
    cloud = line_cloud()
    net = build_net(cloud, 3)
    cc = assemble(cloud, net, eps=0.02)
    return cloud, net, cc


def test_beta_empty_ball(flat_setup):
    cloud, net, _ = flat_setup
    rec = beta(cloud, net, np.array([0.0, 0.9]), 3)
    assert rec.value == 0.0 and rec.plane is None and rec.ball_count == 0


def test_beta_zero_on_line(flat_setup):
    cloud, net, _ = flat_setup
    for k in range(4):
        rec = beta(cloud, net, np.array([0.1, 0.0]), k)
        assert rec.value < 1e-10


def test_beta_staircase_matches_grid_oracle():
    # unit-spaced staircase probed at the coarsest scale
    steps = np.array(
        [[0.0, 0.0], [0.25, 0.0], [0.25, 0.25], [0.5, 0.25], [0.5, 0.5], [0.75, 0.5]]
    )
    cloud = PointCloud(steps, d=1)
    net = build_net(cloud, 1)
    x = np.array([0.3, 0.2])
    rec = beta(cloud, net, x, 0, "sup")
    best = np.inf
    for theta in np.linspace(0, np.pi, 720, endpoint=False):
        nrm = np.array([-np.sin(theta), np.cos(theta)])
        proj = (steps - x) @ nrm
        offs = np.linspace(proj.min(), proj.max(), 200)
        best = min(best, np.abs(proj[:, None] - offs[None, :]).max(axis=0).min())
    assert rec.value <= best * 1.02 + 1e-12


def test_beta_compare_flat(flat_setup):
    cloud, net, _ = flat_setup
    b1, b2, bound = beta_compare(cloud, net, np.array([0.0, 0.0]), 1)
    assert b1 < 1e-12 and b2 < 1e-12 and bound < 1e-12


def test_beta_compare_inequality_on_noisy_line():
    rng = np.random.default_rng(0)
    x = np.linspace(-0.8, 0.8, 500)
    pts = np.column_stack([x, 0.01 * np.sin(7 * x) + 0.002 * rng.normal(size=500)])
    w = rng.uniform(0.5, 2.0, size=500)
    cloud = PointCloud(pts, d=1, weights=w)
    net = build_net(cloud, 2)
    for k in (0, 1, 2):
        for xq in cloud.points[::100]:
            b1, b2, bound = beta_compare(cloud, net, xq, k)
            assert b1 <= bound + 1e-9


def test_beta_compare_single_offset_point_closed_form():
    # heavy mass pins the witness plane near the x-axis; one light point of
    # mass w sits at height t. The optimal plane shifts by delta = w t / mass,
    # so the closed forms carry that correction.
    base = np.column_stack([np.linspace(-0.9, 0.9, 200), np.zeros(200)])
    t, w_small = 0.15, 1e-6
    pts = np.vstack([base, [0.0, t]])
    w = np.concatenate([np.full(200, 5.0), [w_small]])
    cloud = PointCloud(pts, d=1, weights=w)
    net = build_net(cloud, 0)
    b1, b2, bound = beta_compare(cloud, net, np.array([0.0, 0.0]), 0)
    total = w.sum()
    delta = w_small * t / total
    b1_expected = (total - w_small) * delta + w_small * (t - delta)
    b2_expected = np.sqrt((total - w_small) * delta**2 + w_small * (t - delta) ** 2)
    assert abs(b1 - b1_expected) < 1e-9 * b1_expected
    assert abs(b2 - b2_expected) < 1e-9 * b2_expected
    assert b1 <= bound


def test_upper_density_single_point():
    cloud = PointCloud(np.array([[0.0, 0.0]]), d=1, weights=np.array([1.0]))
    ratios, proxy = upper_density(cloud, np.array([0.0, 0.0]), range(4))
    for k in range(4):
        assert abs(ratios[k] - 1.0 / scale_radius(k)) < 1e-12
    assert proxy == ratios[3]


def test_upper_density_uniform_interval():
    n = 2000
    pts = np.column_stack([np.linspace(0, 1, n), np.zeros(n)])
    cloud = PointCloud(pts, d=1, weights=np.full(n, 1.0 / n))
    ratios, _ = upper_density(cloud, np.array([0.5, 0.0]), [1, 2])
    for k in (1, 2):
        assert abs(ratios[k] - 2.0) < 0.2


def test_upper_density_empty_ball():
    cloud = PointCloud(np.array([[0.5, 0.0]]), d=1)
    ratios, _ = upper_density(cloud, np.array([-0.5, 0.0]), [2])
    assert ratios[2] == 0.0


def test_jones_zero_on_line(flat_setup):
    cloud, net, _ = flat_setup
    for alpha in (0.3, 0.7, 1.0):
        rec = jones(cloud, net, np.array([0.0, 0.0]), alpha, "sup", 3,
                    log_gamma=1.0 if alpha == 1.0 else None)
        assert rec.value < 1e-18


def test_jones_geometric_series():
    # constant beta across scales: the alpha = 1/2 sum telescopes
    b = 0.01
    K = 5
    total = jones_from_terms([b] * (K + 1), 0.5)
    expected = b**2 * (10.0 ** (K + 1) - 1) / 9.0
    assert abs(total - expected) < 1e-9 * expected


def test_jones_terms_reproducible(flat_setup):
    cloud, net, _ = flat_setup
    x = np.linspace(0, 1, 300)
    wavy = PointCloud.normalized(np.column_stack([x, 0.02 * np.sin(5 * x)]), d=1)
    wnet = build_net(wavy, 2)
    rec = jones(wavy, wnet, wavy.points[50], 0.5, "sup", 2)
    for k, term in zip(rec.scales, rec.terms):
        b = beta(wavy, wnet, wavy.points[50], k, "sup").value
        assert abs(term - b**2 / scale_radius(k) ** 1.0) < 1e-12 * max(term, 1e-30)


def test_jones_alpha_one_needs_log():
    cloud = line_cloud(50)
    net = build_net(cloud, 1)
    with pytest.raises(ValueError, match="log"):
        jones(cloud, net, cloud.points[0], 1.0, "sup", 1)
    rec = jones(cloud, net, cloud.points[0], 1.0, "sup", 1, log_gamma=0.8)
    assert 0 not in rec.scales  # the k = 0 log term vanishes identically


def test_jones_respects_scale_floor():
    cloud = line_cloud(30)  # spacing ~0.055
    assert scale_floor(cloud, 6) <= 1
    net = build_net(cloud, 6)
    rec = jones(cloud, net, cloud.points[10], 0.5, "sup", 6)
    assert rec.truncated_at is not None and max(rec.scales) <= 1


def tilted_ccbp(flat_setup, k_tilt, phi):
    """Copy the flat CCBP with every plane at one scale tilted by phi."""
    cloud, net, cc = flat_setup
    rot = np.array([[np.cos(phi), np.sin(phi)]])
    planes = [list(level) for level in cc.planes]
    planes[k_tilt] = [Plane(p.base, rot) for p in planes[k_tilt]]
    return CCBP(net, planes, cc.sigma0, 0.5, cc.fit_radius_mult, cc.samples)


def test_gamma_flat(flat_setup):
    cloud, net, cc = flat_setup
    rec = gamma_k(cloud, cc, np.array([0.1, 0.0]), 1)
    assert rec.value < 1e-10


def test_gamma_single_scale_tilt(flat_setup):
    cloud = flat_setup[0]
    phi = 0.05
    cc = tilted_ccbp(flat_setup, 2, phi)
    rec = gamma_k(cloud, cc, np.array([0.1, 0.0]), 1)
    # cross-scale term sees the tilt; same-scale sup stays zero
    assert abs(rec.cross_term - np.sin(phi)) < 0.05 * np.sin(phi)
    assert rec.nearby_term < 1e-10


def test_jones_gamma_consistency(flat_setup):
    cloud = flat_setup[0]
    cc = tilted_ccbp(flat_setup, 2, 0.03)
    total, terms = jones_gamma(cloud, cc, np.array([0.1, 0.0]), 0.5, 2)
    recomputed = sum(
        gamma_k(cloud, cc, np.array([0.1, 0.0]), k).value ** 2 / scale_radius(k)
        for k in range(len(terms))
    )
    assert abs(total - recomputed) < 1e-12 * max(recomputed, 1e-30)


def test_epsilon_flat_and_outside(flat_setup):
    cloud, net, cc = flat_setup
    assert epsilon_k(cc, np.array([0.1, 0.0]), 1) < 1e-10
    # far outside the 10-dilated neighborhood the coefficient vanishes
    assert epsilon_k(cc, np.array([0.0, 0.9]), 3) == 0.0


def test_epsilon_two_scale_tilt():
    # a tight cluster gives one net point per scale, so every admissible pair
    # compares planes through the same base point and the sup is exactly the
    # tilt angle (up to plane-distance sampling)
    pts = np.array([[0.0, 0.0], [1e-5, 0.0], [-1e-5, 0.0]])
    cloud = PointCloud(pts, d=1)
    net = build_net(cloud, 3)
    flat = Plane(np.zeros(2), np.array([[1.0, 0.0]]))
    phi = 0.04
    tilted = Plane(np.zeros(2), np.array([[np.cos(phi), np.sin(phi)]]))
    planes = [[flat.shifted_to(net.scale(k).points[0])] for k in range(4)]
    planes[2] = [tilted.shifted_to(net.scale(2).points[0])]
    cc = CCBP(net, planes, flat, 0.5)
    val = epsilon_k(cc, np.array([0.0, 0.0]), 2)
    assert abs(val - np.sin(phi)) < 0.05 * np.sin(phi)
    # the tilt is also seen one scale below; two scales below it is gone
    assert epsilon_k(cc, np.array([0.0, 0.0]), 3) > 0.9 * np.sin(phi)
    lit = epsilon_k(cc, np.array([0.0, 0.0]), 2, literal_scale_k_balls=True)
    assert abs(lit - val) < 1e-12


def test_epsilon_cross_scale_tilt_upper_range(flat_setup):
    # on a dense line the sup ranges over pairs with separated base points,
    # inflating the reading by at most the crossing-offset fraction
    phi = 0.04
    cc = tilted_ccbp(flat_setup, 2, phi)
    val = epsilon_k(cc, np.array([0.1, 0.0]), 2)
    assert np.sin(phi) - 1e-3 <= val <= 1.15 * np.sin(phi)


def test_epsilon_requires_valid_scale(flat_setup):
    _, _, cc = flat_setup
    with pytest.raises(ValueError):
        epsilon_k(cc, np.zeros(2), 0)


def test_epsilon_bounded_by_coherence_defect():
    x = np.linspace(0, 1, 800)
    cloud = PointCloud.normalized(np.column_stack([x, 0.01 * np.sin(4 * np.pi * x)]), d=1)
    net = build_net(cloud, 2)
    cc = assemble(cloud, net, eps=0.1, eps_max=0.1)
    rep = validate(cc, cloud)
    rng = np.random.default_rng(5)
    for _ in range(20):
        y = cloud.points[rng.integers(0, len(cloud))]
        for k in (1, 2):
            assert epsilon_k(cc, y, k) <= rep.max_defect * 1.05 + 1e-12
