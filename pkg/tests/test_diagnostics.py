import numpy as np
import pytest

from betaflow.cloud import PointCloud
from betaflow.diagnostics import (
    DegenerateSpan,
    HolderLimitCase,
    PipelineConfig,
    estimate_holder,
    holder_limit_check,
    predict_and_verify,
    synthesize_limit,
)
from betaflow.generators import Ball, punch_holes


def test_estimate_constant_values():
    x = np.linspace(-1, 1, 500)
    rpt = estimate_holder(x[:, None], np.full_like(x, 2.5))
    assert rpt.constant_map and rpt.eta == 0.0


def test_estimate_sqrt_function():
    x = np.linspace(-1, 1, 4001)
    rpt = estimate_holder(x[:, None], np.abs(x) ** 0.5, dist_window=(1e-4, 1.0))
    assert abs(rpt.eta - 0.5) < 0.03


def test_estimate_affine_function():
    x = np.linspace(-1, 1, 2001)
    rpt = estimate_holder(x[:, None], 3.0 * x + 1.0, dist_window=(1e-3, 1.0))
    assert abs(rpt.eta - 1.0) < 0.02


def test_estimate_scale_equivariance():
    x = np.linspace(-1, 1, 1200)
    v = np.abs(x) ** 0.4
    a = estimate_holder(x[:, None], v, dist_window=(1e-3, 1.0))
    b = estimate_holder(x[:, None], 7.3 * v, dist_window=(1e-3, 1.0))
    assert abs(a.eta - b.eta) < 1e-9
    assert abs(b.log_constant - a.log_constant - np.log(7.3)) < 1e-9


def test_estimate_translation_invariance():
    x = np.linspace(-1, 1, 900)
    v = np.sin(3 * x)
    a = estimate_holder(x[:, None], v, dist_window=(1e-3, 1.0))
    b = estimate_holder(x[:, None] + 13.0, v + 5.0, dist_window=(1e-3, 1.0))
    # exact up to the float rounding of the shifted pair distances
    assert abs(a.eta - b.eta) < 1e-12
    assert abs(a.log_constant - b.log_constant) < 1e-12


def test_estimate_requires_enough_samples_and_span():
    with pytest.raises(ValueError, match="200"):
        estimate_holder(np.zeros((10, 1)), np.zeros(10))
    same = np.zeros((300, 1))
    with pytest.raises(DegenerateSpan):
        estimate_holder(same, np.zeros(300))


def test_holder_limit_predicted_values():
    case = HolderLimitCase(10 ** (1 - 0.4), 10**0.4)
    assert abs(case.predicted - 0.4) < 1e-12
    with pytest.raises(ValueError):
        HolderLimitCase(0.5, 2.0)


def test_holder_limit_classic_half():
    ok, eta, rpt = holder_limit_check(HolderLimitCase(2.0, 2.0))
    assert ok and abs(eta - 0.5) < 0.05


def test_holder_limit_alpha_family():
    for alpha in (0.3, 0.5, 0.7):
        case = HolderLimitCase(10 ** (1 - alpha), 10**alpha)
        ok, eta, rpt = holder_limit_check(case)
        assert ok, f"alpha={alpha}: measured {eta}"
        assert abs(eta - alpha) < 0.05


def test_holder_limit_monotone_in_b():
    etas = []
    for B in (1.5, 3.0, 8.0):
        case = HolderLimitCase(2.0, B)
        ok, eta, _ = holder_limit_check(case)
        etas.append(case.predicted)
    assert etas[0] < etas[1] < etas[2]


def test_synthesized_sequence_satisfies_hypotheses():
    case = HolderLimitCase(2.0, 2.0)
    x = np.linspace(0, 1, 4097)
    lam = case.A * case.B
    prev = np.zeros_like(x)
    partial = np.zeros_like(x)
    c_a = (case.A - 1.0) / case.A
    for j in (1, 2, 3, 4):
        frac = x * lam**j
        frac -= np.floor(frac)
        partial = partial + c_a * case.B ** (-j) * np.abs(frac - 0.5)
        slopes = np.abs(np.diff(partial) / np.diff(x))
        assert slopes.max() <= case.A**j * (1 + 1e-9)
        gap = np.abs(partial - prev).max()
        assert gap <= c_a * case.B ** (-j) / 2 + 1e-12
        prev = partial.copy()


def flat_cloud(n=3000):
    side = int(np.sqrt(n))
    g = np.linspace(-0.6, 0.6, side)
    mg = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([mg[0].ravel(), mg[1].ravel(), np.zeros(side * side)])
    return PointCloud(pts, d=2)


def test_predict_and_verify_flat_trivial():
    cloud = flat_cloud()
    cfg = PipelineConfig(samples=64, grid_points=512, trace_samples=4, jones_samples=8,
                        inverse_points=0, flatness_centers=40)
    bundle = predict_and_verify(cloud, 0.5, 3, cfg)
    assert not bundle.aborted
    assert bundle.m_beta < 1e-18
    assert bundle.m_eps < 1e-18
    assert bundle.forward.constant_map
    assert bundle.forward.verdict


def test_predict_and_verify_alpha_one_needs_gamma():
    with pytest.raises(ValueError):
        predict_and_verify(flat_cloud(400), 1.0, 2)


def test_predict_and_verify_abort_on_rough_cloud():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.6, 0.6, size=(2000, 2))
    cloud = PointCloud(pts, d=1)  # a 2D blob is nowhere near a 1-flat set
    cfg = PipelineConfig(eps=0.02, flatness_centers=40)
    bundle = predict_and_verify(cloud, 0.5, 2, cfg)
    assert bundle.aborted
    assert not bundle.flatness["passed"]


def test_holes_do_not_shift_flat_estimate():
    cloud = flat_cloud(4000)
    holed = punch_holes(cloud, [Ball(np.array([0.2, 0.1, 0.0]), 0.1)])
    cfg = PipelineConfig(samples=64, grid_points=512, trace_samples=4, jones_samples=8,
                        inverse_points=0, flatness_centers=40)
    a = predict_and_verify(cloud, 0.5, 3, cfg)
    b = predict_and_verify(holed, 0.5, 3, cfg)
    assert not a.aborted and not b.aborted
    assert abs(a.forward.eta - b.forward.eta) < 0.05


def test_report_serialization():
    x = np.linspace(-1, 1, 600)
    rpt = estimate_holder(x[:, None], np.abs(x) ** 0.5, prediction=0.5, dist_window=(1e-3, 1.0))
    doc = rpt.to_dict()
    assert doc["verdict"] is True
    assert doc["bins"] and {"distance", "max_increment", "pairs"} <= set(doc["bins"][0])
