# tests/test_losses.py

from dataclasses import replace

import numpy as np
import pytest

from protosurv.core import DataError, EngineConfig, Kind, LibraryError, PrototypeEntry, PrototypeLibrary, Source
from protosurv.losses import center_loss, contrastive_loss, nll_surv_loss, total_loss
from protosurv.similarity import PMDSimKernel, l2_normalize_rows, pmdsim


def _point_library(points_per_class, m=2.0):
    typical = [
        [PrototypeEntry(f"c{c}-typical-{i}-v1", c, Kind.TYPICAL, i, p, (Source(f"c{c}x{i}", 1.0),))
         for i, p in enumerate(points)]
        for c, points in enumerate(points_per_class)
    ]
    centers = [np.mean(points, axis=0) for points in points_per_class]
    return PrototypeLibrary(1, typical, [[] for _ in points_per_class], centers, m=m)


def _relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)


def test_contrastive_symmetric_case():
    lib = _point_library([[[0.0, 0.0]], [[0.0, 0.0]]])
    value, grad = contrastive_loss([0.0, 0.0], lib, 0, PMDSimKernel(2.0))
    assert value == pytest.approx(np.log(2.0), abs=1e-12)
    np.testing.assert_array_equal(grad, [0.0, 0.0])


def test_contrastive_matches_scalar_formula():
    pos = [[0.0, 0.0], [0.5, 0.0]]
    neg = [[3.0, 3.0], [6.0, -6.0], [10.0, 0.0]]
    lib = _point_library([pos, neg])
    f = np.array([0.1, 0.2])
    s_pos = [pmdsim(f, p, 2) for p in pos]
    s_neg = [pmdsim(f, p, 2) for p in neg]
    expected = -np.log(np.sum(np.exp(s_pos)) / (np.sum(np.exp(s_pos)) + np.sum(np.exp(s_neg))))
    assert contrastive_loss(f, lib, 0, PMDSimKernel(2.0)).value == pytest.approx(expected, abs=1e-12)


def test_contrastive_needs_negatives():
    lib = _point_library([[[0.0, 1.0], [1.0, 0.0]]])
    with pytest.raises(LibraryError, match="undefined"):
        contrastive_loss([0.0, 1.0], lib, 0, PMDSimKernel(2.0))


def _finite_difference(fn, x, h=1e-5):
    return np.array([(fn(x + h * e) - fn(x - h * e)) / (2 * h) for e in np.eye(x.shape[0])])


def _random_point_library(rng):
    """2-4 classes of 1-5 unit-norm prototypes in 2-8 dims, m in {2, 3}"""
    num_classes, dim = int(rng.integers(2, 5)), int(rng.integers(2, 9))
    points = [l2_normalize_rows(rng.normal(size=(int(rng.integers(1, 6)), dim))) for _ in range(num_classes)]
    m = float(rng.choice([2.0, 3.0]))
    return _point_library(points, m), points, m


@pytest.mark.parametrize("draw", range(100))
def test_contrastive_gradient_matches_finite_differences(draw):
    rng = np.random.default_rng(draw)
    lib, points, m = _random_point_library(rng)
    kernel = PMDSimKernel(m)
    c = int(rng.integers(0, len(points)))
    f = l2_normalize_rows(rng.normal(size=(1, lib.feature_dim)))[0]
    grad = contrastive_loss(f, lib, c, kernel).grad
    numeric = _finite_difference(lambda x: contrastive_loss(x, lib, c, kernel).value, f)
    assert np.all(_relative_error(grad, numeric) < 1e-4)


@pytest.mark.parametrize("draw", range(100))
def test_contrastive_drops_when_a_positive_moves_toward_the_query(draw):
    rng = np.random.default_rng(1000 + draw)
    lib, points, m = _random_point_library(rng)
    kernel = PMDSimKernel(m)
    c = int(rng.integers(0, len(points)))
    f = l2_normalize_rows(rng.normal(size=(1, lib.feature_dim)))[0]
    j = int(rng.integers(0, len(points[c])))
    closer = [p.copy() for p in points]
    closer[c][j] = points[c][j] + rng.uniform(0.1, 0.9) * (f - points[c][j])
    before = contrastive_loss(f, lib, c, kernel).value
    after = contrastive_loss(f, _point_library(closer, m), c, kernel).value
    assert after < before


def test_center_loss_worked_values():
    kernel = PMDSimKernel(2.0)
    at_center = center_loss([0.3, -0.4], [0.3, -0.4], 1.0, kernel)
    assert at_center.value == 1.0
    np.testing.assert_array_equal(at_center.grad, [0.0, 0.0])
    assert center_loss([2.0, 2.0], [0.0, 0.0], 1.0, kernel).value == pytest.approx(5.0, abs=1e-12)
    assert center_loss([2.0, 2.0], [0.0, 0.0], 0.5, kernel).value == pytest.approx(2.5, abs=1e-12)


@pytest.mark.parametrize("draw", range(100))
def test_center_loss_gradient(draw):
    rng = np.random.default_rng(2000 + draw)
    dim = int(rng.integers(2, 9))
    kernel = PMDSimKernel(float(rng.choice([2.0, 3.0])))
    f, mu = rng.normal(size=(2, dim))
    sigma = rng.uniform(0.1, 2.0)
    grad = center_loss(f, mu, sigma, kernel).grad
    numeric = _finite_difference(lambda x: center_loss(x, mu, sigma, kernel).value, f)
    assert np.all(_relative_error(grad, numeric) < 1e-4)


def test_nll_uncensored_uniform_hazard():
    terms = nll_surv_loss(np.zeros(4), 1, 0, alpha_loss=0.0)
    assert terms.uncensored == pytest.approx(2 * np.log(2), abs=1e-9)
    assert terms.censored == 0.0
    assert terms.value == pytest.approx(2 * np.log(2), abs=1e-9)
    # uncensored terms never touch bins after Y
    np.testing.assert_array_equal(terms.grad[2:], [0.0, 0.0])


def test_nll_censored_uniform_hazard():
    terms = nll_surv_loss(np.zeros(4), 1, 1, alpha_loss=0.4)
    assert terms.censored == pytest.approx(-np.log(0.25), abs=1e-9)
    assert terms.uncensored == 0.0
    assert terms.value == pytest.approx(-np.log(0.25), abs=1e-9)
    assert terms.grad[2] == 0.0 and terms.grad[3] == 0.0
    np.testing.assert_allclose(terms.grad[:2], [0.5, 0.5])


def test_nll_alpha_weighting():
    logits = np.array([0.3, -1.2, 0.8])
    plain = nll_surv_loss(logits, 2, 0, alpha_loss=0.0).value
    assert nll_surv_loss(logits, 2, 0, alpha_loss=0.4).value == pytest.approx(0.6 * plain, abs=1e-12)


@pytest.mark.parametrize("draw", range(100))
def test_nll_gradient_matches_finite_differences(draw):
    rng = np.random.default_rng(3000 + draw)
    k = int(rng.integers(1, 7))
    logits = rng.normal(scale=2.0, size=k)
    y, cs = int(rng.integers(0, k)), int(rng.integers(0, 2))
    alpha = rng.uniform(0.0, 1.0)
    grad = nll_surv_loss(logits, y, cs, alpha).grad
    numeric = _finite_difference(lambda x: nll_surv_loss(x, y, cs, alpha).value, logits)
    assert np.all(_relative_error(grad, numeric) < 1e-4)


def test_nll_errors():
    with pytest.raises(DataError):
        nll_surv_loss(np.zeros(4), 4, 0, 0.4)
    with pytest.raises(DataError):
        nll_surv_loss(np.zeros(4), -1, 0, 0.4)
    with pytest.raises(DataError):
        nll_surv_loss(np.zeros(4), 0, 2, 0.4)


def test_nll_clamps_extreme_logits():
    terms = nll_surv_loss(np.array([60.0, 60.0, 60.0]), 2, 0, 0.0)
    assert np.isfinite(terms.value)
    assert np.all(np.isfinite(terms.grad))


def _batch(rng, cfg, n=8):
    F = l2_normalize_rows(rng.normal(size=(n, cfg.feature_dim)))
    bins = rng.integers(0, cfg.num_classes, size=n)
    censored = rng.integers(0, 2, size=n)
    return F, bins, censored


def test_breakdown_identities(four_class_library, rng):
    lib, cfg = four_class_library
    F, bins, censored = _batch(rng, cfg)
    breakdown, grads = total_loss(F, bins, censored, lib, cfg)
    assert breakdown.prototypes == breakdown.contra + breakdown.center
    assert abs(breakdown.total - (cfg.beta_loss * breakdown.prototypes + (1 - cfg.beta_loss) * breakdown.surv)) \
        <= 1e-12
    assert grads.features.shape == F.shape
    assert grads.logits.shape == (F.shape[0], cfg.num_classes)
    record = breakdown.to_record()
    assert set(record) == {"L_contra", "L_center", "L_prototypes", "L_UCs", "L_Cs", "L_surv", "L_total"}


def test_batch_equals_per_sample_mean(four_class_library, rng):
    from protosurv.matching import mpmatch

    lib, cfg = four_class_library
    F, bins, censored = _batch(rng, cfg)
    breakdown, _ = total_loss(F, bins, censored, lib, cfg)
    kernel = PMDSimKernel(cfg.m)
    surv, contra, center = [], [], []
    for f, y, cs in zip(F, bins, censored):
        logits, _ = mpmatch(f, lib, cfg)
        surv.append(nll_surv_loss(logits, y, cs, cfg.alpha_loss).value)
        contra.append(contrastive_loss(f, lib, y, kernel).value)
        center.append(center_loss(f, lib.class_centers[y], cfg.sigma_center, kernel).value)
    assert breakdown.surv == pytest.approx(np.mean(surv), abs=1e-12)
    assert breakdown.contra == pytest.approx(np.mean(contra), abs=1e-12)
    assert breakdown.center == pytest.approx(np.mean(center), abs=1e-12)


@pytest.mark.parametrize("beta_loss", [0.0, 1.0])
def test_loss_ablation_endpoints(four_class_library, rng, beta_loss):
    lib, cfg = four_class_library
    F, bins, censored = _batch(rng, cfg)
    breakdown, _ = total_loss(F, bins, censored, lib, replace(cfg, beta_loss=beta_loss))
    expected = breakdown.surv if beta_loss == 0.0 else breakdown.prototypes
    assert breakdown.total == expected


def test_total_gradient_matches_finite_differences(four_class_library, rng):
    lib, cfg = four_class_library
    F, bins, censored = _batch(rng, cfg, n=4)
    _, grads = total_loss(F, bins, censored, lib, cfg)
    h = 1e-6
    numeric = np.zeros_like(F)
    for i in range(F.shape[0]):
        for d in range(F.shape[1]):
            step = np.zeros_like(F)
            step[i, d] = h
            plus = total_loss(F + step, bins, censored, lib, cfg)[0].total
            minus = total_loss(F - step, bins, censored, lib, cfg)[0].total
            numeric[i, d] = (plus - minus) / (2 * h)
    assert np.all(_relative_error(grads.features, numeric) < 1e-4)


def test_total_loss_errors(four_class_library):
    lib, cfg = four_class_library
    with pytest.raises(DataError):
        total_loss(np.zeros((0, cfg.feature_dim)), [], [], lib, cfg)
    with pytest.raises(DataError):
        total_loss(np.ones((1, cfg.feature_dim)) / 4.0, [cfg.num_classes], [0], lib, cfg)


def test_single_class_library_rejected():
    lib = _point_library([[[0.0, 1.0], [1.0, 0.0]]])
    cfg = EngineConfig(feature_dim=2, num_classes=1, k_time=1, k_proto=2, m_wander=0)
    with pytest.raises(LibraryError):
        total_loss([[0.5, 0.5]], [0], [0], lib, cfg)
