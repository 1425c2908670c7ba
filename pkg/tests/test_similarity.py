# tests/test_similarity.py

import numpy as np
import pytest

from protosurv.core import ConfigError, DimensionError, NonFiniteError
from protosurv.similarity import (CosineKernel, EuclideanKernel, PMDSimKernel, dissimilarity, l2_normalize,
                                  l2_normalize_rows, make_kernel, pmdsim)


def test_pmdsim_worked_values():
    assert pmdsim([0.5, -1.0, 2.0], [0.5, -1.0, 2.0], 2) == 1.0
    assert pmdsim([0, 0], [2, 2], 2) == pytest.approx(0.2, abs=1e-12)
    assert pmdsim([1, 1, 1, 1], [0, 2, 1, 1], 1) == pytest.approx(2 / 3, abs=1e-12)


def test_dissimilarity_worked_values(rng):
    assert dissimilarity([1.0, 2.0], [1.0, 2.0]) == 1.0
    assert dissimilarity([0, 0], [2, 2], 2) == pytest.approx(5.0, abs=1e-12)
    a, b = rng.normal(size=(2, 7))
    assert dissimilarity(a, b, 2.5) == pytest.approx(1.0 / pmdsim(a, b, 2.5), rel=1e-15)


def test_symmetry_and_bounds(rng):
    for _ in range(200):
        a, b = rng.normal(scale=3.0, size=(2, 5))
        m = rng.uniform(0.5, 4.0)
        s = pmdsim(a, b, m)
        assert abs(s - pmdsim(b, a, m)) <= 1e-12
        assert 0.0 < s <= 1.0
        assert dissimilarity(a, b, m) >= 1.0


def test_scaling_difference_decreases_similarity(rng):
    for _ in range(100):
        a, delta = rng.normal(size=(2, 6))
        t = rng.uniform(1.1, 3.0)
        assert pmdsim(a, a + t * delta, 2) < pmdsim(a, a + delta, 2)


def test_exponent_sensitivity():
    a = np.zeros(4)
    far = np.array([1.5, -2.0, 3.0, 1.2])
    near = np.array([0.5, -0.2, 0.9, 0.3])
    far_sims = [pmdsim(a, far, m) for m in (1, 2, 3, 4)]
    near_sims = [pmdsim(a, near, m) for m in (1, 2, 3, 4)]
    assert far_sims == sorted(far_sims, reverse=True)
    assert near_sims == sorted(near_sims)


def test_fractional_exponent():
    assert pmdsim([0.0], [4.0], 0.5) == pytest.approx(1.0 / 3.0)


def test_input_errors():
    with pytest.raises(DimensionError):
        pmdsim([1.0, 2.0], [1.0], 2)
    with pytest.raises(NonFiniteError):
        pmdsim([np.inf, 0.0], [0.0, 0.0], 2)
    with pytest.raises(ConfigError, match="exponent m"):
        pmdsim([1.0], [0.0], 0.0)


def test_l2_normalize():
    out = l2_normalize([3.0, 4.0])
    np.testing.assert_allclose(out.vector, [0.6, 0.8])
    assert not out.degenerate
    unit = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(unit).vector, unit)
    zero = l2_normalize([0.0, 0.0])
    np.testing.assert_array_equal(zero.vector, [0.0, 0.0])
    assert zero.degenerate
    with pytest.raises(NonFiniteError):
        l2_normalize([np.nan, 1.0])


def test_l2_normalize_rows_leaves_zero_rows():
    X = np.array([[3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(l2_normalize_rows(X), [[0.6, 0.8], [0.0, 0.0]])


@pytest.mark.parametrize("kernel", [PMDSimKernel(2.0), PMDSimKernel(3.0), EuclideanKernel(), CosineKernel()])
def test_matrix_matches_pairwise(kernel, rng):
    F = rng.normal(size=(4, 5))
    P = rng.normal(size=(6, 5))
    S = kernel.matrix(F, P)
    assert S.shape == (4, 6)
    for i in range(4):
        for j in range(6):
            assert S[i, j] == pytest.approx(kernel.pair(F[i], P[j]), abs=1e-12)
    assert np.all((S > 0) & (S <= 1))


@pytest.mark.parametrize("kernel", [PMDSimKernel(2.0), PMDSimKernel(1.5), EuclideanKernel(), CosineKernel()])
def test_kernel_gradient_matches_finite_differences(kernel, rng):
    F = rng.normal(size=(3, 4))
    P = rng.normal(size=(5, 4))
    G = kernel.grad(F, P)
    h = 1e-6
    for d in range(4):
        step = np.zeros_like(F)
        step[:, d] = h
        numeric = (kernel.matrix(F + step, P) - kernel.matrix(F - step, P)) / (2 * h)
        np.testing.assert_allclose(G[:, :, d], numeric, rtol=1e-5, atol=1e-8)


def test_pmdsim_gradient_vanishes_at_identity():
    P = np.array([[0.2, -0.4, 0.9]])
    np.testing.assert_array_equal(PMDSimKernel(2.0).grad(P, P), np.zeros((1, 1, 3)))


def test_cosine_kernel_range():
    k = CosineKernel()
    assert k.pair([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert k.pair([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(0.0)


def test_make_kernel():
    assert make_kernel("pmdsim", 3.0).m == 3.0
    assert isinstance(make_kernel("cosine"), CosineKernel)
    with pytest.raises(ConfigError, match="unknown similarity"):
        make_kernel("manhattan")
