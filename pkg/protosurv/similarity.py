# protosurv/similarity.py
"""PMDSim kernel, its dissimilarity, and the ablation kernels sharing its interface.

Every kernel maps a pair of vectors into [0, 1] with 1 meaning identical and
exposes the gradient with respect to the first (query) argument, which the
losses chain into the encoder.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .core import ConfigError, DimensionError, NonFiniteError, check_vector

NORM_TOLERANCE = 1e-12


def _check_pair(a, b):
    a = check_vector(a, "a")
    b = check_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 1:
        raise DimensionError("vectors must have dimension >= 1")
    return a, b


def _check_exponent(m):
    if not (np.isfinite(m) and m > 0):
        raise ConfigError(f"exponent m must be positive, got {m!r}")


def pmdsim(a, b, m=2.0):
    """1 / (1 + mean_i |a_i - b_i|^m)"""
    a, b = _check_pair(a, b)
    _check_exponent(m)
    u = np.mean(np.power(np.abs(a - b), m))
    return float(1.0 / (1.0 + u))


def dissimilarity(a, b, m=2.0):
    return 1.0 / pmdsim(a, b, m)


class NormalizedVector(NamedTuple):
    vector: np.ndarray
    degenerate: bool


def l2_normalize(v):
    v = check_vector(v, "v")
    norm = np.linalg.norm(v)
    if norm <= NORM_TOLERANCE:
        return NormalizedVector(v.copy(), True)
    return NormalizedVector(v / norm, False)


def l2_normalize_rows(X):
    """Row-wise L2 normalization; zero rows are left unchanged"""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms > NORM_TOLERANCE, norms, 1.0)
    return X / safe


def _check_matrix(F, P):
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if F.shape[1] != P.shape[1]:
        raise DimensionError(f"dimension mismatch: queries have {F.shape[1]}, prototypes {P.shape[1]}")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(P))):
        raise NonFiniteError("similarity input contains non-finite values")
    return F, P


class PMDSimKernel:
    name = "pmdsim"

    def __init__(self, m=2.0):
        _check_exponent(m)
        self.m = float(m)

    def pair(self, a, b):
        return pmdsim(a, b, self.m)

    def matrix(self, F, P):
        """Similarities between every query row of F and every row of P, shape (n, k)"""
        F, P = _check_matrix(F, P)
        diff = np.abs(F[:, None, :] - P[None, :, :])
        u = np.mean(np.power(diff, self.m), axis=-1)
        return 1.0 / (1.0 + u)

    def grad(self, F, P):
        """d S(f, p) / d f for every pair, shape (n, k, D)"""
        F, P = _check_matrix(F, P)
        D = F.shape[1]
        diff = F[:, None, :] - P[None, :, :]
        absd = np.abs(diff)
        S = 1.0 / (1.0 + np.mean(np.power(absd, self.m), axis=-1))
        # |d|^(m-1) is singular at d = 0 for m < 1; the subgradient there is taken as 0
        with np.errstate(divide="ignore", invalid="ignore"):
            du = np.where(absd > 0, (self.m / D) * np.power(absd, self.m - 1.0) * np.sign(diff), 0.0)
        return -(S ** 2)[:, :, None] * du


class EuclideanKernel:
    """1 / (1 + ||f - p||_2)"""
    name = "euclidean"
    m = None

    def pair(self, a, b):
        a, b = _check_pair(a, b)
        return float(1.0 / (1.0 + np.linalg.norm(a - b)))

    def matrix(self, F, P):
        F, P = _check_matrix(F, P)
        r = np.linalg.norm(F[:, None, :] - P[None, :, :], axis=-1)
        return 1.0 / (1.0 + r)

    def grad(self, F, P):
        F, P = _check_matrix(F, P)
        diff = F[:, None, :] - P[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        S = 1.0 / (1.0 + r)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r[:, :, None] > 0, -(S ** 2 / safe)[:, :, None] * diff, 0.0)


class CosineKernel:
    """(1 + cos(f, p)) / 2, so the value stays in [0, 1]"""
    name = "cosine"
    m = None

    def pair(self, a, b):
        a, b = _check_pair(a, b)
        return float(self.matrix(a[None, :], b[None, :])[0, 0])

    def matrix(self, F, P):
        F, P = _check_matrix(F, P)
        nf = np.maximum(np.linalg.norm(F, axis=1), NORM_TOLERANCE)
        npr = np.maximum(np.linalg.norm(P, axis=1), NORM_TOLERANCE)
        cos = (F @ P.T) / np.outer(nf, npr)
        return 0.5 * (1.0 + np.clip(cos, -1.0, 1.0))

    def grad(self, F, P):
        F, P = _check_matrix(F, P)
        nf = np.maximum(np.linalg.norm(F, axis=1), NORM_TOLERANCE)
        npr = np.maximum(np.linalg.norm(P, axis=1), NORM_TOLERANCE)
        cos = (F @ P.T) / np.outer(nf, npr)
        dcos = (P[None, :, :] / (nf[:, None, None] * npr[None, :, None])
                - cos[:, :, None] * F[:, None, :] / (nf ** 2)[:, None, None])
        return 0.5 * dcos


def make_kernel(name="pmdsim", m=2.0):
    if name == "pmdsim":
        return PMDSimKernel(m)
    if name == "euclidean":
        return EuclideanKernel()
    if name == "cosine":
        return CosineKernel()
    raise ConfigError(f"unknown similarity kernel: {name!r}")


def kernel_for(cfg):
    return make_kernel(cfg.similarity, cfg.m)
