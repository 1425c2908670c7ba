# protosurv/matching.py
"""MPMatch: fuse class-average, nearest-prototype and class-center similarity into
per-time-bin logits, turn them into hazards and a risk score, and keep the trace
needed to explain every prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import DimensionError, Kind, LibraryError, NonFiniteError, check_vector
from .similarity import kernel_for


@dataclass(frozen=True, eq=False)
class HazardPrediction:
    logits: np.ndarray
    hazards: np.ndarray
    survival: np.ndarray
    risk: float


@dataclass(frozen=True, eq=False)
class ClassMatch:
    class_index: int
    row: np.ndarray
    mean_sim: float
    max_sim: float
    center_sim: float
    logit: float
    nearest_id: str
    nearest_kind: Kind
    nearest_slot: int
    nearest_distance: float
    sources: tuple
    residual: float


@dataclass(frozen=True, eq=False)
class ExplanationTrace:
    sample_id: str
    classes: tuple
    logits: np.ndarray
    predicted_bin: int
    risk: float

    def to_record(self):
        return {
            "sample_id": self.sample_id,
            "predicted_bin": self.predicted_bin,
            "risk": float(self.risk),
            "logits": [float(x) for x in self.logits],
            "classes": [
                {
                    "class_index": m.class_index,
                    "mean_sim": float(m.mean_sim),
                    "max_sim": float(m.max_sim),
                    "center_sim": float(m.center_sim),
                    "logit": float(m.logit),
                    "nearest_id": m.nearest_id,
                    "nearest_kind": m.nearest_kind.value,
                    "nearest_distance": float(m.nearest_distance),
                    "sources": [[sid, float(w)] for sid, w in m.sources],
                    "residual": float(m.residual),
                    "row": [float(x) for x in m.row],
                }
                for m in self.classes
            ],
        }


def similarity_row(f, class_protos, kernel):
    """Similarities between f and each prototype of the effective set (typical first)"""
    P = np.atleast_2d(np.asarray(class_protos, dtype=np.float64))
    if P.shape[0] == 0 or P.size == 0:
        raise LibraryError("effective prototype set is empty")
    return kernel.matrix(np.asarray(f, dtype=np.float64)[None, :], P)[0]


def _check_library(lib, cfg):
    if lib.num_classes != cfg.k_time:
        raise LibraryError(f"library has {lib.num_classes} classes but k_time is {cfg.k_time}")
    if lib.similarity != cfg.similarity or (cfg.similarity == "pmdsim" and lib.m != cfg.m):
        raise LibraryError(f"library built with {lib.similarity} (m={lib.m}), "
                           f"config uses {cfg.similarity} (m={cfg.m})")


def mpmatch(f, lib, cfg, sample_id=""):
    """Logits for one query plus its explanation trace"""
    _check_library(lib, cfg)
    f = check_vector(f, "query", None)
    if f.shape[0] != lib.feature_dim:
        raise DimensionError(f"query has dimension {f.shape[0]}, library has {lib.feature_dim}")
    kernel = kernel_for(cfg)
    matches = []
    logits = np.empty(lib.num_classes)
    for c in range(lib.num_classes):
        entries, protos = lib.effective_set(c)
        row = similarity_row(f, protos, kernel)
        mean_sim = float(np.mean(row))
        # first maximum: typical before wandering, then lowest slot
        nearest = int(np.argmax(row))
        max_sim = float(row[nearest])
        center_sim = float(kernel.matrix(f[None, :], lib.class_centers[c][None, :])[0, 0])
        logit = cfg.alpha_sim * mean_sim + cfg.beta_sim * max_sim + cfg.gamma_sim * center_sim
        logits[c] = logit
        e = entries[nearest]
        matches.append(ClassMatch(c, row, mean_sim, max_sim, center_sim, logit, e.id, e.kind, e.slot,
                                  float(np.linalg.norm(f - e.vector)), e.sources[:cfg.top_f_sources],
                                  e.residual))
    prediction = risk_score(logits)
    trace = ExplanationTrace(sample_id, tuple(matches), logits, int(np.argmax(logits)), prediction.risk)
    return logits, trace


def match_batch(F, lib, cfg, sample_ids=None):
    """mpmatch over the rows of F; returns (logits (n, C), traces)"""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if sample_ids is None:
        sample_ids = [str(i) for i in range(F.shape[0])]
    logits, traces = [], []
    for f, sid in zip(F, sample_ids):
        row_logits, trace = mpmatch(f, lib, cfg, sid)
        logits.append(row_logits)
        traces.append(trace)
    return np.array(logits).reshape(F.shape[0], lib.num_classes), traces


def match_with_jacobian(F, lib, cfg):
    """Vectorised logits (n, C) and d logit / d f, shape (n, C, D).

    The max over the similarity row is differentiated through its first argmax.
    """
    _check_library(lib, cfg)
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if F.shape[1] != lib.feature_dim:
        raise DimensionError(f"features have dimension {F.shape[1]}, library has {lib.feature_dim}")
    kernel = kernel_for(cfg)
    n, D = F.shape
    logits = np.empty((n, lib.num_classes))
    jac = np.empty((n, lib.num_classes, D))
    rows = np.arange(n)
    for c in range(lib.num_classes):
        _, protos = lib.effective_set(c)
        if protos.shape[0] == 0:
            raise LibraryError(f"class {c} has an empty effective prototype set")
        S = kernel.matrix(F, protos)
        G = kernel.grad(F, protos)
        nearest = np.argmax(S, axis=1)
        center = lib.class_centers[c][None, :]
        s_center = kernel.matrix(F, center)[:, 0]
        g_center = kernel.grad(F, center)[:, 0, :]
        logits[:, c] = (cfg.alpha_sim * S.mean(axis=1) + cfg.beta_sim * S[rows, nearest]
                        + cfg.gamma_sim * s_center)
        jac[:, c, :] = (cfg.alpha_sim * G.mean(axis=1) + cfg.beta_sim * G[rows, nearest]
                        + cfg.gamma_sim * g_center)
    return logits, jac


def risk_score(logits):
    """Hazards, survival function and risk = -sum_t Surv(t) for one logit vector"""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise DimensionError(f"logits must be 1-d, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("logits contain non-finite values")
    hazards = expit(logits)
    survival = np.cumprod(1.0 - hazards)
    return HazardPrediction(logits, hazards, survival, float(-np.sum(survival)))


def risk_scores(logits):
    """Row-wise risk for an (n, K) logit matrix"""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("logits contain non-finite values")
    return -np.cumprod(1.0 - expit(logits), axis=1).sum(axis=1)
