# protosurv/losses.py
"""ProtoSurv loss: prototype contrastive + prototype center + discrete-time NLL survival.

All gradients are analytic. Prototypes and class centers are constants here;
the library only moves through the EMA / basic updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .core import PROB_EPS, DataError, DimensionError, LibraryError, NonFiniteError, check_vector
from .matching import match_with_jacobian
from .similarity import kernel_for


class LossValue(NamedTuple):
    value: float
    grad: np.ndarray


class SurvLossTerms(NamedTuple):
    uncensored: float
    censored: float
    value: float
    grad: np.ndarray


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    contra: float
    center: float
    prototypes: float
    uncensored: float
    censored: float
    surv: float
    total: float
    per_sample: dict

    def to_record(self):
        return {
            "L_contra": self.contra,
            "L_center": self.center,
            "L_prototypes": self.prototypes,
            "L_UCs": self.uncensored,
            "L_Cs": self.censored,
            "L_surv": self.surv,
            "L_total": self.total,
        }


@dataclass(frozen=True, eq=False)
class LossGradients:
    # full d L_total / d f, survival path included through the matcher Jacobian
    features: np.ndarray
    logits: np.ndarray


def _split_prototypes(lib, class_index):
    if lib.num_classes < 2:
        raise LibraryError("contrastive loss undefined: no negative prototypes (single class)")
    positives = lib.effective_set(class_index)[1]
    negatives = np.concatenate([lib.effective_set(c)[1] for c in range(lib.num_classes) if c != class_index])
    return positives, negatives


def contrastive_loss(f, lib, class_of_f, kernel):
    """max(-log(sum exp S+ / (sum exp S+ + sum exp S-)), 0) and its gradient in f"""
    f = check_vector(f, "feature", lib.feature_dim)
    if not 0 <= class_of_f < lib.num_classes:
        raise DataError(f"class index {class_of_f} outside [0, {lib.num_classes})")
    positives, negatives = _split_prototypes(lib, class_of_f)
    protos = np.concatenate([positives, negatives])
    is_pos = np.zeros(len(protos), dtype=bool)
    is_pos[:len(positives)] = True

    S = kernel.matrix(f[None, :], protos)[0]
    value = logsumexp(S) - logsumexp(S[is_pos])
    if value <= 0.0:
        return LossValue(0.0, np.zeros_like(f))
    weights = softmax(S)
    weights[is_pos] -= softmax(S[is_pos])
    grad = np.einsum("k,kd->d", weights, kernel.grad(f[None, :], protos)[0])
    return LossValue(float(value), grad)


def center_loss(f, center, sigma_center, kernel):
    """sigma / S(f, mu_c), minimal (= sigma) at f = mu_c"""
    f = check_vector(f, "feature")
    center = check_vector(center, "center", f.shape[0])
    S = kernel.matrix(f[None, :], center[None, :])[0, 0]
    dS = kernel.grad(f[None, :], center[None, :])[0, 0]
    return LossValue(float(sigma_center / S), -sigma_center / S ** 2 * dS)


def nll_surv_loss(logits, time_bin, censored, alpha_loss):
    """Discrete-time NLL with Surv(t) = prod_{s<t} (1 - h(s)); gradient is in the logits"""
    logits = check_vector(logits, "logits")
    K = logits.shape[0]
    if not 0 <= time_bin < K:
        raise DataError(f"time bin {time_bin} outside [0, {K})")
    cs = float(censored)
    if cs not in (0.0, 1.0):
        raise DataError(f"censoring flag must be 0 or 1, got {censored!r}")

    raw = expit(logits)
    h = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    live = (raw > PROB_EPS) & (raw < 1.0 - PROB_EPS)
    # d log h / d z and d log(1-h) / d z, zero where the clamp is active
    dlog_h = np.where(live, 1.0 - h, 0.0)
    dlog_1mh = np.where(live, -h, 0.0)
    surv = np.concatenate([[1.0], np.cumprod(1.0 - h)])

    def log_surv(t):
        s = surv[t]
        grad = np.zeros(K)
        if s <= PROB_EPS:
            return np.log(PROB_EPS), grad
        grad[:t] = dlog_1mh[:t]
        return np.log(s), grad

    Y = int(time_bin)
    ls_y, g_ls_y = log_surv(Y)
    ls_y1, g_ls_y1 = log_surv(Y + 1)
    uncensored = -(1.0 - cs) * (ls_y + np.log(h[Y]))
    g_unc = np.zeros(K)
    if cs == 0.0:
        g_unc = -(g_ls_y + np.eye(K)[Y] * dlog_h[Y])
    censored_term = -cs * ls_y1
    g_cen = -cs * g_ls_y1

    value = (1.0 - alpha_loss) * (uncensored + censored_term) + alpha_loss * censored_term
    grad = (1.0 - alpha_loss) * (g_unc + g_cen) + alpha_loss * g_cen
    return SurvLossTerms(float(uncensored), float(censored_term), float(value), grad)


def total_loss(features, time_bins, censored, lib, cfg):
    """Batch ProtoSurv loss; returns (LossBreakdown, LossGradients)"""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if F.shape[0] == 0:
        raise DataError("total_loss needs a non-empty batch")
    if F.shape[1] != lib.feature_dim:
        raise DimensionError(f"features have dimension {F.shape[1]}, library has {lib.feature_dim}")
    if not np.all(np.isfinite(F)):
        raise NonFiniteError("batch features contain non-finite values")
    bins = np.asarray(time_bins, dtype=int)
    flags = np.asarray(censored, dtype=float)
    n = F.shape[0]
    kernel = kernel_for(cfg)

    logits, jac = match_with_jacobian(F, lib, cfg)

    contra = np.zeros(n)
    center = np.zeros(n)
    unc = np.zeros(n)
    cen = np.zeros(n)
    surv = np.zeros(n)
    grad_proto = np.zeros_like(F)
    grad_logits = np.zeros_like(logits)
    # ascending sample order keeps the reduction reproducible
    for i in range(n):
        c = int(bins[i])
        lc = contrastive_loss(F[i], lib, c, kernel)
        lm = center_loss(F[i], lib.class_centers[c], cfg.sigma_center, kernel)
        ls = nll_surv_loss(logits[i], c, flags[i], cfg.alpha_loss)
        contra[i], center[i] = lc.value, lm.value
        unc[i], cen[i], surv[i] = ls.uncensored, ls.censored, ls.value
        grad_proto[i] = lc.grad + lm.grad
        grad_logits[i] = ls.grad

    L_contra = float(np.mean(contra))
    L_center = float(np.mean(center))
    L_prototypes = L_contra + L_center
    L_surv = float(np.mean(surv))
    L_total = cfg.beta_loss * L_prototypes + (1.0 - cfg.beta_loss) * L_surv

    g_logits = (1.0 - cfg.beta_loss) / n * grad_logits
    g_features = cfg.beta_loss / n * grad_proto + np.einsum("nc,ncd->nd", g_logits, jac)
    breakdown = LossBreakdown(L_contra, L_center, L_prototypes, float(np.mean(unc)), float(np.mean(cen)),
                              L_surv, L_total,
                              {"contra": contra, "center": center, "uncensored": unc, "censored": cen,
                               "surv": surv})
    return breakdown, LossGradients(g_features, g_logits)
