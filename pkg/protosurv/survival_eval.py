# protosurv/survival_eval.py
"""Concordance index, Kaplan-Meier curves and the two-group log-rank test."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import gammaincc

from .core import CIndexUndefinedError, ConfigError, DataError, NonFiniteError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CohortPrediction:
    sample_ids: tuple
    risks: np.ndarray
    times: np.ndarray
    censored: np.ndarray

    def __post_init__(self):
        risks = np.asarray(self.risks, dtype=np.float64).ravel()
        times = np.asarray(self.times, dtype=np.float64).ravel()
        censored = np.asarray(self.censored, dtype=int).ravel()
        ids = tuple(str(s) for s in self.sample_ids)
        if not (len(ids) == risks.shape[0] == times.shape[0] == censored.shape[0]):
            raise DataError("cohort columns have different lengths")
        if not np.all(np.isfinite(risks)):
            raise NonFiniteError("cohort risks must be finite")
        if np.any(times < 0):
            raise DataError("cohort times must be non-negative")
        if not np.all(np.isin(censored, (0, 1))):
            raise DataError("censoring flags must be 0 or 1")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "risks", risks)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "censored", censored)

    def __len__(self):
        return len(self.sample_ids)

    @property
    def events(self):
        return 1 - self.censored

    def subset(self, mask):
        mask = np.asarray(mask)
        ids = np.asarray(self.sample_ids, dtype=object)[mask]
        return CohortPrediction(tuple(ids), self.risks[mask], self.times[mask], self.censored[mask])

    def to_frame(self):
        return pd.DataFrame({"sample_id": list(self.sample_ids), "risk": self.risks,
                             "event_time": self.times, "censored": self.censored})


def c_index(cohort, mode="harrell"):
    """Fraction of comparable pairs ordered consistently by risk; tied risks count 0.5.

    mode="harrell": pair (i, j) with T_i < T_j is comparable when the earlier sample i
    had an event. mode="literal": comparable when the later sample j had an event.
    """
    if mode not in ("harrell", "literal"):
        raise ConfigError(f"unknown c-index mode {mode!r}")
    T = cohort.times
    r = cohort.risks
    event = cohort.events.astype(bool)
    earlier = T[:, None] < T[None, :]
    if mode == "harrell":
        comparable = earlier & event[:, None]
    else:
        comparable = earlier & event[None, :]
    n_pairs = int(np.count_nonzero(comparable))
    if n_pairs == 0:
        raise CIndexUndefinedError("C-index undefined: no comparable pairs")
    concordant = int(np.count_nonzero(comparable & (r[:, None] > r[None, :])))
    tied = int(np.count_nonzero(comparable & (r[:, None] == r[None, :])))
    return (concordant + 0.5 * tied) / n_pairs


def median_risk_split(cohort):
    """(high, low): risk > median goes high, everything else low"""
    if len(cohort) < 2:
        raise DataError("median split needs at least 2 samples")
    median = float(np.median(cohort.risks))
    high = cohort.risks > median
    return cohort.subset(high), cohort.subset(~high)


@dataclass(frozen=True, eq=False)
class KMCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def to_frame(self, group=None):
        frame = pd.DataFrame({"time": self.times, "survival": self.survival,
                              "at_risk": self.at_risk, "events": self.events})
        if group is not None:
            frame.insert(0, "group", group)
        return frame


def _event_table(times, events):
    """Distinct times with at-risk and event counts, timeline starting at 0"""
    grid = np.unique(np.concatenate([[0.0], times]))
    at_risk = np.array([np.count_nonzero(times >= t) for t in grid])
    deaths = np.array([np.count_nonzero((times == t) & events) for t in grid])
    return grid, at_risk, deaths


def km_curve(group):
    """Product-limit estimator over a cohort group"""
    if len(group) == 0:
        raise DataError("KM curve needs a non-empty group")
    grid, at_risk, deaths = _event_table(group.times, group.events.astype(bool))
    factors = np.where(at_risk > 0, 1.0 - deaths / np.maximum(at_risk, 1), 1.0)
    return KMCurve(grid, np.cumprod(factors), at_risk, deaths)


def chi2_sf_1dof(x):
    """Upper tail of chi-square with one degree of freedom"""
    return float(gammaincc(0.5, x / 2.0))


def logrank_test(group_a, group_b):
    """Two-group log-rank test; returns (chi_square, p_value)"""
    if len(group_a) == 0 or len(group_b) == 0:
        raise DataError("log-rank test needs two non-empty groups")
    times = np.concatenate([group_a.times, group_b.times])
    events = np.concatenate([group_a.events, group_b.events]).astype(bool)
    in_a = np.concatenate([np.ones(len(group_a), dtype=bool), np.zeros(len(group_b), dtype=bool)])
    if not events.any():
        raise DataError("log-rank test undefined: no events in either group")

    observed = expected = variance = 0.0
    for t in np.unique(times[events]):
        risk_set = times >= t
        n = np.count_nonzero(risk_set)
        n_a = np.count_nonzero(risk_set & in_a)
        dead = (times == t) & events
        d = np.count_nonzero(dead)
        observed += np.count_nonzero(dead & in_a)
        expected += d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1)

    diff = observed - expected
    if variance <= 0.0:
        if abs(diff) < 1e-12:
            return 0.0, 1.0
        logger.warning("log-rank variance is zero with O-E=%g; reporting an infinite statistic", diff)
        return float("inf"), 0.0
    chi_square = diff ** 2 / variance
    return float(chi_square), chi2_sf_1dof(chi_square)


def risk_summary(cohort):
    """Box-plot numbers for one group's risk distribution"""
    r = cohort.risks
    if r.size == 0:
        return {"n": 0}
    q1, median, q3 = np.percentile(r, [25, 50, 75])
    return {"n": int(r.size), "min": float(r.min()), "q1": float(q1), "median": float(median),
            "q3": float(q3), "max": float(r.max()), "mean": float(r.mean())}


def median_survival(curve):
    """First time the KM curve drops to 0.5 or below; NaN when it never does"""
    below = np.nonzero(curve.survival <= 0.5)[0]
    return float(curve.times[below[0]]) if below.size else float("nan")
