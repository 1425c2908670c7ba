# protosurv/library.py
"""Construction and evolution of the prototype library.

Every operation consumes a snapshot and returns a new one (version + 1);
snapshots are never mutated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .core import (DataError, DimensionError, Kind, LibraryError, PrototypeEntry,
                   PrototypeLibrary, Source, config_hash, prototype_id, require_valid_config)
from .similarity import kernel_for, l2_normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClassFeatureSet:
    """Features X_c of one class with the ids of the samples they came from"""
    class_index: int
    sample_ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if len(self.sample_ids) != vectors.shape[0]:
            raise DimensionError(f"class {self.class_index}: {len(self.sample_ids)} ids "
                                 f"for {vectors.shape[0]} vectors")
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "vectors", vectors)

    def __len__(self):
        return len(self.sample_ids)


def group_by_class(sample_ids, vectors, labels, num_classes):
    """Split features into one ClassFeatureSet per class index"""
    sample_ids = np.asarray(sample_ids)
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    return [
        ClassFeatureSet(c, tuple(sample_ids[labels == c]), vectors[labels == c].reshape(-1, vectors.shape[1]))
        for c in range(num_classes)
    ]


@dataclass
class UpdateReport:
    epoch: int
    strategy: str
    version: int = 0
    merged: dict = field(default_factory=dict)
    replaced: dict = field(default_factory=dict)
    refreshed: dict = field(default_factory=dict)
    band_fallbacks: dict = field(default_factory=dict)
    # (prototype_id, displacement norm) per merge or replacement, in application order
    displacements: list = field(default_factory=list)

    def to_record(self):
        return {
            "epoch": self.epoch,
            "strategy": self.strategy,
            "version": self.version,
            "merged": {str(k): v for k, v in self.merged.items()},
            "replaced": {str(k): v for k, v in self.replaced.items()},
            "refreshed": {str(k): v for k, v in self.refreshed.items()},
            "band_fallbacks": {str(k): v for k, v in self.band_fallbacks.items()},
            "displacements": [[pid, float(d)] for pid, d in self.displacements],
        }


def class_center(features):
    """Arithmetic mean of the class features (mu_c)"""
    vectors = features.vectors if isinstance(features, ClassFeatureSet) else np.atleast_2d(features)
    if vectors.shape[0] == 0:
        raise DataError("cannot compute the center of an empty feature set")
    return vectors.mean(axis=0)


def _rank(scores, sample_ids, descending=True):
    """Indices ordered by score, ties broken by lowest sample id"""
    keys = -np.asarray(scores) if descending else np.asarray(scores)
    return np.lexsort((np.asarray(sample_ids, dtype=str), keys))


def _wandering_pick(kernel, sample_ids, vectors, center, m_wander, eps_fraction, typical_vectors):
    """Pick wandering features closest to the mean center distance d̄_c.

    Returns (indices, fallback) where fallback is True when fewer than
    m_wander candidates fell inside [d̄_c - eps, d̄_c + eps].
    """
    if m_wander == 0 or len(sample_ids) == 0:
        return [], False
    dist = 1.0 / kernel.matrix(vectors, center[None, :])[:, 0]
    d_bar = dist.mean()
    eps = eps_fraction * d_bar
    gap = np.abs(dist - d_bar)
    typical_vectors = np.asarray(typical_vectors).reshape(-1, vectors.shape[1])
    duplicate = (vectors[:, None, :] == typical_vectors[None, :, :]).all(axis=-1).any(axis=1)
    in_band = (gap <= eps) & ~duplicate

    order = list(_rank(gap, sample_ids, descending=False))
    chosen = [i for i in order if in_band[i]][:m_wander]
    fallback = len(chosen) < m_wander
    if fallback:
        # out-of-band candidates, non-duplicates first
        rest = [i for i in order if i not in chosen]
        rest.sort(key=lambda i: bool(duplicate[i]))
        chosen += rest[:m_wander - len(chosen)]
    return chosen, fallback


def _normalize_sets(data, cfg):
    if cfg.normalization != "init_only":
        return data
    return [replace(fs, vectors=l2_normalize_rows(fs.vectors)) for fs in data]


def init_library(data, cfg, epoch=0):
    """Build the initial library from per-class training features"""
    require_valid_config(cfg)
    kernel = kernel_for(cfg)
    data = sorted(data, key=lambda fs: fs.class_index)
    if [fs.class_index for fs in data] != list(range(cfg.num_classes)):
        raise DataError(f"expected feature sets for classes 0..{cfg.num_classes - 1}, "
                        f"got {[fs.class_index for fs in data]}")
    data = _normalize_sets(data, cfg)

    version = 1
    needed = cfg.k_proto + cfg.m_wander
    typical, wandering, centers = [], [], []
    for fs in data:
        c = fs.class_index
        if len(fs) < needed:
            raise DataError(f"class {c} has {len(fs)} features, needs at least {needed} "
                            f"(k_proto={cfg.k_proto} + m_wander={cfg.m_wander})")
        if fs.vectors.shape[1] != cfg.feature_dim:
            raise DimensionError(f"class {c} features have dimension {fs.vectors.shape[1]}, "
                                 f"config says {cfg.feature_dim}")
        mu = class_center(fs)
        sims = kernel.matrix(fs.vectors, mu[None, :])[:, 0]
        order = _rank(sims, fs.sample_ids)
        top = order[:cfg.k_proto]
        typical.append(tuple(
            PrototypeEntry(prototype_id(c, Kind.TYPICAL, slot, version), c, Kind.TYPICAL, slot,
                           fs.vectors[i], (Source(fs.sample_ids[i], 1.0),), 0.0, epoch, 0)
            for slot, i in enumerate(top)
        ))

        rest = order[cfg.k_proto:]
        picks, fallback = _wandering_pick(kernel, [fs.sample_ids[i] for i in rest], fs.vectors[rest], mu,
                                          cfg.m_wander, cfg.epsilon_fraction, fs.vectors[top])
        if fallback:
            logger.warning("class %d: wandering band holds fewer than %d candidates, "
                           "falling back to nearest-to-mean-distance selection", c, cfg.m_wander)
        wandering.append(tuple(
            PrototypeEntry(prototype_id(c, Kind.WANDERING, slot, version), c, Kind.WANDERING, slot,
                           fs.vectors[rest[j]], (Source(fs.sample_ids[rest[j]], 1.0),), 0.0, epoch, 0)
            for slot, j in enumerate(picks)
        ))
        centers.append(mu)

    lib = PrototypeLibrary(version, typical, wandering, np.stack(centers), cfg.normalization,
                           cfg.similarity, cfg.m, config_hash(cfg))
    logger.debug("initialized library v%d: %d classes x (%d typical + %d wandering)",
                 version, cfg.num_classes, cfg.k_proto, cfg.m_wander)
    return lib


def merge_sources(sources, residual, sample_id, decay, top_f):
    """Decay existing source weights by λ, add the new sample at 1-λ, keep the top F"""
    weights = {}
    for sid, w in sources:
        weights[sid] = weights.get(sid, 0.0) + decay * w
    weights[sample_id] = weights.get(sample_id, 0.0) + (1.0 - decay)
    ranked = sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))
    kept, dropped = ranked[:top_f], ranked[top_f:]
    residual = decay * residual + sum(w for _, w in dropped)
    return tuple(Source(s, w) for s, w in kept), residual


def _centers_from_typical(typical):
    return np.stack([np.mean([e.vector for e in row], axis=0) for row in typical])


def _candidates(kernel, fs, center, top_k):
    sims = kernel.matrix(fs.vectors, center[None, :])[:, 0]
    return _rank(sims, fs.sample_ids)[:top_k]


def _check_epoch_features(lib, epoch_features, cfg):
    require_valid_config(cfg)
    if lib.similarity != cfg.similarity or (cfg.similarity == "pmdsim" and lib.m != cfg.m):
        raise LibraryError(f"library built with {lib.similarity} (m={lib.m}), "
                           f"config uses {cfg.similarity} (m={cfg.m})")
    # update-time features are used as given; init_only normalizes in init_library alone
    by_class = {fs.class_index: fs for fs in epoch_features}
    for fs in by_class.values():
        if len(fs) and fs.vectors.shape[1] != lib.feature_dim:
            raise DimensionError(f"class {fs.class_index} features have dimension "
                                 f"{fs.vectors.shape[1]}, library has {lib.feature_dim}")
    return by_class


def basic_update(lib, epoch_features, cfg, epoch=0):
    """Threshold replacement: swap the farthest typical prototype for a distant feature"""
    kernel = kernel_for(cfg)
    by_class = _check_epoch_features(lib, epoch_features, cfg)
    version = lib.version + 1
    report = UpdateReport(epoch, "basic", version)

    typical = [list(row) for row in lib.typical]
    for c in range(lib.num_classes):
        report.replaced[c] = 0
        fs = by_class.get(c)
        if fs is None or len(fs) == 0:
            logger.warning("epoch %d: no features for class %d, skipping basic update", epoch, c)
            continue
        wandering_vecs = [w.vector for w in lib.wandering[c]]
        for i in _candidates(kernel, fs, lib.class_centers[c], cfg.top_k):
            f = fs.vectors[i]
            if any(np.array_equal(f, w) for w in wandering_vecs):
                continue
            protos = np.stack([e.vector for e in typical[c]])
            d = 1.0 / kernel.matrix(f[None, :], protos)[0]
            if d.mean() <= cfg.theta:
                continue
            slot = int(np.argmax(d))
            old = typical[c][slot]
            typical[c][slot] = PrototypeEntry(prototype_id(c, Kind.TYPICAL, slot, version), c, Kind.TYPICAL,
                                              slot, f, (Source(fs.sample_ids[i], 1.0),), 0.0, epoch, 0)
            report.replaced[c] += 1
            report.displacements.append((typical[c][slot].id, float(np.linalg.norm(f - old.vector))))

    new = PrototypeLibrary(version, typical, lib.wandering, _centers_from_typical(typical),
                           lib.normalization, lib.similarity, lib.m, lib.config_hash)
    return new, report


def ema_update(lib, epoch_features, cfg, epoch=0):
    """EMA ProtoUp: merge representative features into their nearest typical prototypes,
    then rebuild the wandering prototypes from this epoch's features"""
    kernel = kernel_for(cfg)
    by_class = _check_epoch_features(lib, epoch_features, cfg)
    lam = cfg.ema_decay
    version = lib.version + 1
    report = UpdateReport(epoch, "ema", version)

    typical = [list(row) for row in lib.typical]
    wandering = [list(row) for row in lib.wandering]
    centers = []
    for c in range(lib.num_classes):
        report.merged[c] = 0
        report.refreshed[c] = 0
        fs = by_class.get(c)
        if fs is None or len(fs) == 0:
            logger.warning("epoch %d: no features for class %d, keeping its prototypes", epoch, c)
            centers.append(np.mean([e.vector for e in typical[c]], axis=0))
            continue

        top = _candidates(kernel, fs, lib.class_centers[c], cfg.top_k)
        protos = np.stack([e.vector for e in typical[c]])
        for i in top:
            f = fs.vectors[i]
            slot = int(np.argmax(kernel.matrix(f[None, :], protos)[0]))
            old = typical[c][slot]
            merged = lam * old.vector + (1.0 - lam) * f
            sources, residual = merge_sources(old.sources, old.residual, fs.sample_ids[i], lam,
                                              cfg.top_f_sources)
            typical[c][slot] = replace(old, vector=merged, sources=sources, residual=residual,
                                       history_length=old.history_length + 1)
            protos[slot] = merged
            report.merged[c] += 1
            report.displacements.append((old.id, float(np.linalg.norm(merged - old.vector))))

        mu = protos.mean(axis=0)
        centers.append(mu)

        if cfg.m_wander == 0:
            wandering[c] = []
            continue
        pool = np.setdiff1d(np.arange(len(fs)), top)
        if len(pool) < cfg.m_wander:
            pool = np.arange(len(fs))
        if len(pool) < cfg.m_wander:
            logger.warning("epoch %d: class %d has %d features, keeping previous wandering prototypes",
                           epoch, c, len(fs))
            continue
        pool_ids = [fs.sample_ids[i] for i in pool]
        picks, fallback = _wandering_pick(kernel, pool_ids, fs.vectors[pool], mu, cfg.m_wander,
                                          cfg.epsilon_fraction, protos)
        report.band_fallbacks[c] = int(fallback)
        wandering[c] = [
            PrototypeEntry(prototype_id(c, Kind.WANDERING, slot, version), c, Kind.WANDERING, slot,
                           fs.vectors[pool[j]], (Source(pool_ids[j], 1.0),), 0.0, epoch, 0)
            for slot, j in enumerate(picks)
        ]
        report.refreshed[c] = len(picks)

    new = PrototypeLibrary(version, typical, wandering, np.stack(centers), lib.normalization,
                           lib.similarity, lib.m, lib.config_hash)
    return new, report


def update_library(lib, epoch_features, cfg, epoch=0):
    if cfg.update_strategy == "basic":
        return basic_update(lib, epoch_features, cfg, epoch)
    return ema_update(lib, epoch_features, cfg, epoch)


# ---------------------------------------------------------------------------
# Tabular export / reimport
# ---------------------------------------------------------------------------

def _format_sources(sources):
    return ";".join(f"{sid}:{w:.17g}" for sid, w in sources)


def _parse_sources(text):
    if not isinstance(text, str) or not text:
        return ()
    out = []
    for item in text.split(";"):
        sid, _, w = item.rpartition(":")
        out.append(Source(sid, float(w)))
    return tuple(out)


def library_to_frame(lib):
    """One row per prototype: identity, provenance summary, then the vector columns"""
    rows = []
    for e in lib.entries():
        row = {
            "id": e.id,
            "class_index": e.class_index,
            "kind": e.kind.value,
            "slot": e.slot,
            "created_epoch": e.created_epoch,
            "history_length": e.history_length,
            "residual": e.residual,
            "sources": _format_sources(e.sources),
        }
        row.update({f"v{j}": float(x) for j, x in enumerate(e.vector)})
        rows.append(row)
    return pd.DataFrame(rows)


def library_from_frame(frame, version, normalization="encode", similarity="pmdsim", m=2.0, config_hash_=""):
    """Rebuild a library from an exported table; centers are the typical means"""
    vector_cols = sorted((c for c in frame.columns if c.startswith("v") and c[1:].isdigit()),
                         key=lambda c: int(c[1:]))
    num_classes = int(frame["class_index"].max()) + 1
    typical = [[] for _ in range(num_classes)]
    wandering = [[] for _ in range(num_classes)]
    for row in frame.sort_values(["class_index", "kind", "slot"], kind="stable").itertuples(index=False):
        row = row._asdict()
        entry = PrototypeEntry(row["id"], int(row["class_index"]), Kind(row["kind"]), int(row["slot"]),
                               np.array([row[c] for c in vector_cols], dtype=np.float64),
                               _parse_sources(row["sources"]), float(row["residual"]),
                               int(row["created_epoch"]), int(row["history_length"]))
        (typical if entry.kind is Kind.TYPICAL else wandering)[entry.class_index].append(entry)
    if any(not row for row in typical):
        raise LibraryError("exported table is missing typical prototypes for some class")
    return PrototypeLibrary(version, typical, wandering, _centers_from_typical(typical),
                            normalization, similarity, m, config_hash_)
