# protosurv/core.py

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

ENGINE_VERSION = "1.0.0"

# Probability clamp used before every log in the survival losses
PROB_EPS = 1e-7


class ProtoSurvError(Exception):
    """Base error; exit_code is what the command line returns for it"""
    exit_code = 1


class ConfigError(ProtoSurvError):
    exit_code = 1


class DataError(ProtoSurvError):
    exit_code = 2


class DatasetParseError(DataError):
    """Dataset file failed to parse; diagnostics are (line_number, message) pairs"""

    def __init__(self, path, diagnostics):
        self.path = str(path)
        self.diagnostics = list(diagnostics)
        lines = [f"{self.path}:{lineno}: {msg}" for lineno, msg in self.diagnostics]
        super().__init__("\n".join(lines))


class LibraryError(ProtoSurvError):
    exit_code = 2


class DimensionError(ProtoSurvError, ValueError):
    exit_code = 2


class NonFiniteError(ProtoSurvError, ValueError):
    exit_code = 3


class NumericError(ProtoSurvError):
    exit_code = 3

    def __init__(self, message, state_dump=None):
        super().__init__(message)
        self.state_dump = state_dump


class CIndexUndefinedError(NumericError):
    pass


class Kind(str, Enum):
    TYPICAL = "typical"
    WANDERING = "wandering"


class Source(NamedTuple):
    sample_id: str
    weight: float


def check_vector(v, name="vector", dim=None):
    """Return v as a finite float64 1-d array or raise"""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def frozen_array(v):
    arr = np.array(v, dtype=np.float64)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Records and prototypes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One sample: raw modality blocks, survival label, optional fused embedding"""
    sample_id: str
    modality_blocks: tuple
    event_time: float
    censored: int
    time_bin: int | None = None
    fused: np.ndarray | None = None

    def __post_init__(self):
        blocks = tuple(frozen_array(b) for b in self.modality_blocks)
        object.__setattr__(self, "modality_blocks", blocks)
        if self.fused is not None:
            object.__setattr__(self, "fused", frozen_array(self.fused))

    @property
    def event_observed(self):
        return 1 - int(self.censored)

    def concatenated(self):
        return np.concatenate(self.modality_blocks) if self.modality_blocks else np.zeros(0)


@dataclass(frozen=True, eq=False)
class PrototypeEntry:
    id: str
    class_index: int
    kind: Kind
    slot: int
    vector: np.ndarray
    sources: tuple = ()
    # weight of the source history truncated out of the top-F list
    residual: float = 0.0
    created_epoch: int = 0
    history_length: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vector", frozen_array(self.vector))
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "sources", tuple(Source(str(s), float(w)) for s, w in self.sources))

    @property
    def total_weight(self):
        return math.fsum([w for _, w in self.sources]) + self.residual


def prototype_id(class_index, kind, slot, version):
    return f"c{class_index}-{Kind(kind).value}-{slot}-v{version}"


class IdentityRecord(NamedTuple):
    kind: Kind
    class_index: int
    slot: int


class ProvenanceRecord(NamedTuple):
    sources: tuple
    residual: float
    created_epoch: int
    history_length: int


@dataclass(frozen=True, eq=False)
class PrototypeLibrary:
    """Versioned snapshot (P, W, I, A) plus the class centers the matcher uses"""
    version: int
    typical: tuple
    wandering: tuple
    class_centers: np.ndarray
    normalization: str = "encode"
    similarity: str = "pmdsim"
    m: float = 2.0
    config_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "typical", tuple(tuple(row) for row in self.typical))
        object.__setattr__(self, "wandering", tuple(tuple(row) for row in self.wandering))
        centers = np.array(self.class_centers, dtype=np.float64)
        if centers.ndim != 2:
            raise LibraryError(f"class_centers must be 2-d, got shape {centers.shape}")
        centers.setflags(write=False)
        object.__setattr__(self, "class_centers", centers)

    @property
    def num_classes(self):
        return self.class_centers.shape[0]

    @property
    def feature_dim(self):
        return self.class_centers.shape[1]

    @property
    def k_proto(self):
        return len(self.typical[0]) if self.typical else 0

    @property
    def m_wander(self):
        return len(self.wandering[0]) if self.wandering else 0

    def entries(self):
        for c in range(self.num_classes):
            yield from self.typical[c]
            yield from self.wandering[c]

    @cached_property
    def identity(self):
        """I: prototype id -> (kind, class, slot)"""
        return {e.id: IdentityRecord(e.kind, e.class_index, e.slot) for e in self.entries()}

    @cached_property
    def provenance(self):
        """A: prototype id -> provenance record"""
        return {
            e.id: ProvenanceRecord(e.sources, e.residual, e.created_epoch, e.history_length)
            for e in self.entries()
        }

    @cached_property
    def _effective(self):
        sets = []
        for c in range(self.num_classes):
            entries = self.typical[c] + self.wandering[c]
            if entries:
                vectors = np.stack([e.vector for e in entries])
            else:
                vectors = np.zeros((0, self.feature_dim))
            vectors.setflags(write=False)
            sets.append((entries, vectors))
        return sets

    def effective_set(self, class_index):
        """Typical entries first, then wandering; returns (entries, vectors)"""
        return self._effective[class_index]

    def entry(self, prototype_id_):
        ident = self.identity[prototype_id_]
        row = self.typical if ident.kind is Kind.TYPICAL else self.wandering
        return row[ident.class_index][ident.slot]

    def typical_vectors(self, class_index):
        return np.stack([e.vector for e in self.typical[class_index]])


def validate_library(lib, atol=1e-9):
    """Check the library invariants; returns a list of violation messages"""
    problems = []
    C, D = lib.num_classes, lib.feature_dim
    if len(lib.typical) != C or len(lib.wandering) != C:
        problems.append(f"expected {C} typical/wandering rows, got {len(lib.typical)}/{len(lib.wandering)}")
        return problems

    k_proto, m_wander = lib.k_proto, lib.m_wander
    seen = 0
    for c in range(C):
        if len(lib.typical[c]) != k_proto:
            problems.append(f"class {c}: {len(lib.typical[c])} typical prototypes, expected {k_proto}")
        if len(lib.wandering[c]) != m_wander:
            problems.append(f"class {c}: {len(lib.wandering[c])} wandering prototypes, expected {m_wander}")
        for kind, row in ((Kind.TYPICAL, lib.typical[c]), (Kind.WANDERING, lib.wandering[c])):
            for slot, e in enumerate(row):
                seen += 1
                if e.kind is not kind or e.class_index != c or e.slot != slot:
                    problems.append(f"{e.id}: stored at ({kind.value}, {c}, {slot}) but tagged "
                                    f"({e.kind.value}, {e.class_index}, {e.slot})")
                if e.vector.shape != (D,):
                    problems.append(f"{e.id}: vector shape {e.vector.shape}, expected ({D},)")
                elif not np.all(np.isfinite(e.vector)):
                    problems.append(f"{e.id}: non-finite vector")
                weights = [w for _, w in e.sources]
                if any(w < 0 or w > 1 for w in weights) or e.residual < -atol:
                    problems.append(f"{e.id}: source weight outside [0,1]")
                if weights != sorted(weights, reverse=True):
                    problems.append(f"{e.id}: sources not in descending weight order")
                if abs(e.total_weight - 1.0) > atol:
                    problems.append(f"{e.id}: source weights sum to {e.total_weight!r}, expected 1")
        typical_vecs = [e.vector for e in lib.typical[c]]
        for w in lib.wandering[c]:
            if any(np.array_equal(w.vector, p) for p in typical_vecs):
                problems.append(f"class {c}: wandering prototype {w.id} equals a typical prototype")

    if len(lib.identity) != seen:
        problems.append(f"identity map has {len(lib.identity)} ids for {seen} prototypes (duplicate ids)")
    if set(lib.provenance) != set(lib.identity):
        problems.append("provenance store does not cover every prototype id")
    if not np.all(np.isfinite(lib.class_centers)):
        problems.append("non-finite class center")
    return problems


def require_valid_library(lib):
    problems = validate_library(lib)
    if problems:
        raise LibraryError("invalid prototype library:\n  " + "\n  ".join(problems))
    return lib


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

PRESETS = {
    "large": {"k_proto": 40, "m_wander": 5},
    "small": {"k_proto": 30, "m_wander": 5},
}

SIMILARITIES = ("pmdsim", "cosine", "euclidean")
NORMALIZATIONS = ("encode", "init_only")
UPDATE_STRATEGIES = ("ema", "basic")

# which YAML section each EngineConfig field lives in
TRAINING_FIELDS = ("learning_rate", "epochs", "batch_size", "seed", "init_scale")


@dataclass(frozen=True)
class EngineConfig:
    feature_dim: int = 16
    num_classes: int = 4
    k_proto: int = 40
    m_wander: int = 5
    k_time: int = 4
    m: float = 2.0
    ema_decay: float = 0.1
    epsilon_fraction: float = 0.10
    alpha_sim: float = 0.4
    beta_sim: float = 0.4
    gamma_sim: float = 0.2
    theta: float = 2.0
    sigma_center: float = 1.0
    alpha_loss: float = 0.4
    beta_loss: float = 0.5
    update_period_epochs: int = 1
    top_f_sources: int = 3
    # None means K = k_proto
    update_top_k: int | None = None
    similarity: str = "pmdsim"
    normalization: str = "encode"
    update_strategy: str = "ema"
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 2026
    init_scale: float = 1.0

    @property
    def top_k(self):
        return self.k_proto if self.update_top_k is None else self.update_top_k

    def with_overrides(self, **changes):
        return replace(self, **changes)


class Violation(NamedTuple):
    field: str
    value: object
    message: str

    def __str__(self):
        return f"{self.field}={self.value!r}: {self.message}"


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def messages(self):
        return [str(v) for v in self.violations]


def validate_config(cfg):
    """Check every EngineConfig invariant; never raises"""
    report = ValidationReport()
    add = lambda name, msg: report.violations.append(Violation(name, getattr(cfg, name), msg))

    for name in ("feature_dim", "num_classes", "k_proto", "k_time", "update_period_epochs",
                 "top_f_sources", "epochs", "batch_size"):
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < (0 if name == "epochs" else 1):
            add(name, "must be a positive integer")
    # M_wander = 0 is the no-wandering ablation
    if not isinstance(cfg.m_wander, int) or cfg.m_wander < 0:
        add("m_wander", "must be a non-negative integer")
    if cfg.update_top_k is not None and (not isinstance(cfg.update_top_k, int) or cfg.update_top_k < 1):
        add("update_top_k", "must be a positive integer or null")

    if not (isinstance(cfg.m, (int, float)) and math.isfinite(cfg.m) and cfg.m > 0):
        add("m", "power exponent must be positive")
    if not (0 < cfg.ema_decay < 0.5):
        add("ema_decay", "λ out of (0,0.5)")
    if not (cfg.epsilon_fraction >= 0 and math.isfinite(cfg.epsilon_fraction)):
        add("epsilon_fraction", "must be a non-negative fraction")
    for name in ("alpha_sim", "beta_sim", "gamma_sim"):
        if getattr(cfg, name) < 0:
            add(name, "fusion weight must be non-negative")
    total = cfg.alpha_sim + cfg.beta_sim + cfg.gamma_sim
    if abs(total - 1.0) > 1e-9:
        report.violations.append(Violation("alpha_sim+beta_sim+gamma_sim", total,
                                           "fusion weights do not sum to 1"))
    if not cfg.theta > 0:
        add("theta", "dissimilarity threshold must be positive")
    if not cfg.sigma_center >= 0:
        add("sigma_center", "center-loss weight must be non-negative")
    for name in ("alpha_loss", "beta_loss"):
        if not (0 <= getattr(cfg, name) <= 1):
            add(name, "loss mixing weight must lie in [0,1]")
    if cfg.num_classes != cfg.k_time:
        report.violations.append(Violation("num_classes", cfg.num_classes,
                                           f"must equal k_time ({cfg.k_time}): one class per time bin"))
    if cfg.similarity not in SIMILARITIES:
        add("similarity", f"must be one of {SIMILARITIES}")
    if cfg.normalization not in NORMALIZATIONS:
        add("normalization", f"must be one of {NORMALIZATIONS}")
    if cfg.update_strategy not in UPDATE_STRATEGIES:
        add("update_strategy", f"must be one of {UPDATE_STRATEGIES}")
    if not cfg.learning_rate >= 0:
        add("learning_rate", "step size must be non-negative")
    if not cfg.init_scale > 0:
        add("init_scale", "must be positive")
    return report


def require_valid_config(cfg):
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError("invalid engine config:\n  " + "\n  ".join(report.messages()))
    return cfg


def emit_config(cfg):
    """Config as the nested dict stored under configs/*.yaml"""
    values = asdict(cfg)
    training = {name: values.pop(name) for name in TRAINING_FIELDS}
    return {"engine": values, "training": training}


def parse_config(data):
    """Build an EngineConfig from the `engine` and `training` sections"""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with `engine` and `training` sections")
    engine = dict(data.get("engine") or {})
    training = dict(data.get("training") or {})

    preset = engine.pop("preset", None)
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    values.update(engine)
    values.update({k: v for k, v in training.items() if k in TRAINING_FIELDS})

    known = {f.name for f in fields(EngineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    floats = {f.name for f in fields(EngineConfig) if f.type == "float"}
    for name in floats & set(values):
        values[name] = float(values[name])
    return EngineConfig(**values)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)


def save_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(emit_config(cfg), f, sort_keys=False)


def config_hash(cfg):
    canonical = yaml.safe_dump(emit_config(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
