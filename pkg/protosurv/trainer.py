# protosurv/trainer.py
"""Desk-scale fusion encoder and the training loop that alternates gradient
steps on the ProtoSurv loss with periodic prototype-library updates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from .core import (CIndexUndefinedError, ConfigError, DataError, DimensionError, EngineConfig, NumericError,
                   config_hash, load_config, require_valid_config, require_valid_library, save_config)
from .data import bin_dataset
from .library import group_by_class, init_library, update_library
from .losses import total_loss
from .matching import match_batch, match_with_jacobian, risk_scores
from .serialization import (ENCODER_MAGIC, load_arrays, load_bin_edges, load_library, save_arrays,
                            save_bin_edges, save_library, write_jsonl)
from .similarity import NORM_TOLERANCE
from .survival_eval import CohortPrediction, c_index

logger = logging.getLogger(__name__)

ENCODER_FILE = "encoder.txt"
LIBRARY_FILE = "library.txt"
EDGES_FILE = "bin_edges.txt"
CONFIG_FILE = "config.yaml"
METRICS_FILE = "metrics.jsonl"
UPDATES_FILE = "updates.jsonl"
STEPS_FILE = "steps.jsonl"

ABLATION_VARIANTS = {
    "full": {},
    "no_wandering": {"m_wander": 0},
    "basic_update": {"update_strategy": "basic"},
    "nearest_only_match": {"alpha_sim": 0.0, "beta_sim": 1.0, "gamma_sim": 0.0},
    "nll_only": {"beta_loss": 0.0},
    "proto_only": {"beta_loss": 1.0},
    "cosine_similarity": {"similarity": "cosine"},
    "euclidean_similarity": {"similarity": "euclidean"},
}

TABLE_COLUMNS = ("variant", "epochs", "final_loss", "train_c_index", "val_c_index", "library_version", "m_wander")


@dataclass(frozen=True, eq=False)
class EncoderCache:
    standardized: np.ndarray
    squashed: np.ndarray
    norms: np.ndarray
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class FusionEncoder:
    """Standardize, affine map to D, tanh, then L2-normalize under the "encode" policy"""
    input_mean: np.ndarray
    input_scale: np.ndarray
    weight: np.ndarray
    bias: np.ndarray
    normalize: bool = True

    PARAMETERS = ("weight", "bias")

    @classmethod
    def initialize(cls, X, cfg, rng):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        d_in = X.shape[1]
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > NORM_TOLERANCE, scale, 1.0)
        weight = rng.normal(scale=cfg.init_scale / math.sqrt(d_in), size=(cfg.feature_dim, d_in))
        return cls(mean, scale, weight, np.zeros(cfg.feature_dim), cfg.normalization == "encode")

    @property
    def input_dim(self):
        return self.weight.shape[1]

    @property
    def output_dim(self):
        return self.weight.shape[0]

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise DimensionError(f"encoder expects inputs of dimension {self.input_dim}, got {X.shape[1]}")
        Xs = (X - self.input_mean) / self.input_scale
        U = np.tanh(Xs @ self.weight.T + self.bias)
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        if self.normalize:
            F = U / np.where(norms > NORM_TOLERANCE, norms, 1.0)
        else:
            F = U
        return F, EncoderCache(Xs, U, norms, F)

    def encode(self, X):
        return self.forward(X)[0]

    def backward(self, cache, grad_features):
        """Parameter gradients given dL/dF"""
        G = np.asarray(grad_features, dtype=np.float64)
        if self.normalize:
            safe = np.where(cache.norms > NORM_TOLERANCE, cache.norms, 1.0)
            G = (G - cache.features * np.sum(cache.features * G, axis=1, keepdims=True)) / safe
        G_pre = G * (1.0 - cache.squashed ** 2)
        return {"weight": G_pre.T @ cache.standardized, "bias": G_pre.sum(axis=0)}

    def step(self, grads, learning_rate):
        return replace(self, weight=self.weight - learning_rate * grads["weight"],
                       bias=self.bias - learning_rate * grads["bias"])

    def save(self, path):
        save_arrays(path, ENCODER_MAGIC, {
            "input_mean": self.input_mean,
            "input_scale": self.input_scale,
            "weight": self.weight,
            "bias": self.bias,
            "normalize": np.array(float(self.normalize)),
        })

    @classmethod
    def load(cls, path):
        arrays = load_arrays(path, ENCODER_MAGIC)
        return cls(arrays["input_mean"], arrays["input_scale"], arrays["weight"], arrays["bias"],
                   bool(arrays["normalize"]))


@dataclass
class EpochMetrics:
    epoch: int
    learning_rate: float
    loss: float
    contra: float
    center: float
    surv: float
    train_c_index: float
    val_c_index: float
    library_version: int

    def to_record(self):
        return {
            "epoch": self.epoch,
            "learning_rate": self.learning_rate,
            "loss": self.loss,
            "L_contra": self.contra,
            "L_center": self.center,
            "L_surv": self.surv,
            "train_c_index": None if math.isnan(self.train_c_index) else self.train_c_index,
            "val_c_index": None if math.isnan(self.val_c_index) else self.val_c_index,
            "library_version": self.library_version,
        }


@dataclass
class TrainState:
    encoder: FusionEncoder
    library: object
    bin_edges: np.ndarray
    epoch: int = 0
    step: int = 0
    initial_learning_rate: float = 1e-3
    total_steps: int = 0
    history: list = field(default_factory=list)
    update_reports: list = field(default_factory=list)
    step_log: list = field(default_factory=list)

    def learning_rate(self, step=None):
        """Cosine-decayed step size"""
        step = self.step if step is None else step
        if self.total_steps <= 0:
            return self.initial_learning_rate
        return 0.5 * self.initial_learning_rate * (1.0 + math.cos(math.pi * step / self.total_steps))

    def dump(self):
        return {
            "epoch": self.epoch,
            "step": self.step,
            "learning_rate": self.learning_rate(),
            "library_version": self.library.version,
            "weight_norm": float(np.linalg.norm(self.encoder.weight)),
            "bias_norm": float(np.linalg.norm(self.encoder.bias)),
            "recent_losses": [r["L_total"] for r in self.step_log[-5:]],
        }


def cohort_c_index(risks, dataset):
    """C-index of risks against a dataset's labels; NaN when no pair is comparable"""
    cohort = CohortPrediction(dataset.sample_ids(), risks, dataset.times(), dataset.censored())
    try:
        return c_index(cohort)
    except CIndexUndefinedError:
        logger.warning("C-index undefined on %d samples (no comparable pairs)", len(dataset))
        return float("nan")


def library_features(encoder, dataset, cfg):
    """Per-class features of the uncensored samples.

    A censored sample's bin only bounds its event time from below, so it
    carries no class label for the library; it still enters the losses.
    """
    keep = np.flatnonzero(dataset.censored() == 0)
    F = encoder.encode(dataset.inputs()[keep])
    ids = np.asarray(dataset.sample_ids())[keep]
    return group_by_class(ids, F, dataset.time_bins()[keep], cfg.num_classes)


def loss_and_param_grads(encoder, X, time_bins, censored, lib, cfg):
    """L_total on one batch and its gradient with respect to every encoder parameter"""
    F, cache = encoder.forward(X)
    breakdown, grads = total_loss(F, time_bins, censored, lib, cfg)
    return breakdown, encoder.backward(cache, grads.features)


def train(dataset, cfg, epochs=None, seed=None, validation=None, progress=False):
    """Train encoder + library; returns (TrainState, metrics history)"""
    require_valid_config(cfg)
    epochs = cfg.epochs if epochs is None else int(epochs)
    seed = cfg.seed if seed is None else int(seed)
    if epochs < 0:
        raise DataError("epochs must be non-negative")
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if not dataset.is_binned:
        dataset = bin_dataset(dataset, cfg.k_time)
    if len(dataset.bin_edges) != cfg.k_time + 1:
        raise DataError(f"dataset has {len(dataset.bin_edges) - 1} time bins, config expects {cfg.k_time}")

    rng = np.random.default_rng(seed)
    X = dataset.inputs()
    bins = dataset.time_bins()
    flags = dataset.censored()
    n = len(dataset)

    encoder = FusionEncoder.initialize(X, cfg, rng)
    library = init_library(library_features(encoder, dataset, cfg), cfg, epoch=0)
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    state = TrainState(encoder, library, dataset.bin_edges, initial_learning_rate=cfg.learning_rate,
                       total_steps=epochs * batches_per_epoch)
    logger.info("📚 Library v%d initialized from %d uncensored of %d training samples", library.version,
                int((flags == 0).sum()), n)

    epoch_iter = range(1, epochs + 1)
    bar = tqdm(epoch_iter, desc="training", unit="epoch", disable=not progress)
    for epoch in bar:
        order = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lr = state.learning_rate()
            breakdown, grads = loss_and_param_grads(state.encoder, X[idx], bins[idx], flags[idx],
                                                    state.library, cfg)
            state.step_log.append({"epoch": epoch, "step": state.step, "learning_rate": lr,
                                   **breakdown.to_record()})
            if not math.isfinite(breakdown.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {state.step}", state.dump())
            state.encoder = state.encoder.step(grads, lr)
            state.step += 1
            sums += len(idx) * np.array([breakdown.total, breakdown.contra, breakdown.center, breakdown.surv])
            logger.debug("epoch %d step %d lr=%.3g %s", epoch, state.step, lr, breakdown.to_record())

        state.epoch = epoch
        if epoch % cfg.update_period_epochs == 0:
            state.library, report = update_library(state.library, library_features(state.encoder, dataset, cfg),
                                                   cfg, epoch)
            state.update_reports.append(report)
            logger.debug("epoch %d: library v%d %s", epoch, state.library.version, report.to_record())

        train_ci = cohort_c_index(predict_risks(state.encoder, state.library, cfg, X), dataset)
        val_ci = float("nan")
        if validation is not None and len(validation):
            val_ci = cohort_c_index(predict_risks(state.encoder, state.library, cfg, validation.inputs()),
                                    validation)
        means = sums / n
        metrics = EpochMetrics(epoch, state.learning_rate(), *map(float, means), train_ci, val_ci,
                               state.library.version)
        state.history.append(metrics)
        bar.set_postfix(loss=f"{metrics.loss:.4f}", train_c=f"{train_ci:.3f}", val_c=f"{val_ci:.3f}")
        logger.info("epoch %d/%d loss=%.4f train_c=%.4f val_c=%.4f", epoch, epochs, metrics.loss,
                    train_ci, val_ci)

    require_valid_library(state.library)
    return state, state.history


def predict_risks(encoder, lib, cfg, X):
    """Vectorised risk scores for raw inputs"""
    logits, _ = match_with_jacobian(encoder.encode(X), lib, cfg)
    return risk_scores(logits)


def predict_dataset(encoder, lib, cfg, dataset):
    """(CohortPrediction, logits, traces) through the explanation-producing matcher"""
    if len(dataset) == 0:
        raise DataError("cannot predict on an empty dataset")
    F = encoder.encode(dataset.inputs())
    logits, traces = match_batch(F, lib, cfg, dataset.sample_ids())
    cohort = CohortPrediction(dataset.sample_ids(), [t.risk for t in traces], dataset.times(),
                              dataset.censored())
    return cohort, logits, traces


def _variant_row(dataset, cfg, name, overrides, validation, epochs, seed):
    variant_cfg = require_valid_config(cfg.with_overrides(**overrides))
    state, history = train(dataset, variant_cfg, epochs, seed, validation)
    last = history[-1] if history else None
    row = {
        "variant": name,
        "epochs": len(history),
        "final_loss": last.loss if last else float("nan"),
        "train_c_index": last.train_c_index if last else float("nan"),
        "val_c_index": last.val_c_index if last else float("nan"),
        "library_version": state.library.version,
        "m_wander": variant_cfg.m_wander,
    }
    return row, state


def _table(rows):
    return pd.DataFrame(rows, columns=list(TABLE_COLUMNS))


def ablation_run(dataset, cfg, variant, validation=None, epochs=None, seed=None):
    """Train one ablation variant; returns (metrics row, TrainState)"""
    if variant not in ABLATION_VARIANTS:
        raise DataError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATION_VARIANTS)}")
    logger.info("🧪 Ablation %s: %s", variant, ABLATION_VARIANTS[variant] or "no overrides")
    return _variant_row(dataset, cfg, variant, ABLATION_VARIANTS[variant], validation, epochs, seed)


def run_ablations(dataset, cfg, variants=None, validation=None, epochs=None, seed=None):
    """Side-by-side comparison table, one row per variant"""
    variants = list(ABLATION_VARIANTS) if variants is None else list(variants)
    return _table([ablation_run(dataset, cfg, v, validation, epochs, seed)[0] for v in variants])


def parse_sweep(text):
    """Parse field=v1,v2,... or f1/f2=a1/a2,b1/b2,... into {label: overrides}.

    Values are YAML scalars, so 30 stays an int and 0.1 a float.
    """
    names_text, sep, values_text = str(text).partition("=")
    names = [n.strip() for n in names_text.split("/") if n.strip()]
    if not sep or not names or not values_text.strip():
        raise ConfigError(f"sweep {text!r} must look like field=v1,v2 or f1/f2=a1/a2,b1/b2")
    unknown = [n for n in names if n not in EngineConfig.__dataclass_fields__]
    if unknown:
        raise ConfigError(f"sweep names unknown config fields: {', '.join(unknown)}")
    variants = {}
    for token in values_text.split(","):
        parts = [p.strip() for p in token.split("/")]
        if len(parts) != len(names) or not all(parts):
            raise ConfigError(f"sweep value {token!r} needs {len(names)} '/'-separated entries")
        try:
            values = [yaml.safe_load(p) for p in parts]
        except yaml.YAMLError as exc:
            raise ConfigError(f"sweep value {token!r}: {exc}") from exc
        label = "/".join(names) + "=" + "/".join(parts)
        if label in variants:
            raise ConfigError(f"sweep repeats {label}")
        variants[label] = dict(zip(names, values))
    return variants


def run_sweep(dataset, cfg, sweep, validation=None, epochs=None, seed=None):
    """One training run per sweep value, laid out like the ablation table.

    `sweep` is the text accepted by parse_sweep or an already parsed {label: overrides}.
    Every variant config is validated before the first run starts.
    """
    variants = parse_sweep(sweep) if isinstance(sweep, str) else dict(sweep)
    for label, overrides in variants.items():
        try:
            require_valid_config(cfg.with_overrides(**overrides))
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"sweep {label}: {exc}") from exc
    rows = []
    for label, overrides in variants.items():
        logger.info("🧪 Sweep %s", label)
        rows.append(_variant_row(dataset, cfg, label, overrides, validation, epochs, seed)[0])
    return _table(rows)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Checkpoint:
    encoder: FusionEncoder
    library: object
    cfg: object
    bin_edges: np.ndarray


def save_checkpoint(state, cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state.encoder.save(out_dir / ENCODER_FILE)
    save_library(state.library, out_dir / LIBRARY_FILE)
    save_bin_edges(state.bin_edges, out_dir / EDGES_FILE)
    save_config(cfg, out_dir / CONFIG_FILE)
    write_jsonl([m.to_record() for m in state.history], out_dir / METRICS_FILE)
    write_jsonl([r.to_record() for r in state.update_reports], out_dir / UPDATES_FILE)
    write_jsonl(state.step_log, out_dir / STEPS_FILE)
    return out_dir


def load_checkpoint(path):
    path = Path(path)
    if not (path / ENCODER_FILE).exists():
        raise DataError(f"no checkpoint found in {path}")
    cfg = load_config(path / CONFIG_FILE)
    library = load_library(path / LIBRARY_FILE)
    require_valid_library(library)
    if library.config_hash and library.config_hash != config_hash(cfg):
        logger.warning("library config hash %s differs from checkpoint config %s",
                       library.config_hash, config_hash(cfg))
    encoder = FusionEncoder.load(path / ENCODER_FILE)
    if encoder.output_dim != library.feature_dim:
        raise DimensionError(f"encoder output dimension {encoder.output_dim} does not match "
                             f"library dimension {library.feature_dim}")
    return Checkpoint(encoder, library, cfg, load_bin_edges(path / EDGES_FILE))
