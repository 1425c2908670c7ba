# protosurv/cli.py
"""Commands behind the step scripts. Each cmd_* writes its outputs plus one
manifest.yaml into its output directory; run_guarded turns errors into exit
codes (0 ok, 1 usage/config, 2 data, 3 numeric)."""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .core import (ENGINE_VERSION, ConfigError, DataError, DimensionError, NumericError, ProtoSurvError,
                   config_hash, emit_config, load_config)
from .data import apply_bins, generate_synthetic, load_dataset, load_synth_spec, split_dataset, write_dataset
from .library import library_to_frame
from .serialization import write_jsonl
from .survival_eval import (c_index, km_curve, logrank_test, median_risk_split, median_survival,
                            risk_summary)
from .trainer import (ABLATION_VARIANTS, load_checkpoint, parse_sweep, predict_dataset, run_ablations, run_sweep,
                      save_checkpoint, train)

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.yaml"
DATASET_FILE = "dataset.tsv"
FLOAT_FORMAT = "%.17g"

DEFAULT_PATHS = {
    "data_dir": "data/synthetic",
    "model_dir": "models/latest",
    "results_dir": "results",
    "synth_spec": "configs/synth.yaml",
}


def load_paths(config_path="configs/config.yaml"):
    """The `paths` section of the config, filled with defaults"""
    paths = dict(DEFAULT_PATHS)
    path = Path(config_path)
    if path.exists():
        with open(path) as f:
            paths.update((yaml.safe_load(f) or {}).get("paths") or {})
    return paths


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def git_describe():
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                                capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() if result.returncode == 0 and result.stdout.strip() else "unknown"


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    outputs: list
    seed: int | None
    engine_version: str = ENGINE_VERSION
    started_at: str = ""
    wall_clock_seconds: float = 0.0
    git_describe: str = ""
    extra: dict = field(default_factory=dict)

    def write(self, out_dir):
        with open(Path(out_dir) / MANIFEST_FILE, "w") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)


class _Run:
    """Times one command and writes its manifest on success"""

    def __init__(self, command, out_dir, config=None, inputs=None, seed=None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, config or {}, {k: str(v) for k, v in (inputs or {}).items()},
                                    [], seed, started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                                    git_describe=git_describe())
        self._t0 = time.perf_counter()

    def output(self, name):
        self.manifest.outputs.append(name)
        return self.out_dir / name

    def finish(self, **extra):
        self.manifest.extra.update(extra)
        self.manifest.wall_clock_seconds = round(time.perf_counter() - self._t0, 3)
        self.manifest.write(self.out_dir)
        return self.out_dir


def _write_table(frame, path):
    frame.to_csv(path, sep="\t", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


# ---------------------------------------------------------------------------
# cmd_synth
# ---------------------------------------------------------------------------

def cmd_synth(spec_path, out_dir, seed=None):
    """Generate a synthetic dataset from a spec file"""
    spec = load_synth_spec(spec_path)
    if seed is not None:
        spec = replace(spec, seed=int(seed))
    logger.info("🧬 Generating %d classes x %d samples (seed %d)", spec.num_classes, spec.samples_per_class,
                spec.seed)
    run = _Run("synth", out_dir, {"synthetic": asdict(spec)}, {"spec": spec_path}, spec.seed)
    dataset = generate_synthetic(spec)
    path = run.output(DATASET_FILE)
    write_dataset(dataset, path)
    reloaded = load_dataset(path, schema=spec.modality_dims)
    censored = int(reloaded.censored().sum())
    logger.info("✅ Wrote %d records (%d censored) to %s", len(reloaded), censored, path)
    return run.finish(records=len(reloaded), censored=censored)


# ---------------------------------------------------------------------------
# cmd_train
# ---------------------------------------------------------------------------

def _load_training_inputs(dataset_path, config_path, seed, epochs):
    cfg = load_config(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = int(seed)
    if epochs is not None:
        overrides["epochs"] = int(epochs)
    cfg = cfg.with_overrides(**overrides)
    dataset = load_dataset(dataset_path)
    if len(dataset) == 0:
        raise DataError(f"dataset {dataset_path} is empty")
    return cfg, dataset


def _train_one(train_set, val_set, cfg, out_dir, command, inputs, extra=None, progress=False):
    run = _Run(command, out_dir, emit_config(cfg), inputs, cfg.seed)
    state, history = train(train_set, cfg, validation=val_set, progress=progress)
    save_checkpoint(state, cfg, run.out_dir)
    for name in ("encoder.txt", "library.txt", "bin_edges.txt", "config.yaml", "metrics.jsonl", "updates.jsonl",
                 "steps.jsonl"):
        run.output(name)
    write_dataset(apply_bins(val_set, state.bin_edges), run.output("validation.tsv"))
    last = history[-1] if history else None
    summary = {
        "train_size": len(train_set),
        "validation_size": len(val_set),
        "epochs": len(history),
        "library_version": state.library.version,
        "config_hash": config_hash(cfg),
        "final_train_c_index": None if last is None else _none_if_nan(last.train_c_index),
        "final_val_c_index": None if last is None else _none_if_nan(last.val_c_index),
    }
    run.finish(**summary, **(extra or {}))
    return state, history


def _none_if_nan(x):
    return None if x is None or np.isnan(x) else float(x)


def cmd_train(dataset_path, config_path, out_dir, seed=None, folds=None, ablation=None, epochs=None,
              progress=False, sweep=None):
    """Train a checkpoint; --folds runs seeded 8:2 splits, --ablation runs a variant (or "all"),
    --sweep trains one run per value of a config field"""
    cfg, dataset = _load_training_inputs(dataset_path, config_path, seed, epochs)
    inputs = {"dataset": dataset_path, "config": config_path}
    out_dir = Path(out_dir)

    if sweep is not None:
        if ablation is not None or folds is not None:
            raise ConfigError("--sweep cannot be combined with --ablation or --folds")
        variants = parse_sweep(sweep)
        train_set, val_set = split_dataset(dataset, 0.8, cfg.seed)
        run = _Run("train --sweep", out_dir, emit_config(cfg), inputs, cfg.seed)
        table = run_sweep(train_set, cfg, variants, validation=val_set)
        _write_table(table, run.output("sweep.tsv"))
        logger.info("📊 Sweep table:\n%s", table.to_string(index=False))
        run.finish(sweep=str(sweep), variants=list(table["variant"]))
        return table

    if ablation is not None:
        if ablation != "all" and ablation not in ABLATION_VARIANTS:
            raise ConfigError(f"unknown ablation {ablation!r}; choose from all, {', '.join(ABLATION_VARIANTS)}")
        train_set, val_set = split_dataset(dataset, 0.8, cfg.seed)
        if ablation == "all":
            run = _Run("train --ablation all", out_dir, emit_config(cfg), inputs, cfg.seed)
            table = run_ablations(train_set, cfg, validation=val_set)
            _write_table(table, run.output("ablation.tsv"))
            logger.info("📊 Ablation table:\n%s", table.to_string(index=False))
            run.finish(ablation="all", variants=list(table["variant"]))
            return table
        variant_cfg = cfg.with_overrides(**ABLATION_VARIANTS[ablation])
        logger.info("🧪 Training ablation variant %s", ablation)
        return _train_one(train_set, val_set, variant_cfg, out_dir, f"train --ablation {ablation}", inputs,
                          {"ablation": ablation}, progress)

    if folds is not None:
        if folds < 1:
            raise ConfigError("--folds must be at least 1")
        rows = []
        for k in range(folds):
            fold_seed = cfg.seed + k
            train_set, val_set = split_dataset(dataset, 0.8, fold_seed)
            logger.info("🔁 Fold %d/%d (split seed %d)", k + 1, folds, fold_seed)
            _, history = _train_one(train_set, val_set, cfg, out_dir / f"fold_{k}", "train --folds", inputs,
                                    {"fold": k, "split_seed": fold_seed}, progress)
            rows.append({"fold": str(k), "train_c_index": history[-1].train_c_index if history else np.nan,
                         "val_c_index": history[-1].val_c_index if history else np.nan})
        table = pd.DataFrame(rows)
        table = pd.concat([table, pd.DataFrame([
            {"fold": "mean", "train_c_index": table["train_c_index"].mean(),
             "val_c_index": table["val_c_index"].mean()},
            {"fold": "std", "train_c_index": table["train_c_index"].std(),
             "val_c_index": table["val_c_index"].std()},
        ])], ignore_index=True)
        run = _Run("train --folds", out_dir, emit_config(cfg), inputs, cfg.seed)
        _write_table(table, run.output("folds.tsv"))
        mean, std = table.iloc[-2]["val_c_index"], table.iloc[-1]["val_c_index"]
        logger.info("📊 Validation C-index over %d folds: %.4f ± %.4f", folds, mean, std)
        run.finish(folds=folds, val_c_index_mean=_none_if_nan(mean), val_c_index_std=_none_if_nan(std))
        return table

    train_set, val_set = split_dataset(dataset, 0.8, cfg.seed)
    return _train_one(train_set, val_set, cfg, out_dir, "train", inputs, progress=progress)


# ---------------------------------------------------------------------------
# cmd_eval
# ---------------------------------------------------------------------------

def _load_eval_dataset(checkpoint, dataset_path):
    dataset = load_dataset(dataset_path)
    if len(dataset) == 0:
        raise DataError(f"dataset {dataset_path} is empty")
    if dataset.input_dim != checkpoint.encoder.input_dim:
        raise DimensionError(f"dataset blocks {dataset.modality_dims} sum to {dataset.input_dim} dims, "
                             f"checkpoint encoder expects {checkpoint.encoder.input_dim}")
    return apply_bins(dataset, checkpoint.bin_edges)


def predictions_frame(dataset, cohort, logits, traces, groups):
    frame = pd.DataFrame({
        "sample_id": list(cohort.sample_ids),
        "event_time": cohort.times,
        "censored": cohort.censored,
        "time_bin": dataset.time_bins(),
        "risk": cohort.risks,
        "risk_group": groups,
        "predicted_bin": [t.predicted_bin for t in traces],
    })
    for k in range(logits.shape[1]):
        frame[f"logit_{k}"] = logits[:, k]
    return frame


def _evaluation_report(checkpoint_path, dataset_path, summary, risk_rows):
    lines = [
        "# Evaluation Report",
        f"Checkpoint: {checkpoint_path}",
        f"Dataset: {dataset_path}",
        "",
        "## Summary",
        f"- Samples: {summary['samples']} ({summary['events']} events, {summary['samples'] - summary['events']} censored)",
        f"- C-index ({summary['c_index_mode']}): {summary['c_index']:.4f}",
        f"- Median risk: {summary['median_risk']:.6f}",
        f"- Log-rank chi-square: {summary['logrank_chi2']:.4f}",
        f"- Log-rank p-value: {summary['logrank_p']:.4g}",
        "",
        "## Risk Groups",
        "| group | n | events | median survival | risk min | risk median | risk max |",
        "|---|---|---|---|---|---|---|",
    ]
    for row in risk_rows:
        lines.append(f"| {row['group']} | {row['n']} | {row['events']} | {row['median_survival']:.3f} | "
                     f"{row.get('min', float('nan')):.6f} | {row.get('median', float('nan')):.6f} | "
                     f"{row.get('max', float('nan')):.6f} |")
    lines += ["", "## Files", "- predictions.tsv", "- km_curves.tsv", "- risk_summary.tsv", ""]
    return "\n".join(lines)


def cmd_eval(checkpoint_path, dataset_path, out_dir, c_index_mode="harrell"):
    """C-index, median-risk split, KM curves, log-rank test and risk summaries"""
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = _load_eval_dataset(checkpoint, dataset_path)
    run = _Run("eval", out_dir, emit_config(checkpoint.cfg),
               {"checkpoint": checkpoint_path, "dataset": dataset_path}, checkpoint.cfg.seed)

    cohort, logits, traces = predict_dataset(checkpoint.encoder, checkpoint.library, checkpoint.cfg, dataset)
    ci = c_index(cohort, c_index_mode)
    high, low = median_risk_split(cohort)
    groups = np.where(np.isin(cohort.sample_ids, high.sample_ids), "high", "low")
    _write_table(predictions_frame(dataset, cohort, logits, traces, groups), run.output("predictions.tsv"))

    risk_rows, curve_frames, curves = [], [], {}
    for name, group in (("high", high), ("low", low)):
        if len(group) == 0:
            continue
        curves[name] = km_curve(group)
        curve_frames.append(curves[name].to_frame(name))
        risk_rows.append({"group": name, "events": int(group.events.sum()),
                          "median_survival": median_survival(curves[name]), **risk_summary(group)})
    _write_table(pd.concat(curve_frames, ignore_index=True), run.output("km_curves.tsv"))
    _write_table(pd.DataFrame(risk_rows), run.output("risk_summary.tsv"))

    if len(high) and len(low):
        chi2, p = logrank_test(high, low)
    else:
        logger.warning("median split produced an empty group; log-rank test skipped")
        chi2, p = 0.0, 1.0
    summary = {
        "samples": len(cohort),
        "events": int(cohort.events.sum()),
        "c_index_mode": c_index_mode,
        "c_index": float(ci),
        "median_risk": float(np.median(cohort.risks)),
        "logrank_chi2": float(chi2),
        "logrank_p": float(p),
    }
    run.output("report.md").write_text(
        _evaluation_report(checkpoint_path, dataset_path, summary, risk_rows))
    logger.info("📈 C-index %.4f, log-rank p=%.4g (high %d / low %d)", ci, p, len(high), len(low))
    run.finish(**summary)
    return summary


# ---------------------------------------------------------------------------
# cmd_explain / cmd_export
# ---------------------------------------------------------------------------

def cmd_explain(checkpoint_path, sample_path, out_dir, top_f=None):
    """One explanation trace per sample as line-delimited JSON"""
    checkpoint = load_checkpoint(checkpoint_path)
    cfg = checkpoint.cfg
    if top_f is not None:
        if top_f < 1:
            raise ConfigError("--top-f must be at least 1")
        cfg = cfg.with_overrides(top_f_sources=int(top_f))
    dataset = _load_eval_dataset(checkpoint, sample_path)
    run = _Run("explain", out_dir, emit_config(cfg), {"checkpoint": checkpoint_path, "samples": sample_path},
               cfg.seed)
    _, _, traces = predict_dataset(checkpoint.encoder, checkpoint.library, cfg, dataset)
    write_jsonl([t.to_record() for t in traces], run.output("explanations.jsonl"))
    logger.info("🔍 Explained %d samples", len(traces))
    return run.finish(samples=len(traces), top_f_sources=cfg.top_f_sources)


def cmd_export(checkpoint_path, out_dir):
    """Prototype coordinate table: id, class, kind, provenance summary, vector"""
    checkpoint = load_checkpoint(checkpoint_path)
    lib = checkpoint.library
    run = _Run("export", out_dir, emit_config(checkpoint.cfg), {"checkpoint": checkpoint_path},
               checkpoint.cfg.seed)
    frame = library_to_frame(lib)
    _write_table(frame, run.output("prototypes.tsv"))
    logger.info("📦 Exported %d prototypes from library v%d", len(frame), lib.version)
    return run.finish(prototypes=len(frame), library_version=lib.version, feature_dim=lib.feature_dim,
                      normalization=lib.normalization, similarity=lib.similarity, m=lib.m)


# ---------------------------------------------------------------------------
# Error handling
# ---------------------------------------------------------------------------

def run_guarded(fn, *args, **kwargs):
    """Run a command, logging at most one error record; returns the exit code"""
    try:
        fn(*args, **kwargs)
    except NumericError as exc:
        dump = f"\nstate dump: {exc.state_dump}" if exc.state_dump else ""
        logger.error("❌ %s%s", exc, dump)
        return exc.exit_code
    except ProtoSurvError as exc:
        logger.error("❌ %s", exc)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        logger.error("❌ %s", exc)
        return DataError.exit_code
    except Exception:
        logger.exception("❌ unexpected failure")
        return 1
    return 0
