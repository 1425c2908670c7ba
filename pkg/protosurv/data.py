# protosurv/data.py
"""Datasets: survival-time binning, the synthetic multimodal generator, and the
line-delimited dataset file format.

Dataset file grammar (UTF-8 text, one record per line):

    #protosurv-dataset v1
    #blocks <dim_0> <dim_1> ...
    #edges <e_0> ... <e_K>                 (optional, K_time + 1 reals)
    <sample_id>\t<event_time>\t<censored 0|1>\t<time_bin|->\t<block_0>\t<block_1>...

Blocks are space-separated reals. Blank lines are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .core import ConfigError, DataError, DatasetParseError, FeatureRecord
from .serialization import format_real, format_vector

logger = logging.getLogger(__name__)

DATASET_MAGIC = "#protosurv-dataset v1"
EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True, eq=False)
class Dataset:
    records: tuple
    modality_dims: tuple
    bin_edges: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "modality_dims", tuple(int(d) for d in self.modality_dims))
        if self.bin_edges is not None:
            object.__setattr__(self, "bin_edges", np.asarray(self.bin_edges, dtype=np.float64))

    def __len__(self):
        return len(self.records)

    @property
    def input_dim(self):
        return sum(self.modality_dims)

    @property
    def is_binned(self):
        return self.bin_edges is not None and all(r.time_bin is not None for r in self.records)

    def sample_ids(self):
        return [r.sample_id for r in self.records]

    def inputs(self):
        """Concatenated modality blocks, shape (n, D_in)"""
        if not self.records:
            return np.zeros((0, self.input_dim))
        return np.stack([r.concatenated() for r in self.records])

    def times(self):
        return np.array([r.event_time for r in self.records], dtype=np.float64)

    def censored(self):
        return np.array([r.censored for r in self.records], dtype=int)

    def time_bins(self):
        if not self.is_binned:
            raise DataError("dataset has not been binned")
        return np.array([r.time_bin for r in self.records], dtype=int)

    def subset(self, indices):
        return Dataset([self.records[i] for i in indices], self.modality_dims, self.bin_edges)


def bin_edges_from_times(times, censored, k_time):
    """Edges at the uncensored-time quantiles, outer edges expanded to 0 and +inf"""
    times = np.asarray(times, dtype=np.float64)
    observed = times[np.asarray(censored) == 0]
    if k_time < 1:
        raise DataError("k_time must be at least 1")
    if np.unique(observed).size < k_time:
        raise DataError(f"binning into {k_time} bins needs at least {k_time} distinct uncensored "
                        f"event times, found {np.unique(observed).size}")
    interior = np.quantile(observed, np.arange(1, k_time) / k_time) if k_time > 1 else np.zeros(0)
    return np.concatenate([[0.0], interior, [np.inf]])


def assign_bins(times, edges):
    """Bin index per time; a time equal to an interior edge goes to the upper bin"""
    return np.searchsorted(np.asarray(edges)[1:-1], np.asarray(times, dtype=np.float64), side="right")


def apply_bins(dataset, edges):
    bins = assign_bins(dataset.times(), edges)
    records = [replace(r, time_bin=int(b)) for r, b in zip(dataset.records, bins)]
    return Dataset(records, dataset.modality_dims, edges)


def bin_times(records, k_time):
    """Returns (bin_edges, records with time_bin set)"""
    times = np.array([r.event_time for r in records], dtype=np.float64)
    censored = np.array([r.censored for r in records], dtype=int)
    edges = bin_edges_from_times(times, censored, k_time)
    bins = assign_bins(times, edges)
    return edges, [replace(r, time_bin=int(b)) for r, b in zip(records, bins)]


def bin_dataset(dataset, k_time):
    edges, records = bin_times(dataset.records, k_time)
    return Dataset(records, dataset.modality_dims, edges)


def split_dataset(dataset, train_fraction=0.8, seed=42):
    """Seeded shuffle, then the first train_fraction of samples go to training"""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_train = int(len(dataset) * train_fraction)
    return dataset.subset(sorted(order[:n_train])), dataset.subset(sorted(order[n_train:]))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    seed: int = 2026
    samples_per_class: int = 200
    num_classes: int = 4
    modality_dims: tuple = (32, 16)
    separation: float = 5.0
    censoring_rate: float = 0.3
    # Weibull scale (months) per class; lower class index => longer survival
    hazard_scales: tuple = (96.0, 48.0, 24.0, 12.0)
    hazard_shape: float = 4.0
    prognostic_drift: float = 0.1
    noise_scale: float = 1.0
    id_prefix: str = "s"

    def validate(self):
        problems = []
        if self.samples_per_class < 1:
            problems.append("samples_per_class must be positive")
        if self.num_classes < 1:
            problems.append("num_classes must be positive")
        if not self.modality_dims or any(int(d) < 1 for d in self.modality_dims):
            problems.append("modality_dims must be positive integers")
        if self.separation < 0:
            problems.append("separation must be >= 0")
        if not 0 <= self.censoring_rate < 1:
            problems.append("censoring_rate must lie in [0, 1)")
        if len(self.hazard_scales) != self.num_classes:
            problems.append(f"hazard_scales needs one entry per class ({self.num_classes})")
        elif any(s <= 0 for s in self.hazard_scales):
            problems.append("hazard_scales must be positive")
        if self.hazard_shape <= 0 or self.noise_scale <= 0:
            problems.append("hazard_shape and noise_scale must be positive")
        if problems:
            raise ConfigError("invalid synthetic spec: " + "; ".join(problems))
        return self


def load_synth_spec(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"synthetic spec not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: synthetic spec must be a mapping")
    data = data.get("synthetic", data)
    known = set(SynthSpec.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown synthetic spec keys: {', '.join(unknown)}")
    for key in ("modality_dims", "hazard_scales"):
        if key in data:
            data[key] = tuple(data[key])
    return SynthSpec(**data).validate()


def generate_synthetic(spec):
    """Class-conditional multimodal features with Weibull survival and right censoring.

    Pure function of the spec: the generator is seeded from spec.seed alone.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C = spec.num_classes

    # classes are stages along one random axis per block, adjacent stages
    # `separation` apart and centred on the origin
    axes = []
    for dim in spec.modality_dims:
        direction = rng.normal(size=dim)
        axes.append(direction / np.linalg.norm(direction))
    offsets = spec.separation * (np.arange(C) - (C - 1) / 2.0)
    means = [[offset * axis for axis in axes] for offset in offsets]

    # within-class drift points toward the longer-survival neighbour (class c - 1)
    drift_dirs = []
    for c in range(C):
        if C == 1:
            drift_dirs.append([np.zeros(d) for d in spec.modality_dims])
            continue
        target, sign = (c - 1, 1.0) if c > 0 else (1, -1.0)
        dirs = []
        for b in range(len(spec.modality_dims)):
            delta = means[target][b] - means[c][b]
            norm = np.linalg.norm(delta)
            dirs.append(sign * delta / norm if norm > 0 else np.zeros_like(delta))
        drift_dirs.append(dirs)

    records = []
    log_e_std = np.pi / np.sqrt(6.0)
    for c in range(C):
        for _ in range(spec.samples_per_class):
            e = rng.exponential()
            latent_time = spec.hazard_scales[c] * e ** (1.0 / spec.hazard_shape)
            # standardized log(Exp(1)) so the drift is unit-free
            z = (np.log(e) + EULER_GAMMA) / log_e_std
            blocks = [
                means[c][b] + spec.noise_scale * rng.normal(size=dim)
                + spec.prognostic_drift * spec.separation * z * drift_dirs[c][b]
                for b, dim in enumerate(spec.modality_dims)
            ]
            censored = int(rng.random() < spec.censoring_rate)
            # censoring time uniform on (0, latent event time)
            time = latent_time * rng.random() if censored else latent_time
            sample_id = f"{spec.id_prefix}{len(records):05d}"
            records.append(FeatureRecord(sample_id, tuple(blocks), float(time), censored))
    return Dataset(records, spec.modality_dims)


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

def dumps_dataset(dataset):
    lines = [DATASET_MAGIC, "#blocks " + " ".join(str(d) for d in dataset.modality_dims)]
    if dataset.bin_edges is not None:
        lines.append("#edges " + format_vector(dataset.bin_edges))
    for r in dataset.records:
        fields = [r.sample_id, format_real(r.event_time), str(int(r.censored)),
                  "-" if r.time_bin is None else str(r.time_bin)]
        fields += [format_vector(b) for b in r.modality_blocks]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def write_dataset(dataset, path):
    Path(path).write_text(dumps_dataset(dataset))


def _check_bins(records, record_lines, edges):
    """Diagnostics for stored time_bins that disagree with the #edges header"""
    if len(edges) < 2 or np.any(np.diff(edges) < 0):
        return [(3, "#edges must hold at least two non-decreasing values")]
    k = len(edges) - 1
    expected = assign_bins([r.event_time for r in records], edges)
    diagnostics = []
    for r, lineno, want in zip(records, record_lines, expected):
        if r.time_bin is None:
            continue
        if not 0 <= r.time_bin < k:
            diagnostics.append((lineno, f"time_bin {r.time_bin} outside [0, {k})"))
        elif r.time_bin != want:
            diagnostics.append((lineno, f"time_bin {r.time_bin} disagrees with #edges: event_time "
                                        f"{format_real(r.event_time)} falls in bin {int(want)}"))
    return diagnostics


def loads_dataset(text, source="<string>", schema=None):
    """Parse dataset text; schema, when given, is the expected tuple of block dims"""
    lines = text.splitlines()
    diagnostics = []
    if not lines or lines[0].strip() != DATASET_MAGIC:
        raise DatasetParseError(source, [(1, f"expected header {DATASET_MAGIC!r}")])

    dims, edges = None, None
    records, record_lines = [], []
    seen_ids = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            try:
                if key == "blocks":
                    dims = tuple(int(tok) for tok in value.split())
                elif key == "edges":
                    edges = np.array([float(tok) for tok in value.split()])
                else:
                    diagnostics.append((lineno, f"unknown header #{key}"))
            except ValueError as exc:
                diagnostics.append((lineno, f"bad #{key} header: {exc}"))
            continue
        if dims is None:
            diagnostics.append((lineno, "record before #blocks header"))
            break
        parts = line.split("\t")
        if len(parts) != 4 + len(dims):
            diagnostics.append((lineno, f"expected {4 + len(dims)} tab-separated fields, got {len(parts)}"))
            continue
        sample_id, time_text, flag_text, bin_text = parts[:4]
        try:
            event_time = float(time_text)
        except ValueError:
            diagnostics.append((lineno, f"event_time {time_text!r} is not a number"))
            continue
        if not np.isfinite(event_time) or event_time < 0:
            diagnostics.append((lineno, f"negative or non-finite event_time {time_text}"))
            continue
        if flag_text not in ("0", "1"):
            diagnostics.append((lineno, f"unknown censoring flag {flag_text!r}"))
            continue
        if sample_id in seen_ids:
            diagnostics.append((lineno, f"duplicate sample_id {sample_id!r}"))
            continue
        try:
            time_bin = None if bin_text == "-" else int(bin_text)
            blocks = [np.array([float(tok) for tok in p.split()]) for p in parts[4:]]
        except ValueError as exc:
            diagnostics.append((lineno, f"unparseable value: {exc}"))
            continue
        bad = [(b, len(v), d) for b, (v, d) in enumerate(zip(blocks, dims)) if len(v) != d]
        if bad:
            b, got, want = bad[0]
            diagnostics.append((lineno, f"block {b} has dimension {got}, header says {want}"))
            continue
        if any(not np.all(np.isfinite(v)) for v in blocks):
            diagnostics.append((lineno, "non-finite feature value"))
            continue
        seen_ids.add(sample_id)
        records.append(FeatureRecord(sample_id, tuple(blocks), event_time, int(flag_text), time_bin))
        record_lines.append(lineno)

    if dims is None and not diagnostics:
        diagnostics.append((1, "missing #blocks header"))
    if schema is not None and dims is not None and tuple(schema) != dims:
        diagnostics.append((2, f"modality dims {dims} do not match expected {tuple(schema)}"))
    if edges is not None:
        diagnostics.extend(_check_bins(records, record_lines, edges))
    if diagnostics:
        raise DatasetParseError(source, diagnostics)
    return Dataset(records, dims, edges)


def load_dataset(path, schema=None):
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.tsv"
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    return loads_dataset(path.read_text(), str(path), schema)
