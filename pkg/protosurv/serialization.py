# protosurv/serialization.py
"""Canonical text formats: one record per line, fields in fixed order, reals at
17 significant digits so files diff cleanly and round-trip losslessly."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Kind, LibraryError, PrototypeEntry, PrototypeLibrary, Source

LIBRARY_MAGIC = "#protosurv-library v1"
ENCODER_MAGIC = "#protosurv-encoder v1"
EDGES_MAGIC = "#protosurv-bin-edges v1"


def format_real(x):
    return format(float(x), ".17g")


def format_vector(v):
    return " ".join(format_real(x) for x in v)


def parse_vector(text):
    text = text.strip()
    return np.array([float(tok) for tok in text.split()], dtype=np.float64) if text else np.zeros(0)


def _format_sources(sources):
    return ";".join(f"{sid}={format_real(w)}" for sid, w in sources) or "-"


def _parse_sources(text):
    if text == "-":
        return ()
    out = []
    for item in text.split(";"):
        sid, _, w = item.rpartition("=")
        out.append(Source(sid, float(w)))
    return tuple(out)


def dumps_library(lib):
    lines = [
        LIBRARY_MAGIC,
        f"#version {lib.version}",
        f"#dims D={lib.feature_dim} C={lib.num_classes} K_proto={lib.k_proto} M_wander={lib.m_wander}",
        f"#normalization {lib.normalization}",
        f"#similarity {lib.similarity} m={format_real(lib.m)}",
        f"#config_hash {lib.config_hash or '-'}",
    ]
    for c in range(lib.num_classes):
        lines.append(f"center\t{c}\t{format_vector(lib.class_centers[c])}")
    for e in lib.entries():
        lines.append("\t".join([
            "proto", e.id, str(e.class_index), e.kind.value, str(e.slot), str(e.created_epoch),
            str(e.history_length), format_real(e.residual), _format_sources(e.sources),
            format_vector(e.vector),
        ]))
    return "\n".join(lines) + "\n"


def _header_value(header, key):
    if key not in header:
        raise LibraryError(f"library file is missing the #{key} header")
    return header[key]


def loads_library(text, source="<string>"):
    lines = text.splitlines()
    if not lines or lines[0].strip() != LIBRARY_MAGIC:
        raise LibraryError(f"{source}: not a protosurv library file")
    header = {}
    centers = {}
    typical, wandering = {}, {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            header[key] = value.strip()
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "center":
                centers[int(parts[1])] = parse_vector(parts[2])
            elif parts[0] == "proto":
                _, pid, c, kind, slot, created, history, residual, sources, vector = parts
                entry = PrototypeEntry(pid, int(c), Kind(kind), int(slot), parse_vector(vector),
                                       _parse_sources(sources), float(residual), int(created), int(history))
                bucket = typical if entry.kind is Kind.TYPICAL else wandering
                bucket.setdefault(entry.class_index, []).append(entry)
            else:
                raise ValueError(f"unknown record type {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            raise LibraryError(f"{source}:{lineno}: {exc}") from exc

    dims = dict(item.split("=") for item in _header_value(header, "dims").split())
    C = int(dims["C"])
    sim_parts = _header_value(header, "similarity").split()
    similarity = sim_parts[0]
    m = float(sim_parts[1].split("=")[1])
    config_hash_ = _header_value(header, "config_hash")
    if sorted(centers) != list(range(C)):
        raise LibraryError(f"{source}: expected {C} class centers")
    return PrototypeLibrary(
        int(_header_value(header, "version")),
        [sorted(typical.get(c, []), key=lambda e: e.slot) for c in range(C)],
        [sorted(wandering.get(c, []), key=lambda e: e.slot) for c in range(C)],
        np.stack([centers[c] for c in range(C)]),
        _header_value(header, "normalization"),
        similarity,
        m,
        "" if config_hash_ == "-" else config_hash_,
    )


def save_library(lib, path):
    Path(path).write_text(dumps_library(lib))


def load_library(path):
    path = Path(path)
    if not path.exists():
        raise LibraryError(f"library file not found: {path}")
    return loads_library(path.read_text(), str(path))


def save_arrays(path, magic, arrays):
    """Named float arrays as `name<TAB>shape<TAB>values` lines"""
    lines = [magic]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{format_vector(arr.ravel())}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_arrays(path, magic):
    path = Path(path)
    if not path.exists():
        raise LibraryError(f"file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != magic:
        raise LibraryError(f"{path}: expected header {magic!r}")
    arrays = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        name, shape, values = line.split("\t")
        dims = tuple(int(s) for s in shape.split("x")) if shape else ()
        arrays[name] = parse_vector(values).reshape(dims)
    return arrays


def save_bin_edges(edges, path):
    save_arrays(path, EDGES_MAGIC, {"edges": edges})


def load_bin_edges(path):
    return load_arrays(path, EDGES_MAGIC)["edges"]


def write_jsonl(records, path):
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
