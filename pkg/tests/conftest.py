# tests/conftest.py

import numpy as np
import pytest

from protosurv.core import EngineConfig
from protosurv.data import SynthSpec, generate_synthetic
from protosurv.library import ClassFeatureSet, init_library
from protosurv.similarity import l2_normalize_rows


def make_class_sets(rng, num_classes, per_class, dim, spread=0.3):
    """Normalized features clustered around one random direction per class"""
    sets = []
    for c in range(num_classes):
        direction = rng.normal(size=dim)
        vectors = l2_normalize_rows(direction + spread * rng.normal(size=(per_class, dim)))
        ids = tuple(f"c{c}s{i:03d}" for i in range(per_class))
        sets.append(ClassFeatureSet(c, ids, vectors))
    return sets


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return EngineConfig(feature_dim=8, num_classes=3, k_time=3, k_proto=6, m_wander=2, top_f_sources=3)


@pytest.fixture
def class_sets(rng, small_cfg):
    return make_class_sets(rng, small_cfg.num_classes, 20, small_cfg.feature_dim)


@pytest.fixture
def small_library(class_sets, small_cfg):
    return init_library(class_sets, small_cfg)


@pytest.fixture
def four_class_library(rng):
    cfg = EngineConfig(feature_dim=16, num_classes=4, k_time=4, k_proto=10, m_wander=3)
    return init_library(make_class_sets(rng, 4, 30, 16), cfg), cfg


@pytest.fixture(scope="session")
def tiny_spec():
    return SynthSpec(seed=7, samples_per_class=40, num_classes=4, modality_dims=(6, 4), separation=5.0,
                     censoring_rate=0.2)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    return generate_synthetic(tiny_spec)


@pytest.fixture
def tiny_cfg():
    return EngineConfig(feature_dim=6, num_classes=4, k_time=4, k_proto=8, m_wander=2, epochs=3,
                        batch_size=16, learning_rate=0.05, seed=11)
