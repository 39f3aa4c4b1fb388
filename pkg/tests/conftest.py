"""Shared fixtures: a small synthetic dataset and a pretrained teacher.

Session-scoped so the expensive pieces (view generation, teacher
pretraining) run once per pytest invocation.
"""

import numpy as np
import pytest

from mvdistill.data import SyntheticDatasetSpec, build_view_arrays, generate_synthetic_dataset
from mvdistill.models import MlpNet
from mvdistill.training import TrainConfig, pretrain_teacher
from mvdistill.views import ViewGenConfig


@pytest.fixture(scope="session")
def small_data():
    """160 train / 40 test samples over the default 4 classes."""
    spec = SyntheticDatasetSpec(samples_per_class=50, seed=0)
    train, test, names = generate_synthetic_dataset(spec)
    cfg = ViewGenConfig()
    return build_view_arrays(train, cfg), build_view_arrays(test, cfg), names


@pytest.fixture(scope="session")
def default_data():
    """The full default spec: 640 train / 160 test samples."""
    spec = SyntheticDatasetSpec(seed=0)
    train, test, names = generate_synthetic_dataset(spec)
    cfg = ViewGenConfig()
    return build_view_arrays(train, cfg), build_view_arrays(test, cfg), names


@pytest.fixture(scope="session")
def default_teacher(default_data):
    train_views, _, _ = default_data
    teacher = MlpNet(train_views.views["rgb"].shape[1], [256, 128], 4, seed=0)
    history = pretrain_teacher(teacher, train_views, TrainConfig(seed=0))
    return teacher, history


@pytest.fixture(scope="session")
def small_teacher(small_data):
    train_views, _, _ = small_data
    teacher = MlpNet(train_views.views["rgb"].shape[1], [256, 128], 4, seed=0)
    history = pretrain_teacher(teacher, train_views, TrainConfig(seed=0))
    return teacher, history
