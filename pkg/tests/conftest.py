"""Shared fixtures: small synthetic datasets and hand-built classifier stacks."""

from types import SimpleNamespace

import numpy as np
import pytest

from introspect.classifier import LinearClassifier
from introspect.featurizer import filter_bank_spec
from introspect.synthetic import SynthConfig, generate_synthetic
from introspect.trainkit import StackConfig, load_manifest, train_stack


@pytest.fixture(scope="session")
def filter_bank():
    return filter_bank_spec()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """2 classes x 12 images of 64 px; 6 train / 6 test per class."""
    root = tmp_path_factory.mktemp("small")
    cfg = SynthConfig(classes=2, images_per_class=12, image_side=64, seed=11,
                      patch_contrast=1.0)
    return generate_synthetic(root, cfg)


@pytest.fixture(scope="session")
def small_stack(small_dataset, filter_bank):
    cfg = StackConfig(iterations=3, input_side=64, epochs=30, seed=5)
    return train_stack(load_manifest(small_dataset), filter_bank, cfg)


def random_stack(k: int, n_classes: int, depth: int, seed: int = 0):
    """Object with random per-depth classifiers, enough for ``explore``."""
    rng = np.random.default_rng(seed)
    clfs = [LinearClassifier(rng.standard_normal((n_classes, k)), rng.standard_normal(n_classes))
            for _ in range(depth)]
    return SimpleNamespace(classifiers=clfs)


def random_image(side: int = 64, seed: int = 0, channels: int = 3):
    return np.random.default_rng(seed).random((side, side, channels))


# The acceptance suite: 2 classes, 128 px images, 16 px patch, 200 train / 200 test.
SUITE_SEED = 20240
SUITE = SynthConfig(classes=2, images_per_class=200, image_side=128, patch_side=16,
                    seed=SUITE_SEED, test_fraction=0.5)


@pytest.fixture(scope="session")
def suite_manifest(tmp_path_factory):
    return generate_synthetic(tmp_path_factory.mktemp("suite"), SUITE)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LOG: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
