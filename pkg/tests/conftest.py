import numpy as np
import pytest

from cprec.data import dataset_from_pairs
from cprec.model import EmbeddingModel


def random_dataset(rng, n_users=8, n_items=8, density=0.35):
    pairs = [(u, i) for u in range(n_users) for i in range(n_items) if rng.random() < density]
    if not pairs:
        pairs = [(0, 0)]
    return dataset_from_pairs(pairs, n_users, n_items)


def float64_model(rng, n_users, n_items, d=4, scale=1.0):
    return EmbeddingModel(rng.normal(0, scale, (n_users, d)), rng.normal(0, scale, (n_items, d)))


@pytest.fixture
def toy_ds():
    return random_dataset(np.random.default_rng(7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
