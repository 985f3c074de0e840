import json
from pathlib import Path

import numpy as np
import pytest

from amcflow import ProviderDescriptor, TableProvider, train_ngram

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
TOY_CORPUS = DATA_DIR / "toy_corpus.txt"
DEMO_CORPUS = DATA_DIR / "demo_corpus.txt"
MC_DATASET = DATA_DIR / "mc_dataset.jsonl"
ABC_TABLE = DATA_DIR / "abc_table.json"


def random_transition(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random row-stochastic upper-triangular matrix (diagonal included)."""
    p = np.zeros((n, n))
    for i in range(n):
        w = rng.random(n - i) + 1e-3
        p[i, i:] = w / w.sum()
    return p


@pytest.fixture(scope="session")
def toy_provider():
    return train_ngram(TOY_CORPUS.read_text(encoding="utf-8"), order=3, alpha=0.01)


@pytest.fixture(scope="session")
def toy_descriptor():
    return ProviderDescriptor(
        "ngram", {"corpus": str(TOY_CORPUS), "order": 3, "alpha": 0.01}
    )


@pytest.fixture(scope="session")
def demo_provider():
    return train_ngram(DEMO_CORPUS.read_text(encoding="utf-8"), order=2, alpha=0.01)


@pytest.fixture()
def abc_provider():
    return TableProvider.from_json_dict(
        json.loads(ABC_TABLE.read_text(encoding="utf-8"))
    )
