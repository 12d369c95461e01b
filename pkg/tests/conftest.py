import numpy as np
import pytest

from dfdrnn.data import write_dataset
from dfdrnn.synthetic import planted_dataset, toy_dataset


@pytest.fixture(scope="session")
def planted():
    return planted_dataset(n_drugs=20, n_diseases=15, blocks=3, noise=0.1, seed=0)


@pytest.fixture(scope="session")
def toy():
    return toy_dataset(n_drugs=6, n_diseases=4, seed=7)


@pytest.fixture
def planted_manifest(planted, tmp_path):
    return write_dataset(planted, tmp_path / "planted")


def random_csr(n, rng, max_degree=5):
    """Random neighbor structure (possibly with empty rows) as a CsrGraph."""
    from dfdrnn.kernels import CsrGraph

    cap = min(max_degree, n)
    lists = [
        np.sort(rng.choice(n, size=rng.integers(0, cap + 1), replace=False))
        for _ in range(n)
    ]
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(lst) for lst in lists])
    indices = (
        np.concatenate(lists).astype(np.int64) if indptr[-1] else np.empty(0, dtype=np.int64)
    )
    return CsrGraph(indptr, indices)
