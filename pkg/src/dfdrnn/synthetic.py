"""Synthetic datasets for tests, benchmarks, and the gradient checker.

`planted_dataset` builds a small block-structured association matrix whose
blocks are recoverable from the similarity matrices, with a controllable
amount of label noise; it is the standard desk-scale workload.
"""

from __future__ import annotations

import numpy as np

from .data import AssociationMatrix, Dataset, EntityIds, SimilarityMatrix


def _block_similarity(groups: np.ndarray, rng: np.random.Generator,
                      within=(0.7, 0.95), across=(0.05, 0.3)) -> np.ndarray:
    size = groups.shape[0]
    same = groups[:, None] == groups[None, :]
    values = np.where(
        same,
        rng.uniform(*within, size=(size, size)),
        rng.uniform(*across, size=(size, size)),
    )
    values = np.triu(values, 1)
    values = values + values.T
    np.fill_diagonal(values, 1.0)
    return values


def planted_dataset(n_drugs: int = 20, n_diseases: int = 15, blocks: int = 3,
                    noise: float = 0.1, seed: int = 0, name: str = "planted") -> Dataset:
    """Block-structured dataset: drugs and diseases split into `blocks`
    groups, with same-group pairs associated.

    `noise` flips a fraction (relative to the planted positive count) of
    randomly chosen cells, so a few spurious positives and missing
    positives exist.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    drug_groups = np.arange(n_drugs) % blocks
    disease_groups = np.arange(n_diseases) % blocks
    assoc = (drug_groups[:, None] == disease_groups[None, :]).astype(np.float64)
    flips = int(round(noise * assoc.sum()))
    if flips:
        cells = rng.choice(n_drugs * n_diseases, size=flips, replace=False)
        assoc.flat[cells] = 1.0 - assoc.flat[cells]

    ids = EntityIds(
        tuple(f"DR{i:04d}" for i in range(n_drugs)),
        tuple(f"DI{j:04d}" for j in range(n_diseases)),
    )
    return Dataset(
        ids=ids,
        drug_sim=SimilarityMatrix(_block_similarity(drug_groups, rng), ids.drug_ids),
        disease_sim=SimilarityMatrix(_block_similarity(disease_groups, rng), ids.disease_ids),
        assoc=AssociationMatrix(assoc, ids),
        name=name,
    )


def toy_dataset(n_drugs: int = 6, n_diseases: int = 4, seed: int = 7,
                density: float = 0.3, name: str = "toy") -> Dataset:
    """Tiny random dataset for gradient checks; always has >= 1 association."""
    rng = np.random.default_rng(seed)

    def random_similarity(size):
        values = rng.uniform(0.05, 0.95, size=(size, size))
        values = (values + values.T) / 2.0
        np.fill_diagonal(values, 1.0)
        return values

    assoc = (rng.random((n_drugs, n_diseases)) < density).astype(np.float64)
    if assoc.sum() == 0:
        assoc[0, 0] = 1.0
    ids = EntityIds(
        tuple(f"DR{i:04d}" for i in range(n_drugs)),
        tuple(f"DI{j:04d}" for j in range(n_diseases)),
    )
    return Dataset(
        ids=ids,
        drug_sim=SimilarityMatrix(random_similarity(n_drugs), ids.drug_ids),
        disease_sim=SimilarityMatrix(random_similarity(n_diseases), ids.disease_ids),
        assoc=AssociationMatrix(assoc, ids),
        name=name,
    )
