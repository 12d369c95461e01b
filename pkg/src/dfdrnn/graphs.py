"""Graph construction: top-t neighbor binarization, the two heterogeneous
adjacencies (within-domain similarity edges and cross-domain association
edges), initial dual features, and training-time edge dropout.

Node indexing is drugs first (0..n-1) then diseases (n..n+m-1) everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .kernels import CsrGraph

SIMILARITY = "similarity"
ASSOCIATION = "association"


@dataclass(frozen=True)
class NeighborGraph:
    """Per-node neighbor lists from top-t binarization of a similarity matrix."""

    size: int
    neighbors: tuple[np.ndarray, ...]  # sorted int64 index arrays


class HeteroAdjacency:
    """Joint drug+disease adjacency, one of the two kinds.

    ``similarity`` graphs hold only within-domain edges (and always include
    self-loops from the top-t rule); ``association`` graphs hold only
    drug-disease edges and are symmetric.
    """

    __slots__ = ("n", "m", "kind", "neighbors", "_csr", "_norm_dense")

    def __init__(self, n, m, kind, neighbors):
        if kind not in (SIMILARITY, ASSOCIATION):
            raise ValueError(f"unknown adjacency kind {kind!r}")
        if len(neighbors) != n + m:
            raise ValueError(f"{len(neighbors)} neighbor lists for {n + m} nodes")
        self.n = n
        self.m = m
        self.kind = kind
        self.neighbors = tuple(np.asarray(lst, dtype=np.int64) for lst in neighbors)
        self._csr = None
        self._norm_dense = None

    @property
    def total(self):
        return self.n + self.m

    def n_edges(self):
        return int(sum(len(lst) for lst in self.neighbors))

    def csr(self) -> CsrGraph:
        if self._csr is None:
            indptr = np.zeros(self.total + 1, dtype=np.int64)
            indptr[1:] = np.cumsum([len(lst) for lst in self.neighbors])
            indices = (
                np.concatenate(self.neighbors)
                if indptr[-1] > 0
                else np.empty(0, dtype=np.int64)
            )
            self._csr = CsrGraph(indptr, indices)
        return self._csr

    def normalized_dense(self) -> np.ndarray:
        """Symmetric-normalized adjacency (1/sqrt(d_i d_j) on edges)."""
        if self._norm_dense is None:
            total = self.total
            deg = np.array([len(lst) for lst in self.neighbors], dtype=np.float64)
            inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1.0)), 0.0)
            dense = np.zeros((total, total))
            for i, lst in enumerate(self.neighbors):
                if len(lst):
                    dense[i, lst] = inv_sqrt[i] * inv_sqrt[lst]
            self._norm_dense = dense
        return self._norm_dense

    def check(self) -> None:
        """Verify the kind-specific structural invariants (used in tests)."""
        for i, lst in enumerate(self.neighbors):
            if len(lst) and (lst.min() < 0 or lst.max() >= self.total):
                raise ValueError(f"node {i} has out-of-range neighbors")
        if self.kind == SIMILARITY:
            for i, lst in enumerate(self.neighbors):
                same_side = (lst < self.n) if i < self.n else (lst >= self.n)
                if not same_side.all():
                    raise ValueError(f"similarity graph has cross-domain edge at node {i}")
        else:
            sets = [set(lst.tolist()) for lst in self.neighbors]
            for i, lst in enumerate(self.neighbors):
                cross = (lst >= self.n) if i < self.n else (lst < self.n)
                if not cross.all():
                    raise ValueError(f"association graph has within-domain edge at node {i}")
                for j in lst:
                    if i not in sets[j]:
                        raise ValueError(f"association edge ({i}, {j}) is not symmetric")


@dataclass(frozen=True)
class InitialFeatures:
    """Initial dual features: block-diagonal similarities and the
    anti-block association matrix, both (n+m)x(n+m)."""

    h_init_s: np.ndarray
    h_init_a: np.ndarray
    n: int
    m: int


def topt_binarize(similarity: np.ndarray, t: int) -> NeighborGraph:
    """Keep each node's t most similar other nodes plus itself.

    Ties break toward the smaller index.  If t >= size, every node becomes
    a neighbor (with a warning).
    """
    values = np.asarray(similarity, dtype=np.float64)
    size = values.shape[0]
    if t < 1:
        raise ValueError(f"top-t requires t >= 1, got {t}")
    if t > size - 1:
        warnings.warn(
            f"top-t of {t} saturates a {size}-node similarity matrix; keeping all neighbors",
            stacklevel=2,
        )
        full = np.arange(size, dtype=np.int64)
        return NeighborGraph(size, tuple(full.copy() for _ in range(size)))
    neighbors = []
    for i in range(size):
        row = values[i].copy()
        row[i] = -np.inf  # self excluded from the ranking, re-added below
        order = np.argsort(-row, kind="stable")[:t]
        lst = np.sort(np.append(order, i)).astype(np.int64)
        neighbors.append(lst)
    return NeighborGraph(size, tuple(neighbors))


def build_hetero_similarity(drug_graph: NeighborGraph, disease_graph: NeighborGraph) -> HeteroAdjacency:
    """Block-diagonal union of the two within-domain neighbor graphs."""
    n, m = drug_graph.size, disease_graph.size
    neighbors = [lst.copy() for lst in drug_graph.neighbors]
    neighbors.extend(lst + n for lst in disease_graph.neighbors)
    return HeteroAdjacency(n, m, SIMILARITY, neighbors)


def build_hetero_association(assoc: np.ndarray, mask_out=None) -> HeteroAdjacency:
    """Bipartite graph of known associations, minus any held-out pairs."""
    a = np.asarray(assoc, dtype=np.float64)
    n, m = a.shape
    if mask_out is not None and len(mask_out):
        a = a.copy()
        idx = np.asarray(list(mask_out), dtype=np.int64)
        if (
            idx.min() < 0
            or idx[:, 0].max() >= n
            or idx[:, 1].max() >= m
        ):
            raise ValueError("mask_out pair out of range")
        a[idx[:, 0], idx[:, 1]] = 0.0
    neighbors = [np.flatnonzero(a[i]).astype(np.int64) + n for i in range(n)]
    neighbors.extend(np.flatnonzero(a[:, j]).astype(np.int64) for j in range(m))
    return HeteroAdjacency(n, m, ASSOCIATION, neighbors)


def masked_association(dataset: Dataset, mask_out=None) -> np.ndarray:
    """Association values with held-out pairs zeroed."""
    a = dataset.assoc.values.astype(np.float64)
    if mask_out is not None and len(mask_out):
        a = a.copy()
        idx = np.asarray(list(mask_out), dtype=np.int64)
        a[idx[:, 0], idx[:, 1]] = 0.0
    return a


def initial_features(dataset: Dataset, mask_out=None) -> InitialFeatures:
    """Assemble the two initial feature matrices from similarities and the
    (possibly masked) association matrix."""
    n, m = dataset.n_drugs, dataset.n_diseases
    total = n + m
    h_s = np.zeros((total, total))
    h_s[:n, :n] = dataset.drug_sim.values
    h_s[n:, n:] = dataset.disease_sim.values
    a = masked_association(dataset, mask_out)
    h_a = np.zeros((total, total))
    h_a[:n, n:] = a
    h_a[n:, :n] = a.T
    return InitialFeatures(h_init_s=h_s, h_init_a=h_a, n=n, m=m)


def edge_dropout(adj: HeteroAdjacency, rate: float, rng: np.random.Generator) -> HeteroAdjacency:
    """Randomly drop edges for regularization; resampled every epoch.

    Association edges drop as undirected pairs (both directions together);
    similarity entries drop independently per direction, except self-loops,
    which always survive.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"edge dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return adj
    if adj.kind == SIMILARITY:
        neighbors = []
        for i, lst in enumerate(adj.neighbors):
            keep = rng.random(len(lst)) >= rate
            keep |= lst == i
            neighbors.append(lst[keep])
        return HeteroAdjacency(adj.n, adj.m, SIMILARITY, neighbors)
    # association: decide once per drug->disease edge, mirror to both lists
    n = adj.n
    kept_per_drug = []
    kept_sets: list[set[int]] = [set() for _ in range(adj.m)]
    for i in range(n):
        lst = adj.neighbors[i]
        keep = rng.random(len(lst)) >= rate
        kept = lst[keep]
        kept_per_drug.append(kept)
        for j in kept:
            kept_sets[int(j) - n].add(i)
    neighbors = kept_per_drug
    neighbors.extend(
        np.array(sorted(kept_sets[j]), dtype=np.int64) for j in range(adj.m)
    )
    return HeteroAdjacency(adj.n, adj.m, ASSOCIATION, neighbors)
