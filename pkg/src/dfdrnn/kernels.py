"""Backend selection for the attention kernels.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or ``DFDRNN_FORCE_NUMPY=1`` is set.  Both backends
implement the same contract and agree to floating-point roundoff (they may
differ in summation order, so equality is near-exact rather than bitwise).
"""

import os

import numpy as np

from . import _np_kernels

try:  # pragma: no cover - exercised indirectly
    from . import _attention_cy
except ImportError:  # pragma: no cover
    _attention_cy = None

if _attention_cy is not None and not os.environ.get("DFDRNN_FORCE_NUMPY"):
    BACKEND = "cython"
else:
    BACKEND = "numpy"


class CsrGraph:
    """Frozen CSR adjacency with lazily cached edge-index helpers."""

    __slots__ = ("indptr", "indices", "_src", "_dst_perm", "_dst_indptr")

    def __init__(self, indptr, indices):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        if self.indptr.ndim != 1 or self.indices.ndim != 1:
            raise ValueError("indptr and indices must be 1-D")
        if self.indptr[0] != 0 or self.indptr[-1] != self.indices.shape[0]:
            raise ValueError("inconsistent CSR structure")
        self._src = None
        self._dst_perm = None
        self._dst_indptr = None

    @property
    def n_nodes(self):
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self):
        return self.indices.shape[0]

    @property
    def src(self):
        """Source node of each edge, aligned with `indices`."""
        if self._src is None:
            self._src = np.repeat(
                np.arange(self.n_nodes, dtype=np.int64), np.diff(self.indptr)
            )
        return self._src

    @property
    def dst_perm(self):
        """Stable permutation sorting edges by destination node."""
        if self._dst_perm is None:
            self._dst_perm = np.argsort(self.indices, kind="stable")
        return self._dst_perm

    @property
    def dst_indptr(self):
        """CSR row pointer of the dst-sorted edge list."""
        if self._dst_indptr is None:
            counts = np.bincount(self.indices, minlength=self.n_nodes)
            indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._dst_indptr = indptr
        return self._dst_indptr


def attention_forward(q, k, v, graph, heads):
    if BACKEND == "cython":
        return _attention_cy.attention_forward(
            q, k, v, graph.indptr, graph.indices, heads
        )
    return _np_kernels.attention_forward(q, k, v, graph, heads)


def attention_backward(q, k, v, graph, heads, beta, grad_out):
    if BACKEND == "cython":
        return _attention_cy.attention_backward(
            q, k, v, graph.indptr, graph.indices, heads, beta, grad_out
        )
    return _np_kernels.attention_backward(q, k, v, graph, heads, beta, grad_out)
