"""Pure-numpy implementation of the sparse neighbor-attention kernels.

Used when the compiled extension is unavailable (or forced off via
``DFDRNN_FORCE_NUMPY=1``).  Segment reductions run over CSR edge arrays in
edge order, so results are deterministic for a fixed graph.
"""

import math

import numpy as np


def segment_sum(values, indptr):
    """Sum `values` over CSR segments; empty segments produce zero rows."""
    n = indptr.shape[0] - 1
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    nonempty = np.diff(indptr) > 0
    if values.shape[0] == 0 or not nonempty.any():
        return out
    starts = indptr[:-1][nonempty]
    out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


def segment_max(values, indptr):
    """Per-segment maximum; empty segments yield 0 (callers mask them)."""
    n = indptr.shape[0] - 1
    out = np.zeros(n, dtype=values.dtype)
    nonempty = np.diff(indptr) > 0
    if values.shape[0] == 0 or not nonempty.any():
        return out
    starts = indptr[:-1][nonempty]
    out[nonempty] = np.maximum.reduceat(values, starts)
    return out


def attention_forward(q, k, v, graph, heads):
    """Multi-head scaled dot-product attention restricted to graph edges.

    Returns the aggregated features (same shape as `v`) and the per-edge
    attention weights, one column per head.  Rows with no neighbors come
    out as zeros.
    """
    n, dim = q.shape
    head_dim = dim // heads
    scale = 1.0 / math.sqrt(head_dim)
    indptr, indices, src = graph.indptr, graph.indices, graph.src
    out = np.zeros_like(q)
    beta = np.empty((indices.shape[0], heads))
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        logits = np.einsum("ij,ij->i", qh[src], kh[indices]) * scale
        rowmax = segment_max(logits, indptr)
        w = np.exp(logits - rowmax[src])
        denom = segment_sum(w, indptr)
        b = w / denom[src]
        beta[:, h] = b
        out[:, cols] = segment_sum(b[:, None] * vh[indices], indptr)
    return out, beta


def attention_backward(q, k, v, graph, heads, beta, grad_out):
    """Gradients of `attention_forward` w.r.t. q, k and v.

    Scatter-adds onto destination nodes go through a dst-sorted edge
    permutation so the accumulation order is fixed.
    """
    n, dim = q.shape
    head_dim = dim // heads
    scale = 1.0 / math.sqrt(head_dim)
    indptr, indices, src = graph.indptr, graph.indices, graph.src
    perm, dst_indptr = graph.dst_perm, graph.dst_indptr
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh, vh, gh = q[:, cols], k[:, cols], v[:, cols], grad_out[:, cols]
        b = beta[:, h]
        dv[:, cols] = segment_sum((b[:, None] * gh[src])[perm], dst_indptr)
        dbeta = np.einsum("ij,ij->i", gh[src], vh[indices])
        rowdot = segment_sum(b * dbeta, indptr)
        dlogits = b * (dbeta - rowdot[src]) * scale
        dq[:, cols] = segment_sum(dlogits[:, None] * kh[indices], indptr)
        dk[:, cols] = segment_sum((dlogits[:, None] * qh[src])[perm], dst_indptr)
    return dq, dk, dv
