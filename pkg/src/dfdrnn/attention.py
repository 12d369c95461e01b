"""Graph-masked multi-head self-attention and the attention+FC block.

`sam` aggregates neighbor features with per-head scaled dot-product
weights; `samf` follows it with separate fully connected layers for the
drug rows and the disease rows.  `gcn_aggregate` is the mean-aggregation
replacement used by the GCN ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import (
    Tensor,
    add_bias_row,
    constant,
    leaky_relu,
    matmul,
    neighbor_attention,
    slice_rows,
    stack_rows,
)
from .graphs import HeteroAdjacency

DEFAULT_SLOPE = 0.01


@dataclass
class SamParams:
    """Trainable tensors of one attention+FC block.

    w_q/w_k/w_v are the shared k-by-k projections; w_r/b_r and w_d/b_d are
    the FC layers applied to the drug and disease rows respectively.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_r: Tensor
    w_d: Tensor
    b_r: Tensor  # 1 x k
    b_d: Tensor  # 1 x k
    heads: int
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        k = self.w_q.value.shape[1]
        if k % self.heads:
            raise ValueError(f"embedding dim {k} not divisible by {self.heads} heads")

    def named_tensors(self):
        return [
            ("w_q", self.w_q),
            ("w_k", self.w_k),
            ("w_v", self.w_v),
            ("w_r", self.w_r),
            ("w_d", self.w_d),
            ("b_r", self.b_r),
            ("b_d", self.b_d),
        ]


@dataclass
class GcnParams:
    """Trainable tensors of one GCN aggregation block (ablation)."""

    weight: Tensor
    bias: Tensor  # 1 x k
    slope: float = DEFAULT_SLOPE

    def named_tensors(self):
        return [("weight", self.weight), ("bias", self.bias)]


def sam(adj: HeteroAdjacency, h_in: Tensor, params: SamParams) -> Tensor:
    """Multi-head attention over graph neighborhoods.

    Per head, node i's output is the softmax-weighted sum of its neighbors'
    value projections, with logits scaled by 1/sqrt(head_dim); heads are
    concatenated.  Nodes without neighbors produce zero rows.
    """
    q = matmul(h_in, params.w_q)
    k = matmul(h_in, params.w_k)
    v = matmul(h_in, params.w_v)
    return neighbor_attention(q, k, v, adj.csr(), params.heads)


def samf(adj: HeteroAdjacency, h_in: Tensor, params: SamParams) -> Tensor:
    """Attention followed by per-domain fully connected layers."""
    agg = sam(adj, h_in, params)
    n, total = adj.n, adj.total
    drugs = leaky_relu(
        add_bias_row(matmul(slice_rows(agg, 0, n), params.w_r), params.b_r),
        params.slope,
    )
    diseases = leaky_relu(
        add_bias_row(matmul(slice_rows(agg, n, total), params.w_d), params.b_d),
        params.slope,
    )
    return stack_rows(drugs, diseases)


def gcn_aggregate(adj: HeteroAdjacency, h_in: Tensor, weight: Tensor, bias: Tensor,
                  slope: float = DEFAULT_SLOPE) -> Tensor:
    """Symmetric-normalized neighborhood mean, then a shared FC layer."""
    norm = constant(adj.normalized_dense())
    return leaky_relu(add_bias_row(matmul(matmul(norm, h_in), weight), bias), slope)
