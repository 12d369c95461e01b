"""Reverse-mode autodiff over dense 2-D float64 arrays.

A fixed primitive set, just large enough to express the model: matrix
products, row/column splicing, LeakyReLU/sigmoid/log, masked row softmax,
dropout, and a fused sparse neighbor-attention op backed by the compiled
kernels.  Values are numpy arrays; every tensor is 2-D (vectors are 1xK
rows) and float64 throughout, which keeps finite-difference checks sharp.

Graphs are plain object DAGs, so independent passes (one per fold) can run
concurrently without shared state.  `build_tape` linearizes a graph with
parents before children; `backward` walks it in reverse with a fixed
accumulation order, making gradients reproducible bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "build_tape",
    "backward",
    "finite_diff_check",
    "finite_diff_errors",
    "matmul",
    "add",
    "add_bias_row",
    "scale",
    "scalar_mul",
    "transpose",
    "leaky_relu",
    "sigmoid",
    "concat_cols",
    "slice_cols",
    "slice_rows",
    "stack_rows",
    "hadamard",
    "masked_row_softmax",
    "weighted_sum",
    "log",
    "neg",
    "sum_all",
    "clamp",
    "dropout",
    "neighbor_attention",
]


class Tensor:
    """A node in the computation graph holding a 2-D float64 value.

    Leaves are either constants or parameters (``requires_grad=True``);
    interior nodes carry a vjp closure mapping the output gradient to
    per-parent gradients.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "op", "_vjp")

    def __init__(self, value, *, requires_grad=False, parents=(), vjp=None, op="leaf"):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.op = op
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, op="param")


def _result(value, parents, vjp, op):
    """Wrap an op result; collapses to a constant if nothing needs grads."""
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=parents, vjp=vjp, op=op)
    return Tensor(value, op="const:" + op)


def build_tape(root: Tensor) -> list[Tensor]:
    """Topological order of the graph under `root`; parents precede children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse accumulation from a 1x1 loss node.

    Populates ``.grad`` on every reachable tensor that requires gradients
    and returns the map for the leaf parameters.  Accumulation follows the
    fixed tape order, so repeated calls on identical graphs produce
    bitwise-identical gradients.
    """
    if loss.value.shape != (1, 1):
        raise ValueError(f"loss must be 1x1, got {loss.value.shape}")
    tape = build_tape(loss)
    for node in tape:
        node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(tape):
        if node.grad is None or node._vjp is None:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                # copy: vjps may return views or aliased buffers
                parent.grad = np.array(g)
            else:
                parent.grad += g
    return {
        node: node.grad
        for node in tape
        if node.requires_grad and not node.parents and node.grad is not None
    }


# ---------------------------------------------------------------------------
# primitives


def _check_same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: inner dims {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        # skip the product for constant parents: with large constant blocks
        # (initial features, GCN adjacency) that half matters
        return (
            g @ bv.T if a.requires_grad else None,
            av.T @ g if b.requires_grad else None,
        )

    return _result(av @ bv, (a, b), vjp, "matmul")


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """Row-stochastic aggregation: each output row is a weighted sum of
    `values` rows.  Same algebra as matmul; kept as its own op because it
    is how attention outputs are assembled in the dense reference path."""
    return matmul(weights, values)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def vjp(g):
        return g, g

    return _result(a.value + b.value, (a, b), vjp, "add")


def add_bias_row(a: Tensor, bias: Tensor) -> Tensor:
    """Add a 1xK bias row to every row of `a`."""
    if bias.value.shape != (1, a.value.shape[1]):
        raise ValueError(
            f"add_bias_row: bias {bias.value.shape} does not match {a.value.shape}"
        )

    def vjp(g):
        return g, g.sum(axis=0, keepdims=True)

    return _result(a.value + bias.value, (a, bias), vjp, "add_bias_row")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (c * g,)

    return _result(c * a.value, (a,), vjp, "scale")


def scalar_mul(s: Tensor, a: Tensor) -> Tensor:
    """Multiply a matrix by a trainable 1x1 scalar."""
    if s.value.shape != (1, 1):
        raise ValueError(f"scalar_mul: scalar must be 1x1, got {s.value.shape}")
    sv, av = s.value, a.value

    def vjp(g):
        return np.array([[np.sum(g * av)]]), sv[0, 0] * g

    return _result(sv[0, 0] * av, (s, a), vjp, "scalar_mul")


def transpose(a: Tensor) -> Tensor:
    def vjp(g):
        return (g.T,)

    return _result(a.value.T.copy(), (a,), vjp, "transpose")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.value > 0.0

    def vjp(g):
        return (np.where(mask, g, slope * g),)

    return _result(np.where(mask, a.value, slope * a.value), (a,), vjp, "leaky_relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    z = np.exp(-np.abs(x))  # never overflows
    y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _result(y, (a,), vjp, "sigmoid")


def concat_cols(*parts: Tensor) -> Tensor:
    rows = parts[0].value.shape[0]
    if any(p.value.shape[0] != rows for p in parts):
        raise ValueError("concat_cols: row counts differ")
    widths = [p.value.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def vjp(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), parts, vjp, "concat_cols")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    cols = a.value.shape[1]
    if not (0 <= start <= stop <= cols):
        raise ValueError(f"slice_cols: [{start}, {stop}) out of range for {cols} columns")

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return _result(a.value[:, start:stop].copy(), (a,), vjp, "slice_cols")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    rows = a.value.shape[0]
    if not (0 <= start <= stop <= rows):
        raise ValueError(f"slice_rows: [{start}, {stop}) out of range for {rows} rows")

    def vjp(g):
        full = np.zeros_like(a.value)
        full[start:stop, :] = g
        return (full,)

    return _result(a.value[start:stop, :].copy(), (a,), vjp, "slice_rows")


def stack_rows(*parts: Tensor) -> Tensor:
    cols = parts[0].value.shape[1]
    if any(p.value.shape[1] != cols for p in parts):
        raise ValueError("stack_rows: column counts differ")
    heights = [p.value.shape[0] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(heights)])

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1], :] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=0), parts, vjp, "stack_rows")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    av, bv = a.value, b.value

    def vjp(g):
        return (
            g * bv if a.requires_grad else None,
            g * av if b.requires_grad else None,
        )

    return _result(av * bv, (a, b), vjp, "hadamard")


def masked_row_softmax(scores: Tensor, mask) -> Tensor:
    """Row-wise softmax over the allowed entries of a boolean mask.

    Masked entries are exactly 0 in the output; rows with no allowed entry
    come out as all-zero rows.  Row maxima are subtracted before
    exponentiation for stability.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.value.shape:
        raise ValueError(
            f"masked_row_softmax: mask {mask.shape} vs scores {scores.value.shape}"
        )
    any_allowed = mask.any(axis=1, keepdims=True)
    x = np.where(mask, scores.value, -np.inf)
    rowmax = np.where(any_allowed, np.max(x, axis=1, keepdims=True), 0.0)
    e = np.exp(x - rowmax)
    denom = e.sum(axis=1, keepdims=True)
    y = e / np.where(any_allowed, denom, 1.0)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _result(y, (scores,), vjp, "masked_row_softmax")


def log(a: Tensor) -> Tensor:
    x = a.value
    if np.any(x <= 0.0):
        raise ValueError("log: inputs must be positive (clamp first)")

    def vjp(g):
        return (g / x,)

    return _result(np.log(x), (a,), vjp, "log")


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return _result(-a.value, (a,), vjp, "neg")


def sum_all(a: Tensor) -> Tensor:
    shape = a.value.shape

    def vjp(g):
        return (np.full(shape, g[0, 0]),)

    return _result(np.array([[a.value.sum()]]), (a,), vjp, "sum_all")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero where the clip is active."""
    inside = (a.value > lo) & (a.value < hi)

    def vjp(g):
        return (np.where(inside, g, 0.0),)

    return _result(np.clip(a.value, lo, hi), (a,), vjp, "clamp")


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate {rate} outside [0, 1)")
    if rate == 0.0:
        return a
    keep = (rng.random(a.value.shape) >= rate) / (1.0 - rate)

    def vjp(g):
        return (g * keep,)

    return _result(a.value * keep, (a,), vjp, "dropout")


def neighbor_attention(q: Tensor, k: Tensor, v: Tensor, graph, heads: int) -> Tensor:
    """Fused multi-head attention over graph neighborhoods.

    Equivalent to splitting q/k/v into head blocks, taking the masked
    row softmax of the scaled score matrix restricted to graph edges, and
    re-concatenating the per-head weighted sums; nodes without neighbors
    yield zero rows.  Runs on the compiled kernel when available.
    """
    if not (q.value.shape == k.value.shape == v.value.shape):
        raise ValueError("neighbor_attention: q/k/v shapes differ")
    n, dim = q.value.shape
    if dim % heads:
        raise ValueError(f"neighbor_attention: {dim} columns not divisible by {heads} heads")
    if graph.n_nodes != n:
        raise ValueError(f"neighbor_attention: graph has {graph.n_nodes} nodes, features {n}")
    qv = np.ascontiguousarray(q.value)
    kv = np.ascontiguousarray(k.value)
    vv = np.ascontiguousarray(v.value)
    out, beta = kernels.attention_forward(qv, kv, vv, graph, heads)

    def vjp(g):
        return kernels.attention_backward(
            qv, kv, vv, graph, heads, beta, np.ascontiguousarray(g)
        )

    return _result(out, (q, k, v), vjp, "neighbor_attention")


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_errors(f, params, eps: float = 1e-5):
    """Per-parameter worst relative error of reverse-mode vs central differences.

    `f` maps the (mutated in place) parameter tensors to a scalar Tensor.
    Relative error uses |a - n| / (|a| + |n| + 1e-12).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    backward(f(params))
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params
    ]
    errors = []
    for p, a in zip(params, analytic):
        worst = 0.0
        flat = p.value.reshape(-1)
        for idx in range(flat.shape[0]):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(f(params).value[0, 0])
            flat[idx] = orig - eps
            down = float(f(params).value[0, 0])
            flat[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            ana = a.reshape(-1)[idx]
            err = abs(ana - numeric) / (abs(ana) + abs(numeric) + 1e-12)
            if err > worst:
                worst = err
        errors.append(worst)
    return errors


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Worst relative error over every entry of every parameter tensor."""
    return max(finite_diff_errors(f, params, eps=eps))
