"""Weighted binary cross-entropy training with Adam.

Every known association is a positive label and every zero pair a negative
label (no negative sampling); positives are up-weighted by the
negative-to-positive ratio.  A master seed expands into independent
sub-streams for initialization, feature dropout, and edge dropout, so
toggling one stochastic component never shifts the others, and per-run
seeds derived from (seed, run index) make parallel and serial execution
identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import GcnParams, SamParams
from .autodiff import (
    Tensor,
    add,
    backward,
    clamp,
    constant,
    hadamard,
    log,
    neg,
    parameter,
    scale,
    sum_all,
)
from .data import Dataset
from .graphs import edge_dropout
from .model import (
    LayerParams,
    ModelConfig,
    ModelInputs,
    ModelParams,
    build_model_inputs,
    forward,
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.008
    epochs: int = 800
    seed: int = 42
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clamp_eps: float = 1e-12

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class LabelSets:
    """Training label pairs; `lam` is the exact negative/positive ratio."""

    positives: np.ndarray  # (P, 2) int64 (drug, disease) pairs
    negatives: np.ndarray  # (Q, 2) int64

    def __post_init__(self):
        pos = {tuple(p) for p in self.positives.tolist()}
        neg = {tuple(p) for p in self.negatives.tolist()}
        if pos & neg:
            raise ValueError("positive and negative label sets overlap")

    @property
    def lam(self) -> float:
        if self.positives.shape[0] == 0:
            raise ValueError("class weight undefined: empty positive set")
        return self.negatives.shape[0] / self.positives.shape[0]


def label_sets(assoc_values: np.ndarray, exclude: np.ndarray | None = None) -> LabelSets:
    """Build label sets from the association matrix.

    `exclude` pairs (held-out test pairs, positive or negative) appear in
    neither set, so they cannot influence training.
    """
    a = np.asarray(assoc_values)
    excluded = np.zeros(a.shape, dtype=bool)
    if exclude is not None and len(exclude):
        idx = np.asarray(exclude, dtype=np.int64)
        excluded[idx[:, 0], idx[:, 1]] = True
    positives = np.argwhere((a == 1) & ~excluded).astype(np.int64)
    negatives = np.argwhere((a == 0) & ~excluded).astype(np.int64)
    return LabelSets(positives=positives, negatives=negatives)


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]."""
    if rows < 1 or cols < 1:
        raise ValueError("dimensions must be >= 1")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_model_params(cfg: ModelConfig, n: int, m: int, rng: np.random.Generator) -> ModelParams:
    """Xavier-initialized weights; biases start at zero, layer weights at 1/L."""
    k = cfg.embed_dim

    def mat(rows, cols):
        return parameter(xavier_init(rows, cols, rng))

    def make_module():
        if cfg.variant == "gcn":
            return GcnParams(weight=mat(k, k), bias=parameter(np.zeros((1, k))), slope=cfg.slope)
        return SamParams(
            w_q=mat(k, k),
            w_k=mat(k, k),
            w_v=mat(k, k),
            w_r=mat(k, k),
            w_d=mat(k, k),
            b_r=parameter(np.zeros((1, k))),
            b_d=parameter(np.zeros((1, k))),
            heads=cfg.heads,
            slope=cfg.slope,
        )

    layers = [LayerParams(sddfe=make_module(), cddfe=make_module()) for _ in range(cfg.layers)]
    beta = parameter(np.full((cfg.layers, 1), 1.0 / cfg.layers))
    return ModelParams(projection=mat(n + m, k), layers=layers, layer_weights=beta)


def weighted_bce(scores: Tensor, labels: LabelSets, total_nodes: int,
                 lam: float | None = None, clamp_eps: float = 1e-12) -> Tensor:
    """Class-weighted binary cross-entropy over the labeled pairs.

    loss = -(lam * sum_pos log s + sum_neg log(1 - s)) / total_nodes, with
    scores clamped away from 0 and 1 before the logs so the loss stays
    finite for any parameter values.
    """
    n, m = scores.value.shape
    pos, negs = labels.positives, labels.negatives
    if pos.shape[0] == 0:
        raise ValueError("weighted BCE needs at least one positive pair")
    for pairs in (pos, negs):
        if len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= n or pairs[:, 1].max() >= m):
            raise ValueError("label pair out of range")
    if lam is None:
        lam = labels.lam
    w_pos = np.zeros((n, m))
    w_pos[pos[:, 0], pos[:, 1]] = 1.0
    w_neg = np.zeros((n, m))
    if len(negs):
        w_neg[negs[:, 0], negs[:, 1]] = 1.0
    s = clamp(scores, clamp_eps, 1.0 - clamp_eps)
    pos_term = sum_all(hadamard(constant(w_pos), log(s)))
    ones = constant(np.ones((n, m)))
    neg_term = sum_all(hadamard(constant(w_neg), log(add(ones, neg(s)))))
    total = add(scale(pos_term, lam), neg_term)
    return scale(total, -1.0 / total_nodes)


class AdamState:
    """First/second moment accumulators, aligned with the parameter list."""

    def __init__(self, tensors: list[Tensor]):
        self.step = 0
        self.first = [np.zeros_like(t.value) for t in tensors]
        self.second = [np.zeros_like(t.value) for t in tensors]


def adam_step(tensors: list[Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """One Adam update with bias correction; missing grads count as zero."""
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for i, t in enumerate(tensors):
        g = t.grad if t.grad is not None else np.zeros_like(t.value)
        state.first[i] = b1 * state.first[i] + (1.0 - b1) * g
        state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g
        m_hat = state.first[i] / correction1
        v_hat = state.second[i] / correction2
        t.value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        t.grad = None


@dataclass
class SeedStreams:
    """Independent RNG streams expanded from one master seed.

    Fold splitting gets its own derivation in the evaluation harness
    (seeded by (master, repeat)), so the three training-time streams here
    stay untouched by protocol choices and vice versa.
    """

    init: np.random.Generator
    feature_dropout: np.random.Generator
    edge_dropout: np.random.Generator


def expand_seed(seed) -> SeedStreams:
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = base.spawn(3)
    return SeedStreams(*(np.random.default_rng(c) for c in children))


@dataclass
class TrainResult:
    params: ModelParams
    losses: np.ndarray  # per-epoch loss values
    inputs: ModelInputs  # graphs/features the model was trained against


def train(dataset: Dataset, labels: LabelSets, model_cfg: ModelConfig,
          train_cfg: TrainConfig, *, mask_out=None, seed=None,
          mask_init_features: bool = True, lam: float | None = None,
          progress=None) -> TrainResult:
    """Full-graph training for a fixed number of epochs.

    Each epoch resamples edge dropout, runs a training-mode forward pass,
    backpropagates the weighted BCE loss, and applies one Adam step.
    Fully deterministic for a given seed. `seed` (int or SeedSequence)
    overrides `train_cfg.seed`; `mask_out` hides held-out positives from
    the association graph and initial features. A non-finite loss aborts.
    """
    streams = expand_seed(train_cfg.seed if seed is None else seed)
    inputs = build_model_inputs(
        dataset, model_cfg, mask_out=mask_out, mask_init_features=mask_init_features
    )
    n, m = inputs.n, inputs.m
    params = init_model_params(model_cfg, n, m, streams.init)
    tensors = [t for _, t in params.named_tensors()]
    state = AdamState(tensors)
    losses = np.empty(train_cfg.epochs)
    for epoch in range(train_cfg.epochs):
        if model_cfg.edge_dropout > 0.0:
            graphs = (
                edge_dropout(inputs.e_s, model_cfg.edge_dropout, streams.edge_dropout),
                edge_dropout(inputs.e_a, model_cfg.edge_dropout, streams.edge_dropout),
            )
        else:
            graphs = None
        out = forward(
            inputs, params, model_cfg, dropout_rng=streams.feature_dropout, graphs=graphs
        )
        loss = weighted_bce(
            out.scores, labels, n + m, lam=lam, clamp_eps=train_cfg.clamp_eps
        )
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise RuntimeError(
                f"non-finite loss {value} at epoch {epoch} "
                f"(lr={train_cfg.lr}, seed={train_cfg.seed}); training aborted"
            )
        losses[epoch] = value
        backward(loss)
        adam_step(tensors, state, train_cfg)
        if progress is not None:
            progress(epoch, value)
    return TrainResult(params=params, losses=losses, inputs=inputs)
