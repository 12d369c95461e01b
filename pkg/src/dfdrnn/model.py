"""The dual-feature encoder/decoder model.

The encoder projects the initial similarity/association features to the
embedding space, then runs L layers that each apply a within-domain block
(over the similarity graph, streams kept) and a cross-domain block (over
the association graph, streams swapped), fuse the results with a residual
term, and finally mixes the per-layer outputs with learned layer-attention
weights.  The decoder pairs each domain's association encoding with the
other domain's similarity encoding and averages the two sigmoid score
views.

Ablation variants switch single pieces: feed one stream only, replace
attention with GCN aggregation, or disable the cross-domain stream swap.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .attention import DEFAULT_SLOPE, GcnParams, SamParams, gcn_aggregate, samf
from .autodiff import (
    Tensor,
    add,
    constant,
    dropout,
    matmul,
    parameter,
    scalar_mul,
    scale,
    sigmoid,
    slice_rows,
    stack_rows,
    transpose,
)
from .data import Dataset, EntityIds
from .graphs import (
    HeteroAdjacency,
    InitialFeatures,
    build_hetero_association,
    build_hetero_similarity,
    initial_features,
    topt_binarize,
)

VARIANTS = ("full", "sf_only", "af_only", "gcn", "no_cf")
DECODERS = (
    "cross",
    "noncross",
    "drug_only",
    "disease_only",
    "noncross_drug",
    "noncross_disease",
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Model hyperparameters; defaults follow the published configuration."""

    embed_dim: int = 128
    layers: int = 3
    heads: int = 2
    dropout: float = 0.4
    edge_dropout: float = 0.2
    top_t: int = 7
    variant: str = "full"
    decoder: str = "cross"
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.embed_dim % self.heads:
            raise ValueError(
                f"embedding dim {self.embed_dim} not divisible by {self.heads} heads"
            )
        for name in ("dropout", "edge_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} {p} outside [0, 1)")
        if self.top_t < 1:
            raise ValueError("top_t must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}; choose from {DECODERS}")


@dataclass
class DualFeatures:
    """Paired similarity-stream and association-stream feature matrices."""

    h_s: Tensor
    h_a: Tensor


@dataclass
class FinalEncoding:
    """Layer-attention output split into the four drug/disease blocks."""

    h_r_s: Tensor  # n x k, similarity stream
    h_r_a: Tensor  # n x k, association stream
    h_d_s: Tensor  # m x k
    h_d_a: Tensor  # m x k


@dataclass
class LayerParams:
    sddfe: SamParams | GcnParams
    cddfe: SamParams | GcnParams


@dataclass
class ModelParams:
    projection: Tensor  # (n+m) x k
    layers: list[LayerParams]
    layer_weights: Tensor  # L x 1

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        named = [("projection", self.projection)]
        for i, layer in enumerate(self.layers):
            for module_name, module in (("sddfe", layer.sddfe), ("cddfe", layer.cddfe)):
                named.extend(
                    (f"layer{i}.{module_name}.{name}", t)
                    for name, t in module.named_tensors()
                )
        named.append(("layer_weights", self.layer_weights))
        return named


@dataclass(frozen=True)
class ModelInputs:
    """Everything the forward pass needs besides parameters."""

    e_s: HeteroAdjacency
    e_a: HeteroAdjacency
    features: InitialFeatures

    @property
    def n(self):
        return self.features.n

    @property
    def m(self):
        return self.features.m


@dataclass
class ForwardOutput:
    scores: Tensor  # n x m, entries in (0, 1)
    encoding: FinalEncoding


def build_model_inputs(dataset: Dataset, cfg: ModelConfig, mask_out=None,
                       mask_init_features: bool = True) -> ModelInputs:
    """Construct graphs and initial features, hiding held-out positives.

    `mask_out` pairs are removed from the association graph and, unless
    `mask_init_features` is disabled, from the initial association feature
    as well, so held-out test positives cannot leak into training.
    """
    drug_graph = topt_binarize(dataset.drug_sim.values, cfg.top_t)
    disease_graph = topt_binarize(dataset.disease_sim.values, cfg.top_t)
    e_s = build_hetero_similarity(drug_graph, disease_graph)
    e_a = build_hetero_association(dataset.assoc.values, mask_out)
    feats = initial_features(dataset, mask_out if mask_init_features else None)
    return ModelInputs(e_s=e_s, e_a=e_a, features=feats)


def project_initial(init: InitialFeatures, projection: Tensor) -> DualFeatures:
    """Project both initial feature matrices with the shared projection.

    Exploits the block structure (off-diagonal zero blocks of the
    similarity feature, and the two mirrored association blocks) to skip
    multiplications by zero.
    """
    n, total = init.n, init.n + init.m
    m_top = slice_rows(projection, 0, n)
    m_bot = slice_rows(projection, n, total)
    sim_r = constant(init.h_init_s[:n, :n])
    sim_d = constant(init.h_init_s[n:, n:])
    assoc = constant(init.h_init_a[:n, n:])
    assoc_t = constant(init.h_init_a[n:, :n])
    h_s = stack_rows(matmul(sim_r, m_top), matmul(sim_d, m_bot))
    h_a = stack_rows(matmul(assoc, m_bot), matmul(assoc_t, m_top))
    return DualFeatures(h_s=h_s, h_a=h_a)


def _apply_block(adj, h, module, variant):
    if variant == "gcn":
        return gcn_aggregate(adj, h, module.weight, module.bias, module.slope)
    return samf(adj, h, module)


def sddfe_layer(e_s: HeteroAdjacency, feats: DualFeatures, module,
                variant: str = "full") -> DualFeatures:
    """Within-domain extraction: both streams aggregate over the similarity
    graph and keep their identity."""
    return DualFeatures(
        h_s=_apply_block(e_s, feats.h_s, module, variant),
        h_a=_apply_block(e_s, feats.h_a, module, variant),
    )


def cddfe_layer(e_a: HeteroAdjacency, feats: DualFeatures, module,
                variant: str = "full") -> DualFeatures:
    """Cross-domain extraction: aggregation over the association graph
    swaps the streams (similarity input becomes the association output and
    vice versa); the `no_cf` variant disables the swap."""
    from_s = _apply_block(e_a, feats.h_s, module, variant)
    from_a = _apply_block(e_a, feats.h_a, module, variant)
    if variant == "no_cf":
        return DualFeatures(h_s=from_s, h_a=from_a)
    return DualFeatures(h_s=from_a, h_a=from_s)


def fuse(hat: DualFeatures, tilde: DualFeatures, prev: DualFeatures) -> DualFeatures:
    """Elementwise sum of the two module outputs and the residual input."""
    return DualFeatures(
        h_s=add(add(hat.h_s, tilde.h_s), prev.h_s),
        h_a=add(add(hat.h_a, tilde.h_a), prev.h_a),
    )


def layer_attention(layer_outputs: list[DualFeatures], layer_weights: Tensor,
                    n: int) -> FinalEncoding:
    """Weighted sum of per-layer outputs (layer 0 excluded), split into the
    four drug/disease blocks."""
    count = len(layer_outputs)
    if layer_weights.value.shape != (count, 1):
        raise ValueError(
            f"{count} layer outputs but weights shaped {layer_weights.value.shape}"
        )
    h_s = h_a = None
    for i, feats in enumerate(layer_outputs):
        w = slice_rows(layer_weights, i, i + 1)
        term_s = scalar_mul(w, feats.h_s)
        term_a = scalar_mul(w, feats.h_a)
        h_s = term_s if h_s is None else add(h_s, term_s)
        h_a = term_a if h_a is None else add(h_a, term_a)
    total = h_s.value.shape[0]
    return FinalEncoding(
        h_r_s=slice_rows(h_s, 0, n),
        h_r_a=slice_rows(h_a, 0, n),
        h_d_s=slice_rows(h_s, n, total),
        h_d_a=slice_rows(h_a, n, total),
    )


def decode_cross(enc: FinalEncoding) -> tuple[Tensor, Tensor, Tensor]:
    """Cross-domain scores: each domain's association encoding against the
    other domain's similarity encoding, averaged."""
    s_r = sigmoid(matmul(enc.h_r_a, transpose(enc.h_d_s)))  # n x m
    s_d = sigmoid(matmul(enc.h_d_a, transpose(enc.h_r_s)))  # m x n
    s = scale(add(s_r, transpose(s_d)), 0.5)
    return s_r, s_d, s


def decode_noncross(enc: FinalEncoding) -> tuple[Tensor, Tensor, Tensor]:
    """Within-stream scores: association-with-association and
    similarity-with-similarity pairings, averaged."""
    s_r = sigmoid(matmul(enc.h_r_a, transpose(enc.h_d_a)))  # n x m
    s_d = sigmoid(matmul(enc.h_d_s, transpose(enc.h_r_s)))  # m x n
    s = scale(add(s_r, transpose(s_d)), 0.5)
    return s_r, s_d, s


def _decode(enc: FinalEncoding, decoder: str) -> Tensor:
    if decoder == "cross":
        return decode_cross(enc)[2]
    if decoder == "noncross":
        return decode_noncross(enc)[2]
    if decoder == "drug_only":
        return decode_cross(enc)[0]
    if decoder == "disease_only":
        return transpose(decode_cross(enc)[1])
    if decoder == "noncross_drug":
        return decode_noncross(enc)[0]
    if decoder == "noncross_disease":
        return transpose(decode_noncross(enc)[1])
    raise ValueError(f"unknown decoder {decoder!r}")


def forward(inputs: ModelInputs, params: ModelParams, cfg: ModelConfig,
            dropout_rng: np.random.Generator | None = None,
            graphs: tuple[HeteroAdjacency, HeteroAdjacency] | None = None) -> ForwardOutput:
    """One full pass from initial features to the score matrix.

    `dropout_rng` enables training mode (feature dropout after every block
    output); pass `graphs` to substitute edge-dropped adjacencies for an
    epoch.  Evaluation mode (no rng) is deterministic.
    """
    e_s, e_a = graphs if graphs is not None else (inputs.e_s, inputs.e_a)
    n = inputs.n
    feats = project_initial(inputs.features, params.projection)
    if cfg.variant == "sf_only":
        feats = DualFeatures(h_s=feats.h_s, h_a=constant(np.zeros(feats.h_a.value.shape)))
    elif cfg.variant == "af_only":
        feats = DualFeatures(h_s=constant(np.zeros(feats.h_s.value.shape)), h_a=feats.h_a)

    def maybe_drop(t: Tensor) -> Tensor:
        if dropout_rng is None or cfg.dropout == 0.0:
            return t
        return dropout(t, cfg.dropout, dropout_rng)

    layer_outputs = []
    for layer in params.layers:
        hat = sddfe_layer(e_s, feats, layer.sddfe, cfg.variant)
        hat = DualFeatures(h_s=maybe_drop(hat.h_s), h_a=maybe_drop(hat.h_a))
        tilde = cddfe_layer(e_a, feats, layer.cddfe, cfg.variant)
        tilde = DualFeatures(h_s=maybe_drop(tilde.h_s), h_a=maybe_drop(tilde.h_a))
        feats = fuse(hat, tilde, feats)
        layer_outputs.append(feats)

    enc = layer_attention(layer_outputs, params.layer_weights, n)
    decoder = cfg.decoder
    if cfg.variant == "sf_only":
        decoder = "noncross_disease"  # only similarity blocks carry signal
    elif cfg.variant == "af_only":
        decoder = "noncross_drug"
    return ForwardOutput(scores=_decode(enc, decoder), encoding=enc)


def predict_scores(inputs: ModelInputs, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """Deterministic evaluation-mode scores as a plain array."""
    return forward(inputs, params, cfg).scores.value


# ---------------------------------------------------------------------------
# checkpoints


def dataset_fingerprint(ids: EntityIds) -> dict:
    def digest(entries):
        return hashlib.sha256("\n".join(entries).encode()).hexdigest()

    return {
        "n_drugs": ids.n_drugs,
        "n_diseases": ids.n_diseases,
        "drug_ids_sha256": digest(ids.drug_ids),
        "disease_ids_sha256": digest(ids.disease_ids),
    }


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, fingerprint: dict) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "embed_dim": cfg.embed_dim,
            "layers": cfg.layers,
            "heads": cfg.heads,
            "dropout": cfg.dropout,
            "edge_dropout": cfg.edge_dropout,
            "top_t": cfg.top_t,
            "variant": cfg.variant,
            "decoder": cfg.decoder,
            "slope": cfg.slope,
        },
        "fingerprint": fingerprint,
    }
    arrays = {name: t.value for name, t in params.named_tensors()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, expected_fingerprint: dict | None = None):
    """Load (params, config, fingerprint); rejects fingerprint mismatches."""
    with np.load(path) as archive:
        if "__meta__" not in archive:
            raise CheckpointError(f"{path} is not a model checkpoint")
        meta = json.loads(bytes(archive["__meta__"]).decode())
        arrays = {name: archive[name] for name in archive.files if name != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    fingerprint = meta["fingerprint"]
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointError(
            "checkpoint fingerprint does not match the dataset "
            f"(checkpoint {fingerprint}, dataset {expected_fingerprint})"
        )
    cfg = ModelConfig(**meta["config"])

    def tensor(name):
        return parameter(arrays[name])

    layers = []
    for i in range(cfg.layers):
        modules = {}
        for module_name in ("sddfe", "cddfe"):
            prefix = f"layer{i}.{module_name}."
            if cfg.variant == "gcn":
                modules[module_name] = GcnParams(
                    weight=tensor(prefix + "weight"),
                    bias=tensor(prefix + "bias"),
                    slope=cfg.slope,
                )
            else:
                modules[module_name] = SamParams(
                    w_q=tensor(prefix + "w_q"),
                    w_k=tensor(prefix + "w_k"),
                    w_v=tensor(prefix + "w_v"),
                    w_r=tensor(prefix + "w_r"),
                    w_d=tensor(prefix + "w_d"),
                    b_r=tensor(prefix + "b_r"),
                    b_d=tensor(prefix + "b_d"),
                    heads=cfg.heads,
                    slope=cfg.slope,
                )
        layers.append(LayerParams(sddfe=modules["sddfe"], cddfe=modules["cddfe"]))
    params = ModelParams(
        projection=tensor("projection"),
        layers=layers,
        layer_weights=tensor("layer_weights"),
    )
    return params, cfg, fingerprint
