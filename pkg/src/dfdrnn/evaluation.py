"""Evaluation harness: fold construction, ROC/PR metrics, repeated k-fold
cross-validation, leave-one-disease-out validation, candidate ranking, and
the top-t sensitivity sweep.

Folds, repeats, and sweep points are embarrassingly parallel; every run
derives its seed from (master seed, run index), so serial and threaded
execution produce identical numbers, and aggregation happens in fixed fold
order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model import ModelConfig, predict_scores
from .training import LabelSets, TrainConfig, label_sets, train

# ---------------------------------------------------------------------------
# ranking metrics


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.shape[0]:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    return scores, labels.astype(np.float64), n_pos, n_neg


def _tie_grouped_counts(scores, labels):
    """Cumulative TP/FP after each distinct-score group, descending."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ends = np.append(np.flatnonzero(np.diff(s) != 0), s.shape[0] - 1)
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(1.0 - y)[ends]
    return s[ends], tp, fp


def roc_points(scores, labels):
    """ROC curve points (threshold, FPR, TPR), tie-grouped, from (inf, 0, 0)
    to (min score, 1, 1).  Predictions are positive where score >= threshold."""
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    thresholds, tp, fp = _tie_grouped_counts(scores, labels)
    points = [(np.inf, 0.0, 0.0)]
    points.extend(
        (float(t), float(f / n_neg), float(p / n_pos))
        for t, p, f in zip(thresholds, tp, fp)
    )
    return points


def pr_points(scores, labels):
    """Precision-recall points (threshold, recall, precision), tie-grouped."""
    scores, labels, n_pos, _ = _check_binary(scores, labels)
    thresholds, tp, fp = _tie_grouped_counts(scores, labels)
    return [
        (float(t), float(p / n_pos), float(p / (p + f)))
        for t, p, f in zip(thresholds, tp, fp)
    ]


def auroc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve.

    Equals the probability that a random positive outscores a random
    negative, counting ties as one half.
    """
    points = roc_points(scores, labels)
    area = 0.0
    for (_, f0, t0), (_, f1, t1) in zip(points, points[1:]):
        area += (f1 - f0) * (t1 + t0) / 2.0
    return float(area)


def aupr(scores, labels) -> float:
    """Step-integrated area under the precision-recall curve.

    Right-continuous steps over descending-score prefixes; PR-space linear
    interpolation is biased, so no trapezoids here.
    """
    points = pr_points(scores, labels)
    area = 0.0
    prev_recall = 0.0
    for _, recall, precision in points:
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


# ---------------------------------------------------------------------------
# fold construction


@dataclass(frozen=True)
class Fold:
    positives: np.ndarray  # (p, 2) held-out positive pairs
    negatives: np.ndarray  # (q, 2) held-out negative pairs


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[Fold, ...]


def kfold_split(assoc_values: np.ndarray, k: int, rng: np.random.Generator) -> FoldPlan:
    """Shuffle positives and negatives independently and deal them
    round-robin into k folds; deterministic for a given generator state."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    a = np.asarray(assoc_values)
    positives = np.argwhere(a == 1).astype(np.int64)
    negatives = np.argwhere(a == 0).astype(np.int64)
    if positives.shape[0] < k:
        raise ValueError(f"{positives.shape[0]} positives cannot fill {k} folds")
    positives = positives[rng.permutation(positives.shape[0])]
    negatives = negatives[rng.permutation(negatives.shape[0])]
    folds = tuple(
        Fold(positives=positives[i::k].copy(), negatives=negatives[i::k].copy())
        for i in range(k)
    )
    return FoldPlan(k=k, folds=folds)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class FoldMetrics:
    repeat: int
    fold: int
    auroc: float
    aupr: float
    n_test_pos: int
    n_test_neg: int


@dataclass
class MetricsReport:
    folds: list[FoldMetrics]
    mean_auroc: float
    std_auroc: float
    mean_aupr: float
    std_aupr: float
    seed: int
    meta: dict
    curve_scores: np.ndarray | None = None  # pooled held-out scores (optional)
    curve_labels: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "folds": [
                {
                    "repeat": f.repeat,
                    "fold": f.fold,
                    "auroc": f.auroc,
                    "aupr": f.aupr,
                    "n_test_pos": f.n_test_pos,
                    "n_test_neg": f.n_test_neg,
                }
                for f in self.folds
            ],
            "mean_auroc": self.mean_auroc,
            "std_auroc": self.std_auroc,
            "mean_aupr": self.mean_aupr,
            "std_aupr": self.std_aupr,
            "seed": self.seed,
            "meta": self.meta,
        }


def _aggregate(folds: list[FoldMetrics], seed: int, meta: dict) -> MetricsReport:
    """Mean over everything; std across per-repeat means (0.0 for one repeat)."""
    repeats = sorted({f.repeat for f in folds})
    rep_auroc = [np.mean([f.auroc for f in folds if f.repeat == r]) for r in repeats]
    rep_aupr = [np.mean([f.aupr for f in folds if f.repeat == r]) for r in repeats]
    return MetricsReport(
        folds=folds,
        mean_auroc=float(np.mean(rep_auroc)),
        std_auroc=float(np.std(rep_auroc)),
        mean_aupr=float(np.mean(rep_aupr)),
        std_aupr=float(np.std(rep_aupr)),
        seed=seed,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# cross-validation


def default_score_fn(dataset: Dataset, labels: LabelSets, mask_out, model_cfg: ModelConfig,
                     train_cfg: TrainConfig, seed_seq, *, mask_init_features=True,
                     lam=None) -> np.ndarray:
    """Train on the masked view and return evaluation-mode scores."""
    result = train(
        dataset, labels, model_cfg, train_cfg,
        mask_out=mask_out, seed=seed_seq,
        mask_init_features=mask_init_features, lam=lam,
    )
    return predict_scores(result.inputs, result.params, model_cfg)


def _run_indexed(tasks, worker, threads):
    """Run tasks (list of keys) through worker, serially or in a pool;
    returns results in task order either way."""
    if threads <= 1:
        return [worker(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks))


def cross_validate(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   k: int = 10, repeats: int = 1, threads: int = 1,
                   negatives: str = "all", lam_full_data: bool = False,
                   mask_init_features: bool = True, score_fn=None,
                   collect_curves: bool = False) -> MetricsReport:
    """Repeated k-fold cross-validation.

    Each fold's held-out positives are hidden from the training labels, the
    association graph, and (by default) the initial association features;
    metrics are computed over the held-out positives versus the fold's
    held-out negatives only.  `negatives="sampled"` evaluates against a
    1:1 random sample of the fold's negatives instead of all of them.
    `lam_full_data` computes the positive-class weight from the full
    dataset instead of the training split.
    """
    if negatives not in ("all", "sampled"):
        raise ValueError(f"negatives must be 'all' or 'sampled', got {negatives!r}")
    if score_fn is None:
        score_fn = default_score_fn
    seed = train_cfg.seed
    a = dataset.assoc.values
    lam = None
    if lam_full_data:
        n_pos_all = int((a == 1).sum())
        lam = float((a.size - n_pos_all) / n_pos_all)

    tasks = []
    for r in range(repeats):
        split_rng = np.random.default_rng(np.random.SeedSequence((seed, r)))
        plan = kfold_split(a, k, split_rng)
        for f, fold in enumerate(plan.folds):
            tasks.append((r, f, fold))

    curves = {} if collect_curves else None

    def worker(task):
        r, f, fold = task
        labels = label_sets(a, exclude=np.concatenate([fold.positives, fold.negatives]))
        scores = score_fn(
            dataset, labels, fold.positives, model_cfg, train_cfg,
            np.random.SeedSequence((seed, r, f)),
            mask_init_features=mask_init_features, lam=lam,
        )
        test_neg = fold.negatives
        if negatives == "sampled":
            sample_rng = np.random.default_rng(np.random.SeedSequence((seed, r, f, 1)))
            take = min(fold.positives.shape[0], test_neg.shape[0])
            test_neg = test_neg[sample_rng.choice(test_neg.shape[0], size=take, replace=False)]
        test_pairs = np.concatenate([fold.positives, test_neg])
        test_labels = np.concatenate(
            [np.ones(fold.positives.shape[0]), np.zeros(test_neg.shape[0])]
        )
        test_scores = scores[test_pairs[:, 0], test_pairs[:, 1]]
        if curves is not None:
            curves[(r, f)] = (test_scores, test_labels)
        return FoldMetrics(
            repeat=r,
            fold=f,
            auroc=auroc(test_scores, test_labels),
            aupr=aupr(test_scores, test_labels),
            n_test_pos=int(fold.positives.shape[0]),
            n_test_neg=int(test_neg.shape[0]),
        )

    folds = _run_indexed(tasks, worker, threads)
    meta = {
        "protocol": "kfold",
        "k": k,
        "repeats": repeats,
        "negatives": negatives,
        "lam_full_data": lam_full_data,
        "mask_init_features": mask_init_features,
    }
    report = _aggregate(folds, seed, meta)
    if collect_curves:
        ordered = [curves[(r, f)] for r, f, _ in tasks]
        report.curve_scores = np.concatenate([s for s, _ in ordered])
        report.curve_labels = np.concatenate([l for _, l in ordered])
    return report


# ---------------------------------------------------------------------------
# leave-one-disease-out


@dataclass
class DiseaseResult:
    disease_id: str
    index: int
    n_pos: int
    auroc: float | None  # None when the column has a single class


@dataclass
class LoocvReport:
    global_auroc: float
    global_aupr: float
    per_disease: list[DiseaseResult]
    scores: np.ndarray  # concatenated column scores, disease-major order
    labels: np.ndarray
    seed: int
    meta: dict

    def to_dict(self) -> dict:
        return {
            "global_auroc": self.global_auroc,
            "global_aupr": self.global_aupr,
            "per_disease": [
                {
                    "disease_id": d.disease_id,
                    "index": d.index,
                    "n_pos": d.n_pos,
                    "auroc": d.auroc,
                }
                for d in self.per_disease
            ],
            "seed": self.seed,
            "meta": self.meta,
        }


def loocv_new_disease(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                      threads: int = 1, mask_init_features: bool = True,
                      score_fn=None) -> LoocvReport:
    """Leave-one-disease-out: hide every association of one disease, train,
    and score that disease's column against all drugs.

    The hidden positives are removed from the training labels, the
    association graph, and the initial association features; one global
    ROC/PR is computed over the concatenation of all scored columns.
    """
    if score_fn is None:
        score_fn = default_score_fn
    a = dataset.assoc.values
    seed = train_cfg.seed
    targets = [j for j in range(dataset.n_diseases) if a[:, j].sum() >= 1]
    if len(targets) == 0:
        raise ValueError("no disease has any association")

    def worker(j):
        col_pos = np.argwhere(a[:, [j]] == 1).astype(np.int64)
        col_pos[:, 1] = j
        labels = label_sets(a, exclude=col_pos)
        scores = score_fn(
            dataset, labels, col_pos, model_cfg, train_cfg,
            np.random.SeedSequence((seed, j)),
            mask_init_features=mask_init_features, lam=None,
        )
        return scores[:, j].copy()

    columns = _run_indexed(targets, worker, threads)
    all_scores = []
    all_labels = []
    per_disease = []
    for j, col_scores in zip(targets, columns):
        col_labels = a[:, j]
        all_scores.append(col_scores)
        all_labels.append(col_labels)
        n_pos = int(col_labels.sum())
        value = None
        if 0 < n_pos < col_labels.shape[0]:
            value = auroc(col_scores, col_labels)
        per_disease.append(
            DiseaseResult(
                disease_id=dataset.ids.disease_ids[j], index=j, n_pos=n_pos, auroc=value
            )
        )
    scores = np.concatenate(all_scores)
    labels = np.concatenate(all_labels)
    return LoocvReport(
        global_auroc=auroc(scores, labels),
        global_aupr=aupr(scores, labels),
        per_disease=per_disease,
        scores=scores,
        labels=labels,
        seed=seed,
        meta={
            "protocol": "loocv_new_disease",
            "n_diseases_evaluated": len(targets),
            "mask_init_features": mask_init_features,
        },
    )


# ---------------------------------------------------------------------------
# case-study ranking


@dataclass
class RankedCandidates:
    disease_id: str
    candidates: list[tuple[str, float]]  # (drug id, score), descending
    top_k: int


def rank_candidates(dataset: Dataset, disease_id: str, top_k: int,
                    model_cfg: ModelConfig, train_cfg: TrainConfig,
                    scores: np.ndarray | None = None) -> RankedCandidates:
    """Rank a disease's unknown drugs by score after full-data training.

    Only pairs unknown in the training data appear; ties break toward the
    smaller drug index.  Pass `scores` to reuse an existing full-data model
    (e.g. from a checkpoint).
    """
    if disease_id not in dataset.ids.disease_ids:
        raise KeyError(f"unknown disease id {disease_id!r}")
    j = dataset.ids.disease_ids.index(disease_id)
    if scores is None:
        labels = label_sets(dataset.assoc.values)
        result = train(dataset, labels, model_cfg, train_cfg)
        scores = predict_scores(result.inputs, result.params, model_cfg)
    column = scores[:, j]
    unknown = np.flatnonzero(dataset.assoc.values[:, j] == 0)
    order = sorted(unknown, key=lambda i: (-column[i], i))[:top_k]
    return RankedCandidates(
        disease_id=disease_id,
        candidates=[(dataset.ids.drug_ids[i], float(column[i])) for i in order],
        top_k=top_k,
    )


# ---------------------------------------------------------------------------
# top-t sweep


def sweep_topt(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
               t_values, k: int = 10, repeats: int = 1, threads: int = 1,
               **cv_kwargs) -> list[tuple[int, MetricsReport]]:
    """Cross-validate once per top-t value; returns (t, report) rows."""
    t_values = list(t_values)
    if not t_values:
        raise ValueError("empty top-t range")
    rows = []
    for t in t_values:
        cfg = replace(model_cfg, top_t=t)
        report = cross_validate(
            dataset, cfg, train_cfg, k=k, repeats=repeats, threads=threads, **cv_kwargs
        )
        rows.append((t, report))
    return rows
