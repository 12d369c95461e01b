"""Command-line interface.

Subcommands: validate, train, cv, loocv, rank, sweep-topt, gradcheck.
Every run writes a manifest of the resolved configuration and seed to the
output directory; metric files embed the config hash so results are
traceable to their settings.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config, resolve_config
from .data import DatasetError, load_dataset, validate_dataset
from .evaluation import (
    cross_validate,
    loocv_new_disease,
    pr_points,
    rank_candidates,
    roc_points,
    sweep_topt,
)
from .kernels import BACKEND
from .model import (
    CheckpointError,
    build_model_inputs,
    dataset_fingerprint,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
)
from .training import label_sets, train
from .verify import gradcheck_model


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file merged over defaults")
    parser.add_argument("--dataset", help="dataset manifest path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master random seed (default 42)")
    parser.add_argument("--threads", type=int, help="fold/sweep parallelism (default 1)")


def _add_model_flags(parser):
    parser.add_argument("--embed-dim", dest="embed_dim", type=int)
    parser.add_argument("--layers", type=int)
    parser.add_argument("--heads", type=int)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--edge-dropout", dest="edge_dropout", type=float)
    parser.add_argument("--top-t", dest="top_t", type=int)
    parser.add_argument("--variant", choices=("full", "sf_only", "af_only", "gcn", "no_cf"))
    parser.add_argument(
        "--decoder",
        choices=("cross", "noncross", "drug_only", "disease_only",
                 "noncross_drug", "noncross_disease"),
    )
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)


def _add_cv_flags(parser):
    parser.add_argument("--folds", type=int)
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--negatives", choices=("all", "sampled"),
                        help="held-out negatives: the fold's full share or a 1:1 sample")
    parser.add_argument("--lam-full-data", dest="lam_full_data", action="store_true", default=None,
                        help="compute the class weight from the full dataset, not the training split")
    parser.add_argument("--no-mask-init", dest="mask_init_features", action="store_false", default=None,
                        help="leave held-out positives visible in the initial association features")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfdrnn",
        description="Dual-feature graph-attention drug-disease association prediction",
    )
    parser.add_argument("--version", action="version", version=f"dfdrnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a dataset and report consistency checks")
    _add_common(p)

    p = sub.add_parser("train", help="train on all associations and save a checkpoint")
    _add_common(p)
    _add_model_flags(p)

    p = sub.add_parser("cv", help="repeated k-fold cross-validation")
    _add_common(p)
    _add_model_flags(p)
    _add_cv_flags(p)

    p = sub.add_parser("loocv", help="leave-one-disease-out validation")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--no-mask-init", dest="mask_init_features", action="store_false", default=None)

    p = sub.add_parser("rank", help="rank candidate drugs for one disease")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--disease", help="disease ID to rank candidates for")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--checkpoint", help="reuse a saved full-data model")

    p = sub.add_parser("sweep-topt", help="cross-validate across top-t values")
    _add_common(p)
    _add_model_flags(p)
    _add_cv_flags(p)
    p.add_argument("--t-values", dest="t_values",
                   help="comma-separated top-t values, e.g. 1,3,7")

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int)
    p.add_argument("--with-dropout", dest="with_dropout", action="store_true")
    return parser


def _flag_overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "with_dropout"}
    overrides = {}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        overrides[key] = value
    if "t_values" in overrides and isinstance(overrides["t_values"], str):
        try:
            overrides["t_values"] = [int(v) for v in overrides["t_values"].split(",") if v]
        except ValueError:
            raise ConfigError("--t-values must be comma-separated integers")
    return overrides


def _resolve(args) -> RunConfig:
    file_overrides = load_config(args.config) if getattr(args, "config", None) else None
    return resolve_config(file_overrides, _flag_overrides(args))


def _require(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise ConfigError(f"--{name.replace('_', '-')} is required for this command")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: RunConfig) -> None:
    manifest = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
        "kernel_backend": BACKEND,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_metrics(out: Path, report_dict: dict) -> None:
    payload = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "report": report_dict,
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_curves(out: Path, scores, labels) -> None:
    with (out / "roc.csv").open("w") as fh:
        fh.write("threshold,fpr,tpr\n")
        for t, fpr, tpr in roc_points(scores, labels):
            fh.write(f"{t!r},{fpr!r},{tpr!r}\n")
    with (out / "pr.csv").open("w") as fh:
        fh.write("threshold,recall,precision\n")
        for t, recall, precision in pr_points(scores, labels):
            fh.write(f"{t!r},{recall!r},{precision!r}\n")


def cmd_validate(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset")
    dataset = load_dataset(cfg.dataset)
    report = validate_dataset(dataset)
    print(
        f"dataset {dataset.name}: {dataset.n_drugs} drugs, "
        f"{dataset.n_diseases} diseases, {dataset.assoc.n_positive} associations"
    )
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def cmd_train(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "out")
    out = _out_dir(cfg)
    _write_manifest(out, cfg)
    dataset = load_dataset(cfg.dataset)
    labels = label_sets(dataset.assoc.values)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()

    def progress(epoch, value):
        if (epoch + 1) % 100 == 0 or epoch == 0:
            print(f"epoch {epoch + 1}/{train_cfg.epochs}: loss {value:.6f}")

    result = train(dataset, labels, model_cfg, train_cfg, progress=progress)
    with (out / "loss.csv").open("w") as fh:
        fh.write("epoch,loss\n")
        for i, value in enumerate(result.losses):
            fh.write(f"{i},{value!r}\n")
    save_checkpoint(
        out / "checkpoint.bin", result.params, model_cfg,
        dataset_fingerprint(dataset.ids),
    )
    print(f"final loss {result.losses[-1]:.6f}; checkpoint written to {out / 'checkpoint.bin'}")
    return 0


def cmd_cv(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "out")
    out = _out_dir(cfg)
    _write_manifest(out, cfg)
    dataset = load_dataset(cfg.dataset)
    report = cross_validate(
        dataset, cfg.model_config(), cfg.train_config(),
        k=cfg.folds, repeats=cfg.repeats, threads=cfg.threads,
        negatives=cfg.negatives, lam_full_data=cfg.lam_full_data,
        mask_init_features=cfg.mask_init_features, collect_curves=True,
    )
    payload = report.to_dict()
    payload["config_hash"] = config_hash(cfg)
    _write_metrics(out, payload)
    _write_curves(out, report.curve_scores, report.curve_labels)
    for f in report.folds:
        print(f"repeat {f.repeat} fold {f.fold}: AUROC {f.auroc:.4f}  AUPR {f.aupr:.4f}")
    print(
        f"mean AUROC {report.mean_auroc:.4f} (std {report.std_auroc:.4f}); "
        f"mean AUPR {report.mean_aupr:.4f} (std {report.std_aupr:.4f})"
    )
    return 0


def cmd_loocv(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "out")
    out = _out_dir(cfg)
    _write_manifest(out, cfg)
    dataset = load_dataset(cfg.dataset)
    report = loocv_new_disease(
        dataset, cfg.model_config(), cfg.train_config(),
        threads=cfg.threads, mask_init_features=cfg.mask_init_features,
    )
    payload = report.to_dict()
    payload["config_hash"] = config_hash(cfg)
    _write_metrics(out, payload)
    _write_curves(out, report.scores, report.labels)
    print(
        f"new-disease LOOCV over {len(report.per_disease)} diseases: "
        f"AUROC {report.global_auroc:.4f}  AUPR {report.global_aupr:.4f}"
    )
    return 0


def cmd_rank(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "out", "disease")
    out = _out_dir(cfg)
    _write_manifest(out, cfg)
    dataset = load_dataset(cfg.dataset)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    scores = None
    if cfg.checkpoint:
        params, model_cfg, _ = load_checkpoint(
            cfg.checkpoint, dataset_fingerprint(dataset.ids)
        )
        inputs = build_model_inputs(dataset, model_cfg)
        scores = predict_scores(inputs, params, model_cfg)
    ranking = rank_candidates(
        dataset, cfg.disease, cfg.top_k, model_cfg, train_cfg, scores=scores
    )
    with (out / "ranking.csv").open("w") as fh:
        fh.write("rank,drug_id,score\n")
        for rank, (drug_id, score) in enumerate(ranking.candidates, start=1):
            fh.write(f"{rank},{drug_id},{score!r}\n")
    print(f"top {len(ranking.candidates)} candidates for {ranking.disease_id}:")
    for rank, (drug_id, score) in enumerate(ranking.candidates, start=1):
        print(f"  {rank:2d}. {drug_id}  {score:.6f}")
    return 0


def cmd_sweep_topt(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "out", "t_values")
    out = _out_dir(cfg)
    _write_manifest(out, cfg)
    dataset = load_dataset(cfg.dataset)
    rows = sweep_topt(
        dataset, cfg.model_config(), cfg.train_config(), cfg.t_values,
        k=cfg.folds, repeats=cfg.repeats, threads=cfg.threads,
        negatives=cfg.negatives, lam_full_data=cfg.lam_full_data,
        mask_init_features=cfg.mask_init_features,
    )
    payload = {
        "config_hash": config_hash(cfg),
        "sweep": [{"top_t": t, **report.to_dict()} for t, report in rows],
    }
    _write_metrics(out, payload)
    with (out / "topt_sweep.csv").open("w") as fh:
        fh.write("top_t,mean_auroc,std_auroc,mean_aupr,std_aupr\n")
        for t, report in rows:
            fh.write(
                f"{t},{report.mean_auroc!r},{report.std_auroc!r},"
                f"{report.mean_aupr!r},{report.std_aupr!r}\n"
            )
    for t, report in rows:
        print(f"top-t {t:3d}: AUROC {report.mean_auroc:.4f}  AUPR {report.mean_aupr:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck_model(
        seed=args.seed if args.seed is not None else 0,
        with_dropout=bool(getattr(args, "with_dropout", False)),
    )
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


_COMMANDS = {
    "validate": cmd_validate,
    "train": cmd_train,
    "cv": cmd_cv,
    "loocv": cmd_loocv,
    "rank": cmd_rank,
    "sweep-topt": cmd_sweep_topt,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DatasetError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
