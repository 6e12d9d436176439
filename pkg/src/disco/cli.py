"""Command-line frontend.

Subcommands: validate, score, select, fit, predict, evaluate, sweep, synth.
Every output artifact embeds (or sits next to) a provenance stanza with the
SHA-256 of its inputs, the seed, and the package version, so any artifact
can be re-derived and staleness can be detected.

Exit codes: 0 ok, 1 schema, 2 invariant/contract, 3 I/O, 64 usage.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    DiscoError,
    InvalidConfig,
    MissingWeights,
    StaleArtifact,
    TooFewModels,
)
from .harness import (
    ChronologicalSplit,
    PredictorConfig,
    SelectionConfig,
    UniformSplit,
    median_date_cutoff,
    run_pipeline,
    save_report,
    split_models,
    sweep_budgets,
    write_sweep_csv,
)
from .predictors import (
    ForestConfig,
    PredictorModel,
    load_predictor,
    predict,
    predict_weighted_sum,
    save_predictor,
    train,
)
from .scoring import read_scores_csv, score_dataset, write_scores_csv
from .selection import (
    load_subset,
    save_subset,
    select_best_for_validation,
    select_kmedoids,
    select_random,
    select_stratified_topk,
    select_topk,
    build_embeddings,
    subset_provenance,
)
from .signatures import build_signature, default_pca_dim, pca_fit, pca_transform
from .store import BenchmarkManifest, correctness, load_manifest, load_tensor
from .synth import SynthConfig, generate_population, save_population

EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 64 for scripting
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _provenance(seed: int, **inputs: Path) -> dict:
    return {
        "inputs": {name: _sha256(p) for name, p in inputs.items()},
        "seed": seed,
        "version": __version__,
    }


def _check_fresh(recorded: dict | None, name: str, path: Path) -> None:
    if recorded is None:
        return
    have = recorded.get("inputs", {}).get(name)
    if have is not None and have != _sha256(path):
        raise StaleArtifact(f"{name} hash recorded in upstream artifact does not "
                            f"match {path}; regenerate the artifact")


def _threads(args: argparse.Namespace) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("DISCO_THREADS", "1")
    if raw == "auto":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise InvalidConfig(f"--threads must be a positive integer or 'auto', got {raw!r}")
    if value < 1:
        raise InvalidConfig("--threads must be >= 1")
    return value


def _workpath(args: argparse.Namespace, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else Path(args.workdir) / p


def _parse_cutoff(manifest: BenchmarkManifest, raw: str) -> _dt.date:
    if raw == "median":
        return median_date_cutoff(manifest)
    try:
        return _dt.date.fromisoformat(raw)
    except ValueError:
        raise InvalidConfig(f"--cutoff must be an ISO date or 'median', got {raw!r}")


def _resolve_models(manifest: BenchmarkManifest, args: argparse.Namespace,
                    side: str) -> list[str]:
    """Model ids from --models, or from --cutoff (source: strictly before;
    target: at/after), or every model with a known accuracy."""
    if getattr(args, "models", None):
        ids = [m.strip() for m in args.models.split(",") if m.strip()]
        for mid in ids:
            manifest.model(mid)
        return ids
    eligible = [m for m in manifest.models if m.true_accuracy is not None]
    if getattr(args, "cutoff", None):
        cutoff = _parse_cutoff(manifest, args.cutoff)
        if side == "source":
            return [m.model_id for m in eligible if m.release_date < cutoff]
        return [m.model_id for m in eligible if m.release_date >= cutoff]
    return [m.model_id for m in eligible]


# --- subcommands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    manifest = load_manifest(_workpath(args, args.manifest))
    for mid in manifest.model_ids():
        load_tensor(manifest, mid)
    print(f"validate: ok ({manifest.num_samples} samples, "
          f"{manifest.num_classes} classes, {len(manifest.models)} models)")
    return 0


def cmd_score(args) -> int:
    manifest_path = _workpath(args, args.manifest)
    manifest = load_manifest(manifest_path)
    ids = _resolve_models(manifest, args, "source")
    if len(ids) < 2:
        raise TooFewModels(f"scoring needs at least 2 models, got {len(ids)}")
    tensors = [load_tensor(manifest, mid) for mid in ids]
    table = score_dataset(manifest, tensors)
    out = _workpath(args, args.out)
    write_scores_csv(table, out)
    prov = _provenance(args.seed, manifest=manifest_path)
    prov["method"] = args.method
    prov["models"] = ids
    Path(str(out) + ".prov.json").write_text(json.dumps(prov, indent=2) + "\n")
    print(f"score: wrote {out} ({len(table)} samples, {len(ids)} models)")
    return 0


def cmd_select(args) -> int:
    manifest_path = _workpath(args, args.manifest)
    manifest = load_manifest(manifest_path)
    method = args.method
    inputs: dict[str, Path] = {"manifest": manifest_path}

    if method in ("topk_pds", "topk_jsd", "stratified_topk"):
        if not args.scores:
            raise InvalidConfig(f"--scores is required for method {method!r}")
        scores_path = _workpath(args, args.scores)
        prov_path = Path(str(scores_path) + ".prov.json")
        if prov_path.is_file():
            _check_fresh(json.loads(prov_path.read_text()), "manifest", manifest_path)
        table = read_scores_csv(scores_path)
        inputs["scores"] = scores_path
        if method == "stratified_topk":
            subset = select_stratified_topk(table, manifest.task_tags, args.k,
                                            args.criterion, seed=args.seed)
        else:
            criterion = "jsd_bits" if method == "topk_jsd" else "pds_env"
            subset = select_topk(table, args.k, criterion, seed=args.seed)
    elif method == "random":
        subset = select_random(manifest.num_samples, args.k, args.seed)
    elif method in ("kmedoids_conf", "kmedoids_corr"):
        ids = _resolve_models(manifest, args, "source")
        tensors = [load_tensor(manifest, mid) for mid in ids]
        emb = build_embeddings(tensors, manifest,
                               "conf" if method == "kmedoids_conf" else "corr")
        subset = select_kmedoids(emb, args.k, args.seed, method_label=method)
    elif method == "best_for_validation":
        ids = _resolve_models(manifest, args, "source")
        tensors = [load_tensor(manifest, mid) for mid in ids]
        subset = select_best_for_validation(tensors, manifest, args.k,
                                            candidates=args.candidates,
                                            seed=args.seed,
                                            split_ratio=args.split_ratio)
    else:  # argparse choices should have caught this
        raise InvalidConfig(f"unknown selection method {method!r}")

    out = _workpath(args, args.out)
    save_subset(subset, out, provenance=_provenance(args.seed, **inputs))
    print(f"select: wrote {out} (method={subset.method}, k={subset.k})")
    return 0


def cmd_fit(args) -> int:
    manifest_path = _workpath(args, args.manifest)
    manifest = load_manifest(manifest_path)
    subset_path = _workpath(args, args.subset)
    _check_fresh(subset_provenance(subset_path), "manifest", manifest_path)
    subset = load_subset(subset_path)
    subset.validate(manifest.num_samples)
    ids = _resolve_models(manifest, args, "source")
    threads = _threads(args)

    if args.predictor == "weighted_sum":
        if subset.weights is None:
            raise MissingWeights("subset has no anchor weights to fit weighted_sum")
        model = PredictorModel(kind="weighted_sum", anchor_weights=subset.weights)
    else:
        accs, rows = [], []
        for mid in ids:
            acc = manifest.model(mid).true_accuracy
            if acc is None:
                raise TooFewModels(f"model {mid!r} lacks a known accuracy")
            tensor = load_tensor(manifest, mid)
            rows.append(build_signature(tensor, subset, args.mode,
                                        labels=manifest.labels).vector)
            accs.append(acc)
        matrix = np.stack(rows)
        projection = None
        features = matrix
        if args.pca_dim != 0:
            d = args.pca_dim or default_pca_dim(matrix.shape[0], matrix.shape[1])
            projection = pca_fit(matrix, d)
            features = pca_transform(projection, matrix)
        config = ({"k_neighbors": args.k_neighbors} if args.predictor == "knn"
                  else ForestConfig(n_trees=args.trees, min_leaf=args.min_leaf,
                                    feature_frac=args.feature_frac)
                  if args.predictor == "random_forest" else {})
        model = train(args.predictor, features, accs, config, seed=args.seed,
                      projection=projection, threads=threads)

    out = _workpath(args, args.out)
    prov = _provenance(args.seed, manifest=manifest_path, subset=subset_path)
    prov["mode"] = args.mode
    prov["models"] = ids
    save_predictor(model, out, provenance=prov)
    print(f"fit: wrote {out} (kind={model.kind}, models={len(ids)})")
    return 0


def cmd_predict(args) -> int:
    manifest_path = _workpath(args, args.manifest)
    manifest = load_manifest(manifest_path)
    model_path = _workpath(args, args.model)
    subset_path = _workpath(args, args.subset)
    from .dten import read_bundle

    header, _ = read_bundle(model_path)
    _check_fresh(header.get("provenance"), "manifest", manifest_path)
    _check_fresh(header.get("provenance"), "subset", subset_path)
    mode = header.get("provenance", {}).get("mode", args.mode)
    model = load_predictor(model_path)
    subset = load_subset(subset_path)
    subset.validate(manifest.num_samples)
    ids = _resolve_models(manifest, args, "target")

    predictions = {}
    for mid in ids:
        tensor = load_tensor(manifest, mid)
        if model.kind == "weighted_sum":
            bits = correctness(tensor, manifest).bits[subset.indices]
            predictions[mid] = predict_weighted_sum(subset, bits)
        else:
            sig = build_signature(tensor, subset, mode, labels=manifest.labels)
            predictions[mid] = predict(model, sig.vector)

    out = _workpath(args, args.out)
    obj = {
        "predictions": predictions,
        "provenance": _provenance(args.seed, manifest=manifest_path,
                                  model=model_path, subset=subset_path),
    }
    out.write_text(json.dumps(obj, indent=2) + "\n")
    print(f"predict: wrote {out} ({len(predictions)} models)")
    return 0


def _split_from_args(manifest: BenchmarkManifest, args) -> object:
    if args.cutoff:
        return split_models(manifest, ChronologicalSplit(_parse_cutoff(manifest, args.cutoff)))
    return split_models(manifest, UniformSplit(args.split_ratio, args.split_seed))


def _predictor_config(args, kind: str) -> PredictorConfig:
    return PredictorConfig(
        kind=kind,
        signature_mode=args.mode,
        pca_dim=args.pca_dim,
        k_neighbors=args.k_neighbors,
        forest=ForestConfig(n_trees=args.trees, min_leaf=args.min_leaf,
                            feature_frac=args.feature_frac),
    )


def cmd_evaluate(args) -> int:
    manifest_path = _workpath(args, args.manifest)
    manifest = load_manifest(manifest_path)
    split = _split_from_args(manifest, args)
    tensors = {mid: load_tensor(manifest, mid)
               for mid in split.source_ids + split.target_ids}
    report = run_pipeline(manifest, tensors, split,
                          SelectionConfig(method=args.selection),
                          _predictor_config(args, args.predictor),
                          args.k, args.seed, threads=_threads(args))
    out = _workpath(args, args.out)
    save_report(report, out, provenance=_provenance(args.seed, manifest=manifest_path))
    print(f"evaluate: wrote {out} (mae_pp={report.mae_pp:.4f}, "
          f"spearman={report.spearman:.4f})")
    return 0


def cmd_sweep(args) -> int:
    manifest_path = _workpath(args, args.manifest)
    manifest = load_manifest(manifest_path)
    split = _split_from_args(manifest, args)
    tensors = {mid: load_tensor(manifest, mid)
               for mid in split.source_ids + split.target_ids}
    budgets = sorted(int(b) for b in args.budgets.split(","))
    seeds = [int(s) for s in args.seeds.split(",")]
    configs = []
    for entry in args.configs.split(","):
        try:
            sel, pred = entry.split(":")
        except ValueError:
            raise InvalidConfig(f"config must look like selection:predictor, "
                                f"got {entry!r}")
        configs.append((SelectionConfig(method=sel), _predictor_config(args, pred)))
    reports = sweep_budgets(manifest, tensors, split, configs, budgets, seeds,
                            threads=_threads(args))
    out = _workpath(args, args.out)
    write_sweep_csv(reports, out)
    prov = _provenance(args.seed, manifest=manifest_path)
    prov["budgets"] = budgets
    prov["seeds"] = seeds
    Path(str(out) + ".prov.json").write_text(json.dumps(prov, indent=2) + "\n")
    print(f"sweep: wrote {out} ({len(reports)} rows)")
    return 0


def cmd_synth(args) -> int:
    config = SynthConfig(
        m_models=args.models_count,
        n_samples=args.samples,
        c_classes=args.classes,
        ability_dim=args.dim,
        seed=args.seed,
        noise_temperature=args.temperature,
        date_start=_dt.date.fromisoformat(args.date_start),
        date_end=_dt.date.fromisoformat(args.date_end),
    )
    manifest, tensors = generate_population(config)
    out_dir = _workpath(args, args.out)
    manifest_path = save_population(manifest, tensors, out_dir)
    prov = _provenance(args.seed, manifest=manifest_path)
    prov["config"] = {
        "m_models": config.m_models, "n_samples": config.n_samples,
        "c_classes": config.c_classes, "ability_dim": config.ability_dim,
        "seed": config.seed, "noise_temperature": config.noise_temperature,
        "date_start": config.date_start.isoformat(),
        "date_end": config.date_end.isoformat(),
    }
    (out_dir / "provenance.json").write_text(json.dumps(prov, indent=2) + "\n")
    print(f"synth: wrote {manifest_path} ({config.m_models} models, "
          f"{config.n_samples} samples)")
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="base directory for relative paths")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", default=None,
                        help="intra-stage parallelism: integer or 'auto' "
                             "(env DISCO_THREADS as fallback)")

    pred_common = argparse.ArgumentParser(add_help=False)
    pred_common.add_argument("--mode", default="probs",
                             choices=("probs", "onehot", "correctness"))
    pred_common.add_argument("--pca-dim", type=int, default=None,
                             help="projection width; 0 disables PCA")
    pred_common.add_argument("--k-neighbors", type=int, default=5)
    pred_common.add_argument("--trees", type=int, default=200)
    pred_common.add_argument("--min-leaf", type=int, default=2)
    pred_common.add_argument("--feature-frac", type=float, default=1.0)

    split_common = argparse.ArgumentParser(add_help=False)
    split_common.add_argument("--cutoff", default=None,
                              help="chronological split: ISO date or 'median'")
    split_common.add_argument("--split-ratio", type=float, default=0.9)
    split_common.add_argument("--split-seed", type=int, default=0)

    parser = _Parser(prog="disco", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common])
    p.add_argument("manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("score", parents=[common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=("pds", "jsd"), default="pds")
    p.add_argument("--models", default=None, help="comma-separated model ids")
    p.add_argument("--cutoff", default=None, help="use models before this date")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", parents=[common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True,
                   choices=("random", "topk_pds", "topk_jsd", "stratified_topk",
                            "kmedoids_conf", "kmedoids_corr", "best_for_validation"))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--scores", default=None, help="score CSV for top-k methods")
    p.add_argument("--criterion", default="pds_env",
                   choices=("pds_env", "pds_eq1", "jsd_bits"))
    p.add_argument("--candidates", type=int, default=1000)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--models", default=None)
    p.add_argument("--cutoff", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit", parents=[common, pred_common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", required=True)
    p.add_argument("--predictor", required=True,
                   choices=("knn", "linear", "random_forest", "weighted_sum"))
    p.add_argument("--models", default=None)
    p.add_argument("--cutoff", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--subset", required=True)
    p.add_argument("--models", default=None)
    p.add_argument("--cutoff", default=None)
    p.add_argument("--mode", default="probs",
                   choices=("probs", "onehot", "correctness"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common, pred_common, split_common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--selection", default="topk_pds",
                   choices=("random", "topk_pds", "topk_jsd", "stratified_topk",
                            "kmedoids_conf", "kmedoids_corr", "best_for_validation"))
    p.add_argument("--predictor", default="random_forest",
                   choices=("direct", "weighted_sum", "knn", "linear", "random_forest"))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common, pred_common, split_common])
    p.add_argument("--manifest", required=True)
    p.add_argument("--budgets", required=True, help="comma-separated K values")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--configs", required=True,
                   help="comma-separated selection:predictor pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", parents=[common])
    p.add_argument("--out", required=True)
    p.add_argument("--models-count", type=int, default=200)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--date-start", default="2023-01-01")
    p.add_argument("--date-end", default="2024-12-31")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DiscoError as e:
        sys.stderr.write(f"disco {args.command}: {type(e).__name__}: {e}\n")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
