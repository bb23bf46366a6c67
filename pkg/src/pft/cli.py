"""Command-line entry points for the staged pipeline and its exports.

Commands (all accept --seed, --config, --out):

    gen-data             render the synthetic benchmark to a dataset directory
    train-source         phase 1, writes source.ckpt
    pretrain-translator  phase 2, writes translator.ckpt and a pairing audit CSV
    adapt                phase 3, writes adapted/subject_<id>.ckpt per target subject
    eval                 all three settings -> report.csv, cost.csv, run_manifest.json
    ablate-dim           feature-dimension sweep summary
    ablate-pairing       pairing-strategy sweep summary
    export-embeddings    2-D projected features CSV for source_only vs pft
    report               merge row CSVs into a subjects-by-setting matrix

Failures print a machine-readable JSON object {code, message, context} on
stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import persist, pipeline, reports
from .config import ConfigError, RunConfig, config_to_dict, load_config
from .numerics import NumericError, ShapeError
from .pairing import build_pairs, export_pairs_csv
from .persist import CheckpointError, load_checkpoint, load_into, save_checkpoint
from .synthdata import SourceClosedError, derive_seed, generate_dataset

SOURCE_CKPT = "source.ckpt"
TRANSLATOR_CKPT = "translator.ckpt"
ADAPTED_DIR = "adapted"


class DependencyError(RuntimeError):
    """A required input artifact from an earlier stage is missing."""


def _error_code(err: Exception) -> str:
    from .reports import ManifestMismatchError

    codes = {
        ConfigError: "invalid_config",
        DependencyError: "missing_dependency",
        FileNotFoundError: "missing_file",
        persist.ChecksumError: "checksum_mismatch",
        persist.VersionError: "version_mismatch",
        persist.BadMagicError: "bad_magic",
        persist.TruncatedError: "truncated_file",
        persist.EntryShapeError: "dimension_mismatch",
        ManifestMismatchError: "manifest_mismatch",
        SourceClosedError: "source_closed",
        NumericError: "numeric_error",
        ShapeError: "shape_error",
    }
    for cls, code in codes.items():
        if isinstance(err, cls):
            return code
    if isinstance(err, CheckpointError):
        return "checkpoint_error"
    if isinstance(err, ValueError):
        return "invalid_value"
    return type(err).__name__


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DependencyError(f"{what} not found: {path} (run the earlier stage first)")
    return path


def _load_run(args) -> RunConfig:
    return load_config(args.config, seed=args.seed)


def _manifest(cfg: RunConfig) -> str:
    return persist.manifest_hash(config_to_dict(cfg))


def _load_models(cfg: RunConfig, models_dir: Path, with_translator: bool = False):
    dataset_spec = cfg.dataset
    extractor, classifier, translator = pipeline.build_models(
        cfg.train, dataset_spec.input_dim, dataset_spec.n_classes)
    entries = load_checkpoint(_require(models_dir / SOURCE_CKPT, "source checkpoint"))
    load_into({"extractor": extractor, "classifier": classifier}, entries)
    if with_translator:
        t_entries = load_checkpoint(_require(models_dir / TRANSLATOR_CKPT, "translator checkpoint"))
        load_into({"translator": translator}, t_entries)
    return extractor, classifier, translator


def cmd_gen_data(args) -> int:
    cfg = _load_run(args)
    dataset = generate_dataset(cfg.dataset)
    persist.save_dataset(dataset, args.out)
    print(f"dataset written to {args.out} "
          f"({cfg.dataset.n_source_subjects} source / {cfg.dataset.n_target_subjects} target subjects)")
    return 0


def cmd_train_source(args) -> int:
    cfg = _load_run(args)
    dataset = persist.load_dataset(_require(Path(args.data), "dataset directory"))
    t0 = time.perf_counter()
    extractor, classifier, history = pipeline.train_source_classifier(dataset, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint({"extractor": extractor, "classifier": classifier}, out / SOURCE_CKPT)
    (out / "classifier_history.json").write_text(json.dumps(history, indent=2))
    val_acc = history[-1]["val_acc"] if history else float("nan")
    print(f"source classifier trained in {time.perf_counter() - t0:.1f}s, "
          f"val accuracy {100 * val_acc:.2f}% -> {out / SOURCE_CKPT}")
    return 0


def cmd_pretrain_translator(args) -> int:
    cfg = _load_run(args)
    dataset = persist.load_dataset(_require(Path(args.data), "dataset directory"))
    models_dir = Path(args.models or args.out)
    extractor, classifier, _ = _load_models(cfg, models_dir)
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.train.seed, "pairing")))
    pairs = build_pairs(cfg.pairing.strategy, dataset.source_train(), rng,
                        extractor=extractor, classifier=classifier,
                        profiles=dataset.profiles_by_id(), cfg=cfg.pairing)
    translator, history = pipeline.pretrain_translator(dataset, pairs, extractor, classifier, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint({"translator": translator}, out / TRANSLATOR_CKPT)
    export_pairs_csv(pairs, out / "pairs.csv")
    (out / "translator_history.json").write_text(json.dumps(history, indent=2))
    print(f"translator pretrained ({cfg.pairing.strategy} pairing, {len(pairs)} pairs) "
          f"-> {out / TRANSLATOR_CKPT}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load_run(args)
    dataset = persist.load_dataset(_require(Path(args.data), "dataset directory"))
    models_dir = Path(args.models or args.out)
    extractor, classifier, translator = _load_models(cfg, models_dir, with_translator=True)
    dataset.close_source()
    out = Path(args.out) / ADAPTED_DIR
    out.mkdir(parents=True, exist_ok=True)
    for sid in sorted(dataset.target_adapt):
        personalized, losses = pipeline.adapt_target(
            dataset.target_adapt[sid], extractor, classifier, translator, cfg.train)
        save_checkpoint({"translator": personalized}, out / f"subject_{sid}.ckpt")
        first = losses[0] if losses else float("nan")
        last = losses[-1] if losses else float("nan")
        print(f"subject {sid}: adaptation loss {first:.6f} -> {last:.6f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run(args)
    dataset = persist.load_dataset(_require(Path(args.data), "dataset directory"))
    models_dir = Path(args.models or args.out)
    extractor, classifier, translator = _load_models(cfg, models_dir, with_translator=True)
    adapted_dir = _require(models_dir / ADAPTED_DIR, "adapted translators directory")
    translators = {}
    for sid in sorted(dataset.target_adapt):
        ckpt = _require(adapted_dir / f"subject_{sid}.ckpt", f"adapted checkpoint for subject {sid}")
        personalized = translator.clone()
        load_into({"translator": personalized}, load_checkpoint(ckpt))
        translators[sid] = personalized
    dataset.close_source()
    t0 = time.perf_counter()
    oracles = {sid: pipeline.oracle_finetune(dataset.target_train[sid], extractor, classifier,
                                             cfg.train, sid)
               for sid in sorted(dataset.target_train)}
    report = pipeline.evaluate(dataset, extractor, classifier, translators, oracles)
    report.manifest_hash = _manifest(cfg)
    from .models import count_cost

    report.cost = count_cost(extractor, classifier, translator)
    report.timings = {"eval_total": time.perf_counter() - t0}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports.write_report_csv(report, out / "report.csv")
    reports.write_cost_csv(reports.cost_table(extractor, classifier, translator), out / "cost.csv")
    (out / "run_manifest.json").write_text(json.dumps({
        "config": config_to_dict(cfg),
        "manifest_hash": report.manifest_hash,
        "cost": report.cost,
        "timings": report.timings,
    }, indent=2, sort_keys=True))
    print(reports.format_matrix({s: {r.subject_id: r.accuracy_pct
                                     for r in report.rows if r.setting == s}
                                 for s in pipeline.SETTINGS}))
    return 0


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def cmd_ablate_dim(args) -> int:
    cfg = _load_run(args)
    dims = _parse_int_list(args.dims) if args.dims else pipeline.ALLOWED_FEAT_DIMS
    seeds = _parse_int_list(args.seeds) if args.seeds else (0, 1, 2, 3, 4)
    result = pipeline.ablate_dims(cfg.dataset, cfg.train, dims=dims, seeds=seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "dim_summary.csv", "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["feat_dim", "source_only", "pft", "oracle",
                         "reference_accuracy", "reference_source"])
        for dim in dims:
            s = result.summary[dim]
            ref = result.annotation["reference_accuracy"].get(dim, "")
            writer.writerow([dim, f"{s['source_only']:.2f}", f"{s['pft']:.2f}",
                             f"{s['oracle']:.2f}", ref, result.annotation["note"]])
    for dim in dims:
        print(f"feat_dim {dim}: pft {result.summary[dim]['pft']:.2f}%")
    return 0


def cmd_ablate_pairing(args) -> int:
    cfg = _load_run(args)
    strategies = tuple(args.strategies.split(",")) if args.strategies else ("random", "cosine", "landmark")
    seeds = _parse_int_list(args.seeds) if args.seeds else (0, 1, 2, 3, 4)
    result = pipeline.ablate_pairing(cfg.dataset, cfg.train, strategies=strategies, seeds=seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pairing_summary.csv", "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["strategy", "source_only", "pft", "oracle", "note"])
        for strategy in strategies:
            s = result.summary[strategy]
            writer.writerow([strategy, f"{s['source_only']:.2f}", f"{s['pft']:.2f}",
                             f"{s['oracle']:.2f}", result.annotation["note"]])
    for strategy in strategies:
        print(f"{strategy}: pft {result.summary[strategy]['pft']:.2f}%")
    return 0


def cmd_export_embeddings(args) -> int:
    cfg = _load_run(args)
    dataset = persist.load_dataset(_require(Path(args.data), "dataset directory"))
    models_dir = Path(args.models)
    extractor, classifier, translator = _load_models(cfg, models_dir, with_translator=True)
    adapted_dir = _require(models_dir / ADAPTED_DIR, "adapted translators directory")
    translators = {}
    for sid in sorted(dataset.target_adapt):
        ckpt = _require(adapted_dir / f"subject_{sid}.ckpt", f"adapted checkpoint for subject {sid}")
        personalized = translator.clone()
        load_into({"translator": personalized}, load_checkpoint(ckpt))
        translators[sid] = personalized
    records = reports.export_embeddings(dataset, extractor, translators, args.out,
                                        manifest=_manifest(cfg))
    ratios = reports.setting_separation(records)
    print(f"embeddings -> {args.out}; separation ratio source_only {ratios['source_only']:.3f}, "
          f"pft {ratios['pft']:.3f}")
    return 0


def cmd_report(args) -> int:
    merged, manifest = reports.merge_reports(args.inputs)
    text = reports.format_matrix(merged)
    if args.out:
        reports.write_matrix_csv(merged, manifest, args.out)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pft", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override dataset and train seeds")
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("gen-data", help="render the synthetic benchmark")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", help="train and freeze the source classifier")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("pretrain-translator", help="subject-swapping translator pretraining")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", default=None, help="directory with source.ckpt (default: --out)")
    p.set_defaults(func=cmd_pretrain_translator)

    p = sub.add_parser("adapt", help="personalize the translator per target subject")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate source_only / pft / oracle")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-dim", help="feature-dimension sweep")
    common(p)
    p.add_argument("--dims", default=None, help="comma-separated dims (default 64,128,256,512)")
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default 0..4)")
    p.set_defaults(func=cmd_ablate_dim)

    p = sub.add_parser("ablate-pairing", help="pairing-strategy sweep")
    common(p)
    p.add_argument("--strategies", default=None)
    p.add_argument("--seeds", default=None)
    p.set_defaults(func=cmd_ablate_pairing)

    p = sub.add_parser("export-embeddings", help="2-D projected features CSV")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("report", help="merge row CSVs into a matrix")
    common(p, out_required=False)
    p.add_argument("inputs", nargs="+", help="report CSV files to merge")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary, reported as JSON
        payload = {
            "code": _error_code(err),
            "message": str(err),
            "context": {"command": args.command},
        }
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
