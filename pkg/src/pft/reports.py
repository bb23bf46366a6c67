"""Report serialization: metrics CSV, merged accuracy matrix, embeddings, cost table.

Accuracy CSVs carry two representations per row, a 2-decimal percentage for
table display and a full-precision raw value, plus the run-manifest hash so
merges can refuse rows from different runs. Only deterministic fields are
written, which makes byte-identity across reruns an assertable property.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .models import Classifier, FeatureExtractor, Translator, count_cost
from .pipeline import SETTINGS, EvalReport, EvalRow, REPORTED_MARKER, predict
from .synthdata import Dataset, samples_to_arrays

__all__ = [
    "write_report_csv",
    "read_report_csv",
    "merge_reports",
    "format_matrix",
    "fit_pca2",
    "export_embeddings",
    "separation_ratio",
    "setting_separation",
    "cost_table",
    "write_cost_csv",
    "ManifestMismatchError",
]

REPORT_HEADER = ["subject_id", "setting", "accuracy_pct", "accuracy_raw", "n_test",
                 "personalized", "manifest"]


class ManifestMismatchError(RuntimeError):
    """Refusing to merge rows produced under different run manifests."""


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in report.rows:
            writer.writerow([row.subject_id, row.setting, f"{row.accuracy_pct:.2f}",
                             repr(row.accuracy_pct), row.n_test,
                             int(row.personalized), report.manifest_hash])
        for setting, avg in sorted(report.averages().items()):
            n_total = sum(r.n_test for r in report.rows if r.setting == setting)
            writer.writerow(["avg", setting, f"{avg:.2f}", repr(avg), n_total, 1,
                             report.manifest_hash])


def read_report_csv(path) -> tuple[list[dict], str]:
    """Rows (subject rows only, not averages) plus the file's manifest hash."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        raw = list(reader)
    if not raw:
        raise ValueError(f"{path}: empty report")
    manifests = {r["manifest"] for r in raw}
    if len(manifests) != 1:
        raise ManifestMismatchError(f"{path}: mixed manifest hashes {sorted(manifests)}")
    rows = [r for r in raw if r["subject_id"] != "avg"]
    return rows, manifests.pop()


def merge_reports(paths) -> tuple[dict, str]:
    """Merge row CSVs into {setting: {subject_id: accuracy}}; manifests must agree."""
    merged: dict[str, dict[int, float]] = {}
    manifest = None
    for path in paths:
        rows, file_manifest = read_report_csv(path)
        if manifest is None:
            manifest = file_manifest
        elif manifest != file_manifest:
            raise ManifestMismatchError(
                f"{path}: manifest {file_manifest} does not match {manifest}")
        for r in rows:
            merged.setdefault(r["setting"], {})[int(r["subject_id"])] = float(r["accuracy_raw"])
    return merged, manifest or ""


def format_matrix(merged: dict) -> str:
    """Tables-style text matrix: one row per setting, subject columns plus Avg."""
    subjects = sorted({sid for per in merged.values() for sid in per})
    header = ["Setting"] + [f"Sub-{s}" for s in subjects] + ["Avg."]
    lines = ["\t".join(header)]
    for setting in SETTINGS:
        if setting not in merged:
            continue
        per = merged[setting]
        cells = [f"{per[s]:.2f}" if s in per else "-" for s in subjects]
        avg = float(np.mean(list(per.values())))
        lines.append("\t".join([setting] + cells + [f"{avg:.2f}"]))
    return "\n".join(lines)


def write_matrix_csv(merged: dict, manifest: str, path) -> None:
    subjects = sorted({sid for per in merged.values() for sid in per})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting"] + [f"sub_{s}" for s in subjects] + ["avg", "manifest"])
        for setting in SETTINGS:
            if setting not in merged:
                continue
            per = merged[setting]
            avg = float(np.mean(list(per.values())))
            writer.writerow([setting] + [f"{per.get(s, float('nan')):.2f}" for s in subjects]
                            + [f"{avg:.2f}", manifest])


# ---------------------------------------------------------------------------
# 2-D embedding export
# ---------------------------------------------------------------------------


def fit_pca2(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-2 principal directions of the pooled features, deterministic signs."""
    if features.shape[0] < 2:
        raise ValueError("PCA projection needs at least 2 samples")
    mean = features.mean(axis=0)
    _, _, vt = np.linalg.svd(features - mean, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return mean, comps


def _final_features(extractor: FeatureExtractor, x: np.ndarray,
                    translator: Translator | None = None) -> np.ndarray:
    from .numerics import Tensor

    feats = extractor.extract(Tensor(x))
    if translator is not None:
        feats = translator.translate(feats)
    return feats.final.data


def export_embeddings(dataset: Dataset, extractor: FeatureExtractor,
                      translators: dict[int, Translator], path,
                      manifest: str = "") -> list[dict]:
    """Project test features of both settings onto shared 2-D principal axes.

    The projection is fitted on the pooled source_only + pft features so the
    two settings are directly comparable; one CSV row per sample and setting.
    """
    records: list[dict] = []
    blocks: list[np.ndarray] = []
    for sid in sorted(dataset.target_test):
        samples = dataset.target_test[sid]
        x, y = samples_to_arrays(samples)
        raw = _final_features(extractor, x)
        translated = _final_features(extractor, x, translators.get(sid))
        for setting, feats in (("source_only", raw), ("pft", translated)):
            blocks.append(feats)
            for i, s in enumerate(samples):
                records.append({"subject_id": sid, "frame_id": s.frame_id, "label": int(y[i]),
                                "setting": setting, "_feat": feats[i]})
    pooled = np.concatenate(blocks, axis=0)
    mean, comps = fit_pca2(pooled)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "frame_id", "label", "setting", "pc1", "pc2", "manifest"])
        for rec in records:
            pc = comps @ (rec.pop("_feat") - mean)
            rec["pc1"], rec["pc2"] = float(pc[0]), float(pc[1])
            writer.writerow([rec["subject_id"], rec["frame_id"], rec["label"], rec["setting"],
                             repr(rec["pc1"]), repr(rec["pc2"]), manifest])
    return records


def separation_ratio(points: np.ndarray, labels: np.ndarray) -> float:
    """Between-class centroid distance over mean within-class spread, in 2-D."""
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("separation ratio needs at least two classes")
    centroids = np.stack([points[labels == c].mean(axis=0) for c in classes])
    between = float(np.mean([np.linalg.norm(centroids[i] - centroids[j])
                             for i in range(len(classes)) for j in range(i + 1, len(classes))]))
    within = float(np.mean([np.sqrt(np.mean(np.sum((points[labels == c] - centroids[k]) ** 2, axis=1)))
                            for k, c in enumerate(classes)]))
    return between / max(within, 1e-12)


def setting_separation(records: list[dict]) -> dict[str, float]:
    """Mean per-subject separation ratio for each exported setting."""
    out: dict[str, float] = {}
    for setting in ("source_only", "pft"):
        ratios = []
        sids = sorted({r["subject_id"] for r in records})
        for sid in sids:
            rows = [r for r in records if r["subject_id"] == sid and r["setting"] == setting]
            pts = np.array([[r["pc1"], r["pc2"]] for r in rows])
            labels = np.array([r["label"] for r in rows])
            ratios.append(separation_ratio(pts, labels))
        out[setting] = float(np.mean(ratios))
    return out


# ---------------------------------------------------------------------------
# cost accounting table
# ---------------------------------------------------------------------------

# reference rows reported for the original ResNet-18-scale systems; not measured here
REFERENCE_COSTS = [
    {"model": "PFT (reference)", "params": 500_000, "flops_per_sample": 3_600_000_000,
     "source": REPORTED_MARKER},
    {"model": "SFDA-IT (reference)", "params": 57_200_000, "flops_per_sample": 60_000_000_000,
     "source": REPORTED_MARKER},
]


def cost_table(extractor: FeatureExtractor, classifier: Classifier,
               translator: Translator) -> list[dict]:
    rows = []
    backbone = count_cost(extractor, classifier)
    adapt = count_cost(translator)
    full = count_cost(extractor, classifier, translator)
    rows.append({"model": "backbone (extractor+classifier)", "params": backbone["total_params"],
                 "flops_per_sample": backbone["flops_per_sample"], "source": "measured"})
    rows.append({"model": "translator (adaptation layers)", "params": adapt["total_params"],
                 "flops_per_sample": adapt["flops_per_sample"], "source": "measured"})
    rows.append({"model": "full personalized path", "params": full["total_params"],
                 "flops_per_sample": full["flops_per_sample"], "source": "measured",
                 "trainable_params": full["trainable_params"]})
    rows.extend(dict(r) for r in REFERENCE_COSTS)
    return rows


def write_cost_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "params", "flops_per_sample", "trainable_params", "source"])
        for r in rows:
            writer.writerow([r["model"], r["params"], r["flops_per_sample"],
                             r.get("trainable_params", ""), r["source"]])
