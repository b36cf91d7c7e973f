"""Experiment protocol: per-dataset and combined training, the intra/inter
evaluation matrix, t-SNE of extracted features, and run summaries.

Run directory layout::

    <out>/config.ini                      snapshot of the input config
    <out>/matrix.csv, matrix_rounded.csv
    <out>/summary.md, summary.csv
    <out>/quarantine.csv
    <out>/train_<set>/checkpoint.swck, trace.csv, curves.svg, quarantine.csv,
                      splits.csv
    <out>/train_<set>/eval_<test>/report.csv, report_rounded.csv,
                                  roc_points.csv, roc.svg, scores.csv
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, datapipe, metrics, svg
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .datapipe import DatasetManifest
from .errors import ConfigError, DataError, QuarantineError, SwinsightError
from .swin import CLASS_NAMES, SwinModel
from .training import EvalResult, TrainTrace, array_batches, evaluate, fit
from .tsne import run_tsne

logger = logging.getLogger(__name__)

REPORT_HEADER = ["train_set", "test_set", *metrics.REPORT_COLUMNS]
MATRIX_HEADER = REPORT_HEADER + ["status"]
# fixed so matrix cells and standalone evaluations batch identically
EVAL_BATCH = 32


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    return path


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def combined_name(ids) -> str:
    return "+".join(ids)


# ---------------------------------------------------------------- data preparation


def scan_quarantine(manifest: DatasetManifest) -> DatasetManifest:
    """Try to decode every sample; failures are added to the quarantine list."""
    found = list(manifest.quarantine)
    known = {p for p, _ in found}
    for s in manifest.samples:
        if s.path in known:
            continue
        try:
            datapipe.decode_image(manifest.resolve(s))
        except QuarantineError as exc:
            found.append((s.path, exc.reason))
    return DatasetManifest(list(manifest.samples), manifest.root, found)


def prepare_dataset(cfg: ExperimentConfig, dataset_id: str) -> DatasetManifest:
    manifest = datapipe.load_manifest(cfg.manifests[dataset_id])
    if cfg.split_ratios is not None:
        manifest = datapipe.build_splits(manifest, cfg.split_ratios, cfg.seed)
    elif any(s.split is None for s in manifest.samples):
        raise DataError(f"{dataset_id}: manifest has rows without a split; set [data] split_ratios")
    return scan_quarantine(manifest)


def combined_manifest(cfg: ExperimentConfig, parts: dict[str, DatasetManifest]) -> DatasetManifest:
    """Balanced union for the combined training set.

    Only train/val samples of each dataset enter the pool so every
    dataset's test split stays unseen.  The pool is balanced to
    ``per_class`` per class, then re-split into train/val stratified by
    label, which keeps the classes exactly equal in both splits.
    """
    roots = [m.root.resolve() for m in parts.values()]
    root = Path(os.path.commonpath(roots)) if roots else Path(".")
    pool = datapipe.merge_manifests(
        [DatasetManifest([s for s in m.samples if s.split in ("train", "val")], m.root, m.quarantine) for m in parts.values()],
        root,
    )
    balanced = datapipe.balance_classes(pool, cfg.per_class, cfg.seed)
    r_train, r_val, _ = cfg.split_ratios or (0.7, 0.15, 0.15)
    ratios = (r_train / (r_train + r_val), r_val / (r_train + r_val), 0.0)
    return datapipe.build_splits(balanced, ratios, cfg.seed, stratify=("label",))


# ---------------------------------------------------------------- training and evaluation


@dataclass
class TrainOutcome:
    model: SwinModel
    trace: TrainTrace
    quarantine: list[tuple[str, str]] = field(default_factory=list)


def train_on(cfg: ExperimentConfig, manifest: DatasetManifest, train_set: str, out_dir: Path) -> TrainOutcome:
    mc = cfg.model_config()
    dt = cfg.train.dtype
    train = datapipe.load_split(manifest, "train", mc.image_size, dt)
    has_val = any(s.split == "val" for s in manifest.samples)
    val = datapipe.load_split(manifest, "val", mc.image_size, dt) if has_val else None
    quarantine = sorted(set(train.quarantine + (val.quarantine if val else [])))
    model = SwinModel.initialize(mc, cfg.seed, dt)
    trace, adam = fit(
        model,
        train.images,
        train.labels,
        val.images if val else None,
        val.labels if val else None,
        cfg.train,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.swck", Checkpoint.from_model(model, adam, trace, cfg.seed, train_set))
    _write(out_dir / "trace.csv", trace.to_csv())
    _write(
        out_dir / "curves.svg",
        svg.training_curves(
            trace.column("epoch"),
            trace.column("train_acc"),
            trace.column("val_acc"),
            trace.column("train_loss"),
            trace.column("val_loss"),
            title=f"training on {train_set}",
        ),
    )
    _write(out_dir / "quarantine.csv", datapipe.quarantine_csv(quarantine))
    # split assignment actually used (after any re-split), loadable from out_dir
    datapipe.merge_manifests([manifest], out_dir).save(out_dir / "splits.csv")
    return TrainOutcome(model, trace, quarantine)


def check_class_map(ckpt: Checkpoint) -> None:
    expected = dict(enumerate(CLASS_NAMES))
    if ckpt.class_map != expected:
        raise DataError(f"checkpoint class map {ckpt.class_map} does not match manifest labels {expected}")


@dataclass
class EvalOutcome:
    report: metrics.EvalReport
    result: EvalResult
    samples: list


def evaluate_on(
    model: SwinModel,
    manifest: DatasetManifest,
    split: str,
    train_set: str,
    test_set: str,
    out_dir: Path,
    batch_size: int = EVAL_BATCH,
) -> EvalOutcome:
    loaded = datapipe.load_split(manifest, split, model.config.image_size, str(model.dtype))
    result = evaluate(model, array_batches(loaded.images, loaded.labels, batch_size))
    cgi_scores = result.scores[:, 1]
    try:
        report = metrics.report_row(cgi_scores, result.labels)
    except ValueError as exc:
        raise DataError(f"cannot score {test_set}/{split}: {exc}") from None
    out_dir.mkdir(parents=True, exist_ok=True)
    row = [train_set, test_set, *(repr(float(v)) for v in report.row().values())]
    _write(out_dir / "report.csv", _csv([row], REPORT_HEADER))
    _write(out_dir / "report_rounded.csv", _csv([[train_set, test_set, *report.rounded().values()]], REPORT_HEADER))
    roc_rows = [[repr(f), repr(t), "inf" if np.isinf(th) else repr(th)] for f, t, th in report.roc.points()]
    _write(out_dir / "roc_points.csv", _csv(roc_rows, ["fpr", "tpr", "threshold"]))
    _write(out_dir / "roc.svg", svg.roc_chart(report.roc.fpr, report.roc.tpr, report.auc, f"ROC: {train_set} on {test_set}"))
    score_rows = [
        [i, s.path, s.label, s.dataset, repr(float(p))] for i, (s, p) in enumerate(zip(loaded.samples, cgi_scores))
    ]
    _write(out_dir / "scores.csv", _csv(score_rows, ["sample_index", "path", "label", "dataset", "score_cgi"]))
    _write(out_dir / "quarantine.csv", datapipe.quarantine_csv(loaded.quarantine))
    return EvalOutcome(report, result, loaded.samples)


def snapshot_config(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.source_path is not None and Path(cfg.source_path).is_file():
        raw = Path(cfg.source_path).read_bytes()
    else:
        raw = cfg.source_text.encode("utf-8")
    (out_dir / "config.ini").write_bytes(raw)


def run_train(cfg: ExperimentConfig, dataset: str | None = None, out_dir: Path | None = None) -> TrainOutcome:
    """Train on one dataset or, when several are configured and none is named, on their balanced union."""
    out_dir = Path(out_dir or cfg.out_dir)
    if not cfg.manifests:
        raise ConfigError("no datasets configured")
    if dataset is not None and dataset not in cfg.manifests:
        raise ConfigError(f"dataset {dataset!r} is not configured")
    parts = {ds: prepare_dataset(cfg, ds) for ds in cfg.manifests}
    if dataset is None and len(parts) == 1:
        dataset = next(iter(parts))
    if dataset is not None:
        manifest, name = parts[dataset], dataset
    else:
        manifest, name = combined_manifest(cfg, parts), combined_name(parts)
    snapshot_config(cfg, out_dir)
    return train_on(cfg, manifest, name, out_dir)


def run_eval(checkpoint_path, manifest_path, split: str, out_dir, batch_size: int = EVAL_BATCH) -> EvalOutcome:
    ckpt = load_checkpoint(checkpoint_path)
    check_class_map(ckpt)
    model = ckpt.to_model()
    manifest = datapipe.load_manifest(manifest_path)
    if not any(s.split == split for s in manifest.samples):
        raise DataError(f"split {split!r} is empty in {manifest_path}")
    test_set = combined_name(sorted({s.dataset for s in manifest.samples if s.split == split}))
    return evaluate_on(model, manifest, split, ckpt.train_set or "unknown", test_set, Path(out_dir), batch_size)


# ---------------------------------------------------------------- matrix


@dataclass
class MatrixCell:
    train_set: str
    test_set: str
    report: metrics.EvalReport | None
    status: str


@dataclass
class ExperimentResult:
    cells: list[MatrixCell]
    traces: dict[str, TrainTrace]
    out_dir: Path
    config_snapshot: bytes
    version: str = __version__

    def matrix(self) -> dict[tuple[str, str], MatrixCell]:
        return {(c.train_set, c.test_set): c for c in self.cells}


def run_matrix(cfg: ExperimentConfig, out_dir: Path | None = None) -> ExperimentResult:
    """Train on each dataset (plus the balanced union when there are two or
    more) and evaluate every model on every dataset's test split.

    A failing training or evaluation becomes an error cell; other cells
    still run.
    """
    out_dir = Path(out_dir or cfg.out_dir)
    ids = cfg.dataset_ids
    if not ids:
        raise ConfigError("no datasets configured")
    snapshot_config(cfg, out_dir)
    parts: dict[str, DatasetManifest] = {}
    prep_errors: dict[str, str] = {}
    for ds in ids:
        try:
            parts[ds] = prepare_dataset(cfg, ds)
        except SwinsightError as exc:
            prep_errors[ds] = f"error: {exc}"
    train_sets = list(ids) + ([combined_name(ids)] if len(ids) > 1 else [])
    cells: list[MatrixCell] = []
    traces: dict[str, TrainTrace] = {}
    all_quarantine: set[tuple[str, str]] = set()
    for ts in train_sets:
        cell_dir = out_dir / f"train_{ts}"
        model, failure = None, None
        try:
            if ts in prep_errors:
                raise DataError(prep_errors[ts])
            if ts in parts:
                manifest = parts[ts]
            else:
                if prep_errors:
                    raise DataError("combined set unavailable: " + "; ".join(f"{k}: {v}" for k, v in prep_errors.items()))
                manifest = combined_manifest(cfg, parts)
            outcome = train_on(cfg, manifest, ts, cell_dir)
            model = outcome.model
            traces[ts] = outcome.trace
        except SwinsightError as exc:
            failure = str(exc) if str(exc).startswith("error:") else f"error: {exc}"
            logger.error("training on %s failed: %s", ts, exc)
        for test in ids:
            if model is None or test not in parts:
                reason = failure or prep_errors.get(test, "error: unavailable")
                cells.append(MatrixCell(ts, test, None, reason))
                continue
            try:
                ev = evaluate_on(model, parts[test], "test", ts, test, cell_dir / f"eval_{test}")
                cells.append(MatrixCell(ts, test, ev.report, "ok"))
            except SwinsightError as exc:
                logger.error("evaluating %s on %s failed: %s", ts, test, exc)
                cells.append(MatrixCell(ts, test, None, f"error: {exc}"))
    for ds, m in parts.items():
        all_quarantine.update((f"{ds}:{p}", r) for p, r in m.quarantine)
    write_matrix(cells, out_dir)
    _write(out_dir / "quarantine.csv", datapipe.quarantine_csv(sorted(all_quarantine)))
    write_summary(out_dir)
    return ExperimentResult(cells, traces, out_dir, (out_dir / "config.ini").read_bytes())


def write_matrix(cells: list[MatrixCell], out_dir: Path) -> None:
    full, rounded = [], []
    for c in cells:
        if c.report is None:
            blanks = [""] * len(metrics.REPORT_COLUMNS)
            full.append([c.train_set, c.test_set, *blanks, c.status])
            rounded.append([c.train_set, c.test_set, *blanks, c.status])
        else:
            full.append([c.train_set, c.test_set, *(repr(float(v)) for v in c.report.row().values()), c.status])
            rounded.append([c.train_set, c.test_set, *c.report.rounded().values(), c.status])
    _write(out_dir / "matrix.csv", _csv(full, MATRIX_HEADER))
    _write(out_dir / "matrix_rounded.csv", _csv(rounded, MATRIX_HEADER))


# ---------------------------------------------------------------- summary


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_summary(run_dir) -> tuple[str, list[str]]:
    """Build ``summary.md``/``summary.csv`` from whatever the run produced.

    Returns the markdown text and the list of missing artifacts.
    """
    run_dir = Path(run_dir)
    missing: list[str] = []
    matrix_path = run_dir / "matrix.csv"
    if matrix_path.is_file():
        rows = _read_csv(matrix_path)
    else:
        missing.append("matrix.csv")
        rows = []
        for rep in sorted(run_dir.rglob("report.csv")):
            for r in _read_csv(rep):
                r["status"] = "ok"
                rows.append(r)

    train_sets = list(dict.fromkeys(r["train_set"] for r in rows))
    test_sets = list(dict.fromkeys(r["test_set"] for r in rows))
    for ts in train_sets:
        tdir = run_dir / f"train_{ts}"
        if matrix_path.is_file():
            for name in ("checkpoint.swck", "trace.csv", "curves.svg"):
                if not (tdir / name).is_file():
                    missing.append(f"train_{ts}/{name}")
    for r in rows:
        if r.get("status", "ok") != "ok":
            missing.append(f"cell {r['train_set']} -> {r['test_set']}: {r['status']}")
        elif matrix_path.is_file():
            edir = f"train_{r['train_set']}/eval_{r['test_set']}"
            for name in ("report.csv", "roc.svg", "scores.csv"):
                if not (run_dir / edir / name).is_file():
                    missing.append(f"{edir}/{name}")

    # Table-2 layout: intra-dataset cells, and the combined model scored on the pooled test sets
    summary_rows: list[tuple[str, str, dict[str, str]]] = []
    by_key = {(r["train_set"], r["test_set"]): r for r in rows}
    for ts in train_sets:
        if (ts, ts) in by_key and by_key[(ts, ts)].get("status", "ok") == "ok":
            r = by_key[(ts, ts)]
            summary_rows.append((ts, ts, {k: metrics.format_2dp(float(r[k])) for k in metrics.REPORT_COLUMNS}))
        elif "+" in ts:
            pooled = _pooled_scores(run_dir, ts, [t for t in test_sets if (ts, t) in by_key])
            if pooled is not None:
                rep = metrics.report_row(*pooled)
                summary_rows.append((ts, "pooled test splits", rep.rounded()))

    lines = ["# Run summary", "", "## Per-training-set results (2 d.p.)", ""]
    lines.append("| Train set | Test set | Accuracy | Precision | Recall | F1-score | AUC |")
    lines.append("|---|---|---|---|---|---|---|")
    for ts, test, vals in summary_rows:
        lines.append(f"| {ts} | {test} | " + " | ".join(vals[k] for k in metrics.REPORT_COLUMNS) + " |")
    lines += ["", "## Intra/inter-dataset matrix (accuracy / AUC)", ""]
    if rows:
        lines.append("| Train \\ Test | " + " | ".join(test_sets) + " |")
        lines.append("|---" * (len(test_sets) + 1) + "|")
        for ts in train_sets:
            cells = []
            for t in test_sets:
                r = by_key.get((ts, t))
                if r is None:
                    cells.append("n/a")
                elif r.get("status", "ok") != "ok":
                    cells.append("error")
                else:
                    kind = "intra" if t in ts.split("+") else "inter"
                    cells.append(f"{metrics.format_2dp(float(r['accuracy']))} / {metrics.format_2dp(float(r['auc']))} ({kind})")
            lines.append(f"| {ts} | " + " | ".join(cells) + " |")
    else:
        lines.append("No results found.")
    if missing:
        lines += ["", "## Missing artifacts", ""]
        lines += [f"- {m}" for m in missing]
    text = "\n".join(lines) + "\n"
    _write(run_dir / "summary.md", text)
    _write(
        run_dir / "summary.csv",
        _csv([[ts, test, *vals.values()] for ts, test, vals in summary_rows], REPORT_HEADER),
    )
    return text, missing


def _pooled_scores(run_dir: Path, train_set: str, tests: list[str]):
    scores, labels = [], []
    for t in tests:
        path = run_dir / f"train_{train_set}" / f"eval_{t}" / "scores.csv"
        if not path.is_file():
            return None
        for r in _read_csv(path):
            scores.append(float(r["score_cgi"]))
            labels.append(int(r["label"]))
    if not labels or len(set(labels)) < 2:
        return None
    return np.array(scores), np.array(labels)


# ---------------------------------------------------------------- t-SNE


def embed_features(
    features: np.ndarray,
    labels,
    datasets,
    out_dir,
    perplexity: float = 30.0,
    seed: int = 0,
    iterations: int = 1000,
    title: str = "t-SNE of extracted features",
):
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < 4:
        raise DataError(f"t-SNE needs at least 4 samples, got {features.shape[0]}")
    emb = run_tsne(features, perplexity=perplexity, iterations=iterations, seed=seed)
    out_dir = Path(out_dir)
    rows = [
        [i, repr(float(x)), repr(float(y)), CLASS_NAMES[int(lab)], ds]
        for i, ((x, y), lab, ds) in enumerate(zip(emb.Y, labels, datasets))
    ]
    _write(out_dir / "embedding.csv", _csv(rows, ["sample_index", "x", "y", "label", "dataset"]))
    _write(out_dir / "tsne.svg", svg.scatter_chart(emb.Y, labels, title))
    return emb


def run_tsne_on_checkpoint(
    checkpoint_path, manifest_path, out_dir, split: str = "test", perplexity: float = 30.0, seed: int = 0, iterations: int = 1000
):
    ckpt = load_checkpoint(checkpoint_path)
    check_class_map(ckpt)
    model = ckpt.to_model()
    manifest = datapipe.load_manifest(manifest_path)
    loaded = datapipe.load_split(manifest, split, model.config.image_size, str(model.dtype))
    feats = np.concatenate(
        [model.extract_features(x) for x, _ in array_batches(loaded.images, loaded.labels, 64)]
    )
    return embed_features(
        feats, loaded.labels, [s.dataset for s in loaded.samples], out_dir, perplexity, seed, iterations
    )


def load_feature_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Feature file with columns ``label,dataset,f0,f1,...`` (label real/cgi or 0/1)."""
    rows = _read_csv(Path(path))
    if not rows:
        raise DataError(f"{path}: no feature rows")
    fcols = [k for k in rows[0] if k not in ("label", "dataset")]
    labels, datasets, feats = [], [], []
    for i, r in enumerate(rows, start=2):
        lab = r["label"]
        if lab in datapipe.LABELS:
            labels.append(datapipe.LABELS[lab])
        elif lab in ("0", "1"):
            labels.append(int(lab))
        else:
            raise DataError(f"{path}: row {i}: bad label {lab!r}")
        datasets.append(r.get("dataset", ""))
        feats.append([float(r[c]) for c in fcols])
    return np.array(feats), np.array(labels), datasets
