"""
Eval Service - confusion matrices and metrics, the speaker-disjoint
experiment runner, the full grid sweep and report files
"""
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from prosodid.core.errors import EvalError, ProsodidError
from prosodid.models import LabeledDataset, parse_kind, predict, train_model
from prosodid.schemas.corpus import CorpusManifest, FoldPlan, Split, Tier
from prosodid.schemas.experiment import ExperimentConfig
from prosodid.schemas.report import CellFailure, CellKey, CellSummary, EvalReport, SplitResult
from prosodid.services.extraction_service import TierFeatures, load_tier_features, resolve_workers
from prosodid.services.prosody_service import FeatureCombo, parse_combos, stack_matrix

logger = logging.getLogger(__name__)

REPORT_CSV = "report.csv"
CONFUSION_CSV = "confusion.csv"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"


# ============= Metrics =============

@dataclass
class ConfusionMatrix:
    """Counts with rows = reference class, columns = hypothesis."""
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise EvalError(f"confusion matrix must be square, got shape {self.counts.shape}")
        if np.any(self.counts < 0):
            raise EvalError("confusion matrix counts must be non-negative")

    @classmethod
    def from_labels(cls, reference: Sequence[int], hypothesis: Sequence[int], n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(reference, dtype=np.int64), np.asarray(hypothesis, dtype=np.int64)), 1)
        return cls(counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def present(self) -> np.ndarray:
        """Classes with at least one reference unit."""
        return np.flatnonzero(self.row_sums > 0)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def recalls(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class recall; NaN for classes without reference units."""
    rows = cm.row_sums
    out = np.full(cm.n_classes, np.nan)
    present = rows > 0
    out[present] = np.diag(cm.counts)[present] / rows[present]
    return out


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall over the classes present in the reference."""
    if cm.counts.sum() == 0:
        raise EvalError("UAR of an empty confusion matrix")
    r = recalls(cm)
    return float(np.mean(r[~np.isnan(r)]))


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.counts.sum()
    if total == 0:
        raise EvalError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / total)


# ============= Experiment Runner =============

def grid_cells(config: ExperimentConfig) -> List[CellKey]:
    """Cells in report order: tier, combo, context, classifier."""
    classifiers: List[str] = []
    for name in config.classifiers:
        base, delay = parse_kind(name)
        if base == "lstm" and delay is None and config.hyperparameters.lstm_delays != [0]:
            classifiers.extend(f"lstm@d{d}" for d in config.hyperparameters.lstm_delays)
        else:
            classifiers.append(name)
    return [
        CellKey(tier=Tier(tier).value, combo=combo.name, context=context, classifier=clf)
        for tier in config.tiers
        for combo in parse_combos(config.combos)
        for context in config.contexts
        for clf in classifiers
    ]


def split_seed(seed: int, repeat: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, repeat, fold]).generate_state(1)[0])


def build_dataset(
    features: Sequence[TierFeatures],
    speakers: Sequence[str],
    combo: FeatureCombo,
    context: bool,
    class_index: Dict[str, int],
    width: int = 2,
    voicing_flag: bool = False,
) -> LabeledDataset:
    """Per-recording sequences of the given speakers, context-stacked within each recording."""
    wanted = set(speakers)
    sequences, labels, ids = [], [], []
    for rec in features:
        if rec.speaker_id not in wanted or len(rec) == 0:
            continue
        X = rec.select(combo, voicing_flag)
        if context:
            X = stack_matrix(X, width)
        sequences.append(X)
        labels.append(np.full(len(X), class_index[rec.dialect], dtype=np.int64))
        ids.append(rec.recording_id)
    return LabeledDataset.from_sequences(sequences, labels, len(class_index), ids)


def _check_disjoint(split: Split, features: Sequence[TierFeatures], train: LabeledDataset, test: LabeledDataset) -> None:
    speaker_of = {rec.recording_id: rec.speaker_id for rec in features}
    train_speakers = {speaker_of[r] for r in train.recording_ids}
    test_speakers = {speaker_of[r] for r in test.recording_ids}
    if train_speakers & test_speakers:
        raise EvalError(
            f"split r{split.repeat}/f{split.fold} is not speaker-disjoint: {sorted(train_speakers & test_speakers)}"
        )


def run_experiment(
    manifest: CorpusManifest,
    plan: FoldPlan,
    tier: Union[Tier, str],
    combo: Union[FeatureCombo, str],
    context: bool,
    classifier: str,
    seed: Optional[int] = None,
    config: Optional[ExperimentConfig] = None,
    features: Optional[List[TierFeatures]] = None,
    skipped: Optional[List[str]] = None,
) -> List[SplitResult]:
    """
    Train on the speakers of k-1 groups and score the held-out group, for
    every (repeat, fold) of the plan. Empty test folds raise EvalError
    unless a `skipped` list is given, which collects them instead.
    """
    config = config or ExperimentConfig()
    seed = config.seed if seed is None else seed
    tier = Tier(tier)
    combo = FeatureCombo.parse(combo) if isinstance(combo, str) else combo
    features = features if features is not None else load_tier_features(manifest, config, tier)
    class_index = manifest.class_index()
    dialects = manifest.dialects
    cell = CellKey(tier=tier.value, combo=combo.name, context=context, classifier=classifier)
    flag = config.descriptors.voicing_flag
    width = config.context_width

    results: List[SplitResult] = []
    for split in plan.splits():
        train = build_dataset(features, split.train_speakers, combo, context, class_index, width, flag)
        test = build_dataset(features, split.test_speakers, combo, context, class_index, width, flag)
        if len(test) == 0:
            message = f"{cell.label}: empty test fold (repeat {split.repeat}, fold {split.fold})"
            if skipped is None:
                raise EvalError(message)
            logger.warning(message)
            skipped.append(message)
            continue
        if len(train) == 0:
            raise EvalError(f"{cell.label}: empty training set (repeat {split.repeat}, fold {split.fold})")
        _check_disjoint(split, features, train, test)

        model = train_model(classifier, train, config.hyperparameters, seed=split_seed(seed, split.repeat, split.fold))
        cm = ConfusionMatrix.from_labels(test.y, predict(model, test), len(class_index))
        if not np.array_equal(cm.row_sums, np.bincount(test.y, minlength=len(class_index))):
            raise EvalError(f"{cell.label}: confusion rows do not match reference counts")

        r = recalls(cm)
        results.append(SplitResult(
            cell=cell,
            repeat=split.repeat,
            fold=split.fold,
            uar=uar(cm),
            accuracy=accuracy(cm),
            recall=[None if np.isnan(x) else float(x) for x in r],
            confusion=cm.counts.tolist(),
            n_test_units=len(test),
            absent_classes=[dialects[c] for c in np.flatnonzero(np.isnan(r))],
        ))
    return results


# ============= Aggregation =============

def _mean_over_repeats(values: Dict[int, List[float]]) -> Tuple[float, List[float]]:
    per_repeat = [float(np.mean(v)) for _, v in sorted(values.items()) if v]
    return (float(np.mean(per_repeat)) if per_repeat else float("nan")), per_repeat


def aggregate(splits: Sequence[SplitResult], dialects: Sequence[str]) -> CellSummary:
    """Mean over folds within each repeat, then over repeats; confusion counts are summed."""
    if not splits:
        raise EvalError("no split results to aggregate")
    uars: Dict[int, List[float]] = {}
    accs: Dict[int, List[float]] = {}
    class_recalls: List[Dict[int, List[float]]] = [dict() for _ in dialects]
    for s in splits:
        uars.setdefault(s.repeat, []).append(s.uar)
        accs.setdefault(s.repeat, []).append(s.accuracy)
        for c, value in enumerate(s.recall):
            if value is not None:
                class_recalls[c].setdefault(s.repeat, []).append(value)

    mean_uar, per_repeat = _mean_over_repeats(uars)
    mean_acc, _ = _mean_over_repeats(accs)
    recall: Dict[str, Optional[float]] = {}
    for c, dialect in enumerate(dialects):
        value, _ = _mean_over_repeats(class_recalls[c])
        recall[dialect] = None if np.isnan(value) else value

    confusion: List[List[int]] = []
    if all(s.confusion for s in splits):
        confusion = np.sum([np.asarray(s.confusion) for s in splits], axis=0).tolist()
        present = int(np.sum(np.asarray(confusion).sum(axis=1) > 0))
    else:
        present = sum(1 for v in recall.values() if v is not None)

    return CellSummary(
        cell=splits[0].cell,
        uar=mean_uar,
        accuracy=mean_acc,
        uar_per_repeat=per_repeat,
        recall=recall,
        confusion=confusion,
        n_splits=len(splits),
        chance=1.0 / present if present else 0.0,
    )


# ============= Sweep =============

_FEATURES: Dict[Tuple[str, str], List[TierFeatures]] = {}


def _tier_features(manifest: CorpusManifest, config: ExperimentConfig, tier: str) -> List[TierFeatures]:
    key = (config.extraction_fingerprint() + str(config.cache_dir) + manifest.root, tier)
    if key not in _FEATURES:
        _FEATURES[key] = load_tier_features(manifest, config, Tier(tier))
    return _FEATURES[key]


def run_cell(
    manifest: CorpusManifest,
    plan: FoldPlan,
    config: ExperimentConfig,
    cell: CellKey,
    reraise_io: bool = False,
):
    """
    (split results, skipped splits, failure or None) of one grid cell.
    With reraise_io, OSError propagates so a task runner can retry the cell.
    """
    skipped: List[str] = []
    try:
        results = run_experiment(
            manifest, plan, cell.tier, cell.combo, cell.context, cell.classifier,
            seed=config.seed, config=config, features=_tier_features(manifest, config, cell.tier),
            skipped=skipped,
        )
    except Exception as exc:
        if reraise_io and isinstance(exc, OSError):
            raise
        logger.error(f"Grid cell {cell.label} failed: {type(exc).__name__}: {exc}")
        return [], skipped, CellFailure(cell=cell, error=type(exc).__name__, message=str(exc))
    return results, skipped, None


def _run_celery(manifest: CorpusManifest, plan: FoldPlan, config: ExperimentConfig, cells: List[CellKey]):
    from celery import group
    from prosodid.tasks.sweep_tasks import run_grid_cell

    payload = {
        "manifest": manifest.model_dump(mode="json"),
        "plan": plan.model_dump(mode="json"),
        "config": config.model_dump(mode="json"),
    }
    job = group(run_grid_cell.s(payload, cell.model_dump(mode="json")) for cell in cells)
    outcomes = job.apply_async().get()
    return [
        (
            [SplitResult.model_validate(s) for s in out["results"]],
            out["skipped"],
            CellFailure.model_validate(out["failure"]) if out["failure"] else None,
        )
        for out in outcomes
    ]


def sweep(
    manifest: CorpusManifest,
    plan: FoldPlan,
    config: Optional[ExperimentConfig] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> EvalReport:
    """
    Run every grid cell over all splits of the plan and aggregate. A failing
    cell is recorded in the report and the sweep continues.
    """
    config = config or ExperimentConfig()
    cells = grid_cells(config)
    logger.info(f"Sweep: {len(cells)} grid cells x {plan.repeats * plan.k} splits ({config.executor} executor)")

    if config.executor == "celery":
        outcomes = _run_celery(manifest, plan, config, cells)
    else:
        n_jobs = resolve_workers(workers or config.workers, len(cells))
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(run_cell)(manifest, plan, config, cell)
            for cell in tqdm(cells, desc="sweep", disable=not progress)
        )

    report = EvalReport(dialects=manifest.dialects, folds=plan.k, repeats=plan.repeats, seed=config.seed)
    for results, skipped, failure in outcomes:
        report.skipped_splits.extend(skipped)
        if failure is not None:
            report.failures.append(failure)
            continue
        report.splits.extend(results)
        if results:
            report.cells.append(aggregate(results, manifest.dialects))
    logger.info(f"Sweep finished: {len(report.cells)} cells scored, {len(report.failures)} failed")
    return report


# ============= Report Files =============

def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _row(kind: str, cell: CellKey, repeat, fold, uar_value, acc, n_units, recall: Sequence[Optional[float]]):
    return [kind, cell.tier, cell.combo, "on" if cell.context else "off", cell.classifier,
            repeat, fold, _fmt(uar_value), _fmt(acc), n_units, *(_fmt(r) for r in recall)]


def write_report_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """One row per cell per split, then one aggregate row per cell."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["row", "tier", "combo", "context", "classifier", "repeat", "fold",
                         "uar", "accuracy", "n_test_units", *(f"recall_{d}" for d in report.dialects)])
        for s in report.splits:
            writer.writerow(_row("split", s.cell, s.repeat, s.fold, s.uar, s.accuracy, s.n_test_units, s.recall))
        units: Dict[CellKey, int] = {}
        for s in report.splits:
            units[s.cell] = units.get(s.cell, 0) + s.n_test_units
        for c in report.cells:
            writer.writerow(_row("aggregate", c.cell, "", "", c.uar, c.accuracy, units.get(c.cell, 0),
                                 [c.recall[d] for d in report.dialects]))


def write_confusion_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """Summed confusion matrix of every cell as a CSV block."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for c in report.cells:
            if not c.confusion:
                continue
            writer.writerow([f"# {c.cell.label}"])
            writer.writerow(["reference\\hypothesis", *report.dialects])
            for dialect, row in zip(report.dialects, c.confusion):
                writer.writerow([dialect, *row])
            writer.writerow([])


def _cell_dict(c: CellSummary) -> dict:
    return {**c.cell.model_dump(), "uar": c.uar, "accuracy": c.accuracy, "chance": c.chance}


def summary_dict(report: EvalReport) -> dict:
    best = report.best()
    return {
        "dialects": report.dialects,
        "folds": report.folds,
        "repeats": report.repeats,
        "seed": report.seed,
        "chance": best.chance if best else None,
        "best": _cell_dict(best) if best else None,
        "best_recall": best.recall if best else None,
        "best_per_classifier": {k: _cell_dict(v) for k, v in report.best_per_classifier().items()},
        "cells": [_cell_dict(c) for c in report.cells],
        "failures": [f.model_dump() for f in report.failures],
        "skipped_splits": report.skipped_splits,
    }


def render_summary(report: EvalReport) -> str:
    lines = [f"{'tier':<9} {'combo':<12} {'context':<7} {'classifier':<10} {'UAR':>7} {'ACC':>7}"]
    for c in report.cells:
        k = c.cell
        lines.append(f"{k.tier:<9} {k.combo:<12} {'on' if k.context else 'off':<7} {k.classifier:<10} "
                     f"{c.uar:7.4f} {c.accuracy:7.4f}")
    lines.append("")
    for clf, c in report.best_per_classifier().items():
        lines.append(f"best {clf}: {c.cell.label} UAR {c.uar:.4f}")
    best = report.best()
    if best is not None:
        lines.append(f"BEST: tier={best.cell.tier} combo={best.cell.combo} "
                     f"context={'on' if best.cell.context else 'off'} classifier={best.cell.classifier} "
                     f"UAR={best.uar:.4f}")
        lines.append(f"chance level: {best.chance:.4f}")
        for dialect, value in best.recall.items():
            lines.append(f"  recall {dialect}: {'n/a' if value is None else f'{value:.4f}'}")
    for f in report.failures:
        lines.append(f"FAILED {f.cell.label}: {f.error}: {f.message}")
    return "\n".join(lines) + "\n"


def write_summary(report: EvalReport, out_dir: Union[str, Path]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / SUMMARY_JSON).write_text(json.dumps(summary_dict(report), indent=2) + "\n", encoding="utf-8")
    (out_dir / SUMMARY_TXT).write_text(render_summary(report), encoding="utf-8")


def write_report(report: EvalReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / REPORT_CSV)
    write_confusion_csv(report, out_dir / CONFUSION_CSV)
    write_summary(report, out_dir)
    return {name: out_dir / name for name in (REPORT_CSV, CONFUSION_CSV, SUMMARY_JSON, SUMMARY_TXT)}


def read_report_csv(path: Union[str, Path]) -> EvalReport:
    """
    Rebuild a report from its CSV: split rows are read back and the
    aggregates recomputed from them. Confusion counts are not stored there.
    """
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise EvalError(f"empty report file {path}")
    header = rows[0]
    dialects = [h[len("recall_"):] for h in header if h.startswith("recall_")]
    first_recall = header.index(f"recall_{dialects[0]}") if dialects else len(header)

    splits: List[SplitResult] = []
    order: List[CellKey] = []
    for row in rows[1:]:
        if not row or row[0] != "split":
            continue
        cell = CellKey(tier=row[1], combo=row[2], context=row[3] == "on", classifier=row[4])
        if cell not in order:
            order.append(cell)
        splits.append(SplitResult(
            cell=cell, repeat=int(row[5]), fold=int(row[6]), uar=float(row[7]), accuracy=float(row[8]),
            n_test_units=int(row[9]),
            recall=[float(v) if v else None for v in row[first_recall:]],
        ))

    repeats = max((s.repeat for s in splits), default=-1) + 1
    folds = max((s.fold for s in splits), default=-1) + 1
    report = EvalReport(dialects=dialects, folds=folds, repeats=repeats, seed=0, splits=splits)
    for cell in order:
        report.cells.append(aggregate([s for s in splits if s.cell == cell], dialects))
    return report
