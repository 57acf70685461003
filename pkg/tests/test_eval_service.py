import json

import numpy as np
import pytest

from conftest import manifest_from_minutes
from prosodid.core.errors import EvalError
from prosodid.schemas.experiment import ClassifierConfig, ExperimentConfig
from prosodid.schemas.report import CellKey, EvalReport, SplitResult
from prosodid.services.corpus_service import split_folds
from prosodid.services.eval_service import (
    CONFUSION_CSV,
    REPORT_CSV,
    SUMMARY_JSON,
    SUMMARY_TXT,
    ConfusionMatrix,
    accuracy,
    aggregate,
    build_dataset,
    grid_cells,
    read_report_csv,
    recalls,
    render_summary,
    run_experiment,
    uar,
    write_report,
)
from prosodid.services.extraction_service import FULL_COMBO, TierFeatures
from prosodid.services.prosody_service import FeatureCombo

DIALECTS = ["a", "b", "c"]
CELL = CellKey(tier="word", combo="EN+F0", context=False, classifier="knn")


def _features(minutes, units=12, seed=0, separation=4.0):
    """One in-memory recording per speaker; the dialect shifts every column."""
    rng = np.random.default_rng(seed)
    layout = FULL_COMBO.layout()
    out = []
    for d, (dialect, speakers) in enumerate(sorted(minutes.items())):
        for speaker in speakers:
            matrix = separation * d + rng.normal(size=(units, len(layout)))
            starts = np.arange(units) * 0.3
            out.append(TierFeatures(
                recording_id=f"{speaker}_r01", speaker_id=speaker, dialect=dialect,
                starts=starts, ends=starts + 0.25, matrix=matrix, layout=layout,
                voicing_missing=np.zeros(units, dtype=bool),
            ))
    return out


def _corpus(n_speakers=4):
    minutes = {d: {f"{d}{i}": 5.0 for i in range(n_speakers)} for d in DIALECTS}
    manifest = manifest_from_minutes(minutes)
    return manifest, _features(minutes)


def _split(repeat, fold, uar_value, acc, recall, cell=CELL):
    return SplitResult(cell=cell, repeat=repeat, fold=fold, uar=uar_value, accuracy=acc,
                       recall=recall, n_test_units=10)


# ============= Metrics =============

def test_uar_perfect():
    cm = ConfusionMatrix(np.diag([3, 5, 2, 7, 1]))
    assert uar(cm) == 1.0
    assert accuracy(cm) == 1.0


def test_uar_chance():
    assert uar(ConfusionMatrix(np.full((5, 5), 4))) == pytest.approx(0.2)


def test_uar_two_class():
    cm = ConfusionMatrix([[8, 2], [4, 6]])
    assert uar(cm) == pytest.approx(0.7)
    assert accuracy(cm) == pytest.approx(0.7)


def test_accuracy_weights_by_class_size():
    cm = ConfusionMatrix([[90, 10], [5, 5]])
    assert accuracy(cm) == pytest.approx(95 / 110)
    assert uar(cm) == pytest.approx((0.9 + 0.5) / 2)


def test_absent_class_excluded():
    cm = ConfusionMatrix([[4, 0, 1], [0, 0, 0], [1, 0, 4]])
    r = recalls(cm)
    assert np.isnan(r[1])
    assert uar(cm) == pytest.approx(0.8)


def test_empty_and_invalid_matrices():
    with pytest.raises(EvalError):
        uar(ConfusionMatrix(np.zeros((3, 3))))
    with pytest.raises(EvalError):
        accuracy(ConfusionMatrix(np.zeros((3, 3))))
    with pytest.raises(EvalError):
        ConfusionMatrix([[1, -1], [0, 1]])
    with pytest.raises(EvalError):
        ConfusionMatrix(np.zeros((2, 3)))


def test_confusion_from_labels():
    cm = ConfusionMatrix.from_labels([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 0, 2], 3)
    assert cm.counts.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 2]]
    assert cm.row_sums.tolist() == [2, 1, 3]


# ============= Grid =============

def test_grid_cells_default_size():
    cells = grid_cells(ExperimentConfig())
    assert len(cells) == 300
    assert len(set(cells)) == 300
    assert cells[0] == CellKey(tier="word", combo="EN", context=False, classifier="knn")


def test_grid_cells_expands_lstm_delays():
    config = ExperimentConfig(hyperparameters=ClassifierConfig(lstm_delays=[0, 3, 10]))
    cells = grid_cells(config)
    assert len(cells) == 2 * 15 * 2 * 7
    assert {c.classifier for c in cells} >= {"lstm@d0", "lstm@d3", "lstm@d10"}
    assert "lstm" not in {c.classifier for c in cells}


def test_grid_cells_subset():
    config = ExperimentConfig(tiers=["syllable"], combos=["EN+F0+ST"], contexts=[True], classifiers=["crf"])
    assert grid_cells(config) == [CellKey(tier="syllable", combo="EN+F0+ST", context=True, classifier="crf")]


# ============= Experiment Runner =============

def test_build_dataset_sequences_and_context():
    manifest, features = _corpus()
    index = manifest.class_index()
    combo = FeatureCombo.parse("EN+F0")
    plain = build_dataset(features, ["a0", "b1"], combo, False, index)
    assert plain.dim == 10
    assert plain.recording_ids == ["a0_r01", "b1_r01"]
    assert plain.lengths.tolist() == [12, 12]
    assert plain.y.tolist() == [0] * 12 + [1] * 12

    stacked = build_dataset(features, ["a0"], combo, True, index, width=2)
    assert stacked.dim == 50
    # first unit has two zero blocks of left context
    assert np.all(stacked.X[0, :20] == 0.0)
    assert np.allclose(stacked.X[0, 20:30], plain.X[0])


def test_run_experiment_all_splits_speaker_disjoint():
    manifest, features = _corpus()
    plan = split_folds(manifest, k=4, repeats=2, seed=3)
    results = run_experiment(manifest, plan, "word", "EN+F0", False, "knn", features=features)
    assert len(results) == 8
    for r in results:
        split = plan.split(r.repeat, r.fold)
        assert not set(split.train_speakers) & set(split.test_speakers)
        assert r.n_test_units == 36
        assert sum(map(sum, r.confusion)) == r.n_test_units
        assert r.uar == pytest.approx(1.0)


def test_run_experiment_is_reproducible():
    manifest, features = _corpus()
    plan = split_folds(manifest, k=4, repeats=1, seed=0)
    first = run_experiment(manifest, plan, "word", "F0", True, "rf", seed=7, features=features)
    second = run_experiment(manifest, plan, "word", "F0", True, "rf", seed=7, features=features)
    assert [r.confusion for r in first] == [r.confusion for r in second]


def test_run_experiment_majority_is_near_chance():
    manifest, features = _corpus()
    plan = split_folds(manifest, k=4, repeats=1, seed=0)
    results = run_experiment(manifest, plan, "word", "EN", False, "majority", features=features)
    assert all(r.uar == pytest.approx(1 / 3) for r in results)


def test_run_experiment_dialect_without_units():
    minutes = {"a": {"a0": 5.0}, "b": {f"b{i}": 5.0 for i in range(4)}, "c": {f"c{i}": 5.0 for i in range(4)}}
    manifest = manifest_from_minutes(minutes)
    features = [f for f in _features(minutes) if f.speaker_id != "a0"]
    plan = split_folds(manifest, k=4, repeats=1, seed=0)
    skipped = []
    results = run_experiment(manifest, plan, "word", "EN", False, "knn", features=features, skipped=skipped)
    assert len(results) == 4
    assert all("a" in r.absent_classes for r in results)
    assert all(r.recall[0] is None for r in results)


def test_run_experiment_empty_test_fold():
    manifest, features = _corpus()
    plan = split_folds(manifest, k=4, repeats=1, seed=0)
    held_out = set(plan.split(0, 2).test_speakers)
    features = [f for f in features if f.speaker_id not in held_out]
    with pytest.raises(EvalError, match="empty test fold"):
        run_experiment(manifest, plan, "word", "EN", False, "knn", features=features)

    skipped = []
    results = run_experiment(manifest, plan, "word", "EN", False, "knn", features=features, skipped=skipped)
    assert [r.fold for r in results] == [0, 1, 3]
    assert len(skipped) == 1 and "fold 2" in skipped[0]


# ============= Aggregation =============

def test_aggregate_means_over_folds_then_repeats():
    splits = [
        _split(0, 0, 0.5, 0.6, [0.5, 0.5, None]),
        _split(0, 1, 0.7, 0.8, [0.7, 0.7, None]),
        _split(1, 0, 0.9, 0.9, [0.9, 0.9, 1.0]),
    ]
    summary = aggregate(splits, DIALECTS)
    assert summary.uar_per_repeat == pytest.approx([0.6, 0.9])
    assert summary.uar == pytest.approx(0.75)
    assert summary.accuracy == pytest.approx((0.7 + 0.9) / 2)
    assert summary.recall["c"] == pytest.approx(1.0)
    assert summary.n_splits == 3


def test_aggregate_equals_mean_of_split_uars_for_balanced_plans():
    rng = np.random.default_rng(0)
    splits = [_split(r, f, float(rng.uniform()), 0.5, [0.5, 0.5, 0.5]) for r in range(5) for f in range(4)]
    summary = aggregate(splits, DIALECTS)
    assert abs(summary.uar - np.mean([s.uar for s in splits])) < 1e-9


def test_aggregate_nothing():
    with pytest.raises(EvalError):
        aggregate([], DIALECTS)


# ============= Report Files =============

def _report():
    manifest, features = _corpus()
    plan = split_folds(manifest, k=4, repeats=1, seed=0)
    report = EvalReport(dialects=manifest.dialects, folds=4, repeats=1, seed=0)
    for combo, clf in (("EN", "majority"), ("EN+F0", "knn")):
        results = run_experiment(manifest, plan, "word", combo, False, clf, features=features)
        report.splits.extend(results)
        report.cells.append(aggregate(results, manifest.dialects))
    return report


def test_write_report_files(tmp_path):
    report = _report()
    paths = write_report(report, tmp_path / "results")
    assert set(paths) == {REPORT_CSV, CONFUSION_CSV, SUMMARY_JSON, SUMMARY_TXT}
    assert all(p.exists() for p in paths.values())

    rows = paths[REPORT_CSV].read_text(encoding="utf-8").splitlines()
    assert rows[0].startswith("row,tier,combo,context,classifier,repeat,fold,uar,accuracy,n_test_units")
    assert rows[0].endswith("recall_a,recall_b,recall_c")
    assert sum(1 for r in rows if r.startswith("split,")) == 8
    assert sum(1 for r in rows if r.startswith("aggregate,")) == 2

    summary = json.loads(paths[SUMMARY_JSON].read_text(encoding="utf-8"))
    assert summary["best"]["classifier"] == "knn"
    assert summary["chance"] == pytest.approx(1 / 3)
    assert set(summary["best_per_classifier"]) == {"majority", "knn"}

    text = paths[SUMMARY_TXT].read_text(encoding="utf-8")
    assert "BEST: tier=word combo=EN+F0 context=off classifier=knn" in text
    assert "# word/EN+F0/noctx/knn" in paths[CONFUSION_CSV].read_text(encoding="utf-8")


def test_read_report_csv_recomputes_aggregates(tmp_path):
    report = _report()
    paths = write_report(report, tmp_path)
    loaded = read_report_csv(paths[REPORT_CSV])
    assert loaded.dialects == report.dialects
    assert (loaded.folds, loaded.repeats) == (4, 1)
    assert [c.cell for c in loaded.cells] == [c.cell for c in report.cells]
    for a, b in zip(loaded.cells, report.cells):
        assert a.uar == pytest.approx(b.uar, abs=1e-12)
        assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)
    assert render_summary(loaded).splitlines()[0].startswith("tier")


def test_read_report_csv_empty(tmp_path):
    path = tmp_path / "report.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(EvalError):
        read_report_csv(path)
