from __future__ import annotations

import random

import numpy as np
import pytest

from contexthsd.evaluate import (
    AggregateReport,
    aggregate,
    classification_report,
    confusion_matrix,
    f1_per_class,
    multilabel_f1,
    plot_confusion,
    prediction_diff,
    write_confusion_csv,
)


# --- independent oracles: naive triple-loop counting, no shared helpers ---


def brute_force_prf(y_true, y_pred, classes):
    out = {}
    for cls in classes:
        tp = fp = fn = 0
        for t, p in zip(y_true, y_pred):
            if p == cls and t == cls:
                tp += 1
            if p == cls and t != cls:
                fp += 1
            if p != cls and t == cls:
                fn += 1
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 0.0
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        out[cls] = (precision, recall, f1)
    return out


def brute_force_confusion(y_true, y_pred, classes):
    matrix = [[0] * len(classes) for _ in classes]
    for i, true_cls in enumerate(classes):
        for j, pred_cls in enumerate(classes):
            for t, p in zip(y_true, y_pred):
                if t == true_cls and p == pred_cls:
                    matrix[i][j] += 1
    return matrix


def brute_force_multilabel(y_true, y_pred, labels):
    f1s = {}
    for label in labels:
        tp = fp = fn = 0
        for truth, pred in zip(y_true, y_pred):
            if label in pred and label in truth:
                tp += 1
            if label in pred and label not in truth:
                fp += 1
            if label not in pred and label in truth:
                fn += 1
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s[label] = (
            2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        )
    return f1s


class TestF1:
    def test_perfect_predictions(self):
        y = ["a", "b", "a", "c"]
        result = f1_per_class(y, y, ["a", "b", "c"])
        assert all(v == 1.0 for v in result.values())

    def test_hand_computed_example(self):
        # truth [1,1,0,0], pred [1,0,0,0]: F1(1)=2/3, F1(0)=4/5, macro=11/15.
        y_true = ["1", "1", "0", "0"]
        y_pred = ["1", "0", "0", "0"]
        result = f1_per_class(y_true, y_pred, ["0", "1"])
        assert result["1"] == pytest.approx(2 / 3, abs=1e-12)
        assert result["0"] == pytest.approx(4 / 5, abs=1e-12)
        macro = (result["0"] + result["1"]) / 2
        assert macro == pytest.approx(0.73333333333, abs=1e-9)

    def test_absent_class_scores_zero(self):
        result = f1_per_class(["a", "a"], ["a", "a"], ["a", "b"])
        assert result["b"] == 0.0

    def test_oracle_equivalence_random_instances(self):
        rng = random.Random(99)
        for _ in range(1000):
            k = rng.randint(2, 7)
            classes = [f"c{i}" for i in range(k)]
            n = rng.randint(1, 20)
            y_true = [rng.choice(classes) for _ in range(n)]
            y_pred = [rng.choice(classes) for _ in range(n)]
            report = classification_report("t", 0, y_true, y_pred, classes)
            oracle = brute_force_prf(y_true, y_pred, classes)
            for cls in classes:
                assert abs(report.per_class_f1[cls] - oracle[cls][2]) < 1e-12
            macro_oracle = sum(v[2] for v in oracle.values()) / k
            assert abs(report.macro_f1 - macro_oracle) < 1e-12
            confusion_oracle = brute_force_confusion(y_true, y_pred, classes)
            assert report.confusion == confusion_oracle


class TestClassificationReport:
    def test_macro_is_mean_of_per_class(self):
        y_true = ["a", "b", "b", "c", "c", "c"]
        y_pred = ["a", "b", "c", "c", "a", "c"]
        report = classification_report("t", 0, y_true, y_pred, ["a", "b", "c"])
        assert report.macro_f1 == pytest.approx(
            np.mean(list(report.per_class_f1.values())), abs=1e-12
        )

    def test_positive_f1_binary(self):
        y_true = ["negative", "positive", "positive"]
        y_pred = ["negative", "positive", "negative"]
        report = classification_report(
            "binary", 0, y_true, y_pred, ["negative", "positive"], positive_class="positive"
        )
        assert report.positive_f1 == report.per_class_f1["positive"]

    def test_named_subset_macro(self):
        classes = ["a", "b", "other"]
        y_true = ["a", "b", "other", "a"]
        y_pred = ["a", "b", "other", "b"]
        report = classification_report("t", 0, y_true, y_pred, classes, named_subset=["a", "b"])
        named = (report.per_class_f1["a"] + report.per_class_f1["b"]) / 2
        assert report.extras["macro_f1_named"] == pytest.approx(named, abs=1e-12)

    def test_zero_support_flagged(self):
        report = classification_report("t", 0, ["a"], ["a"], ["a", "b"])
        assert report.extras["zero_support_classes"] == ["b"]

    def test_abstentions_counted_as_false_negatives_only(self):
        y_true = ["positive", "negative"]
        y_pred = ["__abstain__", "negative"]
        report = classification_report(
            "binary", 0, y_true, y_pred, ["negative", "positive"], positive_class="positive"
        )
        # The abstention harms positive recall but creates no false positive.
        assert report.per_class_f1["positive"] == 0.0
        assert report.per_class_f1["negative"] == 1.0
        assert report.extras["abstentions"] == 1
        matrix = np.array(report.confusion)
        assert matrix.shape == (2, 3)
        assert matrix.sum() == 2

    def test_round_trip_dict(self):
        report = classification_report("t", 3, ["a", "b"], ["a", "a"], ["a", "b"])
        from contexthsd.evaluate import MetricReport

        clone = MetricReport.from_dict(report.to_dict())
        assert clone.to_dict() == report.to_dict()


class TestMultilabel:
    LABELS = ("shaming", "stereotype", "objectification", "violence")

    def test_all_empty_degenerate(self):
        y = [frozenset() for _ in range(5)]
        report = multilabel_f1(y, y, self.LABELS)
        assert all(v == 0.0 for v in report.per_class_f1.values())
        assert set(report.extras["degenerate_labels"]) == set(self.LABELS)

    def test_single_violence_item(self):
        report = multilabel_f1([frozenset({"violence"})], [frozenset({"violence"})], self.LABELS)
        assert report.per_class_f1["violence"] == 1.0
        assert report.macro_f1 == pytest.approx(0.25, abs=1e-12)

    def test_perfect_with_all_labels(self):
        y = [
            frozenset({"shaming"}),
            frozenset({"stereotype", "objectification"}),
            frozenset({"violence"}),
            frozenset(),
        ]
        report = multilabel_f1(y, y, self.LABELS)
        assert report.macro_f1 == 1.0

    def test_confusion_is_per_label_2x2(self):
        y_true = [frozenset({"shaming"}), frozenset()]
        y_pred = [frozenset(), frozenset({"shaming"})]
        report = multilabel_f1(y_true, y_pred, self.LABELS)
        assert report.confusion["shaming"] == [[0, 1], [1, 0]]
        assert report.confusion["violence"] == [[2, 0], [0, 0]]

    def test_oracle_equivalence_random_instances(self):
        rng = random.Random(4)
        labels = list(self.LABELS)
        for _ in range(1000):
            n = rng.randint(1, 20)
            y_true = [frozenset(l for l in labels if rng.random() < 0.4) for _ in range(n)]
            y_pred = [frozenset(l for l in labels if rng.random() < 0.4) for _ in range(n)]
            report = multilabel_f1(y_true, y_pred, labels)
            oracle = brute_force_multilabel(y_true, y_pred, labels)
            for label in labels:
                assert abs(report.per_class_f1[label] - oracle[label]) < 1e-12
            assert abs(report.macro_f1 - sum(oracle.values()) / 4) < 1e-12


class TestConfusion:
    def test_perfect_is_diagonal(self):
        y = ["a", "b", "c", "a"]
        matrix = confusion_matrix(y, y, ["a", "b", "c"])
        assert np.all(matrix == np.diag([2, 1, 1]))

    def test_anti_diagonal(self):
        matrix = confusion_matrix(["0", "1"], ["1", "0"], ["0", "1"])
        assert matrix.tolist() == [[0, 1], [1, 0]]

    def test_row_sums_equal_truth_counts(self):
        rng = random.Random(0)
        for _ in range(50):
            classes = ["a", "b", "c"]
            n = rng.randint(1, 30)
            y_true = [rng.choice(classes) for _ in range(n)]
            y_pred = [rng.choice(classes) for _ in range(n)]
            matrix = confusion_matrix(y_true, y_pred, classes)
            for i, cls in enumerate(classes):
                assert matrix[i].sum() == sum(1 for t in y_true if t == cls)

    def test_unknown_truth_rejected(self):
        with pytest.raises(ValueError):
            confusion_matrix(["z"], ["a"], ["a", "b"])

    def test_csv_and_plot_render(self, tmp_path):
        matrix = confusion_matrix(["a", "b"], ["a", "a"], ["a", "b"])
        write_confusion_csv(matrix, ["a", "b"], tmp_path / "c.csv")
        plot_confusion(matrix, ["a", "b"], tmp_path / "c.png", title="demo")
        assert (tmp_path / "c.csv").exists()
        assert (tmp_path / "c.png").stat().st_size > 0
        content = (tmp_path / "c.csv").read_text()
        assert content.splitlines()[0] == "true\\pred,a,b"


class TestAggregate:
    def _report(self, seed, macro):
        return classification_report(
            "binary",
            seed,
            ["positive"] * 10,
            ["positive"] * int(10 * macro) + ["negative"] * (10 - int(10 * macro)),
            ["negative", "positive"],
            positive_class="positive",
        )

    def test_mean_recomputable_from_runs(self):
        reports = [self._report(seed, m) for seed, m in enumerate((1.0, 0.8, 0.9))]
        agg = aggregate("binary", "zero_context", reports)
        assert agg.mean["macro_f1"] == pytest.approx(
            np.mean([r.macro_f1 for r in reports]), abs=1e-12
        )
        assert len(agg.runs) == 3

    def test_round_trip(self):
        reports = [self._report(0, 0.9), self._report(1, 0.8)]
        agg = aggregate("binary", "s", reports)
        clone = AggregateReport.from_dict(agg.to_dict())
        assert clone.to_dict() == agg.to_dict()

    def test_identical_runs_zero_stdev(self):
        reports = [self._report(s, 0.9) for s in range(5)]
        agg = aggregate("binary", "s", reports)
        assert agg.stdev["macro_f1"] == 0.0


class TestPredictionDiff:
    def test_equal_predictions_empty_off_diagonal(self):
        preds = {"a": 1, "b": 0, "c": 1}
        truth = {"a": 1, "b": 1, "c": 0}
        report = prediction_diff(preds, preds, truth)
        assert report.a_only_correct == []
        assert report.b_only_correct == []

    def test_hand_fixture_partition(self):
        truth = {"w": 1, "x": 1, "y": 0, "z": 0}
        a = {"w": 1, "x": 0, "y": 0, "z": 1}  # correct on w, y
        b = {"w": 1, "x": 1, "y": 1, "z": 1}  # correct on w, x
        report = prediction_diff(a, b, truth)
        assert report.both_correct == ["w"]
        assert report.a_only_correct == ["y"]
        assert report.b_only_correct == ["x"]
        assert report.both_wrong == ["z"]

    def test_cells_partition_ids(self):
        rng = random.Random(1)
        ids = [f"i{i}" for i in range(40)]
        truth = {i: rng.randint(0, 1) for i in ids}
        a = {i: rng.randint(0, 1) for i in ids}
        b = {i: rng.randint(0, 1) for i in ids}
        report = prediction_diff(a, b, truth)
        cells = (
            report.both_correct + report.a_only_correct + report.b_only_correct + report.both_wrong
        )
        assert sorted(cells) == sorted(ids)
        assert report.total == 40

    def test_percentages_one_decimal_and_sum(self):
        truth = {f"i{i}": 0 for i in range(7)}
        a = {f"i{i}": 0 if i < 5 else 1 for i in range(7)}
        b = {f"i{i}": 0 if i % 2 == 0 else 1 for i in range(7)}
        report = prediction_diff(a, b, truth)
        pct = report.percentages()
        for value in pct.values():
            assert round(value, 1) == value
        assert sum(pct.values()) == pytest.approx(100.0, abs=0.3)

    def test_id_mismatch_rejected(self):
        with pytest.raises(ValueError):
            prediction_diff({"a": 1}, {"a": 1, "b": 0}, {"a": 1})

    def test_text_report_lists_ids(self):
        truth = {"x": 1, "y": 0}
        a = {"x": 1, "y": 1}
        b = {"x": 0, "y": 0}
        report = prediction_diff(a, b, truth, model_a="zero", model_b="concat")
        text = report.to_text()
        assert "zero" in text and "concat" in text
        assert "x" in text and "y" in text
