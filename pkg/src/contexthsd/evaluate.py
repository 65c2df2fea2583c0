"""Metrics, multi-seed aggregation, confusion matrices, and prediction diffs.

Conventions are explicit because they shape reported numbers: a class with no
true and no predicted instances scores F1 = 0 and stays in the macro average
(reports flag when that triggers); a prediction outside the class registry
(an abstention) adds a false negative to the true class and no false positive
anywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ABSTAIN = "__abstain__"


def confusion_matrix(
    y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]
) -> np.ndarray:
    """Counts with rows = truth, columns = prediction, in registry class order.

    Predictions outside `classes` are collected in one extra trailing column
    (present only when they occur) so the counts still sum to the test size.
    """
    if len(y_true) != len(y_pred):
        raise ValueError(f"{len(y_true)} truths vs {len(y_pred)} predictions")
    index = {cls: i for i, cls in enumerate(classes)}
    unknown = [p for p in y_pred if p not in index]
    extra = 1 if unknown else 0
    matrix = np.zeros((len(classes), len(classes) + extra), dtype=np.int64)
    for truth, pred in zip(y_true, y_pred):
        if truth not in index:
            raise ValueError(f"true label {truth!r} outside classes {list(classes)}")
        col = index.get(pred, len(classes))
        matrix[index[truth], col] += 1
    return matrix


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def precision_recall_f1(
    y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]
) -> dict[str, dict[str, float]]:
    per_class: dict[str, dict[str, float]] = {}
    for cls in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p == cls)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != cls and p == cls)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p != cls)
        precision, recall, f1 = _prf(tp, fp, fn)
        per_class[cls] = {"precision": precision, "recall": recall, "f1": f1}
    return per_class


def f1_per_class(
    y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]
) -> dict[str, float]:
    return {cls: m["f1"] for cls, m in precision_recall_f1(y_true, y_pred, classes).items()}


@dataclass
class MetricReport:
    """Metrics for one trained model evaluated on the test split."""

    task: str
    seed: int
    classes: list[str]
    per_class_f1: dict[str, float]
    macro_f1: float
    macro_precision: float
    macro_recall: float
    confusion: object  # square list-of-lists, or {label: 2x2} for multi-label
    positive_f1: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        payload = {
            "task": self.task,
            "seed": self.seed,
            "classes": list(self.classes),
            "per_class_f1": dict(self.per_class_f1),
            "macro_f1": self.macro_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "confusion": self.confusion,
            "positive_f1": self.positive_f1,
            "extras": self.extras,
        }
        return payload

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricReport":
        return cls(
            task=raw["task"],
            seed=raw["seed"],
            classes=list(raw["classes"]),
            per_class_f1=dict(raw["per_class_f1"]),
            macro_f1=raw["macro_f1"],
            macro_precision=raw["macro_precision"],
            macro_recall=raw["macro_recall"],
            confusion=raw["confusion"],
            positive_f1=raw.get("positive_f1"),
            extras=dict(raw.get("extras", {})),
        )


def classification_report(
    task: str,
    seed: int,
    y_true: Sequence[str],
    y_pred: Sequence[str],
    classes: Sequence[str],
    positive_class: Optional[str] = None,
    named_subset: Optional[Sequence[str]] = None,
) -> MetricReport:
    """Build the per-seed report for a binary or multi-class task."""
    per_class = precision_recall_f1(y_true, y_pred, classes)
    per_class_f1_map = {cls: m["f1"] for cls, m in per_class.items()}
    macro_f1 = float(np.mean([per_class_f1_map[c] for c in classes]))
    macro_p = float(np.mean([per_class[c]["precision"] for c in classes]))
    macro_r = float(np.mean([per_class[c]["recall"] for c in classes]))
    matrix = confusion_matrix(y_true, y_pred, classes)

    extras: dict = {}
    zero_support = [
        c for c in classes if not any(t == c for t in y_true) and not any(p == c for p in y_pred)
    ]
    if zero_support:
        extras["zero_support_classes"] = zero_support
    abstained = sum(1 for p in y_pred if p not in set(classes))
    if abstained:
        extras["abstentions"] = abstained
    if named_subset:
        extras["macro_f1_named"] = float(np.mean([per_class_f1_map[c] for c in named_subset]))

    return MetricReport(
        task=task,
        seed=seed,
        classes=list(classes),
        per_class_f1=per_class_f1_map,
        macro_f1=macro_f1,
        macro_precision=macro_p,
        macro_recall=macro_r,
        confusion=matrix.tolist(),
        positive_f1=per_class_f1_map[positive_class] if positive_class else None,
        extras=extras,
    )


def multilabel_f1(
    y_true: Sequence[frozenset[str]],
    y_pred: Sequence[frozenset[str]],
    labels: Sequence[str],
    task: str = "multilabel",
    seed: int = 0,
) -> MetricReport:
    """Per-label binary F1 over label sets; macro is their unweighted mean.

    Confusion is one 2x2 per label, [[tn, fp], [fn, tp]]. Labels with no
    positive instance on either side are flagged degenerate (F1 = 0 by the
    zero-support convention).
    """
    if len(y_true) != len(y_pred):
        raise ValueError(f"{len(y_true)} truths vs {len(y_pred)} predictions")
    per_label_f1: dict[str, float] = {}
    per_label_p: dict[str, float] = {}
    per_label_r: dict[str, float] = {}
    confusion: dict[str, list[list[int]]] = {}
    degenerate: list[str] = []
    for label in labels:
        tp = fp = fn = tn = 0
        for truth, pred in zip(y_true, y_pred):
            has_true = label in truth
            has_pred = label in pred
            if has_true and has_pred:
                tp += 1
            elif has_pred:
                fp += 1
            elif has_true:
                fn += 1
            else:
                tn += 1
        precision, recall, f1 = _prf(tp, fp, fn)
        per_label_f1[label] = f1
        per_label_p[label] = precision
        per_label_r[label] = recall
        confusion[label] = [[tn, fp], [fn, tp]]
        if tp + fp + fn == 0:
            degenerate.append(label)
    extras: dict = {}
    if degenerate:
        extras["degenerate_labels"] = degenerate
    return MetricReport(
        task=task,
        seed=seed,
        classes=list(labels),
        per_class_f1=per_label_f1,
        macro_f1=float(np.mean([per_label_f1[l] for l in labels])),
        macro_precision=float(np.mean([per_label_p[l] for l in labels])),
        macro_recall=float(np.mean([per_label_r[l] for l in labels])),
        confusion=confusion,
        extras=extras,
    )


_SCALARS = ("macro_f1", "macro_precision", "macro_recall", "positive_f1")


@dataclass
class AggregateReport:
    """Per-seed reports plus their mean and standard deviation."""

    task: str
    strategy: str
    runs: list[MetricReport]
    mean: dict[str, float]
    stdev: dict[str, float]
    per_class_f1_mean: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "strategy": self.strategy,
            "n_runs": len(self.runs),
            "seeds": [r.seed for r in self.runs],
            "mean": self.mean,
            "stdev": self.stdev,
            "per_class_f1_mean": self.per_class_f1_mean,
            "runs": [r.to_dict() for r in self.runs],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AggregateReport":
        return cls(
            task=raw["task"],
            strategy=raw["strategy"],
            runs=[MetricReport.from_dict(r) for r in raw["runs"]],
            mean=dict(raw["mean"]),
            stdev=dict(raw["stdev"]),
            per_class_f1_mean=dict(raw["per_class_f1_mean"]),
        )


def aggregate(task: str, strategy: str, reports: list[MetricReport]) -> AggregateReport:
    if not reports:
        raise ValueError("cannot aggregate zero reports")
    mean: dict[str, float] = {}
    stdev: dict[str, float] = {}
    for key in _SCALARS:
        values = [getattr(r, key) for r in reports]
        if any(v is None for v in values):
            continue
        mean[key] = float(np.mean(values))
        stdev[key] = float(np.std(values))
    classes = reports[0].classes
    per_class = {
        cls: float(np.mean([r.per_class_f1[cls] for r in reports])) for cls in classes
    }
    return AggregateReport(
        task=task,
        strategy=strategy,
        runs=list(reports),
        mean=mean,
        stdev=stdev,
        per_class_f1_mean=per_class,
    )


@dataclass
class DiffReport:
    """Agreement partition between two models' predictions on the same test set."""

    model_a: str
    model_b: str
    both_correct: list[str]
    a_only_correct: list[str]
    b_only_correct: list[str]
    both_wrong: list[str]

    @property
    def total(self) -> int:
        return (
            len(self.both_correct)
            + len(self.a_only_correct)
            + len(self.b_only_correct)
            + len(self.both_wrong)
        )

    def percentages(self) -> dict[str, float]:
        total = self.total or 1
        return {
            "both_correct": round(100.0 * len(self.both_correct) / total, 1),
            "a_only_correct": round(100.0 * len(self.a_only_correct) / total, 1),
            "b_only_correct": round(100.0 * len(self.b_only_correct) / total, 1),
            "both_wrong": round(100.0 * len(self.both_wrong) / total, 1),
        }

    def to_dict(self) -> dict:
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "total": self.total,
            "percentages": self.percentages(),
            "both_correct": self.both_correct,
            "a_only_correct": self.a_only_correct,
            "b_only_correct": self.b_only_correct,
            "both_wrong": self.both_wrong,
        }

    def to_text(self) -> str:
        pct = self.percentages()
        lines = [
            f"prediction diff: {self.model_a} vs {self.model_b} ({self.total} test items)",
            f"  both correct      {len(self.both_correct):>6}  ({pct['both_correct']:.1f}%)",
            f"  only {self.model_a} correct: {len(self.a_only_correct)} ({pct['a_only_correct']:.1f}%)",
            f"  only {self.model_b} correct: {len(self.b_only_correct)} ({pct['b_only_correct']:.1f}%)",
            f"  both wrong        {len(self.both_wrong):>6}  ({pct['both_wrong']:.1f}%)",
            "",
            f"ids misclassified by {self.model_b} but not {self.model_a}:",
            *(f"  {pid}" for pid in self.a_only_correct),
            "",
            f"ids misclassified by {self.model_a} but not {self.model_b}:",
            *(f"  {pid}" for pid in self.b_only_correct),
        ]
        return "\n".join(lines)


def prediction_diff(a: dict, b: dict, truth: dict, model_a: str = "a", model_b: str = "b") -> DiffReport:
    """Partition test ids by per-model correctness; ids must match exactly."""
    ids_a, ids_b, ids_t = set(a), set(b), set(truth)
    if ids_a != ids_t or ids_b != ids_t:
        mismatched = sorted((ids_a ^ ids_t) | (ids_b ^ ids_t))
        raise ValueError(f"prediction sets do not cover the same ids: {mismatched}")
    cells: dict[str, list[str]] = {
        "both_correct": [],
        "a_only_correct": [],
        "b_only_correct": [],
        "both_wrong": [],
    }
    for post_id in sorted(truth):
        a_ok = a[post_id] == truth[post_id]
        b_ok = b[post_id] == truth[post_id]
        if a_ok and b_ok:
            cells["both_correct"].append(post_id)
        elif a_ok:
            cells["a_only_correct"].append(post_id)
        elif b_ok:
            cells["b_only_correct"].append(post_id)
        else:
            cells["both_wrong"].append(post_id)
    return DiffReport(model_a=model_a, model_b=model_b, **cells)


def write_confusion_csv(matrix: np.ndarray, classes: Sequence[str], path: str | Path) -> None:
    matrix = np.asarray(matrix)
    columns = list(classes) + ([ABSTAIN] if matrix.shape[1] == len(classes) + 1 else [])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *columns])
        for i, cls in enumerate(classes):
            writer.writerow([cls, *matrix[i].tolist()])


def plot_confusion(matrix: np.ndarray, classes: Sequence[str], path: str | Path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matrix = np.asarray(matrix)
    columns = list(classes) + ([ABSTAIN] if matrix.shape[1] == len(classes) + 1 else [])
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(columns), 1.2 + 0.9 * len(classes)))
    ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(len(columns)), columns, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    threshold = matrix.max() / 2 if matrix.size else 0
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(
                j,
                i,
                str(matrix[i, j]),
                ha="center",
                va="center",
                color="white" if matrix[i, j] > threshold else "black",
                fontsize=8,
            )
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
