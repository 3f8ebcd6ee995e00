"""Confusion matrices and accuracy / precision / recall / F1 / specificity."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "specificity")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, cls: int) -> int:
        return int(self.counts[cls, cls])

    def fp(self, cls: int) -> int:
        return int(self.counts[:, cls].sum() - self.counts[cls, cls])

    def fn(self, cls: int) -> int:
        return int(self.counts[cls, :].sum() - self.counts[cls, cls])

    def tn(self, cls: int) -> int:
        return self.total - self.tp(cls) - self.fp(cls) - self.fn(cls)

    def tolist(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(preds: Sequence[int], labels: Sequence[int], k: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions vs {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> Fraction:
    if den == 0:
        undefined.append(name)
        return Fraction(0)
    return Fraction(num, den)


@dataclass
class Scores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float
    # metric names whose ratio was 0/0 and reported as 0
    undefined: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def _one_vs_rest(cm: ConfusionMatrix, cls: int, undefined: list[str]) -> dict[str, Fraction]:
    tp, tn, fp, fn = cm.tp(cls), cm.tn(cls), cm.fp(cls), cm.fn(cls)
    tag = f"[{cls}]"
    precision = _ratio(tp, tp + fp, "precision" + tag, undefined)
    recall = _ratio(tp, tp + fn, "recall" + tag, undefined)
    specificity = _ratio(tn, tn + fp, "specificity" + tag, undefined)
    if precision + recall == 0:
        if tp + fp == 0 or tp + fn == 0:
            undefined.append("f1" + tag)
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    accuracy = _ratio(tp + tn, cm.total, "accuracy", undefined)
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1, "specificity": specificity}


def binary_metrics(cm: ConfusionMatrix, positive: int = 1, exact: bool = False) -> Scores:
    """Metrics of ``positive`` against the other class of a 2x2 matrix.

    Recall is TP/(TP+FN) and specificity TN/(TN+FP). With ``exact`` the fields
    are :class:`fractions.Fraction` instead of floats.
    """
    if cm.k != 2:
        raise ValueError(f"binary_metrics needs a 2x2 matrix, got {cm.k}x{cm.k}")
    undefined: list[str] = []
    vals = _one_vs_rest(cm, positive, undefined)
    conv = (lambda q: q) if exact else float
    return Scores(**{k: conv(vals[k]) for k in METRIC_NAMES}, undefined=undefined)


def macro_metrics(cm: ConfusionMatrix, exact: bool = False) -> Scores:
    """Equal-weight mean of one-vs-rest precision, recall, F1 and specificity; accuracy = trace/total."""
    undefined: list[str] = []
    per = [_one_vs_rest(cm, c, undefined) for c in range(cm.k)]
    undefined = [u for u in undefined if u != "accuracy"]
    out = {name: sum((p[name] for p in per), Fraction(0)) / cm.k for name in ("precision", "recall", "f1", "specificity")}
    if cm.total:
        out["accuracy"] = Fraction(int(np.trace(cm.counts)), cm.total)
    else:
        out["accuracy"] = Fraction(0)
        undefined.append("accuracy")
    conv = (lambda q: q) if exact else float
    return Scores(**{k: conv(out[k]) for k in METRIC_NAMES}, undefined=undefined)


def per_class_metrics(cm: ConfusionMatrix) -> list[dict[str, float]]:
    scratch: list[str] = []
    return [{k: float(v) for k, v in _one_vs_rest(cm, c, scratch).items()} for c in range(cm.k)]


# --------------------------------------------------------------------- report

SCOPES = ("ich-only", "all")


def report(task1: ConfusionMatrix, task2: ConfusionMatrix, scope: str = "ich-only", positive: int = 1) -> dict:
    """Structured report: one row per classifier plus both matrices."""
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    s1 = binary_metrics(task1, positive)
    s2 = macro_metrics(task2)
    return {
        "scope": scope,
        "rows": [
            {"classifier": "classifier1", "task": "presence", **s1.as_dict(), "undefined": s1.undefined},
            {"classifier": "classifier2", "task": "location", **s2.as_dict(), "undefined": s2.undefined},
        ],
        "confusion": {"task1": task1.tolist(), "task2": task2.tolist()},
        "totals": {"task1": task1.total, "task2": task2.total},
    }


def format_table(rep: dict) -> str:
    header = f"{'classifier':<12} {'accuracy':>9} {'precision':>9} {'recall':>9} {'f1':>9} {'specificity':>11}"
    lines = [header, "-" * len(header)]
    for row in rep["rows"]:
        lines.append(
            f"{row['classifier']:<12} {row['accuracy']:>9.5f} {row['precision']:>9.5f} "
            f"{row['recall']:>9.5f} {row['f1']:>9.5f} {row['specificity']:>11.5f}"
        )
    lines.append(f"task-2 scope: {rep['scope']}")
    return "\n".join(lines)


def format_confusion(cm: ConfusionMatrix, names: Sequence[str]) -> str:
    width = max(8, max(len(n) for n in names) + 1)
    lines = [" " * width + "".join(f"{n:>{width}}" for n in names)]
    for name, row in zip(names, cm.tolist()):
        lines.append(f"{name:<{width}}" + "".join(f"{v:>{width}d}" for v in row))
    return "\n".join(lines)


def dumps(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)


def loads(text: str) -> dict:
    return json.loads(text)
