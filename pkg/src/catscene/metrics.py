"""Overall accuracy, balanced accuracy, long-tail bucketed BA, confusion matrices.

Overall accuracy (OA) is correct / total. Balanced accuracy (BA) is the
unweighted mean of per-class recalls; it is undefined for a class with zero
ground-truth support, which is an error by default. Bucketed BA restricts the
class set to a long-tail bucket (many / med / few by training-sample count);
an empty bucket yields None, never zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricReport:
    oa: float
    ba: float
    per_class_acc: dict[int, float]
    confusion: np.ndarray
    n_total: int
    bucketed: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "oa": self.oa,
            "ba": self.ba,
            "per_class_acc": {str(k): v for k, v in self.per_class_acc.items()},
            "confusion": self.confusion.tolist(),
            "n_total": self.n_total,
            "bucketed": self.bucketed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def format_table(self) -> str:
        """Human-readable summary; percentages with 2 decimals."""
        lines = [f"samples: {self.n_total}", f"OA: {100 * self.oa:.2f}%", f"BA: {100 * self.ba:.2f}%"]
        for name, value in self.bucketed.items():
            lines.append(f"BA_{name}: " + ("-" if value is None else f"{100 * value:.2f}%"))
        return "\n".join(lines)


def _as_arrays(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"preds/labels must be equal-length 1-D sequences, got {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("empty prediction sequence")
    return preds, labels


def overall_accuracy(preds, labels) -> float:
    preds, labels = _as_arrays(preds, labels)
    return float(np.mean(preds == labels))


def per_class_accuracy(preds, labels, class_set, *, skip_empty: bool = False) -> dict[int, float]:
    """Recall per class over ``class_set``.

    A class with zero ground-truth samples is an error unless ``skip_empty``.
    """
    preds, labels = _as_arrays(preds, labels)
    out: dict[int, float] = {}
    for cls in class_set:
        mask = labels == cls
        n = int(mask.sum())
        if n == 0:
            if skip_empty:
                continue
            raise ValueError(f"class {cls} has no ground-truth samples; balanced accuracy undefined")
        out[int(cls)] = float(np.mean(preds[mask] == cls))
    return out


def balanced_accuracy(preds, labels, class_set, *, skip_empty: bool = False) -> float:
    accs = per_class_accuracy(preds, labels, class_set, skip_empty=skip_empty)
    if not accs:
        raise ValueError("no classes with ground-truth support")
    return float(np.mean(list(accs.values())))


def bucketed_ba(preds, labels, bucket_assignment: dict[int, str]) -> dict[str, float | None]:
    """Balanced accuracy restricted to each bucket's class set.

    ``bucket_assignment`` maps class id to bucket name. Only classes actually
    present in the ground truth contribute; a bucket with no present classes
    maps to None.
    """
    preds, labels = _as_arrays(preds, labels)
    present = set(np.unique(labels).tolist())
    out: dict[str, float | None] = {}
    buckets: dict[str, list[int]] = {}
    for cls, name in bucket_assignment.items():
        buckets.setdefault(name, []).append(cls)
    for name, classes in buckets.items():
        members = [c for c in classes if c in present]
        out[name] = balanced_accuracy(preds, labels, members) if members else None
    return out


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """C x C count matrix; entry (i, j) counts ground-truth i predicted j."""
    preds, labels = _as_arrays(preds, labels)
    if (labels < 0).any() or (labels >= num_classes).any() or (preds < 0).any() or (preds >= num_classes).any():
        raise ValueError("label or prediction out of range")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (labels, preds), 1)
    return mat


def compute_report(
    preds,
    labels,
    num_classes: int,
    bucket_assignment: dict[int, str] | None = None,
    *,
    skip_empty: bool = True,
) -> MetricReport:
    """Full metric report; BA over the classes present in the ground truth."""
    preds, labels = _as_arrays(preds, labels)
    class_set = sorted(np.unique(labels).tolist()) if skip_empty else list(range(num_classes))
    accs = per_class_accuracy(preds, labels, class_set)
    return MetricReport(
        oa=overall_accuracy(preds, labels),
        ba=float(np.mean(list(accs.values()))),
        per_class_acc=accs,
        confusion=confusion(preds, labels, num_classes),
        n_total=int(preds.size),
        bucketed=bucketed_ba(preds, labels, bucket_assignment) if bucket_assignment else {},
    )
