"""Accuracy, confusion matrices and run summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def row_percentages(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        return np.divide(100.0 * self.counts, sums, out=np.zeros(self.counts.shape), where=sums > 0)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.class_names)
            writer.writerows(self.counts.tolist())

    def render(self) -> str:
        width = max(16, *(len(n) + 2 for n in self.class_names))
        pct = self.row_percentages()
        lines = ["true \\ predicted".ljust(width) + "".join(n.rjust(width) for n in self.class_names)]
        for i, name in enumerate(self.class_names):
            cells = "".join(f"{c:d} ({p:5.2f}%)".rjust(width) for c, p in zip(self.counts[i], pct[i]))
            lines.append(name.ljust(width) + cells)
        return "\n".join(lines)


def _as_labels(values: Sequence[int]) -> np.ndarray:
    return np.asarray(values, dtype=np.int64).ravel()


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    p, l = _as_labels(preds), _as_labels(labels)
    if len(p) != len(l):
        raise ValueError(f"length mismatch: {len(p)} predictions, {len(l)} labels")
    if len(p) == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.count_nonzero(p == l) / len(l))


def confusion(
    preds: Sequence[int], labels: Sequence[int], n_classes: int, class_names: Sequence[str] | None = None
) -> ConfusionMatrix:
    p, l = _as_labels(preds), _as_labels(labels)
    if len(p) != len(l):
        raise ValueError(f"length mismatch: {len(p)} predictions, {len(l)} labels")
    for arr in (p, l):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"class index outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (l, p), 1)
    names = tuple(class_names) if class_names is not None else tuple(f"class_{k}" for k in range(n_classes))
    if len(names) != n_classes:
        raise ValueError("class_names length must equal n_classes")
    return ConfusionMatrix(counts, names)


def summarize(history: Sequence[dict]) -> dict:
    """Max accuracy (earliest round on ties), final accuracy and minimum loss.

    ``history`` is a sequence of round records with ``round``, ``test_acc``
    and ``test_loss`` keys, as written to the history JSONL.
    """
    if not history:
        raise ValueError("empty history")
    rounds = [r["round"] for r in history]
    if any(b <= a for a, b in zip(rounds, rounds[1:])):
        raise ValueError("history rounds must be strictly increasing")
    best = max(range(len(history)), key=lambda i: (history[i]["test_acc"], -i))
    return {
        "rounds": len(history),
        "max_acc": history[best]["test_acc"],
        "max_round": history[best]["round"],
        "final_acc": history[-1]["test_acc"],
        "min_loss": min(r["test_loss"] for r in history),
    }
