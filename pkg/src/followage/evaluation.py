"""Hold-out splits, classification metrics, ROC curves, baselines and population counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingestion import LabeledAccount

COARSE_LABELS = ("<18", "18-44", ">=45")
_COARSE_GROUPS = (slice(0, 4), slice(4, 7), slice(7, 10))
_COARSE_OF_FINE = np.array([0, 0, 0, 0, 1, 1, 1, 2, 2, 2])


def split_holdout(labels: Sequence[LabeledAccount], fraction: float = 0.10,
                  seed: int = 0) -> tuple[list[LabeledAccount], list[LabeledAccount]]:
    """Seeded uniform split; both sides keep the input order."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(labels)
    n_test = int(round(fraction * n))
    if n_test == 0 or n_test == n:
        raise ValueError(f"split of {n} labels at fraction {fraction} leaves an empty side")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(n, dtype=bool)
    test_mask[rng.choice(n, size=n_test, replace=False)] = True
    train = [acc for acc, t in zip(labels, test_mask) if not t]
    test = [acc for acc, t in zip(labels, test_mask) if t]
    return train, test


def resolve_truth(labels: Sequence[LabeledAccount], seed: int = 0) -> dict[int, int]:
    """One category per account: one-hot labels as is, spread proxies sampled from their weights.

    Sampling walks accounts in user-id order so the result depends only on the seed.
    """
    rng = np.random.default_rng(seed)
    truth = {}
    for acc in sorted(labels, key=lambda a: a.user_id):
        cat = acc.category
        if cat is None:
            cat = int(rng.choice(acc.weights.size, p=acc.weights / acc.weights.sum()))
        truth[acc.user_id] = cat
    return truth


@dataclass
class Metrics:
    confusion: np.ndarray  # [true, predicted]
    labels: tuple[str, ...]

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def precision(self) -> np.ndarray:
        tp = np.diag(self.confusion).astype(float)
        predicted = self.confusion.sum(axis=0)
        return np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)

    @property
    def recall(self) -> np.ndarray:
        tp = np.diag(self.confusion).astype(float)
        actual = self.support
        return np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)

    @property
    def micro_f1(self) -> float:
        # pooled over classes: every mistake is one FP and one FN
        tp = np.trace(self.confusion)
        total = self.confusion.sum()
        fp = fn = total - tp
        denom = 2 * tp + fp + fn
        return float(2 * tp / denom) if denom else 0.0

    def merge(self, other: "Metrics") -> "Metrics":
        return Metrics(self.confusion + other.confusion, self.labels)

    def to_text(self) -> str:
        head = "\t".join(["", *self.labels])
        rows = [
            "\t".join(["test_cases", *(str(int(v)) for v in self.support)]),
            "\t".join(["recall", *(f"{v:.4f}" for v in self.recall)]),
            "\t".join(["precision", *(f"{v:.4f}" for v in self.precision)]),
            f"micro_f1\t{self.micro_f1:.4f}",
        ]
        return "\n".join([head, *rows]) + "\n"


def confusion_matrix(truth: Sequence[int], predicted: Sequence[int], n_classes: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, predicted), 1)
    return cm


def score_metrics(truth: Mapping[int, int], predictions: Mapping[int, int],
                  labels: Sequence[str]) -> Metrics:
    """Per-class precision/recall and micro-F1 for aligned id -> category maps."""
    if set(truth) != set(predictions):
        missing = len(set(truth) ^ set(predictions))
        raise ValueError(f"truth and predictions cover different ids ({missing} unmatched)")
    ids = sorted(truth)
    cm = confusion_matrix([truth[u] for u in ids], [predictions[u] for u in ids], len(labels))
    return Metrics(cm, tuple(labels))


def coarsen(value):
    """Collapse 10-band posteriors (..., 10) or a category index into under-18 / 18-44 / 45+."""
    if isinstance(value, (int, np.integer)):
        if not 0 <= value < 10:
            raise ValueError(f"category {value} is not in the 10-band taxonomy")
        return int(_COARSE_OF_FINE[value])
    arr = np.asarray(value, dtype=float)
    if arr.shape[-1] != 10:
        raise ValueError(f"coarsening needs 10 categories, got {arr.shape[-1]}")
    return np.stack([arr[..., g].sum(axis=-1) for g in _COARSE_GROUPS], axis=-1)


def coarsen_account(acc: LabeledAccount) -> LabeledAccount:
    return LabeledAccount(acc.user_id, acc.source, coarsen(acc.weights))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_curve(is_positive: np.ndarray, scores: np.ndarray) -> RocCurve:
    """Binary ROC over all distinct score thresholds, AUC by the trapezoid rule."""
    y = np.asarray(is_positive, dtype=bool)
    s = np.asarray(scores, dtype=float)
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last_of_tie]
    fp = (last_of_tie + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    thresholds = np.r_[np.inf, s[last_of_tie]]
    return RocCurve(fpr, tpr, thresholds, float(np.trapezoid(tpr, fpr)))


def roc_auc(truth: Sequence[int], posteriors: np.ndarray) -> dict[int, RocCurve | None]:
    """One-vs-rest curves per class; a class absent from truth (or always true) maps to None."""
    truth = np.asarray(truth)
    posteriors = np.asarray(posteriors, dtype=float)
    curves = {}
    for c in range(posteriors.shape[1]):
        y = truth == c
        curves[c] = roc_curve(y, posteriors[:, c]) if 0 < y.sum() < y.size else None
    return curves


def write_roc_points(curves: Mapping[int, RocCurve | None], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c, curve in sorted(curves.items()):
            if curve is None:
                continue
            for f, t in zip(curve.fpr, curve.tpr):
                fh.write(f"{c}\t{f!r}\t{t!r}\n")


def prior_baseline(prior, test_ids: Sequence[int], seed: int = 0) -> dict[int, int]:
    """Each account gets a category drawn independently from the prior."""
    prior = np.asarray(prior, dtype=float)
    rng = np.random.default_rng(seed)
    ids = sorted(test_ids)
    draws = rng.choice(prior.size, size=len(ids), p=prior / prior.sum())
    return {u: int(d) for u, d in zip(ids, draws)}


@dataclass
class Population:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def fractions(self) -> np.ndarray:
        total = self.total
        return self.counts / total if total else np.zeros(self.counts.size)

    def to_text(self, labels: Sequence[str]) -> str:
        return "".join(f"{i}\t{lab}\t{int(c)}\t{float(f)!r}\n"
                       for i, (lab, c, f) in enumerate(zip(labels, self.counts, self.fractions)))


def aggregate_population(modes: Iterable[int], n_classes: int) -> Population:
    counts = np.zeros(n_classes, dtype=np.int64)
    for chunk in _chunks(modes, 1 << 16):
        if chunk.size and (chunk.min() < 0 or chunk.max() >= n_classes):
            raise ValueError(f"category index outside 0..{n_classes - 1}")
        counts += np.bincount(chunk, minlength=n_classes)[:n_classes]
    return Population(counts)


def _chunks(it: Iterable[int], size: int):
    buf = []
    for x in it:
        buf.append(x)
        if len(buf) >= size:
            yield np.asarray(buf, dtype=np.int64)
            buf = []
    if buf:
        yield np.asarray(buf, dtype=np.int64)
