"""Classification metrics, cross-validation folds and repeat aggregation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .seeding import stage_rng


@dataclass
class EvalReport:
    acc: float
    sen: float
    spe: float
    auc: float | None
    confusion: list[list[int]]  # [[TN, FP], [FN, TP]]
    n_test: int
    positive_class: str | int
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def confusion_and_rates(pred, truth, positive, negative) -> EvalReport:
    """Confusion matrix, accuracy, sensitivity and specificity.

    Sensitivity or specificity with an empty denominator is reported as 0 and
    the report is flagged ``degenerate``. AUC is left as None.
    """
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} labels")
    if not pred:
        raise ValueError("need at least one prediction")
    allowed = {positive, negative}
    for name, seq in (("prediction", pred), ("label", truth)):
        for v in seq:
            if v not in allowed:
                raise ValueError(f"{name} {v!r} outside class set {{{negative!r}, {positive!r}}}")
    tp = sum(p == positive and t == positive for p, t in zip(pred, truth))
    tn = sum(p == negative and t == negative for p, t in zip(pred, truth))
    fp = sum(p == positive and t == negative for p, t in zip(pred, truth))
    fn = sum(p == negative and t == positive for p, t in zip(pred, truth))
    degenerate = (tp + fn) == 0 or (tn + fp) == 0
    n = len(pred)
    return EvalReport(
        acc=(tp + tn) / n,
        sen=tp / (tp + fn) if tp + fn else 0.0,
        spe=tn / (tn + fp) if tn + fp else 0.0,
        auc=None,
        confusion=[[tn, fp], [fn, tp]],
        n_test=n,
        positive_class=positive,
        degenerate=degenerate,
    )


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("accuracy needs equally long, non-empty inputs")
    return float(np.mean(pred == truth))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores, truth, positive) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    is_pos = truth == positive
    n_pos = int(is_pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    rank_sum = float(_midranks(scores)[is_pos].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def evaluate(pos_scores, truth, positive, negative, threshold: float = 0.5) -> EvalReport:
    """Full report from positive-class probabilities; predicts positive when score > threshold."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    truth = list(truth)
    pred = [positive if s > threshold else negative for s in pos_scores]
    report = confusion_and_rates(pred, truth, positive, negative)
    if len(set(truth)) == 2:
        report.auc = auc(pos_scores, np.asarray(truth, dtype=object), positive)
    else:
        report.degenerate = True
    return report


def kfold_split(labels, k: int, seed: int, val_fraction: float = 0.15, stratify: bool = True):
    """k folds of (train, val, test) boolean masks.

    Test folds are disjoint and cover every subject. Within each class the
    members are shuffled and dealt round-robin (continuing across classes) so
    fold sizes differ by at most one. For each fold, ``val_fraction`` of the
    remaining subjects of each class is held out for validation and the rest
    trains.
    """
    labels = np.asarray(labels)
    n = labels.size
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"cannot make {k} folds from {n} subjects")
    rng = stage_rng(seed, "kfold", k)
    fold_of = np.empty(n, dtype=np.int64)
    if stratify:
        groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
        for c, g in zip(np.unique(labels), groups):
            if g.size < k:
                raise ValueError(f"class {c!r} has {g.size} members, fewer than k={k}")
    else:
        groups = [np.arange(n)]
    offset = 0
    for g in groups:
        members = rng.permutation(g)
        fold_of[members] = (offset + np.arange(members.size)) % k
        offset += members.size

    folds = []
    for f in range(k):
        test = fold_of == f
        val = np.zeros(n, dtype=bool)
        for c in np.unique(labels):
            rest = np.flatnonzero(~test & (labels == c))
            n_val = int(round(val_fraction * rest.size))
            if n_val:
                val[rng.permutation(rest)[:n_val]] = True
        train = ~test & ~val
        folds.append((train, val, test))
    return folds


def summarize(reports: list[EvalReport]) -> dict:
    """Mean and sample standard deviation of each rate over repeats."""
    if not reports:
        raise ValueError("nothing to summarize")
    out = {"n": len(reports)}
    for key in ("acc", "sen", "spe", "auc"):
        vals = np.array([getattr(r, key) for r in reports if getattr(r, key) is not None], dtype=np.float64)
        if vals.size == 0:
            out[key] = {"mean": None, "std": None}
            continue
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[key] = {"mean": float(vals.mean()), "std": std}
    return out
