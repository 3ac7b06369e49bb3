"""Evaluation metrics over a score table: non-margin 2-class accuracy,
margin-based 3-class accuracy, misclassified-observation loss, and
rank-difference histograms.

All functions take a mapping item_id -> score, so trained models (via
``model.score_items``) and classical baselines evaluate through one path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from pcsrank.core import Comparison
from pcsrank.losses import hinge_rank_loss, tie_loss

# Row/column order of confusion matrices: true/predicted in (-1, 0, +1).
CLASS_ORDER = (-1, 0, +1)


def predict_2class(s_left: float, s_right: float) -> Optional[int]:
    """Non-margin prediction: the side with the higher score.

    Exact equality returns None (counted as incorrect, never a coin flip).
    """
    if s_left > s_right:
        return -1
    if s_right > s_left:
        return +1
    return None


def predict_3class(s_left: float, s_right: float, gamma: float) -> int:
    """Margin prediction: a side wins only if it leads by more than gamma."""
    if s_left > s_right + gamma:
        return -1
    if s_right > s_left + gamma:
        return +1
    return 0


def accuracy_2class(scores: Mapping[str, float], comparisons: Sequence[Comparison]) -> float:
    """Fraction of non-tie comparisons whose higher-scored side was the chosen one.

    Tie comparisons are excluded from both numerator and denominator.
    """
    nontie = [c for c in comparisons if c.outcome != 0]
    if not nontie:
        raise ValueError("accuracy_2class needs at least one non-tie comparison")
    correct = sum(
        1 for c in nontie if predict_2class(scores[c.left_id], scores[c.right_id]) == c.outcome
    )
    return correct / len(nontie)


def accuracy_3class(
    scores: Mapping[str, float], comparisons: Sequence[Comparison], gamma: float
) -> float:
    """Fraction of all comparisons correctly classified by the margin rule."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not comparisons:
        raise ValueError("accuracy_3class needs at least one comparison")
    correct = sum(
        1
        for c in comparisons
        if predict_3class(scores[c.left_id], scores[c.right_id], gamma) == c.outcome
    )
    return correct / len(comparisons)


def misclassified_loss(
    scores: Mapping[str, float], comparisons: Sequence[Comparison], gamma: float
) -> Optional[float]:
    """Mean per-comparison loss over 3-class-misclassified comparisons.

    Ground-truth non-ties contribute their hinge term and ground-truth ties
    their contraction term, both at the evaluation gamma. Returns None when
    nothing is misclassified.
    """
    losses = []
    for c in comparisons:
        s_l, s_r = scores[c.left_id], scores[c.right_id]
        if predict_3class(s_l, s_r, gamma) == c.outcome:
            continue
        if c.outcome == 0:
            losses.append(tie_loss(s_l, s_r, gamma))
        else:
            losses.append(hinge_rank_loss(s_l, s_r, c.outcome, gamma))
    if not losses:
        return None
    return sum(losses) / len(losses)


@dataclass(frozen=True)
class ClassHistogram:
    """Signed score-difference histogram for one outcome class."""

    bins: tuple[tuple[float, int], ...]  # (bin_left, count), sorted by bin_left
    mean_abs_diff: Optional[float]
    count: int


@dataclass(frozen=True)
class RankDiffHistogram:
    bin_width: float
    per_class: dict[int, ClassHistogram]  # keyed by outcome in CLASS_ORDER


def rank_diff_histogram(
    scores: Mapping[str, float], comparisons: Sequence[Comparison], bin_width: float
) -> RankDiffHistogram:
    """Histogram of s_left - s_right per outcome class, plus per-class mean |diff|."""
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    per_class = {}
    for outcome in CLASS_ORDER:
        diffs = [
            scores[c.left_id] - scores[c.right_id] for c in comparisons if c.outcome == outcome
        ]
        counts: dict[float, int] = {}
        for d in diffs:
            left_edge = math.floor(d / bin_width) * bin_width
            counts[left_edge] = counts.get(left_edge, 0) + 1
        mean_abs = sum(abs(d) for d in diffs) / len(diffs) if diffs else None
        per_class[outcome] = ClassHistogram(
            bins=tuple(sorted(counts.items())),
            mean_abs_diff=mean_abs,
            count=len(diffs),
        )
    return RankDiffHistogram(bin_width=bin_width, per_class=per_class)


def histogram_to_csv(hist: RankDiffHistogram, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "bin_left", "count"])
        for outcome in CLASS_ORDER:
            for bin_left, count in hist.per_class[outcome].bins:
                writer.writerow([outcome, f"{bin_left:.12g}", count])


@dataclass(frozen=True)
class EvalReport:
    """Full evaluation of a score table on a comparison set.

    ``accuracy2`` is None when the set has no non-tie comparisons;
    ``mean_misclassified_loss`` is None when nothing is misclassified.
    Confusion rows are true classes and columns predicted classes, both in
    (-1, 0, +1) order.
    """

    accuracy2: Optional[float]
    accuracy3: float
    gamma: float
    mean_misclassified_loss: Optional[float]
    class_confusion: tuple[tuple[int, int, int], ...]
    n_evaluated: tuple[int, int, int]

    def to_json_dict(self) -> dict:
        return {
            "accuracy2": self.accuracy2,
            "accuracy3": self.accuracy3,
            "gamma": self.gamma,
            "mean_misclassified_loss": self.mean_misclassified_loss,
            "class_confusion": [list(row) for row in self.class_confusion],
            "n_evaluated": list(self.n_evaluated),
        }


def evaluate(
    scores: Mapping[str, float], comparisons: Sequence[Comparison], gamma: float
) -> EvalReport:
    if not comparisons:
        raise ValueError("evaluate needs at least one comparison")
    idx = {outcome: k for k, outcome in enumerate(CLASS_ORDER)}
    confusion = [[0, 0, 0] for _ in CLASS_ORDER]
    for c in comparisons:
        pred = predict_3class(scores[c.left_id], scores[c.right_id], gamma)
        confusion[idx[c.outcome]][idx[pred]] += 1
    has_nontie = any(c.outcome != 0 for c in comparisons)
    return EvalReport(
        accuracy2=accuracy_2class(scores, comparisons) if has_nontie else None,
        accuracy3=accuracy_3class(scores, comparisons, gamma),
        gamma=gamma,
        mean_misclassified_loss=misclassified_loss(scores, comparisons, gamma),
        class_confusion=tuple(tuple(row) for row in confusion),
        n_evaluated=tuple(sum(confusion[idx[o]]) for o in CLASS_ORDER),
    )
