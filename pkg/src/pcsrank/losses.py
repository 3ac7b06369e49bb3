"""Loss functions: margin ranking hinge, tie contraction, softmax cross-entropy,
and the combined multi-loss.

The hinge is oriented so that zero loss coincides with the satisfied ranking
constraint: the winner's score must exceed the loser's by at least the margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:  # avoids a runtime cycle; model imports this module
    from pcsrank.model import Hyperparams

# Outcome -> softmax class index. Fixed convention, recorded in checkpoints.
CLASS_INDEX = {-1: 0, 0: 1, +1: 2}
INDEX_CLASS = {v: k for k, v in CLASS_INDEX.items()}


def hinge_rank_loss(f_i: float, f_j: float, y: int, gamma: float) -> float:
    """Margin ranking hinge for a non-tie comparison.

    Zero iff the winner's score exceeds the loser's by at least ``gamma``;
    grows linearly with the violation. ``y`` is -1 when the left item won,
    +1 when the right item won; ties are rejected (handled by tie_loss).
    """
    if y not in (-1, 1):
        raise ValueError(f"hinge_rank_loss requires y in {{-1, +1}}, got {y}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return max(0.0, gamma + y * (f_i - f_j))


def tie_loss(f_i: float, f_j: float, gamma: float) -> float:
    """Tie contraction: max(0, |f_i - f_j| - gamma), zero iff scores within gamma."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return max(0.0, abs(f_i - f_j) - gamma)


def softmax_ce(logits: Sequence[float], y: int) -> float:
    """Cross-entropy -log softmax(logits)[class(y)] with max-subtraction for stability."""
    if y not in CLASS_INDEX:
        raise ValueError(f"y must be in {{-1, 0, +1}}, got {y}")
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (3,):
        raise ValueError(f"expected 3 logits, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    m = float(np.max(z))
    log_norm = m + math.log(float(np.sum(np.exp(z - m))))
    return log_norm - float(z[CLASS_INDEX[y]])


@dataclass(frozen=True)
class LossBreakdown:
    """Batch-mean loss components.

    ``classification``, ``ranking`` and ``tie`` are means over the whole
    batch (entries outside a component's class contribute zero but stay in
    the denominator), so that

        total == classification + lambda_rank * ranking + lambda_tie * tie

    holds exactly. ``counts`` records (non-tie, tie) class sizes; per-class
    means are available through the ``*_per_*`` properties.
    """

    total: float
    classification: float
    ranking: float
    tie: float
    counts: tuple[int, int]

    @property
    def batch_size(self) -> int:
        return self.counts[0] + self.counts[1]

    @property
    def ranking_per_nontie(self) -> Optional[float]:
        n_nontie = self.counts[0]
        return self.ranking * self.batch_size / n_nontie if n_nontie else None

    @property
    def tie_per_tie(self) -> Optional[float]:
        n_tie = self.counts[1]
        return self.tie * self.batch_size / n_tie if n_tie else None


def combined_loss(
    pairs: Sequence[tuple[float, float, Optional[Sequence[float]], int]],
    hyper: "Hyperparams",
    include_classification: bool = True,
) -> LossBreakdown:
    """Mean multi-loss over a batch of (f_i, f_j, logits, y) entries.

    Each entry contributes its cross-entropy (when the classification head is
    enabled) plus either a hinge term (non-tie) weighted by ``lambda_rank`` or
    a tie term weighted by ``lambda_tie``. ``logits`` may be None when
    ``include_classification`` is False.
    """
    if not pairs:
        raise ValueError("empty batch")
    n = len(pairs)
    ce_sum = 0.0
    hinge_sum = 0.0
    tie_sum = 0.0
    n_tie = 0
    for f_i, f_j, logits, y in pairs:
        if include_classification:
            ce_sum += softmax_ce(logits, y)
        if y == 0:
            tie_sum += tie_loss(f_i, f_j, hyper.gamma)
            n_tie += 1
        else:
            hinge_sum += hinge_rank_loss(f_i, f_j, y, hyper.gamma)
    classification = ce_sum / n
    ranking = hinge_sum / n
    tie = tie_sum / n
    total = classification + hyper.lambda_rank * ranking + hyper.lambda_tie * tie
    return LossBreakdown(
        total=total,
        classification=classification,
        ranking=ranking,
        tie=tie,
        counts=(n - n_tie, n_tie),
    )
