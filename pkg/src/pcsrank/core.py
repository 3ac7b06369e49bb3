"""Domain types, dataset validation, deterministic splitting, and swap augmentation.

All types here are immutable values after construction and can be shared
freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

OUTCOME_LEFT = -1
OUTCOME_TIE = 0
OUTCOME_RIGHT = +1
OUTCOMES = (OUTCOME_LEFT, OUTCOME_TIE, OUTCOME_RIGHT)


class ValidationError(ValueError):
    """A record violated a dataset integrity rule; the message names the record."""


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class Item:
    """An entity under comparison.

    Attributes:
        id: Stable opaque identifier, unique within a dataset.
        features: Real-valued vector of fixed length D (assumed standardized
            upstream); stored as a read-only float64 array.
        attributes: Environment schema values (segmentation areas in [0, 1],
            presence indicators in {0, 1}); all finite.
        media_uri: Optional display URI for survey UIs.
    """

    id: str
    features: np.ndarray
    attributes: Mapping[str, float] = field(default_factory=dict)
    media_uri: Optional[str] = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise ValidationError(f"item {self.id!r}: features must be a 1-D vector")
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"item {self.id!r}: non-finite feature value")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        for name, value in self.attributes.items():
            if not np.isfinite(value):
                raise ValidationError(f"item {self.id!r}: non-finite attribute {name!r}")


@dataclass(frozen=True)
class Comparison:
    """One human or simulated judgment between two items.

    ``outcome`` is -1 when the left item was chosen, 0 for a tie, and +1
    when the right item was chosen.
    """

    left_id: str
    right_id: str
    outcome: int
    respondent_id: Optional[str] = None
    created_at: datetime = field(default_factory=_utcnow)

    def __post_init__(self) -> None:
        if self.left_id == self.right_id:
            raise ValidationError(f"self-comparison of item {self.left_id!r}")
        if self.outcome not in OUTCOMES:
            raise ValidationError(
                f"comparison ({self.left_id!r}, {self.right_id!r}): "
                f"outcome {self.outcome!r} not in {{-1, 0, +1}}"
            )


def swap_augment(comparison: Comparison) -> Comparison:
    """Swap sides and negate the outcome; ties map to ties.

    Applying twice returns the original comparison.
    """
    return replace(
        comparison,
        left_id=comparison.right_id,
        right_id=comparison.left_id,
        outcome=-comparison.outcome,
    )


@dataclass(frozen=True)
class Dataset:
    """A validated collection of items and comparisons with referential integrity."""

    items: tuple[Item, ...]
    comparisons: tuple[Comparison, ...]

    @cached_property
    def items_by_id(self) -> dict[str, Item]:
        return {item.id: item for item in self.items}

    @property
    def feature_dim(self) -> int:
        return len(self.items[0].features) if self.items else 0

    def tie_fraction(self) -> float:
        if not self.comparisons:
            return 0.0
        ties = sum(1 for c in self.comparisons if c.outcome == OUTCOME_TIE)
        return ties / len(self.comparisons)


def make_dataset(items: Sequence[Item], comparisons: Sequence[Comparison]) -> Dataset:
    """Validate and assemble a Dataset.

    Raises ValidationError naming the offending record for: duplicate item
    ids, inconsistent feature dimensions, dangling comparison ids, and
    self-comparisons (the latter already rejected at Comparison construction).
    """
    seen: dict[str, Item] = {}
    dim: Optional[int] = None
    for item in items:
        if item.id in seen:
            raise ValidationError(f"duplicate item id {item.id!r}")
        if dim is None:
            dim = len(item.features)
        elif len(item.features) != dim:
            raise ValidationError(
                f"item {item.id!r}: feature dimension {len(item.features)} != {dim}"
            )
        seen[item.id] = item
    for comp in comparisons:
        for item_id in (comp.left_id, comp.right_id):
            if item_id not in seen:
                raise ValidationError(
                    f"comparison ({comp.left_id!r}, {comp.right_id!r}): dangling id {item_id!r}"
                )
    return Dataset(items=tuple(items), comparisons=tuple(comparisons))


@dataclass(frozen=True)
class SplitSpec:
    """Train/dev/test fractions plus the shuffle seed."""

    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.fractions) != 3:
            raise ValidationError("fractions must be a (train, dev, test) triple")
        if any(not (0.0 < f < 1.0) for f in self.fractions):
            raise ValidationError(f"each fraction must lie in (0, 1): {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValidationError(f"fractions must sum to 1: {self.fractions}")


def _largest_remainder_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Integer split sizes by largest remainder; remainder ties go to train first."""
    exact = [f * n for f in fractions]
    sizes = [int(np.floor(e)) for e in exact]
    leftover = n - sum(sizes)
    # Sort by descending fractional part, index order breaking ties (train, dev, test).
    order = sorted(range(3), key=lambda k: (-(exact[k] - sizes[k]), k))
    for k in order[:leftover]:
        sizes[k] += 1
    return sizes[0], sizes[1], sizes[2]


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition comparisons into train/dev/test by a seeded shuffle.

    Items are shared by all three splits (the partition is over comparisons).
    Sizes follow largest-remainder rounding of the requested fractions; the
    same seed always yields the identical partition.
    """
    n = len(dataset.comparisons)
    if n < 3:
        raise ValidationError(f"need at least 3 comparisons to split, got {n}")
    n_train, n_dev, n_test = _largest_remainder_sizes(n, spec.fractions)
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    perm = rng.permutation(n)
    shuffled = [dataset.comparisons[k] for k in perm]
    train = shuffled[:n_train]
    dev = shuffled[n_train : n_train + n_dev]
    test = shuffled[n_train + n_dev :]
    assert len(test) == n_test
    return (
        Dataset(items=dataset.items, comparisons=tuple(train)),
        Dataset(items=dataset.items, comparisons=tuple(dev)),
        Dataset(items=dataset.items, comparisons=tuple(test)),
    )
