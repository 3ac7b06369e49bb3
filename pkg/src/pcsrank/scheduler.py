"""Live pair selection with balanced exposure.

The scheduler anchors each pair on a least-shown item, then looks for a
partner that matches the anchor on a random subset of attributes (continuous
values within a tolerance, 0/1 indicators exactly). When no partner matches,
the attribute requirement is halved repeatedly, and as a last resort the
globally least-shown other item is used, so a pair is always produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pcsrank.core import Comparison, Item, ValidationError

DEFAULT_MATCH_ATTRIBUTES = 8
DEFAULT_MATCH_TOLERANCE = 0.1


@dataclass
class SchedulerState:
    """Mutable scheduling state: exposure counts plus the pairing RNG.

    ``seen_response_ids`` makes ``record_response`` idempotent so that
    at-least-once delivery (e.g. client retries) cannot skew exposure.
    """

    shown_counts: dict[str, int] = field(default_factory=dict)
    n_match_attributes: int = DEFAULT_MATCH_ATTRIBUTES
    match_tolerance: float = DEFAULT_MATCH_TOLERANCE
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(np.random.PCG64(0))
    )
    seen_response_ids: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.n_match_attributes < 1:
            raise ValidationError("n_match_attributes must be >= 1")
        if self.match_tolerance < 0:
            raise ValidationError("match_tolerance must be >= 0")
        if any(v < 0 for v in self.shown_counts.values()):
            raise ValidationError("shown counts must be non-negative")


def new_state(
    seed: int = 0,
    n_match_attributes: int = DEFAULT_MATCH_ATTRIBUTES,
    match_tolerance: float = DEFAULT_MATCH_TOLERANCE,
) -> SchedulerState:
    return SchedulerState(
        n_match_attributes=n_match_attributes,
        match_tolerance=match_tolerance,
        rng=np.random.default_rng(np.random.PCG64(seed)),
    )


def _count(state: SchedulerState, item_id: str) -> int:
    return state.shown_counts.get(item_id, 0)


def _least_shown(state: SchedulerState, pool: Sequence[Item]) -> list[Item]:
    low = min(_count(state, item.id) for item in pool)
    return [item for item in pool if _count(state, item.id) == low]


def _is_binary(value: object) -> bool:
    try:
        return float(value) in (0.0, 1.0)
    except (TypeError, ValueError):
        return False


def _attr_match(anchor_value: object, other_value: object, tolerance: float) -> bool:
    if isinstance(anchor_value, str) or isinstance(other_value, str):
        return anchor_value == other_value
    if _is_binary(anchor_value) and _is_binary(other_value):
        return float(anchor_value) == float(other_value)
    try:
        return abs(float(anchor_value) - float(other_value)) <= tolerance
    except (TypeError, ValueError):
        return anchor_value == other_value


def _matches(anchor: Item, other: Item, names: Sequence[str], tolerance: float) -> bool:
    for name in names:
        if name not in other.attributes:
            return False
        if not _attr_match(anchor.attributes[name], other.attributes[name], tolerance):
            return False
    return True


def next_pair(state: SchedulerState, items: Sequence[Item]) -> tuple[Item, Item]:
    """Select the next pair to display; mutates only the RNG state.

    The anchor comes uniformly from the least-shown items; the partner must
    match the anchor on a random draw of attributes, with a halving fallback
    ladder down to one attribute and finally to the least-shown other item.
    Display sides are randomized on return.
    """
    if len(items) < 2:
        raise ValidationError(f"need at least 2 items to schedule, got {len(items)}")

    minimal = _least_shown(state, items)
    anchor = minimal[int(state.rng.integers(len(minimal)))]
    others = [item for item in items if item.id != anchor.id]

    anchor_attrs = sorted(anchor.attributes)
    k = min(state.n_match_attributes, len(anchor_attrs))
    drawn: list[str] = []
    if k > 0:
        order = state.rng.permutation(len(anchor_attrs))
        drawn = [anchor_attrs[i] for i in order[:k]]

    partner: Optional[Item] = None
    while drawn:
        candidates = [
            item
            for item in others
            if _matches(anchor, item, drawn, state.match_tolerance)
        ]
        if candidates:
            least = _least_shown(state, candidates)
            partner = least[int(state.rng.integers(len(least)))]
            break
        if len(drawn) == 1:
            break
        drawn = drawn[: max(1, len(drawn) // 2)]
    if partner is None:
        least = _least_shown(state, others)
        partner = least[int(state.rng.integers(len(least)))]

    if state.rng.random() < 0.5:
        return anchor, partner
    return partner, anchor


def record_response(
    state: SchedulerState,
    comparison: Comparison,
    response_id: Optional[str] = None,
) -> SchedulerState:
    """Credit one exposure to each item of an answered pair.

    Passing the response id makes replays no-ops; both items must already be
    known to the caller's catalog (unknown ids raise).
    """
    if response_id is not None:
        if response_id in state.seen_response_ids:
            return state
        state.seen_response_ids.add(response_id)
    for item_id in (comparison.left_id, comparison.right_id):
        state.shown_counts[item_id] = state.shown_counts.get(item_id, 0) + 1
    return state


def state_to_json(state: SchedulerState) -> str:
    payload = {
        "shown_counts": state.shown_counts,
        "n_match_attributes": state.n_match_attributes,
        "match_tolerance": state.match_tolerance,
        "rng_state": state.rng.bit_generator.state,
        "seen_response_ids": sorted(state.seen_response_ids),
    }
    return json.dumps(payload)


def state_from_json(text: str) -> SchedulerState:
    payload = json.loads(text)
    rng = np.random.default_rng(np.random.PCG64(0))
    rng.bit_generator.state = payload["rng_state"]
    return SchedulerState(
        shown_counts={str(k): int(v) for k, v in payload["shown_counts"].items()},
        n_match_attributes=int(payload["n_match_attributes"]),
        match_tolerance=float(payload["match_tolerance"]),
        rng=rng,
        seen_response_ids=set(payload["seen_response_ids"]),
    )


def save_state(state: SchedulerState, path: str | Path) -> None:
    Path(path).write_text(state_to_json(state), encoding="utf-8")


def load_state(path: str | Path) -> SchedulerState:
    return state_from_json(Path(path).read_text(encoding="utf-8"))
