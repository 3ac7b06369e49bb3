"""File formats: JSONL item catalogs, CSV comparison logs, rating-to-pairwise
conversion, and score export. All files are UTF-8; timestamps are RFC 3339.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pcsrank.baselines import ScoreTable
from pcsrank.core import Comparison, Item, ValidationError

COMPARISON_COLUMNS = ["left_id", "right_id", "outcome", "respondent_id", "created_at"]


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class FeatureStats:
    """Per-dimension statistics used to standardize features at load time.

    Dimensions with (near) zero variance are standardized to exactly 0;
    ``constant_dims`` records which ones.
    """

    mean: np.ndarray
    std: np.ndarray
    constant_dims: tuple[int, ...]


def standardize_features(raw: np.ndarray) -> tuple[np.ndarray, FeatureStats]:
    """Z-score each feature dimension over the loading set."""
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    constant = np.flatnonzero(std < 1e-12)
    safe_std = std.copy()
    safe_std[constant] = 1.0
    standardized = (raw - mean) / safe_std
    standardized[:, constant] = 0.0
    return standardized, FeatureStats(
        mean=mean, std=safe_std, constant_dims=tuple(int(k) for k in constant)
    )


def load_items(path: str | Path, standardize: bool = True) -> tuple[list[Item], Optional[FeatureStats]]:
    """Load a JSON-lines item file: {"id", "features": [...], "attributes"?, "media_uri"?}.

    Feature vectors are z-scored per dimension over the whole file (the
    statistics are returned alongside). Parse and consistency errors name
    the offending line.
    """
    path = Path(path)
    records = []
    dim: Optional[int] = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if "id" not in doc or "features" not in doc:
                raise ValidationError(f"{path}:{lineno}: missing 'id' or 'features'")
            features = np.asarray(doc["features"], dtype=np.float64)
            if features.ndim != 1:
                raise ValidationError(f"{path}:{lineno}: features must be a flat list")
            if dim is None:
                dim = len(features)
            elif len(features) != dim:
                raise ValidationError(
                    f"{path}:{lineno}: feature dimension {len(features)} != {dim}"
                )
            records.append((doc, features))

    if not records:
        return [], None

    raw = np.stack([features for _, features in records])
    stats: Optional[FeatureStats] = None
    if standardize:
        raw, stats = standardize_features(raw)
    items = [
        Item(
            id=str(doc["id"]),
            features=raw[k],
            attributes={str(n): float(v) for n, v in doc.get("attributes", {}).items()},
            media_uri=doc.get("media_uri"),
        )
        for k, (doc, _) in enumerate(records)
    ]
    return items, stats


def write_items(items: Sequence[Item], path: str | Path) -> None:
    """Write items as JSON lines (features stored as-is, no re-standardization)."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            doc = {"id": item.id, "features": list(map(float, item.features))}
            if item.attributes:
                doc["attributes"] = dict(item.attributes)
            if item.media_uri is not None:
                doc["media_uri"] = item.media_uri
            fh.write(json.dumps(doc) + "\n")


def load_comparisons(path: str | Path) -> list[Comparison]:
    """Load a CSV with header left_id,right_id,outcome,respondent_id,created_at."""
    path = Path(path)
    comparisons = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(COMPARISON_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                outcome = int(row["outcome"])
            except ValueError as exc:
                raise ValidationError(
                    f"{path}:{lineno}: outcome {row['outcome']!r} is not an integer"
                ) from exc
            if outcome not in (-1, 0, 1):
                raise ValidationError(
                    f"{path}:{lineno}: outcome {outcome} not in {{-1, 0, 1}}"
                )
            comparisons.append(
                Comparison(
                    left_id=row["left_id"],
                    right_id=row["right_id"],
                    outcome=outcome,
                    respondent_id=row["respondent_id"] or None,
                    created_at=parse_timestamp(row["created_at"]),
                )
            )
    return comparisons


def write_comparisons(comparisons: Sequence[Comparison], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for c in comparisons:
            writer.writerow(
                [
                    c.left_id,
                    c.right_id,
                    c.outcome,
                    c.respondent_id or "",
                    format_timestamp(c.created_at),
                ]
            )


# ---------------------------------------------------------------------------
# Ratings -> pairwise conversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatingRecord:
    """One ordinal rating on a 1..scale point scale."""

    respondent_id: str
    item_id: str
    rating: int


def load_ratings(path: str | Path, scale: int = 4) -> list[RatingRecord]:
    """Load a CSV with header respondent_id,item_id,rating; ratings in 1..scale."""
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"respondent_id", "item_id", "rating"} - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            rating = int(row["rating"])
            if not (1 <= rating <= scale):
                raise ValidationError(f"{path}:{lineno}: rating {rating} outside 1..{scale}")
            records.append(
                RatingRecord(
                    respondent_id=row["respondent_id"], item_id=row["item_id"], rating=rating
                )
            )
    return records


def ratings_to_pairs(
    ratings: Sequence[RatingRecord],
    base_time: Optional[datetime] = None,
    max_pairs_per_user: Optional[int] = None,
) -> list[Comparison]:
    """Convert per-respondent ratings to pairwise comparisons.

    Every unordered pair of items a respondent rated yields one comparison:
    the higher-rated item wins, equal ratings give a tie. The generated left
    side is always the lexicographically smaller id; timestamps increase by
    one second per generated row so downstream sequential fits have an order.
    ``max_pairs_per_user`` caps each respondent's pairs (first pairs in
    id order) for very large rating sets.
    """
    if max_pairs_per_user is not None and max_pairs_per_user < 0:
        raise ValueError("max_pairs_per_user must be >= 0")
    by_user: dict[str, dict[str, int]] = {}
    duplicates = []
    for rec in ratings:
        user = by_user.setdefault(rec.respondent_id, {})
        if rec.item_id in user:
            duplicates.append((rec.respondent_id, rec.item_id))
        user[rec.item_id] = rec.rating
    if duplicates:
        raise ValidationError(f"duplicate (respondent, item) ratings: {duplicates}")

    start = base_time if base_time is not None else datetime.now(timezone.utc)
    comparisons = []
    counter = 0
    for user in sorted(by_user):
        rated = by_user[user]
        emitted = 0
        for a, b in combinations(sorted(rated), 2):
            if max_pairs_per_user is not None and emitted >= max_pairs_per_user:
                break
            emitted += 1
            if rated[a] > rated[b]:
                outcome = -1
            elif rated[a] < rated[b]:
                outcome = +1
            else:
                outcome = 0
            comparisons.append(
                Comparison(
                    left_id=a,
                    right_id=b,
                    outcome=outcome,
                    respondent_id=user,
                    created_at=start + timedelta(seconds=counter),
                )
            )
            counter += 1
    return comparisons


# ---------------------------------------------------------------------------
# Score tables
# ---------------------------------------------------------------------------


def export_scores(table: ScoreTable, path: str | Path) -> None:
    """CSV item_id,score,method sorted by descending score, then id."""
    if not table.scores:
        raise ValidationError("refusing to export an empty score table")
    ordered = sorted(table.scores.items(), key=lambda kv: (-kv[1], kv[0]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "score", "method"])
        for item_id, score in ordered:
            writer.writerow([item_id, repr(float(score)), table.method])


def load_scores(path: str | Path) -> ScoreTable:
    path = Path(path)
    scores: dict[str, float] = {}
    method = "unknown"
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"item_id", "score", "method"} - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            scores[row["item_id"]] = float(row["score"])
            method = row["method"]
    return ScoreTable(scores=scores, method=method)


def score_catalog(checkpoint_path: str | Path, items_path: str | Path) -> ScoreTable:
    """Score every cataloged item with a trained checkpoint.

    Single code path shared by the CLI and the HTTP service so both report
    identical scores for the same files. Features are standardized over the
    catalog exactly as at training time.
    """
    from pcsrank.model import load_checkpoint, score_items

    params = load_checkpoint(checkpoint_path)
    items, _ = load_items(items_path, standardize=True)
    return ScoreTable(scores=score_items(params, items), method="model")
