"""Mini-batch training with dev-set early stopping, gamma sweeps, with/without
ties training modes, and real+synthetic dataset mixing.

A run is fully deterministic under its seed: parameter init, epoch shuffles,
and side-swap draws all derive from one seed sequence, and batch reductions
use a fixed summation order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pcsrank import metrics
from pcsrank.core import Comparison, Dataset, Item, ValidationError, make_dataset
from pcsrank.losses import LossBreakdown
from pcsrank.model import (
    Dims,
    Hyperparams,
    ModelParams,
    adam_step,
    effective_learning_rate,
    init_params,
    loss_and_gradients,
    make_batch,
    score_items,
)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs around the optimization loop.

    ``use_ties=False`` drops tie comparisons from training (the
    "without ties" ablation); ``swap_augmentation`` randomly mirrors each
    batch entry since the scorer is not inherently side-symmetric.
    """

    hyper: Hyperparams = field(default_factory=Hyperparams)
    use_ties: bool = True
    use_classification_head: bool = True
    swap_augmentation: bool = True
    patience: int = 3
    trunk_widths: tuple[int, ...] = (64, 64)
    fusion_hidden: int = 64

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    dev_accuracy2: float
    dev_accuracy3: float
    effective_lr: float


TrainHistory = list[EpochRecord]


def history_to_csv(history: TrainHistory, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "epoch",
                "loss_total",
                "loss_classification",
                "loss_ranking",
                "loss_tie",
                "dev_accuracy2",
                "dev_accuracy3",
                "effective_lr",
            ]
        )
        for rec in history:
            writer.writerow(
                [
                    rec.epoch,
                    repr(rec.loss.total),
                    repr(rec.loss.classification),
                    repr(rec.loss.ranking),
                    repr(rec.loss.tie),
                    repr(rec.dev_accuracy2),
                    repr(rec.dev_accuracy3),
                    repr(rec.effective_lr),
                ]
            )


def _effective_comparisons(dataset: Dataset, use_ties: bool) -> list[Comparison]:
    comps = list(dataset.comparisons)
    if not use_ties:
        comps = [c for c in comps if c.outcome != 0]
    if not comps:
        raise ValidationError("effective training set is empty")
    return comps


def train(
    train_set: Dataset, dev_set: Dataset, config: TrainConfig
) -> tuple[ModelParams, TrainHistory]:
    """Train the scorer, returning the parameters from the epoch with the best
    dev 2-class accuracy (earliest epoch on ties) and the per-epoch history.
    """
    comps = _effective_comparisons(train_set, config.use_ties)
    items_by_id = dict(train_set.items_by_id)
    items_by_id.update(dev_set.items_by_id)

    dims = Dims(
        feature_dim=train_set.feature_dim,
        trunk_widths=config.trunk_widths,
        fusion_hidden=config.fusion_hidden,
    )
    root = np.random.SeedSequence(config.hyper.seed)
    init_ss, shuffle_ss = root.spawn(2)
    params = init_params(dims, int(init_ss.generate_state(1)[0]), hyper=config.hyper)
    shuffle_rng = np.random.default_rng(shuffle_ss)

    hyper = config.hyper
    n = len(comps)
    dev_items = [items_by_id[iid] for iid in {i.id for i in dev_set.items}]

    history: TrainHistory = []
    best_acc2 = -1.0
    best_params: Optional[ModelParams] = None
    epochs_since_best = 0

    for epoch in range(hyper.max_epochs):
        perm = shuffle_rng.permutation(n)
        swap = (
            shuffle_rng.random(n) < 0.5
            if config.swap_augmentation
            else np.zeros(n, dtype=bool)
        )
        loss_sums = np.zeros(4)  # total, classification, ranking, tie
        n_nontie = n_tie = 0
        for start in range(0, n, hyper.batch_size):
            chunk = perm[start : start + hyper.batch_size]
            batch_comps = [comps[k] for k in chunk]
            batch = make_batch(batch_comps, items_by_id, swap_mask=swap[start : start + len(chunk)])
            breakdown, grads = loss_and_gradients(
                params, batch, hyper, use_classification=config.use_classification_head
            )
            params = adam_step(params, grads)
            m = len(batch_comps)
            loss_sums += m * np.array(
                [breakdown.total, breakdown.classification, breakdown.ranking, breakdown.tie]
            )
            n_nontie += breakdown.counts[0]
            n_tie += breakdown.counts[1]

        epoch_loss = LossBreakdown(
            total=float(loss_sums[0] / n),
            classification=float(loss_sums[1] / n),
            ranking=float(loss_sums[2] / n),
            tie=float(loss_sums[3] / n),
            counts=(n_nontie, n_tie),
        )
        dev_scores = score_items(params, dev_items)
        acc2 = metrics.accuracy_2class(dev_scores, dev_set.comparisons)
        acc3 = metrics.accuracy_3class(dev_scores, dev_set.comparisons, hyper.gamma)
        history.append(
            EpochRecord(
                epoch=epoch,
                loss=epoch_loss,
                dev_accuracy2=acc2,
                dev_accuracy3=acc3,
                effective_lr=effective_learning_rate(hyper, params.adam.step),
            )
        )

        if acc2 > best_acc2:
            best_acc2 = acc2
            best_params = params.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    assert best_params is not None
    return best_params, history


@dataclass(frozen=True)
class GammaSweepRow:
    """Test-set evaluation of one fully trained model at one margin."""

    gamma: float
    accuracy2: Optional[float]
    accuracy3: float
    misclassified_loss: Optional[float]
    tie_recall: Optional[float]
    mean_abs_diff_tie: Optional[float]
    mean_abs_diff_nontie: Optional[float]


def sweep_gamma(
    train_set: Dataset,
    dev_set: Dataset,
    test_set: Dataset,
    gammas: Sequence[float],
    config: TrainConfig,
) -> list[GammaSweepRow]:
    """Train one model per margin value and evaluate each on the test set.

    Tie-related columns are None when the test set has no tie comparisons.
    """
    if not gammas:
        raise ValueError("gammas must be non-empty")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be ascending")
    rows = []
    for gamma in gammas:
        cfg = replace(config, hyper=replace(config.hyper, gamma=gamma))
        params, _ = train(train_set, dev_set, cfg)
        all_items = {i.id: i for i in (*train_set.items, *test_set.items)}
        scores = score_items(params, all_items.values())
        report = metrics.evaluate(scores, test_set.comparisons, gamma)
        hist = metrics.rank_diff_histogram(scores, test_set.comparisons, max(gamma, 0.05))
        ties_true = report.n_evaluated[1]
        tie_recall = report.class_confusion[1][1] / ties_true if ties_true else None
        nontie_diffs = [
            h.mean_abs_diff
            for outcome, h in hist.per_class.items()
            if outcome != 0 and h.mean_abs_diff is not None
        ]
        nontie_counts = [
            h.count for outcome, h in hist.per_class.items() if outcome != 0 and h.count
        ]
        mean_nontie = (
            sum(d * c for d, c in zip(nontie_diffs, nontie_counts)) / sum(nontie_counts)
            if nontie_counts
            else None
        )
        rows.append(
            GammaSweepRow(
                gamma=gamma,
                accuracy2=report.accuracy2,
                accuracy3=report.accuracy3,
                misclassified_loss=report.mean_misclassified_loss,
                tie_recall=tie_recall,
                mean_abs_diff_tie=hist.per_class[0].mean_abs_diff,
                mean_abs_diff_nontie=mean_nontie,
            )
        )
    return rows


def sweep_to_csv(rows: Sequence[GammaSweepRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "gamma",
                "accuracy2",
                "accuracy3",
                "misclassified_loss",
                "tie_recall",
                "mean_abs_diff_tie",
                "mean_abs_diff_nontie",
            ]
        )
        for r in rows:
            writer.writerow(
                [
                    r.gamma,
                    _cell(r.accuracy2),
                    _cell(r.accuracy3),
                    _cell(r.misclassified_loss),
                    _cell(r.tie_recall),
                    _cell(r.mean_abs_diff_tie),
                    _cell(r.mean_abs_diff_nontie),
                ]
            )


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def mix_datasets(real: Dataset, synthetic: Dataset, ratio: float, seed: int) -> Dataset:
    """Combine real comparisons with a seeded sample of synthetic ones.

    The sample holds round(ratio * |real comparisons|) synthetic comparisons
    drawn without replacement; item ids get "real/" and "synth/" prefixes to
    keep the namespaces disjoint.
    """
    if ratio <= 0:
        raise ValueError("ratio must be > 0")
    if real.feature_dim != synthetic.feature_dim:
        raise ValidationError(
            f"feature dimensions differ: real {real.feature_dim}, synthetic {synthetic.feature_dim}"
        )
    n_sample = round(ratio * len(real.comparisons))
    if n_sample > len(synthetic.comparisons):
        raise ValueError(
            f"synthetic set has {len(synthetic.comparisons)} comparisons, "
            f"need {n_sample} for ratio {ratio}"
        )
    rng = np.random.default_rng(np.random.PCG64(seed))
    chosen = np.sort(rng.choice(len(synthetic.comparisons), size=n_sample, replace=False))

    def prefix_item(item: Item, prefix: str) -> Item:
        return Item(
            id=f"{prefix}/{item.id}",
            features=item.features,
            attributes=item.attributes,
            media_uri=item.media_uri,
        )

    def prefix_comp(c: Comparison, prefix: str) -> Comparison:
        return replace(c, left_id=f"{prefix}/{c.left_id}", right_id=f"{prefix}/{c.right_id}")

    items = [prefix_item(i, "real") for i in real.items] + [
        prefix_item(i, "synth") for i in synthetic.items
    ]
    comparisons = [prefix_comp(c, "real") for c in real.comparisons] + [
        prefix_comp(synthetic.comparisons[k], "synth") for k in chosen
    ]
    return make_dataset(items, comparisons)
