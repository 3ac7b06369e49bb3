"""Synthetic ground-truth worlds and comparison generation.

Every world carries a hidden per-item score; simulated respondents see that
score through Gaussian noise and answer "tie" whenever the perceived
difference falls below an indifference bandwidth. The budget experiment
regenerates data at each comparisons-per-item level and pits the feature-based
scorer against the classical baselines on identical splits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pcsrank import metrics
from pcsrank.baselines import (
    BASELINE_METHODS,
    EloConfig,
    ScoreTable,
    SkillConfig,
    fit_baseline,
    rao_kupper_probabilities,
)
from pcsrank.core import (
    Comparison,
    Dataset,
    Item,
    SplitSpec,
    ValidationError,
    make_dataset,
    split,
)
from pcsrank.model import Hyperparams, score_items
from pcsrank.trainer import TrainConfig, train

GENERATORS = ("linear", "mlp")
TIE_MODELS = ("perceptual", "rao_kupper")
_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)

# Streams carved out of one seed so world generation and comparison
# generation stay independent yet jointly reproducible.
_STREAM_FEATURES = 0
_STREAM_GENERATOR = 1
_STREAM_COMPARISONS = 2


@dataclass(frozen=True)
class SimConfig:
    """Knobs of one synthetic world and its response process.

    ``tie_bandwidth`` is the perceptual indifference width: a pair reads as a
    tie when the noisy score difference lands inside it. ``tie_model``
    switches to Rao-Kupper sampling (worths exp(true score), theta =
    exp(tie_bandwidth)) for cross-checking the MLE fitter.
    """

    n_items: int
    feature_dim: int
    avg_comparisons_per_item: float
    tie_bandwidth: float = 0.0
    respondent_noise: float = 0.0
    generator: str = "linear"
    seed: int = 0
    tie_model: str = "perceptual"

    def __post_init__(self) -> None:
        if self.n_items < 1:
            raise ValidationError("n_items must be >= 1")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1")
        if self.avg_comparisons_per_item <= 0:
            raise ValidationError("avg_comparisons_per_item must be > 0")
        if self.tie_bandwidth < 0:
            raise ValidationError("tie_bandwidth must be >= 0")
        if self.respondent_noise < 0:
            raise ValidationError("respondent_noise must be >= 0")
        if self.generator not in GENERATORS:
            raise ValidationError(f"generator must be one of {GENERATORS}")
        if self.tie_model not in TIE_MODELS:
            raise ValidationError(f"tie_model must be one of {TIE_MODELS}")


@dataclass(frozen=True)
class SimWorld:
    """Items plus the hidden scores and generator parameters behind them."""

    items: tuple[Item, ...]
    true_scores: dict[str, float]
    generator_params: dict


def _stream(config: SimConfig, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(key,)))


def gen_world(config: SimConfig) -> SimWorld:
    """Draw items with standard-normal features and hidden true scores."""
    rng_x = _stream(config, _STREAM_FEATURES)
    rng_g = _stream(config, _STREAM_GENERATOR)
    x = rng_x.standard_normal((config.n_items, config.feature_dim))

    if config.generator == "linear":
        w = rng_g.standard_normal(config.feature_dim)
        w /= np.linalg.norm(w)
        scores = x @ w
        params = {"kind": "linear", "w": w}
    else:
        hidden = 32
        w1 = rng_g.standard_normal((hidden, config.feature_dim)) / np.sqrt(
            config.feature_dim
        )
        w2 = rng_g.standard_normal(hidden) / np.sqrt(hidden)
        scores = np.tanh(x @ w1.T) @ w2
        params = {"kind": "mlp", "w1": w1, "w2": w2}

    width = max(4, len(str(config.n_items - 1)))
    items = tuple(
        Item(id=f"sim-{k:0{width}d}", features=x[k]) for k in range(config.n_items)
    )
    true_scores = {item.id: float(scores[k]) for k, item in enumerate(items)}
    return SimWorld(items=items, true_scores=true_scores, generator_params=params)


def gen_comparisons(world: SimWorld, config: SimConfig) -> list[Comparison]:
    """Sample round(avg * n / 2) uniform random pairings and judge each one.

    Perceived scores add fresh Gaussian noise per side per trial; a tie is
    returned when the perceived difference is smaller than the bandwidth.
    """
    n = len(world.items)
    if n < 2:
        raise ValidationError("need at least 2 items to generate comparisons")
    rng = _stream(config, _STREAM_COMPARISONS)
    count = round(config.avg_comparisons_per_item * n / 2)

    left_idx = rng.integers(0, n, size=count)
    # Uniform over the other n-1 items, never equal to the left index.
    right_idx = (left_idx + 1 + rng.integers(0, n - 1, size=count)) % n

    s_true = np.array([world.true_scores[i.id] for i in world.items])
    comparisons: list[Comparison] = []
    if config.tie_model == "rao_kupper":
        worth = np.exp(s_true - s_true.max())
        worth /= worth.sum()
        theta = float(np.exp(config.tie_bandwidth))
        u = rng.random(count)
        for k in range(count):
            i, j = int(left_idx[k]), int(right_idx[k])
            p_i, p_j, _ = rao_kupper_probabilities(worth[i], worth[j], theta)
            outcome = -1 if u[k] < p_i else (+1 if u[k] < p_i + p_j else 0)
            comparisons.append(_mk(world, i, j, outcome, k))
        return comparisons

    noise = rng.standard_normal((count, 2)) * config.respondent_noise
    perceived_left = s_true[left_idx] + noise[:, 0]
    perceived_right = s_true[right_idx] + noise[:, 1]
    diff = perceived_left - perceived_right
    for k in range(count):
        if abs(diff[k]) < config.tie_bandwidth:
            outcome = 0
        else:
            outcome = -1 if diff[k] > 0 else +1
        comparisons.append(_mk(world, int(left_idx[k]), int(right_idx[k]), outcome, k))
    return comparisons


def _mk(world: SimWorld, i: int, j: int, outcome: int, k: int) -> Comparison:
    return Comparison(
        left_id=world.items[i].id,
        right_id=world.items[j].id,
        outcome=outcome,
        respondent_id="sim",
        created_at=_EPOCH + timedelta(seconds=k),
    )


def gen_dataset(config: SimConfig) -> tuple[SimWorld, Dataset]:
    """World plus validated dataset in one call."""
    world = gen_world(config)
    return world, make_dataset(world.items, gen_comparisons(world, config))


# ---------------------------------------------------------------------------
# Budget experiment: accuracy as a function of comparisons per item
# ---------------------------------------------------------------------------

PCS_METHOD = "pcs"
EXPERIMENT_METHODS = (PCS_METHOD,) + BASELINE_METHODS


@dataclass(frozen=True)
class BudgetRow:
    avg_comparisons: float
    method: str
    seed: int
    accuracy2: float
    accuracy3: float
    tie_fraction: float


def complete_scores(table: ScoreTable, item_ids: Sequence[str]) -> dict[str, float]:
    """Extend fitted scores to items absent from training.

    Unseen items get the method's prior score (fresh Elo rating, fresh skill
    lower bound, uniform stationary/worth mass), so rankings over them carry
    no information — which is exactly the handicap of comparison-only methods
    at low budgets.
    """
    priors = {
        "elo": EloConfig().initial_rating,
        "skill": SkillConfig().mu0 - 3.0 * SkillConfig().sigma0,
    }
    fill = priors.get(table.method, 1.0 / len(table.scores) if table.scores else 0.0)
    scores = {iid: float(fill) for iid in item_ids}
    scores.update(table.scores)
    return scores


def _cell_seed(base_seed: int, seed_index: int) -> int:
    return int(np.random.SeedSequence((base_seed, seed_index)).generate_state(1)[0])


def run_budget_experiment(
    configs: Sequence[SimConfig],
    methods: Sequence[str],
    n_seeds: int,
    pcs_config: Optional[TrainConfig] = None,
) -> list[BudgetRow]:
    """Fit every method on regenerated worlds at each budget level.

    Each (config, seed) cell generates one world, one comparison set, and one
    70-10-20 split shared by all methods. The feature-based model trains with
    early stopping on the dev slice; baselines fit on train+dev (the same 80%
    of data). Test accuracy is 2-class on non-ties plus 3-class at the
    model's margin (margin 0 for baselines, whose scores have no calibrated
    scale).
    """
    unknown = [m for m in methods if m not in EXPERIMENT_METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {EXPERIMENT_METHODS}")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    if pcs_config is None:
        pcs_config = TrainConfig(hyper=Hyperparams(gamma=0.3))

    rows: list[BudgetRow] = []
    for config in configs:
        for seed_index in range(n_seeds):
            cell = _cell_seed(config.seed, seed_index)
            cell_config = replace(config, seed=cell)
            world, dataset = gen_dataset(cell_config)
            train_set, dev_set, test_set = split(dataset, SplitSpec(seed=cell))
            tie_fraction = dataset.tie_fraction()
            for method in methods:
                if method == PCS_METHOD:
                    cfg = replace(pcs_config, hyper=replace(pcs_config.hyper, seed=cell))
                    params, _ = train(train_set, dev_set, cfg)
                    scores = score_items(params, world.items)
                    gamma = cfg.hyper.gamma
                else:
                    fit_comps = train_set.comparisons + dev_set.comparisons
                    # Sparse budgets need forgiving fitter settings: a light
                    # symmetric pseudo-count keeps the Rao-Kupper MLE interior,
                    # and slow-mixing comparison graphs need more power steps.
                    extra = {
                        "rao_kupper": {"pseudo_count": 0.5},
                        "rank_centrality": {"max_iterations": 1_000_000},
                    }.get(method, {})
                    table = fit_baseline(method, fit_comps, **extra)
                    scores = complete_scores(table, [i.id for i in world.items])
                    gamma = 0.0
                rows.append(
                    BudgetRow(
                        avg_comparisons=config.avg_comparisons_per_item,
                        method=method,
                        seed=seed_index,
                        accuracy2=metrics.accuracy_2class(scores, test_set.comparisons),
                        accuracy3=metrics.accuracy_3class(
                            scores, test_set.comparisons, gamma
                        ),
                        tie_fraction=tie_fraction,
                    )
                )
    return rows


@dataclass(frozen=True)
class BudgetSummary:
    avg_comparisons: float
    method: str
    mean_accuracy2: float
    std_accuracy2: float
    n_seeds: int


def summarize_budget(rows: Sequence[BudgetRow]) -> list[BudgetSummary]:
    """Mean and standard deviation of 2-class accuracy per experiment cell."""
    cells: dict[tuple[float, str], list[float]] = {}
    for row in rows:
        cells.setdefault((row.avg_comparisons, row.method), []).append(row.accuracy2)
    summaries = []
    for (avg, method), accs in sorted(cells.items()):
        arr = np.array(accs)
        summaries.append(
            BudgetSummary(
                avg_comparisons=avg,
                method=method,
                mean_accuracy2=float(arr.mean()),
                std_accuracy2=float(arr.std()),
                n_seeds=len(accs),
            )
        )
    return summaries


def budget_to_csv(rows: Sequence[BudgetRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["avg_comparisons", "method", "seed", "accuracy2", "accuracy3", "tie_fraction"]
        )
        for r in rows:
            writer.writerow(
                [
                    repr(r.avg_comparisons),
                    r.method,
                    r.seed,
                    repr(r.accuracy2),
                    repr(r.accuracy3),
                    repr(r.tie_fraction),
                ]
            )
