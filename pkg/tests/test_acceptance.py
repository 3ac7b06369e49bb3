"""Acceptance criteria A1-A9.

Each test prints a single "A<n> PASS/FAIL: <details>" line (visible in the
test log) and then asserts, so a failure still reports its measurements.
"""

import itertools
import json
import math
import time
from datetime import datetime, timedelta, timezone

import numpy as np
from fastapi.testclient import TestClient
from oracles import (
    count_matrices,
    max_relative_error,
    numeric_gradient,
    rc_transition_matrix,
    rk_log_likelihood_grid,
    simplex_grid_3,
    stationary_direct,
)

from pcsrank import dataio
from pcsrank.baselines import (
    SkillConfig,
    elo_fit,
    rank_centrality,
    rao_kupper_fit,
    skill_fit,
)
from pcsrank.core import Comparison, Item, SplitSpec, split
from pcsrank.metrics import (
    accuracy_2class,
    accuracy_3class,
    evaluate,
    predict_3class,
    rank_diff_histogram,
)
from pcsrank.model import (
    Dims,
    Hyperparams,
    init_params,
    loss_and_gradients,
    make_batch,
    score_items,
)
from pcsrank.service import ResponseRecord, ServiceConfig, create_app
from pcsrank.simulator import (
    EXPERIMENT_METHODS,
    SimConfig,
    gen_dataset,
    run_budget_experiment,
    summarize_budget,
)
from pcsrank.trainer import TrainConfig, train

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _report(criterion: str, ok: bool, details: str) -> None:
    print(f"\n{criterion} {'PASS' if ok else 'FAIL'}: {details}")
    assert ok, f"{criterion}: {details}"


def _c(left, right, outcome, minute=0):
    return Comparison(
        left_id=left,
        right_id=right,
        outcome=outcome,
        created_at=T0 + timedelta(minutes=minute),
    )


def _random_comparisons(rng, ids, n, tie_prob=0.2):
    comps = []
    for k in range(n):
        i, j = rng.choice(len(ids), size=2, replace=False)
        roll = rng.random()
        outcome = 0 if roll < tie_prob else (-1 if roll < (1 + tie_prob) / 2 else +1)
        comps.append(_c(ids[int(i)], ids[int(j)], outcome, minute=k))
    return comps


# ---------------------------------------------------------------------------
# A1: gradient correctness
# ---------------------------------------------------------------------------

A1_CONFIGS = [
    # (feature_dim, trunk_widths, fusion_hidden, n_pairs, gamma, use_cls)
    (2, (3,), 2, 4, 0.3, True),
    (3, (4, 3), 3, 5, 0.1, True),
    (4, (3,), 4, 6, 0.7, False),
    (2, (2, 2), 2, 3, 0.0, True),
    (5, (4,), 3, 5, 0.5, True),
    (3, (5, 4), 2, 6, 0.2, False),
    (2, (4,), 4, 4, 0.9, True),
    (6, (3, 3), 3, 5, 0.4, True),
    (3, (2,), 2, 7, 0.6, False),
    (4, (4, 2), 5, 4, 0.3, True),
    (2, (5,), 3, 6, 0.1, True),
    (5, (3, 4), 2, 3, 0.8, False),
    (3, (3,), 6, 5, 0.0, True),
    (4, (2, 3), 3, 6, 0.5, True),
    (6, (4,), 2, 4, 0.2, False),
    (2, (3, 2), 4, 5, 0.7, True),
    (5, (5,), 3, 6, 0.4, True),
    (3, (4, 4), 2, 4, 0.9, False),
    (4, (5,), 5, 5, 0.6, True),
    (6, (2, 2), 3, 6, 0.3, True),
]

# Jitter keeps every ReLU pre-activation, hinge margin, and L1 kink farther
# than the finite-difference step from zero; this base was scanned for that.
A1_JITTER_BASE = 9300


def _gradcheck(idx, spec):
    feature_dim, widths, fusion, n_pairs, gamma, use_cls = spec
    dims = Dims(feature_dim=feature_dim, trunk_widths=widths, fusion_hidden=fusion)
    params = init_params(dims, seed=idx)
    rng = np.random.default_rng(A1_JITTER_BASE + idx)
    for arr in params.parameter_arrays():
        arr += rng.normal(scale=0.1, size=arr.shape)
    items = [
        Item(id=f"i{k}", features=rng.normal(size=feature_dim))
        for k in range(n_pairs + 1)
    ]
    by_id = {i.id: i for i in items}
    comps = [
        _c(f"i{k}", f"i{k + 1}", (-1, 0, 1)[k % 3], minute=k) for k in range(n_pairs)
    ]
    batch = make_batch(comps, by_id)
    hyper = Hyperparams(gamma=gamma)

    _, grads = loss_and_gradients(params, batch, hyper, use_classification=use_cls)

    def loss_fn():
        breakdown, _ = loss_and_gradients(
            params, batch, hyper, use_classification=use_cls
        )
        return breakdown.total

    numeric = numeric_gradient(loss_fn, params.parameter_arrays())
    return max_relative_error(grads.parameter_arrays(), numeric)


def test_a1_gradient_correctness():
    t0 = time.monotonic()
    worst = max(_gradcheck(idx, spec) for idx, spec in enumerate(A1_CONFIGS))
    runtime = time.monotonic() - t0
    ok = worst < 1e-4 and runtime < 30.0
    _report(
        "A1",
        ok,
        f"max relative gradient error {worst:.3e} over {len(A1_CONFIGS)} "
        f"configurations (bound 1e-4), {runtime:.1f}s (bound 30s)",
    )


# ---------------------------------------------------------------------------
# A2-A4: simulated-world trends
# ---------------------------------------------------------------------------

A_SEED = 42


def _world_config(avg, seed=A_SEED):
    return SimConfig(
        n_items=200,
        feature_dim=16,
        avg_comparisons_per_item=avg,
        tie_bandwidth=0.3,
        respondent_noise=0.2,
        generator="linear",
        seed=seed,
    )


def _pcs_config(gamma, seed=A_SEED, **extras):
    return TrainConfig(
        hyper=Hyperparams(gamma=gamma, max_epochs=300, seed=seed),
        patience=50,
        **extras,
    )


def test_a2_low_budget_advantage():
    t0 = time.monotonic()
    configs = [_world_config(avg) for avg in (1.0, 2.0, 3.3)]
    rows = run_budget_experiment(
        configs, list(EXPERIMENT_METHODS), n_seeds=5, pcs_config=_pcs_config(0.3)
    )
    summaries = summarize_budget(rows)
    margins = {}
    for avg in (1.0, 2.0):
        cell = {
            s.method: s.mean_accuracy2
            for s in summaries
            if s.avg_comparisons == avg
        }
        margins[avg] = cell["pcs"] - max(v for k, v in cell.items() if k != "pcs")
    runtime = time.monotonic() - t0
    ok = all(m >= 0.05 for m in margins.values()) and runtime < 300.0
    _report(
        "A2",
        ok,
        f"mean accuracy2 margin over best baseline: "
        f"{margins[1.0] * 100:.1f}pp at avg=1, {margins[2.0] * 100:.1f}pp at avg=2 "
        f"(need >=5pp at avg<=2), 5 seeds, {runtime:.0f}s (bound 300s)",
    )


def _trained_scores(seed, gamma, use_ties=True):
    _, dataset = gen_dataset(_world_config(10.0, seed=seed))
    train_set, dev_set, test_set = split(dataset, SplitSpec(seed=seed))
    params, _ = train(
        train_set, dev_set, _pcs_config(gamma, seed=seed, use_ties=use_ties)
    )
    return score_items(params, dataset.items), test_set


def test_a3_tie_separation():
    t0 = time.monotonic()
    gamma = 0.3
    good, details = 0, []
    for k in range(5):
        scores, test_set = _trained_scores(A_SEED + k, gamma)
        diffs = {0: [], 1: []}
        for comp in test_set.comparisons:
            d = abs(scores[comp.left_id] - scores[comp.right_id])
            diffs[0 if comp.outcome == 0 else 1].append(d)
        tie_mean = float(np.mean(diffs[0]))
        nontie_mean = float(np.mean(diffs[1]))
        good += tie_mean < gamma < nontie_mean
        details.append(f"{tie_mean:.2f}|{nontie_mean:.2f}")
    runtime = time.monotonic() - t0
    ok = good >= 4 and runtime < 180.0
    _report(
        "A3",
        ok,
        f"tie/non-tie mean |score diff| vs gamma=0.3: {' '.join(details)}; "
        f"separated in {good}/5 seeds (need >=4), {runtime:.0f}s (bound 180s)",
    )


def test_a4_misclassified_loss_benefit():
    t0 = time.monotonic()
    gamma = 0.7
    good, details = 0, []
    for k in range(5):
        with_ties, test_set = _trained_scores(A_SEED + k, gamma, use_ties=True)
        without_ties, _ = _trained_scores(A_SEED + k, gamma, use_ties=False)
        loss_with = evaluate(with_ties, test_set.comparisons, gamma).mean_misclassified_loss
        loss_without = evaluate(
            without_ties, test_set.comparisons, gamma
        ).mean_misclassified_loss
        good += (loss_with or 0.0) <= (loss_without or 0.0)
        details.append(f"{loss_with:.3f}<={loss_without:.3f}")
    runtime = time.monotonic() - t0
    ok = good >= 4
    _report(
        "A4",
        ok,
        f"mean misclassified loss with ties vs without at gamma=0.7: "
        f"{' '.join(details)}; better-or-equal in {good}/5 seeds (need >=4), "
        f"{runtime:.0f}s",
    )


# ---------------------------------------------------------------------------
# A5: baseline oracles
# ---------------------------------------------------------------------------


def test_a5_baseline_oracles():
    t0 = time.monotonic()
    checks = []

    rc_worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        ids = [f"i{k}" for k in range(5)]
        comps = _random_comparisons(rng, ids, 30)
        table = rank_centrality(comps)
        wins, ties = count_matrices(comps, ids)
        expected = stationary_direct(rc_transition_matrix(wins + 0.5 * ties))
        rc_worst = max(
            rc_worst,
            max(abs(table.scores[iid] - expected[k]) for k, iid in enumerate(ids)),
        )
    checks.append(("rank centrality vs direct solve", rc_worst < 1e-8))

    rk_gaps = []
    for seed in range(3):
        rng = np.random.default_rng(2000 + seed)
        comps = _random_comparisons(rng, ["a", "b", "c"], 60, tie_prob=0.3)
        _, ll_fit = rao_kupper_fit(comps)
        wins, ties = count_matrices(comps, ["a", "b", "c"])
        ll_grid = rk_log_likelihood_grid(
            wins, ties, simplex_grid_3(step=0.01), np.arange(1.02, 5.0, 0.02)
        )
        rk_gaps.append(ll_fit - ll_grid)
    checks.append(
        ("rao-kupper vs grid max", all(-1e-9 <= g <= 0.05 for g in rk_gaps))
    )

    elo = elo_fit([_c("a", "b", -1)])
    checks.append(
        ("elo hand example", elo.scores == {"a": 1516.0, "b": 1484.0})
    )

    skill = skill_fit([_c("a", "b", 0)], SkillConfig(draw_probability=0.25))
    checks.append(
        ("skill draw symmetry", skill.scores["a"] == skill.scores["b"])
    )

    runtime = time.monotonic() - t0
    ok = all(passed for _, passed in checks) and runtime < 60.0
    failed = [name for name, passed in checks if not passed]
    _report(
        "A5",
        ok,
        f"rank centrality worst |err| {rc_worst:.2e} over 20 cases (bound 1e-8); "
        f"rao-kupper fit-grid gaps {['%.4f' % g for g in rk_gaps]}; elo and skill "
        f"hand checks {'exact' if not failed else 'FAILED: ' + ', '.join(failed)}; "
        f"{runtime:.0f}s (bound 60s)",
    )


# ---------------------------------------------------------------------------
# A6: metric exactness
# ---------------------------------------------------------------------------


def test_a6_metric_exactness():
    checks = []

    scores2 = {"a": 1.0, "b": 0.5, "c": 0.2}
    comps2 = [
        _c("a", "b", -1),
        _c("b", "c", -1),
        _c("c", "a", +1),
        _c("a", "c", +1),  # ranked wrong
        _c("a", "b", 0),
        _c("b", "c", 0),
    ]
    checks.append(("2-class 0.75", accuracy_2class(scores2, comps2) == 0.75))

    scores3 = {"a": 1.0, "b": 0.65, "c": 0.6}
    comps3 = [
        _c("a", "b", -1),
        _c("b", "c", 0),
        _c("a", "b", 0),  # predicted -1
        _c("c", "a", +1),
        _c("b", "c", 0),
    ]
    checks.append(("3-class 0.8", accuracy_3class(scores3, comps3, gamma=0.3) == 0.8))

    boundary = {"a": 0.5, "b": 0.2}
    checks.append(
        (
            "boundary |diff|=gamma is a tie",
            predict_3class(0.5, 0.2, gamma=0.3) == 0
            and accuracy_3class(boundary, [_c("a", "b", 0)], gamma=0.3) == 1.0
            and accuracy_3class(boundary, [_c("a", "b", -1)], gamma=0.3) == 0.0,
        )
    )

    hist_scores = {"a": 1.0, "b": 0.75, "c": 0.5, "d": 0.0}
    hist_comps = [
        _c("a", "b", -1),
        _c("a", "d", -1),
        _c("b", "c", 0),
        _c("c", "b", 0),
        _c("d", "a", +1),
        _c("c", "d", +1),
    ]
    hist = rank_diff_histogram(hist_scores, hist_comps, bin_width=0.25)
    checks.append(
        (
            "histogram bins",
            hist.per_class[-1].bins == ((0.25, 1), (1.0, 1))
            and hist.per_class[0].bins == ((-0.25, 1), (0.25, 1))
            and hist.per_class[+1].bins == ((-1.0, 1), (0.5, 1)),
        )
    )
    checks.append(
        (
            "histogram means",
            hist.per_class[-1].mean_abs_diff == 0.625
            and hist.per_class[0].mean_abs_diff == 0.25
            and hist.per_class[+1].mean_abs_diff == 0.75,
        )
    )

    ok = all(passed for _, passed in checks)
    failed = [name for name, passed in checks if not passed]
    _report(
        "A6",
        ok,
        "hand-counted accuracies, strict boundary rule, and histogram fixture "
        + ("all exact" if ok else "FAILED: " + ", ".join(failed)),
    )


# ---------------------------------------------------------------------------
# A7: ratings conversion
# ---------------------------------------------------------------------------


def test_a7_ratings_conversion():
    records = [
        dataio.RatingRecord("u1", "A", 3),
        dataio.RatingRecord("u1", "B", 2),
        dataio.RatingRecord("u1", "C", 2),
    ]
    pairs = dataio.ratings_to_pairs(records, base_time=T0)
    got = [(c.left_id, c.right_id, c.outcome) for c in pairs]
    fixture_ok = got == [("A", "B", -1), ("A", "C", -1), ("B", "C", 0)]

    count_ok = True
    rng = np.random.default_rng(77)
    for trial in range(10):
        sizes = rng.integers(1, 8, size=rng.integers(1, 5))
        records = [
            dataio.RatingRecord(f"u{u}", f"item-{u}-{i}", int(rng.integers(1, 5)))
            for u, n in enumerate(sizes)
            for i in range(n)
        ]
        pairs = dataio.ratings_to_pairs(records, base_time=T0)
        expected_count = sum(math.comb(int(n), 2) for n in sizes)
        brute = {
            (a.item_id, b.item_id)
            for u, n in enumerate(sizes)
            for a, b in itertools.combinations(
                sorted(
                    (r for r in records if r.respondent_id == f"u{u}"),
                    key=lambda r: r.item_id,
                ),
                2,
            )
        }
        got_pairs = {(c.left_id, c.right_id) for c in pairs}
        count_ok = count_ok and len(pairs) == expected_count and got_pairs == brute

    ok = fixture_ok and count_ok
    _report(
        "A7",
        ok,
        f"(A=3,B=2,C=2) -> {got}; pair-count formula sum C(n_u,2) matched "
        f"brute force on 10 random rating sets: {count_ok}",
    )


# ---------------------------------------------------------------------------
# A8: determinism
# ---------------------------------------------------------------------------


def test_a8_determinism():
    config = SimConfig(
        n_items=12,
        feature_dim=3,
        avg_comparisons_per_item=8.0,
        tie_bandwidth=0.2,
        respondent_noise=0.1,
        seed=3,
    )
    _, ds_a = gen_dataset(config)
    _, ds_b = gen_dataset(config)
    sim_ok = ds_a.comparisons == ds_b.comparisons and all(
        np.array_equal(x.features, y.features) for x, y in zip(ds_a.items, ds_b.items)
    )

    split_a = split(ds_a, SplitSpec(seed=5))
    split_b = split(ds_a, SplitSpec(seed=5))
    split_ok = all(
        sa.comparisons == sb.comparisons for sa, sb in zip(split_a, split_b)
    )

    train_cfg = TrainConfig(hyper=Hyperparams(max_epochs=3, batch_size=32, seed=1))
    params_a, hist_a = train(split_a[0], split_a[1], train_cfg)
    params_b, hist_b = train(split_a[0], split_a[1], train_cfg)
    train_ok = hist_a == hist_b and all(
        np.array_equal(x, y)
        for x, y in zip(params_a.parameter_arrays(), params_b.parameter_arrays())
    )

    ok = sim_ok and split_ok and train_ok
    _report(
        "A8",
        ok,
        f"bit-identical reruns: simulate={sim_ok}, split={split_ok}, train={train_ok}",
    )


# ---------------------------------------------------------------------------
# A9: service durability and consistency
# ---------------------------------------------------------------------------


def test_a9_service_durability(tmp_path):
    rng = np.random.default_rng(9)
    items = [Item(id=f"item-{k:02d}", features=rng.normal(size=3)) for k in range(10)]
    items_path = tmp_path / "items.jsonl"
    dataio.write_items(items, items_path)
    config = ServiceConfig(
        items_path=str(items_path), log_path=str(tmp_path / "log.jsonl")
    )

    choices = ("left", "right", "tie", "left", "right")
    with TestClient(create_app(config)) as client:
        for k in range(100):
            pair = client.get("/api/pair", params={"respondent": "sim"}).json()
            reply = client.post(
                "/api/response",
                json={
                    "response_id": f"a9-{k}",
                    "pair_id": pair["pair_id"],
                    "choice": choices[k % len(choices)],
                    "respondent": "sim",
                },
            )
            assert reply.status_code == 201
        # replayed duplicate: acknowledged but not re-applied
        pair = client.get("/api/pair", params={"respondent": "sim"}).json()
        dup = client.post(
            "/api/response",
            json={
                "response_id": "a9-0",
                "pair_id": pair["pair_id"],
                "choice": "tie",
                "respondent": "sim",
            },
        )
        dup_ok = dup.status_code == 200 and dup.json()["status"] == "duplicate"
        stats = client.get("/api/stats").json()
        scores = client.get("/api/scores", params={"method": "live"}).json()

    log_lines = (tmp_path / "log.jsonl").read_text().strip().splitlines()
    dup_ok = dup_ok and len(log_lines) == 100 and stats["n_responses"] == 100

    exposure_ok = stats["exposure"]["max"] - stats["exposure"]["min"] <= 2

    records = [ResponseRecord.from_json_dict(json.loads(line)) for line in log_lines]
    table = elo_fit([r.to_comparison() for r in records])
    served = {row["item_id"]: row["score"] for row in scores}
    leaderboard_ok = all(
        served[item.id] == table.scores.get(item.id, config.elo.initial_rating)
        for item in items
    )

    with TestClient(create_app(config)) as client:
        stats_after = client.get("/api/stats").json()
        scores_after = client.get("/api/scores", params={"method": "live"}).json()
    durability_ok = stats_after == stats and scores_after == scores

    ok = dup_ok and exposure_ok and leaderboard_ok and durability_ok
    _report(
        "A9",
        ok,
        f"restart preserved state={durability_ok}; live leaderboard equals "
        f"offline elo fit={leaderboard_ok}; duplicate produced one entry={dup_ok}; "
        f"exposure max-min={stats['exposure']['max'] - stats['exposure']['min']} "
        f"(bound 2) after 100 responses",
    )
