"""Command-line entry point.

Every subcommand is a thin adapter over one module: identical inputs through
the CLI and direct calls produce identical artifacts. Exit codes: 0 success,
1 runtime error (JSON error object on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from pcsrank import dataio, metrics, service, simulator, trainer
from pcsrank.baselines import fit_baseline
from pcsrank.core import SplitSpec, make_dataset, split
from pcsrank.model import Hyperparams, load_checkpoint, save_checkpoint, score_items

METHOD_ALIASES = {
    "elo": "elo",
    "skill": "skill",
    "rc": "rank_centrality",
    "rank_centrality": "rank_centrality",
    "rk": "rao_kupper",
    "rao_kupper": "rao_kupper",
}

HYPER_KEYS = (
    "gamma",
    "lambda_rank",
    "lambda_tie",
    "learning_rate",
    "decay_every_steps",
    "decay_factor",
    "batch_size",
    "max_epochs",
    "seed",
)
TRAIN_KEYS = ("use_ties", "use_classification_head", "swap_augmentation", "patience")


def _resolve_seed(seed: Optional[int]) -> int:
    """Use the given seed, or generate one and announce it for reruns."""
    if seed is not None:
        return seed
    generated = int(np.random.SeedSequence().generate_state(1)[0])
    print(f"seed={generated}", file=sys.stderr)
    return generated


def _train_config(config_path: Optional[str], overrides: dict) -> trainer.TrainConfig:
    merged: dict = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ValueError(f"{config_path}: config must be a JSON object")
        unknown = set(file_cfg) - set(HYPER_KEYS) - set(TRAIN_KEYS)
        if unknown:
            raise ValueError(f"{config_path}: unknown config keys {sorted(unknown)}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    hyper = Hyperparams(**{k: merged[k] for k in HYPER_KEYS if k in merged})
    extras = {k: merged[k] for k in TRAIN_KEYS if k in merged}
    return trainer.TrainConfig(hyper=hyper, **extras)


def _load_dataset(items_path: str, comparisons_path: str):
    items, _ = dataio.load_items(items_path, standardize=True)
    comparisons = dataio.load_comparisons(comparisons_path)
    return make_dataset(items, comparisons)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_convert(args: argparse.Namespace) -> int:
    ratings = dataio.load_ratings(args.ratings, scale=args.scale)
    pairs = dataio.ratings_to_pairs(ratings)
    dataio.write_comparisons(pairs, args.out)
    _print_json({"n_ratings": len(ratings), "n_comparisons": len(pairs), "out": args.out})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed)
    config = _train_config(
        args.config,
        {
            "gamma": args.gamma,
            "lambda_rank": args.lambda_rank,
            "lambda_tie": args.lambda_tie,
            "max_epochs": args.max_epochs,
            "seed": seed,
            "use_ties": False if args.no_ties else None,
        },
    )
    dataset = _load_dataset(args.items, args.comparisons)
    train_set, dev_set, test_set = split(dataset, SplitSpec(seed=seed))
    params, history = trainer.train(train_set, dev_set, config)
    save_checkpoint(params, args.out)
    if args.history:
        trainer.history_to_csv(history, args.history)
    scores = score_items(params, dataset.items)
    report = metrics.evaluate(scores, test_set.comparisons, config.hyper.gamma)
    _print_json(report.to_json_dict())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    params = load_checkpoint(args.ckpt)
    items, _ = dataio.load_items(args.items, standardize=True)
    comparisons = dataio.load_comparisons(args.comparisons)
    scores = score_items(params, items)
    report = metrics.evaluate(scores, comparisons, args.gamma)
    _print_json(report.to_json_dict())
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    method = METHOD_ALIASES[args.method]
    comparisons = dataio.load_comparisons(args.comparisons)
    table = fit_baseline(method, comparisons)
    dataio.export_scores(table, args.out)
    _print_json({"method": method, "n_items": len(table.scores), "out": args.out})
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    with open(args.grid, encoding="utf-8") as fh:
        grid = json.load(fh)
    if not isinstance(grid, dict):
        raise ValueError(f"{args.grid}: grid must be a JSON object")
    seed = _resolve_seed(args.seed if args.seed is not None else grid.get("seed"))
    avgs = grid.get("avg_comparisons", grid.get("avg_comparisons_per_item", 3.3))
    if not isinstance(avgs, list):
        avgs = [avgs]
    configs = [
        simulator.SimConfig(
            n_items=int(grid["n_items"]),
            feature_dim=int(grid["feature_dim"]),
            avg_comparisons_per_item=float(avg),
            tie_bandwidth=float(grid.get("tie_bandwidth", 0.0)),
            respondent_noise=float(grid.get("respondent_noise", 0.0)),
            generator=grid.get("generator", "linear"),
            tie_model=grid.get("tie_model", "perceptual"),
            seed=seed,
        )
        for avg in avgs
    ]
    methods = grid.get("methods", list(simulator.EXPERIMENT_METHODS))
    pcs_config = None
    if "pcs" in grid:
        pcs_config = _train_config(None, dict(grid["pcs"]))
    rows = simulator.run_budget_experiment(
        configs, methods, int(grid.get("n_seeds", 1)), pcs_config=pcs_config
    )
    simulator.budget_to_csv(rows, args.out)
    summary = [s.__dict__ for s in simulator.summarize_budget(rows)]
    _print_json({"out": args.out, "n_rows": len(rows), "summary": summary})
    return 0


def _parse_gammas(text: str) -> list[float]:
    """Accept "0.1,0.5,0.9" or a range "0.1..0.9" (default step 0.1,
    override with "0.1..0.9..0.2")."""
    if ".." in text:
        parts = text.split("..")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad gamma range {text!r}")
        start, stop = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 0.1
        if step <= 0 or stop < start:
            raise ValueError(f"bad gamma range {text!r}")
        count = int(round((stop - start) / step)) + 1
        values = [round(start + k * step, 10) for k in range(count)]
        return [v for v in values if v <= stop + 1e-9]
    return [float(tok) for tok in text.split(",") if tok.strip()]


def cmd_sweep_gamma(args: argparse.Namespace) -> int:
    gammas = _parse_gammas(args.gammas)
    seed = _resolve_seed(args.seed)
    config = _train_config(args.config, {"seed": seed})
    dataset = _load_dataset(args.items, args.comparisons)
    train_set, dev_set, test_set = split(dataset, SplitSpec(seed=seed))
    rows = trainer.sweep_gamma(train_set, dev_set, test_set, gammas, config)
    trainer.sweep_to_csv(rows, args.out)
    _print_json({"out": args.out, "gammas": gammas})
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    table = dataio.score_catalog(args.ckpt, args.items)
    dataio.export_scores(table, args.out)
    _print_json({"n_items": len(table.scores), "out": args.out})
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    file_cfg: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
    overrides = {
        "items_path": args.items or file_cfg.get("items_path"),
        "log_path": args.log or file_cfg.get("log_path"),
        "listen_addr": args.listen or file_cfg.get("listen_addr"),
        "checkpoint_path": args.checkpoint or file_cfg.get("checkpoint_path"),
        "static_dir": args.static_dir or file_cfg.get("static_dir"),
        "live_rating": file_cfg.get("live_rating"),
        "respondent_quota": file_cfg.get("respondent_quota"),
        "scheduler_seed": file_cfg.get("scheduler_seed"),
    }
    config = service.ServiceConfig.from_env(**overrides)
    service.serve(config)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcsrank",
        description="Tie-aware pairwise comparison ranking toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert per-item ratings to pairwise comparisons")
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train the feature-based scorer (70-10-20 split)")
    p.add_argument("--items", required=True)
    p.add_argument("--comparisons", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--history", help="write per-epoch history CSV here")
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-rank", dest="lambda_rank", type=float)
    p.add_argument("--lambda-tie", dest="lambda_tie", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--no-ties", action="store_true", help="drop ties from training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a comparison set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--items", required=True)
    p.add_argument("--comparisons", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="fit a classical baseline, export scores")
    p.add_argument("--method", required=True, choices=sorted(METHOD_ALIASES))
    p.add_argument("--comparisons", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", help="run the comparisons-per-item budget experiment")
    p.add_argument("--grid", required=True, help="JSON grid description")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-gamma", help="train and evaluate across margin values")
    p.add_argument("--items", required=True)
    p.add_argument("--comparisons", required=True)
    p.add_argument("--gammas", required=True, help='e.g. "0.1..0.9" or "0.1,0.3,0.7"')
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep_gamma)

    p = sub.add_parser("score", help="score a catalog with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--items", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("serve", help="run the survey HTTP service")
    p.add_argument("--config")
    p.add_argument("--items")
    p.add_argument("--log")
    p.add_argument("--listen")
    p.add_argument("--checkpoint")
    p.add_argument("--static-dir", dest="static_dir")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
