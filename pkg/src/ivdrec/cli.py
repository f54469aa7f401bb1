"""Command-line entry point.

Subcommands: train, forge, evaluate, roc, synth.
Exit codes: 0 ok, 2 config error, 3 data error, 4 missing checkpoint/state.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import seeds
from .attack import AttackScenario, forge_profiles, profiles_to_rows
from .clustering import load_clusters, save_clusters
from .data import RatingParseError, compute_stats, save_ratings
from .harness import (
    DatasetContext,
    _with_defaults,
    aggregate,
    experiment_grid,
    load_dataset,
    roc_sweep,
    run_cell,
    write_roc_csv,
)
from .mf import load_model, save_model
from .synthetic import synthesize_ratings

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STATE = 4


class ConfigError(Exception):
    pass


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from exc


def _dataset_spec(config: dict) -> dict:
    spec = config.get("dataset")
    if not spec or "name" not in spec:
        raise ConfigError("config must contain dataset.name plus a path/format or synthetic block")
    if "synthetic" not in spec and "path" not in spec:
        raise ConfigError("dataset needs either a path or a synthetic block")
    return spec


def _load_dataset_checked(spec: dict):
    if "path" in spec and not os.path.exists(spec["path"]):
        raise FileNotFoundError(f"dataset file not found: {spec['path']}")
    return load_dataset(spec)


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    spec = _dataset_spec(config)
    R = _load_dataset_checked(spec)
    ctx = DatasetContext.fit(R, config, spec["name"])

    out = args.out
    os.makedirs(out, exist_ok=True)
    save_model(ctx.model, os.path.join(out, "model.csv"))
    save_clusters(ctx.clusters, os.path.join(out, "clusters.csv"))
    summary = {
        "dataset": spec["name"],
        "n_users": R.n_users,
        "n_items": R.n_items,
        "n_entries": R.n_entries,
        "global_mean": ctx.stats.global_mean,
        "global_std": ctx.stats.global_std,
        "n_eligible_targets": int(len(ctx.targets)),
        "seed": _with_defaults(config)["seed"],
    }
    with open(os.path.join(out, "stats.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"wrote model.csv, clusters.csv, stats.json to {out}")
    return EXIT_OK


def _load_context(args, config: dict) -> DatasetContext:
    spec = _dataset_spec(config)
    ckpt = config.get("checkpoint_dir") or args.out
    model_path = os.path.join(ckpt, "model.csv")
    clusters_path = os.path.join(ckpt, "clusters.csv")
    for p in (model_path, clusters_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing checkpoint: {p}")
    R = _load_dataset_checked(spec)
    return DatasetContext(R, load_model(model_path), load_clusters(clusters_path), config, spec["name"])


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    merged = _with_defaults(config)
    n_cells = (
        len(merged["datasets"]) * len(merged["attacks"]) * len(merged["detectors"])
        * len(merged["filler_top_pcts"]) * len(merged["attack_sizes"])
        * len(merged["filler_sizes"]) * len(merged["obfuscations"])
    )
    if n_cells == 0:
        raise ConfigError("empty experiment grid")

    contexts = {}
    if "checkpoint_dir" in config and "dataset" in config:
        try:
            ctx = _load_context(args, config)
            contexts[ctx.name] = ctx
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_STATE

    report_path = experiment_grid(config, args.out, contexts=contexts)
    with open(report_path) as fh:
        print(fh.read().rstrip())
    print(f"report written to {report_path}")
    return EXIT_OK


def cmd_forge(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    spec = _dataset_spec(config)
    sc = config.get("scenario")
    if not sc or "target_item" not in sc or "attack_type" not in sc:
        raise ConfigError("config must contain scenario.attack_type and scenario.target_item")

    R = _load_dataset_checked(spec)
    clusters = None
    if sc["attack_type"] == "target_cluster":
        ctx = DatasetContext.fit(R, config, spec["name"])
        clusters = ctx.clusters
        stats = ctx.stats
    else:
        stats = compute_stats(R)

    merged = _with_defaults(config)
    scenario = AttackScenario(
        attack_type=sc["attack_type"],
        target_item=int(sc["target_item"]),
        target_group=sc.get("target_group"),
        attack_size=sc.get("attack_size", 0.05),
        filler_size=sc.get("filler_size", 0.10),
        filler_top_pct=sc.get("filler_top_pct", 60.0),
        obfuscate_target=sc.get("obfuscate_target", False),
        rng_seed=merged["seed"],
    )
    rng = seeds.child_rng(merged["seed"], seeds.STAGE_FORGE)
    profiles = forge_profiles(scenario, stats, R.n_users, R.r_min, R.r_max, rng=rng)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "profiles.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "item", "rating"])
        for row in profiles_to_rows(profiles, first_user_id=R.n_users):
            writer.writerow([row[0], row[1], f"{row[2]:g}"])
    print(f"forged {len(profiles)} profiles -> {path}")
    return EXIT_OK


def cmd_roc(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    merged = _with_defaults(config)
    spec = _dataset_spec(config) if "dataset" in config else merged["datasets"][0]
    R = _load_dataset_checked(spec)
    ctx = DatasetContext.fit(R, config, spec["name"])

    attack = config.get("attack", "average")
    obfuscated = bool(config.get("obfuscated", False))
    ftp = float(config.get("filler_top_pct", 20.0))
    _, results = run_cell(
        ctx, config, attack, "ivd", ftp,
        merged["attack_sizes"][0], merged["filler_sizes"][0], obfuscated,
    )
    thresholds = config.get("roc_thresholds")
    if thresholds is None:
        scores = sorted({rec.score for res in results for rec in res.records})
        lo, hi = scores[0] - 1.0, scores[-1] + 1.0
        thresholds = [lo] + scores + [hi]
    points = roc_sweep(results, thresholds)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "roc.csv")
    write_roc_csv(points, path)
    report = aggregate(results)
    print(f"{len(points)} ROC points -> {path} "
          f"(detection_rate at default threshold: {report.detection_rate:.3f})")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _load_config(args.config) if args.config else {}
    params = config.get("synthetic", {})
    if args.seed is not None:
        params["seed"] = args.seed
    R = synthesize_ratings(**params)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ratings.csv")
    save_ratings(R, path)
    print(f"synthesized {R.n_entries} ratings ({R.n_users} users x {R.n_items} items) -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivdrec")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (
        ("train", cmd_train, True),
        ("forge", cmd_forge, True),
        ("evaluate", cmd_evaluate, True),
        ("roc", cmd_roc, True),
        ("synth", cmd_synth, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel cells (currently serial)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RatingParseError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
