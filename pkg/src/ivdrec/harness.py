"""Trial orchestration, detection/false-alarm metrics, ROC sweeps, and the
experiment grid that emits report CSVs."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import seeds
from .attack import AttackScenario, block_from_profiles, forge_profiles, gen_genuine_block
from .clustering import ClusterModel, kmeans
from .data import RatingsMatrix, TargetCriteria, compute_stats, load_ratings, select_target_items, with_extra_users
from .detectors import (
    DEFAULT_IVD_THRESHOLD,
    DEFAULT_MPE_THRESHOLD,
    DEFAULT_PCA_FRACTION,
    block_groups,
    ivd_init,
    mpe_check,
    pca_flag_users,
)
from .mf import (
    FactorModel,
    ItemVectorState,
    RatingBlock,
    rescale_factors,
    train_als,
    woodbury_update,
)
from .synthetic import synthesize_ratings

REPORT_HEADER = [
    "detector", "dataset", "attack", "filler_top_pct", "attack_size",
    "filler_size", "obfuscated", "detection_rate", "false_alarm_rate", "seed",
]
ROC_HEADER = ["threshold", "tpr", "fpr"]


@dataclass(frozen=True)
class BlockRecord:
    block_index: int
    score: float
    flagged: bool
    label: str  # "genuine" | "attack"


@dataclass(frozen=True)
class TrialResult:
    scenario: AttackScenario
    detector: str
    target_item: int
    seed: int
    records: tuple  # of BlockRecord


@dataclass(frozen=True)
class MetricsReport:
    detection_rate: Optional[float]  # None when no attack blocks were inserted
    false_alarm_rate: Optional[float]
    n_targets: int
    n_attack_blocks: int
    n_attack_flagged: int
    n_genuine_blocks: int
    n_genuine_flagged: int


def _genuine_groups_with_raters(R, clusters, target_item) -> np.ndarray:
    raters, _ = R.item_raters(target_item)
    groups = np.unique(clusters.assignment[raters])
    if groups.size == 0:
        raise ValueError(f"item {target_item} has no raters in any group")
    return groups


def run_trial(
    R: RatingsMatrix,
    model: FactorModel,
    clusters: ClusterModel,
    stats,
    scenario: AttackScenario,
    detector: str,
    n_genuine_blocks: int = 20,
    block_size: int = 16,
    rng_seed: int = 0,
    ivd_threshold: float = DEFAULT_IVD_THRESHOLD,
    mpe_threshold: float = DEFAULT_MPE_THRESHOLD,
    pca_fraction: float = DEFAULT_PCA_FRACTION,
) -> TrialResult:
    """Feed scheduled genuine blocks then the forged attack blocks to one detector."""
    rng = np.random.default_rng(rng_seed)
    target = scenario.target_item

    profiles = forge_profiles(
        scenario, stats, n_genuine_users=R.n_users, r_min=R.r_min, r_max=R.r_max,
        rng=np.random.default_rng(rng.integers(2**63)),
    )

    records: list[BlockRecord] = []

    if detector == "pca":
        widened, fake_ids = with_extra_users(R, [p.ratings for p in profiles])
        flagged = pca_flag_users(widened, r_pct=pca_fraction)
        idx = 0
        for u in range(R.n_users):
            records.append(BlockRecord(idx, 0.0, u in flagged, "genuine"))
            idx += 1
        for u in fake_ids:
            records.append(BlockRecord(idx, 0.0, int(u) in flagged, "attack"))
            idx += 1
        return TrialResult(scenario, detector, target, rng_seed, tuple(records))

    attack_blocks = block_from_profiles(profiles, model, target, block_size)
    groups_avail = _genuine_groups_with_raters(R, clusters, target)

    def genuine_block():
        g = int(groups_avail[rng.integers(groups_avail.size)])
        return gen_genuine_block(R, model, clusters, g, target, block_size, rng)

    schedule = [("genuine", None)] * n_genuine_blocks + [("attack", b) for b in attack_blocks]

    if detector == "ivd":
        det = ivd_init(
            model, clusters, R, target,
            reference_group=None, threshold=ivd_threshold,
            rng=np.random.default_rng(rng.integers(2**63)),
        )
        for idx, (kind, blk) in enumerate(schedule):
            block = blk if blk is not None else genuine_block()
            verdict = det.check(block)
            records.append(BlockRecord(idx, verdict.score, verdict.flagged, block.label))
    elif detector == "mpe":
        for idx, (kind, blk) in enumerate(schedule):
            block = blk if blk is not None else genuine_block()
            verdict = mpe_check(
                clusters, model, block, block_groups(clusters, block), target, mpe_threshold
            )
            records.append(BlockRecord(idx, verdict.score, verdict.flagged, block.label))
    else:
        raise ValueError(f"unknown detector {detector!r}")

    return TrialResult(scenario, detector, target, rng_seed, tuple(records))


def aggregate(results: Sequence[TrialResult]) -> MetricsReport:
    """Pooled (micro-averaged) counts over every block across all targets."""
    if not results:
        raise ValueError("no trial results to aggregate")
    na = nf = ga = gf = 0
    targets = set()
    for res in results:
        targets.add(res.target_item)
        for rec in res.records:
            if rec.label == "attack":
                na += 1
                nf += rec.flagged
            else:
                ga += 1
                gf += rec.flagged
    return MetricsReport(
        detection_rate=(nf / na) if na else None,
        false_alarm_rate=(gf / ga) if ga else None,
        n_targets=len(targets),
        n_attack_blocks=na,
        n_attack_flagged=nf,
        n_genuine_blocks=ga,
        n_genuine_flagged=gf,
    )


def roc_sweep(results: Sequence[TrialResult], thresholds: Sequence[float]) -> list[tuple]:
    """(threshold, TPR, FPR) per threshold from cached per-block scores."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    attack_scores = np.array(
        [rec.score for res in results for rec in res.records if rec.label == "attack"]
    )
    genuine_scores = np.array(
        [rec.score for res in results for rec in res.records if rec.label == "genuine"]
    )
    out = []
    for th in thresholds:
        tpr = float((attack_scores > th).mean()) if attack_scores.size else 0.0
        fpr = float((genuine_scores > th).mean()) if genuine_scores.size else 0.0
        out.append((th, tpr, fpr))
    return out


def genuine_shift_curve(
    R: RatingsMatrix,
    model: FactorModel,
    clusters: ClusterModel,
    target_item: int,
    n_blocks: int,
    block_size: int,
    rng: np.random.Generator,
) -> list[float]:
    """Per-block item-vector shift magnitudes starting from a no-rating state,
    feeding only genuine blocks (every block commits)."""
    state = ItemVectorState(
        target_item, np.eye(model.d) / model.lam, np.zeros(model.d), 0
    )
    groups_avail = _genuine_groups_with_raters(R, clusters, target_item)
    shifts = []
    for _ in range(n_blocks):
        g = int(groups_avail[rng.integers(groups_avail.size)])
        block = gen_genuine_block(R, model, clusters, g, target_item, block_size, rng)
        v_prev = state.v.copy()
        v_hat, state = woodbury_update(state, block)
        shifts.append(float(np.linalg.norm(v_hat - v_prev)))
    return shifts


# ---------------------------------------------------------------------------
# experiment grid


DEFAULT_GRID = {
    "datasets": [{"name": "ml100k-synth", "synthetic": {"seed": 0}}],
    "attacks": ["average"],
    "detectors": ["ivd"],
    "filler_top_pcts": [60.0],
    "attack_sizes": [0.05],
    "filler_sizes": [0.10],
    "obfuscations": [False],
    "n_targets": 50,
    "n_genuine_blocks": 20,
    "block_size": 16,
    "model": {"d": 16, "lam": 0.1, "sweeps": 15, "user_rms": 0.45},
    "k": 5,
    "criteria": {"max_cluster_mean": 3.5, "min_ratings_per_cluster": 20},
    "thresholds": {"ivd": DEFAULT_IVD_THRESHOLD, "mpe": DEFAULT_MPE_THRESHOLD, "pca": DEFAULT_PCA_FRACTION},
    "target_group": 2,
    "seed": 0,
}


def _with_defaults(config: dict) -> dict:
    merged = dict(DEFAULT_GRID)
    merged.update(config or {})
    for key in ("model", "criteria", "thresholds"):
        base = dict(DEFAULT_GRID[key])
        base.update((config or {}).get(key, {}))
        merged[key] = base
    return merged


class DatasetContext:
    """One trained model + clustering + stats + target set, shared by all grid
    cells of a dataset so cells differ only in detector behaviour."""

    def __init__(self, R: RatingsMatrix, model: FactorModel, clusters: ClusterModel,
                 config: dict, dataset_name: str):
        config = _with_defaults(config)
        master = int(config["seed"])
        self.name = dataset_name
        self.R = R
        self.model = model
        self.clusters = clusters
        self.stats = compute_stats(R, clusters)
        crit = config["criteria"]
        self.criteria = TargetCriteria(
            max_cluster_mean=crit["max_cluster_mean"],
            min_ratings_per_cluster=crit["min_ratings_per_cluster"],
        )
        self.targets = select_target_items(
            R, self.stats, self.clusters, self.criteria,
            n=config["n_targets"],
            rng_seed=np.random.default_rng(seeds.child_seq(master, seeds.STAGE_TARGETS)),
        )

    @classmethod
    def fit(cls, R: RatingsMatrix, config: dict, dataset_name: str) -> "DatasetContext":
        config = _with_defaults(config)
        master = int(config["seed"])
        mp = config["model"]
        model = train_als(
            R, d=mp["d"], lam=mp["lam"], sweeps=mp["sweeps"],
            rng_seed=seeds.child_seq(master, seeds.STAGE_TRAIN),
        )
        # pin the latent-distance unit before any geometry is derived from the
        # factors (clustering, reference distances); predictions are unchanged
        model = rescale_factors(model, user_rms=mp["user_rms"])
        clusters = kmeans(
            model.U, k=config["k"], rng_seed=seeds.child_seq(master, seeds.STAGE_CLUSTER)
        )
        return cls(R, model, clusters, config, dataset_name)


def load_dataset(spec: dict) -> RatingsMatrix:
    if "synthetic" in spec:
        return synthesize_ratings(**spec["synthetic"])
    return load_ratings(spec["path"], spec.get("format", "csv"))


def build_context(spec: dict, config: dict) -> DatasetContext:
    return DatasetContext.fit(load_dataset(spec), config, spec["name"])


def run_cell(
    ctx: DatasetContext,
    config: dict,
    attack: str,
    detector: str,
    filler_top_pct: float,
    attack_size: float,
    filler_size: float,
    obfuscated: bool,
) -> tuple[MetricsReport, list[TrialResult]]:
    config = _with_defaults(config)
    master = int(config["seed"])
    target_group = int(config["target_group"]) % ctx.clusters.k
    results = []
    for t_idx, target in enumerate(ctx.targets):
        scenario = AttackScenario(
            attack_type=attack,
            target_item=int(target),
            target_group=target_group if attack == "target_cluster" else None,
            attack_size=attack_size,
            filler_size=filler_size,
            filler_top_pct=filler_top_pct,
            obfuscate_target=obfuscated,
            rng_seed=master,
        )
        trial_seed = seeds.child_seq(master, seeds.STAGE_TRIAL, t_idx).generate_state(1)[0]
        results.append(
            run_trial(
                ctx.R, ctx.model, ctx.clusters, ctx.stats, scenario, detector,
                n_genuine_blocks=config["n_genuine_blocks"],
                block_size=config["block_size"],
                rng_seed=int(trial_seed),
                ivd_threshold=config["thresholds"]["ivd"],
                mpe_threshold=config["thresholds"]["mpe"],
                pca_fraction=config["thresholds"]["pca"],
            )
        )
    return aggregate(results), results


def _cell_key(dataset: str, attack: str, detector: str, ftp, asize, fsize, obf, config: dict) -> str:
    payload = json.dumps(
        {
            "dataset": dataset, "attack": attack, "detector": detector,
            "filler_top_pct": ftp, "attack_size": asize, "filler_size": fsize,
            "obfuscated": obf,
            "seed": config["seed"], "model": config["model"], "k": config["k"],
            "criteria": config["criteria"], "thresholds": config["thresholds"],
            "n_targets": config["n_targets"],
            "n_genuine_blocks": config["n_genuine_blocks"],
            "block_size": config["block_size"],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _fmt_rate(x) -> str:
    return "n/a" if x is None else f"{x:.6f}"


def experiment_grid(config: dict, out_dir: str,
                    contexts: Optional[dict] = None) -> str:
    """Run every grid cell, caching per-cell results so reruns are resumable
    and byte-identical. Returns the report CSV path.

    `contexts` may pre-supply DatasetContext objects (e.g. from checkpoints)
    keyed by dataset name."""
    config = _with_defaults(config)
    cells_dir = os.path.join(out_dir, "cells")
    os.makedirs(cells_dir, exist_ok=True)

    contexts = dict(contexts or {})
    rows = []
    for ds_spec in config["datasets"]:
        ds_name = ds_spec["name"]
        for attack in config["attacks"]:
            for detector in config["detectors"]:
                for ftp in config["filler_top_pcts"]:
                    for asize in config["attack_sizes"]:
                        for fsize in config["filler_sizes"]:
                            for obf in config["obfuscations"]:
                                key = _cell_key(ds_name, attack, detector, ftp, asize, fsize, obf, config)
                                cache = os.path.join(cells_dir, key + ".json")
                                if os.path.exists(cache):
                                    with open(cache) as fh:
                                        rows.append(json.load(fh))
                                    continue
                                if ds_name not in contexts:
                                    contexts[ds_name] = build_context(ds_spec, config)
                                try:
                                    report, _ = run_cell(
                                        contexts[ds_name], config, attack, detector,
                                        ftp, asize, fsize, obf,
                                    )
                                    row = {
                                        "detector": detector, "dataset": ds_name, "attack": attack,
                                        "filler_top_pct": ftp, "attack_size": asize,
                                        "filler_size": fsize, "obfuscated": obf,
                                        "detection_rate": _fmt_rate(report.detection_rate),
                                        "false_alarm_rate": _fmt_rate(report.false_alarm_rate),
                                        "seed": config["seed"],
                                    }
                                except Exception as exc:  # record, keep the grid going
                                    row = {
                                        "detector": detector, "dataset": ds_name, "attack": attack,
                                        "filler_top_pct": ftp, "attack_size": asize,
                                        "filler_size": fsize, "obfuscated": obf,
                                        "detection_rate": "error", "false_alarm_rate": "error",
                                        "seed": config["seed"], "error": str(exc),
                                    }
                                with open(cache, "w") as fh:
                                    json.dump(row, fh, sort_keys=True)
                                rows.append(row)

    rows.sort(key=lambda r: tuple(str(r[h]) for h in REPORT_HEADER))
    report_path = os.path.join(out_dir, "report.csv")
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in rows:
            writer.writerow([row[h] for h in REPORT_HEADER])
    return report_path


def write_roc_csv(points: Sequence[tuple], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROC_HEADER)
        for th, tpr, fpr in points:
            writer.writerow([f"{th:.6g}", f"{tpr:.6f}", f"{fpr:.6f}"])
