"""Forging of fake rating profiles (random / average / target-cluster attacks)
and simulation of genuine rating blocks for false-alarm measurement."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .clustering import ClusterModel
from .data import ItemStats, RatingsMatrix
from .mf import FactorModel, RatingBlock, solve_item_vector

ATTACK_TYPES = ("random", "average", "target_cluster")


@dataclass(frozen=True)
class AttackScenario:
    attack_type: str
    target_item: int
    target_group: Optional[int] = None  # target_cluster only
    attack_size: float = 0.05  # fraction of genuine user count
    filler_size: float = 0.10  # fraction of item catalogue
    filler_top_pct: float = 60.0  # popularity cutoff in (0, 100]
    obfuscate_target: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.attack_type not in ATTACK_TYPES:
            raise ValueError(f"attack_type must be one of {ATTACK_TYPES}")
        if not (0 < self.attack_size <= 1) or not (0 < self.filler_size <= 1):
            raise ValueError("attack_size and filler_size must be in (0, 1]")
        if not (0 < self.filler_top_pct <= 100):
            raise ValueError("filler_top_pct must be in (0, 100]")
        if self.attack_type == "target_cluster" and self.target_group is None:
            raise ValueError("target_cluster attack requires target_group")


@dataclass(frozen=True)
class FakeProfile:
    target_item: int
    target_rating: float
    fillers: tuple  # ((item_id, rating), ...)

    @property
    def ratings(self) -> list:
        """All (item, rating) pairs, target included."""
        return [(self.target_item, self.target_rating)] + list(self.fillers)


def select_fillers(
    stats: ItemStats, top_pct: float, count: int, exclude, rng: np.random.Generator
) -> np.ndarray:
    """Uniform sample without replacement from the top-pct% most popular items."""
    n_items = stats.popularity_rank.size
    pool_size = math.ceil(top_pct / 100.0 * n_items)
    pool = stats.popularity_rank[:pool_size]
    exclude = set(int(e) for e in exclude)
    if exclude:
        pool = pool[~np.isin(pool, list(exclude))]
    if count > pool.size:
        raise ValueError(f"filler pool too small: need {count}, have {pool.size}")
    return rng.choice(pool, size=count, replace=False)


def _filler_params(scenario: AttackScenario, stats: ItemStats, item: int):
    """(mu, sigma) for one filler item, or None when the required mean is missing."""
    if scenario.attack_type == "random":
        return stats.global_mean, stats.global_std
    if scenario.attack_type == "average":
        mu = stats.item_mean[item]
        if np.isnan(mu):
            return None
        sigma = stats.item_std[item] if stats.item_count[item] > 1 else stats.global_std
        return mu, sigma
    g = scenario.target_group
    mu = stats.cluster_item_mean[g, item]
    if np.isnan(mu):
        return None
    sigma = (
        stats.cluster_item_std[g, item]
        if stats.cluster_item_count[g, item] > 1
        else stats.global_std
    )
    return mu, sigma


def forge_profiles(
    scenario: AttackScenario,
    stats: ItemStats,
    n_genuine_users: int,
    r_min: float = 1.0,
    r_max: float = 5.0,
    rng: Optional[np.random.Generator] = None,
) -> list[FakeProfile]:
    if scenario.attack_type == "target_cluster" and stats.cluster_item_mean is None:
        raise ValueError("target_cluster attack needs cluster statistics")
    if rng is None:
        rng = np.random.default_rng(scenario.rng_seed)

    n_items = stats.popularity_rank.size
    n_profiles = math.ceil(scenario.attack_size * n_genuine_users)
    filler_count = math.ceil(scenario.filler_size * n_items)
    target_rating = r_max - 1 if scenario.obfuscate_target else r_max

    pool_size = math.ceil(scenario.filler_top_pct / 100.0 * n_items)
    base_pool = stats.popularity_rank[:pool_size]
    base_pool = base_pool[base_pool != scenario.target_item]
    # excluding the target can leave the pool one short of ceil(filler_size * m)
    # at the tightest cutoffs; cap rather than fail the whole scenario
    filler_count = min(filler_count, base_pool.size)
    if filler_count == 0:
        raise ValueError("filler pool is empty after excluding the target")

    profiles = []
    for _ in range(n_profiles):
        candidates = rng.permutation(base_pool)
        fillers = []
        for item in candidates:
            params = _filler_params(scenario, stats, int(item))
            if params is None:
                continue  # resample a different filler from the pool
            mu, sigma = params
            raw = rng.normal(mu, sigma) if sigma > 0 else mu
            rating = float(np.clip(np.round(raw), r_min, r_max))
            fillers.append((int(item), rating))
            if len(fillers) == filler_count:
                break
        if len(fillers) < filler_count:
            raise ValueError(
                f"filler pool exhausted: only {len(fillers)} usable fillers, need {filler_count}"
            )
        profiles.append(
            FakeProfile(
                target_item=scenario.target_item,
                target_rating=target_rating,
                fillers=tuple(fillers),
            )
        )
    return profiles


def fold_in_user(model: FactorModel, items: Sequence[int], ratings: Sequence[float]) -> np.ndarray:
    """Latent vector for an unseen user: ridge solve against the fixed item factors."""
    Vi = model.V[:, np.asarray(items, dtype=np.int64)]
    return solve_item_vector(Vi, ratings, model.lam)


def gen_genuine_block(
    R: RatingsMatrix,
    model: FactorModel,
    clusters: ClusterModel,
    group: int,
    target_item: int,
    m: int,
    rng: np.random.Generator,
) -> RatingBlock:
    """Simulate m genuine target-item ratings from one user group.

    Each draw samples a group member; when that member never rated the target,
    the target rating of a second same-group member who did rate it is spliced
    in, while the feature column stays the first member's vector."""
    if m < 1:
        raise ValueError("block must contain at least one rating")
    members = clusters.members(group)
    raters, rater_vals = R.item_raters(target_item)
    in_group = np.isin(raters, members)
    group_raters = raters[in_group]
    group_vals = rater_vals[in_group]
    if group_raters.size == 0:
        raise ValueError(f"group {group} has no raters of item {target_item}")

    cols = np.empty((model.d, m))
    y = np.empty(m)
    uids = np.empty(m, dtype=np.int64)
    for t in range(m):
        u = int(members[rng.integers(members.size)])
        r = R.rating_of(u, target_item)
        if r is None:
            w = rng.integers(group_raters.size)
            r = float(group_vals[w])
        cols[:, t] = model.U[:, u]
        y[t] = r
        uids[t] = u
    return RatingBlock(X=cols, y=y, user_ids=uids, label="genuine")


def block_from_profiles(
    profiles: Sequence[FakeProfile],
    model: FactorModel,
    target_item: int,
    block_size: int = 10,
) -> list[RatingBlock]:
    """Partition forged profiles into consecutive blocks.

    Each forged user's feature column is its fold-in vector computed from the
    filler ratings only (the information an incoming profile exposes)."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    blocks = []
    for start in range(0, len(profiles), block_size):
        chunk = profiles[start : start + block_size]
        cols = np.empty((model.d, len(chunk)))
        y = np.empty(len(chunk))
        for t, prof in enumerate(chunk):
            items = [it for it, _ in prof.fillers]
            vals = [rv for _, rv in prof.fillers]
            cols[:, t] = fold_in_user(model, items, vals)
            y[t] = prof.target_rating
        blocks.append(RatingBlock(X=cols, y=y, user_ids=None, label="attack"))
    return blocks


def profiles_to_rows(profiles: Sequence[FakeProfile], first_user_id: int) -> list[tuple]:
    """(user, item, rating) rows for the canonical CSV export."""
    rows = []
    for k, prof in enumerate(profiles):
        uid = first_user_id + k
        for item, rating in prof.ratings:
            rows.append((uid, item, rating))
    return rows
