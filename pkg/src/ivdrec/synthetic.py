"""Seeded synthetic rating datasets with clustered user preferences.

Stands in for real MovieLens-scale data when the archives are not on disk:
users fall into latent preference groups, items carry a quality offset plus a
latent vector, popularity follows a power law, and observed ratings are
integer-rounded noisy affinities. All draws come from one Generator, so a
(seed, shape) pair pins the dataset exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .data import RatingsMatrix


def synthesize_ratings(
    n_users: int = 943,
    n_items: int = 1682,
    n_ratings: int = 100_000,
    n_groups: int = 5,
    latent_dim: int = 6,
    affinity_scale: float = 0.45,
    noise_std: float = 0.9,
    popularity_exponent: float = 2.0,
    popularity_cap_rank: int = 80,
    exposure_alpha: float = 3.0,
    quality_base: float = 3.7,
    quality_pop_coupling: float = -1.22,
    quality_noise: float = 0.03,
    quality_knee: float = 0.96,
    quality_knee_width: float = 0.0003,
    seed: int = 0,
) -> RatingsMatrix:
    rng = np.random.default_rng(seed)

    centroids = rng.normal(size=(n_groups, latent_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    group_of = rng.integers(0, n_groups, size=n_users)
    user_vecs = centroids[group_of] + 0.25 * rng.normal(size=(n_users, latent_dim))

    item_vecs = rng.normal(size=(n_items, latent_dim))
    item_vecs /= np.linalg.norm(item_vecs, axis=1, keepdims=True)

    # power-law popularity over a random item permutation
    pop_order = rng.permutation(n_items)
    ranked = (np.arange(1, n_items + 1, dtype=float)) ** (-popularity_exponent)
    if popularity_cap_rank > 0:
        # flatten the head of the power law: the busiest items plateau instead
        # of dwarfing everything else
        ranked = np.minimum(ranked, ranked[min(popularity_cap_rank, n_items - 1)])
    weights = np.empty(n_items)
    weights[pop_order] = ranked
    log_w = np.log(weights / weights.sum())

    # popular items skew higher-quality; pop_score in [0, 1], 1 = most popular
    pop_score = np.empty(n_items)
    pop_score[pop_order] = 1.0 - np.arange(n_items) / n_items
    # With quality_knee set, the popularity effect turns on sharply at that
    # popularity percentile (a negative coupling then models the selection bias
    # of observed ratings: rarely-rated items are rated mostly by their fans)
    if quality_knee > 0:
        pop_gate = expit((pop_score - quality_knee) / quality_knee_width)
    else:
        pop_gate = pop_score**3
    item_bias = (
        quality_base
        + quality_pop_coupling * pop_gate
        + rng.normal(scale=quality_noise, size=n_items)
    )

    # group-dependent exposure: which clusters tend to rate an item is itself
    # skewed, so an item's rater base under-covers some taste directions
    exposure = rng.dirichlet(np.full(n_groups, exposure_alpha), size=n_items)  # n_items x k
    log_exposure = np.log(np.maximum(exposure, 1e-12))

    # per-user rating counts, lognormal activity, total pinned to n_ratings
    activity = rng.lognormal(mean=0.0, sigma=0.6, size=n_users)
    counts = np.maximum(5, np.round(n_ratings * activity / activity.sum()).astype(int))
    counts = np.minimum(counts, n_items)
    while counts.sum() != n_ratings:
        diff = n_ratings - counts.sum()
        idx = rng.integers(0, n_users)
        step = 1 if diff > 0 else -1
        if 5 <= counts[idx] + step <= n_items:
            counts[idx] += step

    users = np.empty(n_ratings, dtype=np.int64)
    items = np.empty(n_ratings, dtype=np.int64)
    pos = 0
    for u in range(n_users):
        c = counts[u]
        # Gumbel top-k = weighted sampling without replacement
        keys = log_w + log_exposure[:, group_of[u]] + rng.gumbel(size=n_items)
        chosen = np.argpartition(-keys, c - 1)[:c]
        users[pos : pos + c] = u
        items[pos : pos + c] = chosen
        pos += c

    affinity = affinity_scale * np.einsum("ij,ij->i", user_vecs[users], item_vecs[items])
    raw = item_bias[items] + affinity + rng.normal(scale=noise_std, size=n_ratings)
    ratings = np.clip(np.round(raw), 1, 5)

    order = np.lexsort((items, users))
    return RatingsMatrix(
        n_users=n_users,
        n_items=n_items,
        users=users[order],
        items=items[order],
        ratings=ratings[order],
        r_min=1.0,
        r_max=5.0,
    )
