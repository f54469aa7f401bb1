"""Block-verdict detectors: item-vector-deviation (IVD), PCA user flagging,
and mean-prediction-error (MPE)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .clustering import ClusterModel, cluster_distance, nearest_group
from .data import ItemStats, RatingsMatrix, TargetCriteria, eligible_target_items
from .mf import FactorModel, NumericalError, RatingBlock, build_item_state, woodbury_update

DEFAULT_IVD_THRESHOLD = 0.07
DEFAULT_MPE_THRESHOLD = 1.5
DEFAULT_PCA_FRACTION = 0.10
DEFAULT_PCA_COMPONENTS = 1


@dataclass(frozen=True)
class Verdict:
    flagged: bool
    score: float
    committed: bool


class IvdDetector:
    """Flags a rating block when the peeked item-vector update drifts from a
    fixed reference cluster centroid by more than the threshold.

    Single-writer per target item; accepted blocks commit the incremental
    state and refresh the reference distance."""

    def __init__(self, state, U_tilde_g: np.ndarray, reference_group: int, threshold: float):
        if threshold <= 0:
            raise ValueError("threshold must be > 0")
        self.state = state
        self.U_tilde_g = np.asarray(U_tilde_g, dtype=np.float64)
        self.reference_group = int(reference_group)
        self.threshold = float(threshold)
        self.reference_distance = cluster_distance(self.U_tilde_g, state.v)

    def check(self, block: RatingBlock) -> Verdict:
        v_hat, new_state = woodbury_update(self.state, block)
        d_new = cluster_distance(self.U_tilde_g, v_hat)
        score = d_new - self.reference_distance
        if d_new > self.reference_distance + self.threshold:
            return Verdict(flagged=True, score=score, committed=False)
        self.state = new_state
        self.reference_distance = cluster_distance(self.U_tilde_g, new_state.v)
        return Verdict(flagged=False, score=score, committed=True)


def ivd_init(
    model: FactorModel,
    clusters: ClusterModel,
    R: RatingsMatrix,
    target_item: int,
    stats: Optional[ItemStats] = None,
    criteria: Optional[TargetCriteria] = None,
    reference_group: Optional[int] = None,
    threshold: float = DEFAULT_IVD_THRESHOLD,
    rng: Optional[np.random.Generator] = None,
) -> IvdDetector:
    """Build an IVD detector for one target item from its current genuine ratings.

    When stats+criteria are given, the target must satisfy the trusted-rating
    gate; the reference group is drawn uniformly when not supplied."""
    if stats is not None and criteria is not None:
        if target_item not in eligible_target_items(stats, criteria):
            raise ValueError(f"insufficient trusted ratings for item {target_item}")
    if reference_group is None:
        if rng is None:
            rng = np.random.default_rng(0)
        reference_group = int(rng.integers(clusters.k))
    state = build_item_state(model, R, target_item)
    return IvdDetector(
        state=state,
        U_tilde_g=clusters.U_tilde[:, reference_group],
        reference_group=reference_group,
        threshold=threshold,
    )


def pca_flag_users(
    R_with_attack: RatingsMatrix,
    r_pct: float = DEFAULT_PCA_FRACTION,
    n_components: int = DEFAULT_PCA_COMPONENTS,
) -> set[int]:
    """Flag the fixed-size set of users whose principal-component loadings lie
    closest to the origin.

    Users are treated as variables over item observations: each user's observed
    ratings are z-scored, missing entries filled with 0, and every profile is
    scaled to unit norm (PCA of the user correlation structure, so a profile's
    rating count does not dominate its loading). The first n_components
    loadings give each user a norm score."""
    n = R_with_attack.n_users
    if n < n_components:
        raise ValueError(f"need at least {n_components} users")
    Z = np.zeros((n, R_with_attack.n_items))
    for u in range(n):
        items, vals = R_with_attack.user_items(u)
        if items.size == 0:
            continue
        mu = vals.mean()
        sd = vals.std()
        if sd > 0:
            Z[u, items] = (vals - mu) / sd
        # std-0 users stay at 0 after centering
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    Z = Z / norms

    data = Z.T  # observations = items, variables = users
    data = data - data.mean(axis=0, keepdims=True)
    try:
        # loadings of each user on the top principal directions of the
        # user-covariance; right singular vectors of the item x user matrix
        _, s, Vt = np.linalg.svd(data, full_matrices=False)
        if s.size < n_components or s[n_components - 1] <= 0:
            raise np.linalg.LinAlgError("rank-deficient covariance")
        loadings = Vt[:n_components, :]  # n_components x n_users
        scores = np.linalg.norm(loadings, axis=0)
    except np.linalg.LinAlgError:
        warnings.warn("degenerate covariance; falling back to raw profile variance")
        scores = Z.var(axis=1)
    n_flag = math.ceil(r_pct * n)
    order = np.lexsort((np.arange(n), scores))
    return set(int(u) for u in order[:n_flag])


def mpe_check(
    clusters: ClusterModel,
    model: FactorModel,
    block: RatingBlock,
    block_user_groups: Sequence[int],
    target_item: int,
    threshold: float = DEFAULT_MPE_THRESHOLD,
) -> Verdict:
    """Mean absolute error between the block's target ratings and the deployed
    group predictions; stateless."""
    groups = np.asarray(block_user_groups, dtype=np.int64)
    if groups.size != block.m:
        raise ValueError("one group per block member required")
    preds = clusters.U_tilde[:, groups].T @ model.V[:, target_item]
    mpe = float(np.abs(block.y - preds).mean())
    return Verdict(flagged=mpe > threshold, score=mpe, committed=False)


def block_groups(clusters: ClusterModel, block: RatingBlock) -> np.ndarray:
    """Group per block member: real assignment for known users, nearest
    centroid for forged (fold-in) users."""
    if block.user_ids is not None:
        return clusters.assignment[block.user_ids]
    return np.array([nearest_group(clusters, block.X[:, t]) for t in range(block.m)], dtype=np.int64)
