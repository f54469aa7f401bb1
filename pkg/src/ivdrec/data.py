"""Rating dataset loading, statistics, and target-item selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

if TYPE_CHECKING:
    from .clustering import ClusterModel


class RatingParseError(ValueError):
    """Malformed dataset line; carries the 1-based line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class RatingValidationError(ValueError):
    pass


@dataclass(frozen=True)
class RatingsMatrix:
    """Sparse user x item ratings. Missing entries are absent, never zero."""

    n_users: int
    n_items: int
    users: np.ndarray  # int array, one per entry
    items: np.ndarray
    ratings: np.ndarray  # float array
    r_min: float = 1.0
    r_max: float = 5.0
    user_remap: Optional[dict] = None  # original id -> dense id
    item_remap: Optional[dict] = None

    _csr: sparse.csr_matrix = field(init=False, repr=False, compare=False, default=None)
    _csc: sparse.csc_matrix = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        ratings = np.asarray(self.ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape):
            raise RatingValidationError("users/items/ratings length mismatch")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise RatingValidationError("user id out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise RatingValidationError("item id out of range")
            if ratings.min() < self.r_min or ratings.max() > self.r_max:
                raise RatingValidationError("rating outside scale bounds")
            keys = users * self.n_items + items
            if np.unique(keys).size != keys.size:
                raise RatingValidationError("duplicate (user, item) rating")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        mat = sparse.coo_matrix(
            (ratings, (users, items)), shape=(self.n_users, self.n_items)
        )
        object.__setattr__(self, "_csr", mat.tocsr())
        object.__setattr__(self, "_csc", mat.tocsc())

    @property
    def n_entries(self) -> int:
        return int(self.ratings.size)

    def item_raters(self, item_id: int):
        """(user_ids, ratings) for one item, in ascending user order."""
        col = self._csc
        lo, hi = col.indptr[item_id], col.indptr[item_id + 1]
        return col.indices[lo:hi].copy(), col.data[lo:hi].copy()

    def user_items(self, user_id: int):
        row = self._csr
        lo, hi = row.indptr[user_id], row.indptr[user_id + 1]
        return row.indices[lo:hi].copy(), row.data[lo:hi].copy()

    def item_counts(self) -> np.ndarray:
        return np.diff(self._csc.indptr)

    def rating_of(self, user_id: int, item_id: int) -> Optional[float]:
        its, vals = self.user_items(user_id)
        pos = np.searchsorted(its, item_id)
        if pos < its.size and its[pos] == item_id:
            return float(vals[pos])
        return None


@dataclass(frozen=True)
class ItemStats:
    global_mean: float
    global_std: float
    item_mean: np.ndarray  # nan where count == 0
    item_std: np.ndarray  # 0 where count <= 1
    item_count: np.ndarray
    popularity_rank: np.ndarray  # item ids sorted by count desc, ties by id
    cluster_item_mean: Optional[np.ndarray] = None  # k x m, nan where no data
    cluster_item_std: Optional[np.ndarray] = None
    cluster_item_count: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TargetCriteria:
    max_cluster_mean: float = 3.5
    min_ratings_per_cluster: int = 20

    def __post_init__(self):
        if self.min_ratings_per_cluster < 1:
            raise ValueError("min_ratings_per_cluster must be >= 1")


def _parse_delimited(path, sep, n_fields_min, line_filter=None):
    entries = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) < n_fields_min:
                raise RatingParseError(line_no, f"expected >= {n_fields_min} fields, got {len(parts)}")
            try:
                u = int(parts[0])
                i = int(parts[1])
                r = float(parts[2])
            except ValueError as exc:
                raise RatingParseError(line_no, str(exc)) from None
            entries.append((u, i, r, line_no))
    return entries


def _parse_csv(path):
    entries = []
    r_min, r_max = 1.0, 5.0
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RatingParseError(1, "empty file, missing header") from None
        header = [h.strip().lower() for h in header]
        if header[:3] != ["user", "item", "rating"]:
            raise RatingParseError(1, f"expected header user,item,rating, got {header}")
        # optional scale declaration: user,item,rating,r_min=..,r_max=..
        for extra in header[3:]:
            if extra.startswith("r_min="):
                r_min = float(extra.split("=", 1)[1])
            elif extra.startswith("r_max="):
                r_max = float(extra.split("=", 1)[1])
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise RatingParseError(line_no, f"expected 3 fields, got {len(row)}")
            try:
                entries.append((int(row[0]), int(row[1]), float(row[2]), line_no))
            except ValueError as exc:
                raise RatingParseError(line_no, str(exc)) from None
    return entries, r_min, r_max


def load_ratings(path: str, format: str = "csv") -> RatingsMatrix:
    """Load a ratings file. Formats: ml100k (tab), ml1m ('::'), csv (header user,item,rating)."""
    if format == "ml100k":
        entries = _parse_delimited(path, "\t", 3)
        r_min, r_max = 1.0, 5.0
    elif format == "ml1m":
        entries = _parse_delimited(path, "::", 3)
        r_min, r_max = 1.0, 5.0
    elif format == "csv":
        entries, r_min, r_max = _parse_csv(path)
    else:
        raise ValueError(f"unknown format {format!r}")

    for u, i, r, line_no in entries:
        if not (r_min <= r <= r_max):
            raise RatingParseError(line_no, f"rating {r} outside scale [{r_min}, {r_max}]")

    raw_users = sorted({e[0] for e in entries})
    raw_items = sorted({e[1] for e in entries})
    user_remap = {u: k for k, u in enumerate(raw_users)}
    item_remap = {i: k for k, i in enumerate(raw_items)}
    users = np.array([user_remap[e[0]] for e in entries], dtype=np.int64)
    items = np.array([item_remap[e[1]] for e in entries], dtype=np.int64)
    ratings = np.array([e[2] for e in entries], dtype=np.float64)
    return RatingsMatrix(
        n_users=len(raw_users),
        n_items=len(raw_items),
        users=users,
        items=items,
        ratings=ratings,
        r_min=r_min,
        r_max=r_max,
        user_remap=user_remap,
        item_remap=item_remap,
    )


def save_ratings(R: RatingsMatrix, path: str) -> None:
    """Canonical CSV dump (dense ids); load_ratings(path, 'csv') round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["user", "item", "rating"]
        if (R.r_min, R.r_max) != (1.0, 5.0):
            header += [f"r_min={R.r_min:g}", f"r_max={R.r_max:g}"]
        writer.writerow(header)
        for u, i, r in zip(R.users, R.items, R.ratings):
            writer.writerow([int(u), int(i), f"{r:.17g}"])


def compute_stats(R: RatingsMatrix, clusters: Optional["ClusterModel"] = None) -> ItemStats:
    """Population statistics over observed entries only."""
    counts = R.item_counts().astype(np.int64)
    m = R.n_items
    sums = np.zeros(m)
    sq_sums = np.zeros(m)
    np.add.at(sums, R.items, R.ratings)
    np.add.at(sq_sums, R.items, R.ratings**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        var = np.where(counts > 1, sq_sums / np.maximum(counts, 1) - (sums / np.maximum(counts, 1)) ** 2, 0.0)
    std = np.sqrt(np.maximum(var, 0.0))
    std[counts <= 1] = 0.0

    if R.n_entries:
        gmean = float(R.ratings.mean())
        gstd = float(R.ratings.std())
    else:
        gmean, gstd = float("nan"), 0.0

    order = np.lexsort((np.arange(m), -counts))
    popularity_rank = order.astype(np.int64)

    c_mean = c_std = c_count = None
    if clusters is not None:
        k = clusters.k
        groups = clusters.assignment[R.users]
        c_count = np.zeros((k, m), dtype=np.int64)
        c_sum = np.zeros((k, m))
        c_sq = np.zeros((k, m))
        np.add.at(c_count, (groups, R.items), 1)
        np.add.at(c_sum, (groups, R.items), R.ratings)
        np.add.at(c_sq, (groups, R.items), R.ratings**2)
        denom = np.maximum(c_count, 1)
        with np.errstate(invalid="ignore"):
            c_mean = np.where(c_count > 0, c_sum / denom, np.nan)
        c_var = np.where(c_count > 1, c_sq / denom - (c_sum / denom) ** 2, 0.0)
        c_std = np.sqrt(np.maximum(c_var, 0.0))
        c_std[c_count <= 1] = 0.0

    return ItemStats(
        global_mean=gmean,
        global_std=gstd,
        item_mean=mean,
        item_std=std,
        item_count=counts,
        popularity_rank=popularity_rank,
        cluster_item_mean=c_mean,
        cluster_item_std=c_std,
        cluster_item_count=c_count,
    )


def eligible_target_items(stats: ItemStats, criteria: TargetCriteria) -> np.ndarray:
    """Items whose per-cluster mean stays below the bound and whose every
    cluster holds at least the minimum rating count."""
    if stats.cluster_item_mean is None:
        raise ValueError("cluster statistics required for target selection")
    count_ok = (stats.cluster_item_count >= criteria.min_ratings_per_cluster).all(axis=0)
    with np.errstate(invalid="ignore"):
        mean_ok = np.where(
            np.isnan(stats.cluster_item_mean), True, stats.cluster_item_mean < criteria.max_cluster_mean
        ).all(axis=0)
    return np.flatnonzero(count_ok & mean_ok)


def select_target_items(
    R: RatingsMatrix,
    stats: ItemStats,
    clusters: "ClusterModel",
    criteria: TargetCriteria,
    n: int,
    rng_seed,
) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    eligible = eligible_target_items(stats, criteria)
    if eligible.size < n:
        count_ok = (stats.cluster_item_count >= criteria.min_ratings_per_cluster).all(axis=0)
        binding = (
            f"min_ratings_per_cluster={criteria.min_ratings_per_cluster}"
            if count_ok.sum() < n
            else f"max_cluster_mean={criteria.max_cluster_mean}"
        )
        raise ValueError(
            f"no eligible items: {eligible.size} eligible < {n} requested (binding constraint: {binding})"
        )
    rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
    return np.sort(rng.choice(eligible, size=n, replace=False))


def top_dense_subset(R: RatingsMatrix, n_top_items: int, n_top_users: int) -> RatingsMatrix:
    """Dense sub-matrix: most-rated items, then most-active users on those items."""
    item_order = np.lexsort((np.arange(R.n_items), -R.item_counts()))
    keep_items = set(item_order[:n_top_items].tolist())
    mask = np.fromiter((i in keep_items for i in R.items), dtype=bool, count=R.n_entries)
    user_counts = np.zeros(R.n_users, dtype=np.int64)
    np.add.at(user_counts, R.users[mask], 1)
    user_order = np.lexsort((np.arange(R.n_users), -user_counts))
    keep_users = set(user_order[:n_top_users].tolist())
    mask &= np.fromiter((u in keep_users for u in R.users), dtype=bool, count=R.n_entries)

    sub_users = R.users[mask]
    sub_items = R.items[mask]
    u_ids = np.unique(sub_users)
    i_ids = np.unique(sub_items)
    u_map = {int(u): k for k, u in enumerate(u_ids)}
    i_map = {int(i): k for k, i in enumerate(i_ids)}
    return RatingsMatrix(
        n_users=len(u_ids),
        n_items=len(i_ids),
        users=np.array([u_map[int(u)] for u in sub_users], dtype=np.int64),
        items=np.array([i_map[int(i)] for i in sub_items], dtype=np.int64),
        ratings=R.ratings[mask].copy(),
        r_min=R.r_min,
        r_max=R.r_max,
        user_remap=u_map,
        item_remap=i_map,
    )


def with_extra_users(R: RatingsMatrix, profiles: Iterable[Sequence]) -> tuple[RatingsMatrix, np.ndarray]:
    """Append synthetic user rows (one per profile of (item, rating) pairs).

    Returns the widened matrix and the new user ids."""
    profiles = list(profiles)
    new_ids = np.arange(R.n_users, R.n_users + len(profiles), dtype=np.int64)
    users = [R.users]
    items = [R.items]
    ratings = [R.ratings]
    for uid, prof in zip(new_ids, profiles):
        for item_id, rating in prof:
            users.append(np.array([uid]))
            items.append(np.array([item_id]))
            ratings.append(np.array([float(rating)]))
    return (
        RatingsMatrix(
            n_users=R.n_users + len(profiles),
            n_items=R.n_items,
            users=np.concatenate(users),
            items=np.concatenate(items),
            ratings=np.concatenate(ratings),
            r_min=R.r_min,
            r_max=R.r_max,
        ),
        new_ids,
    )
