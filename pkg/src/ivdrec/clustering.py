"""K-means grouping of user factor vectors and group-level rating prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClusterModel:
    U_tilde: np.ndarray  # d x k group preference vectors (centroids)
    assignment: np.ndarray  # n, group index per user
    k: int

    def __post_init__(self):
        if self.U_tilde.shape[1] != self.k:
            raise ValueError("U_tilde must have k columns")
        if self.assignment.min(initial=0) < 0 or self.assignment.max(initial=-1) >= self.k:
            raise ValueError("assignment out of range")

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == group)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """points: n x d. Returns k x d initial centroids."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[c] = points[rng.integers(n)]
        else:
            centroids[c] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[c]) ** 2).sum(axis=1))
    return centroids


def kmeans(U: np.ndarray, k: int, max_iters: int = 200, tol: float = 1e-7, rng_seed=0) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding on the columns of U (d x n).

    Empty clusters are repaired by reseeding at the point farthest from its
    assigned centroid. Stops when max centroid movement < tol."""
    d, n = U.shape
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points n={n}")
    if max_iters < 1 or tol <= 0:
        raise ValueError("need max_iters >= 1 and tol > 0")

    pts = U.T.copy()  # n x d
    rng = np.random.default_rng(rng_seed)
    centroids = _kmeanspp_init(pts, k, rng)

    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = dists.argmin(axis=1)

        # repair empty clusters before recomputing means
        for g in range(k):
            if not (assignment == g).any():
                worst = dists[np.arange(n), assignment].argmax()
                centroids[g] = pts[worst]
                assignment[worst] = g
                dists[worst] = ((pts[worst] - centroids) ** 2).sum(axis=1)

        new_centroids = np.vstack([pts[assignment == g].mean(axis=0) for g in range(k)])
        move = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if move < tol:
            break

    return ClusterModel(U_tilde=centroids.T.copy(), assignment=assignment, k=k)


def inertia(model: ClusterModel, U: np.ndarray) -> float:
    pts = U.T
    diffs = pts - model.U_tilde.T[model.assignment]
    return float((diffs * diffs).sum())


def group_predict(clusters: ClusterModel, V: np.ndarray, user_id: int, item_id: int) -> float:
    """Shared group prediction: centroid-vector inner product with the item vector."""
    if not (0 <= user_id < clusters.assignment.size):
        raise KeyError(f"unknown user {user_id}")
    if not (0 <= item_id < V.shape[1]):
        raise KeyError(f"unknown item {item_id}")
    g = clusters.assignment[user_id]
    return float(clusters.U_tilde[:, g] @ V[:, item_id])


def group_predict_by_group(clusters: ClusterModel, V: np.ndarray, group: int, item_id: int) -> float:
    return float(clusters.U_tilde[:, group] @ V[:, item_id])


def cluster_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def nearest_group(clusters: ClusterModel, vec: np.ndarray) -> int:
    d2 = ((clusters.U_tilde.T - vec) ** 2).sum(axis=1)
    return int(d2.argmin())


CLUSTER_FORMAT_VERSION = 1


def save_clusters(model: ClusterModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ivdrec-clusters,v{CLUSTER_FORMAT_VERSION},k={model.k},"
                 f"d={model.U_tilde.shape[0]},n={model.assignment.size}\n")
        for row in model.U_tilde:
            fh.write("C," + ",".join(f"{x:.17g}" for x in row) + "\n")
        for u, g in enumerate(model.assignment):
            fh.write(f"A,{u},{int(g)}\n")


def load_clusters(path: str) -> ClusterModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "ivdrec-clusters":
            raise ValueError("unrecognized cluster checkpoint header")
        meta = dict(kv.split("=") for kv in header[2:])
        k, d, n = int(meta["k"]), int(meta["d"]), int(meta["n"])
        C_rows = []
        assignment = np.zeros(n, dtype=np.int64)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if parts[0] == "C":
                C_rows.append(np.array(parts[1:], dtype=np.float64))
            else:
                assignment[int(parts[1])] = int(parts[2])
    U_tilde = np.vstack(C_rows)
    if U_tilde.shape != (d, k):
        raise ValueError("cluster checkpoint shape mismatch")
    return ClusterModel(U_tilde=U_tilde, assignment=assignment, k=k)
