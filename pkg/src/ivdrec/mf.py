"""Regularized matrix factorization with closed-form item solves and exact
low-rank incremental updates of a target item's vector."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import RatingsMatrix


class NumericalError(RuntimeError):
    """Raised when an update produces non-finite values; state is left untouched."""


@dataclass(frozen=True)
class FactorModel:
    U: np.ndarray  # d x n_users
    V: np.ndarray  # d x n_items
    d: int
    lam: float

    def __post_init__(self):
        if self.d < 1 or self.lam <= 0:
            raise ValueError("need d >= 1 and lam > 0")
        if self.U.shape[0] != self.d or self.V.shape[0] != self.d:
            raise ValueError("factor matrices must have d rows")
        if not (np.isfinite(self.U).all() and np.isfinite(self.V).all()):
            raise ValueError("non-finite factor entries")

    def predict(self, user_id: int, item_id: int) -> float:
        return float(self.U[:, user_id] @ self.V[:, item_id])


@dataclass
class ItemVectorState:
    """Cached inverse Gram (A^-1) and current vector for one item.

    Single-writer: concurrent updates to one state are not supported."""

    item_id: int
    A_inv: np.ndarray  # d x d, symmetric positive-definite
    v: np.ndarray  # d
    rater_count: int

    def copy(self) -> "ItemVectorState":
        return ItemVectorState(self.item_id, self.A_inv.copy(), self.v.copy(), self.rater_count)


@dataclass(frozen=True)
class RatingBlock:
    X: np.ndarray  # d x m rater feature vectors
    y: np.ndarray  # m target-item ratings
    user_ids: Optional[np.ndarray]  # None for forged users
    label: str  # "genuine" | "attack" -- ground truth, never read by detectors

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "y", y)
        if self.X.ndim != 2 or y.ndim != 1 or self.X.shape[1] != y.size:
            raise ValueError("X columns must pair one-to-one with y entries")
        if y.size < 1:
            raise ValueError("block must contain at least one rating")
        if self.label not in ("genuine", "attack"):
            raise ValueError(f"bad label {self.label!r}")

    @property
    def m(self) -> int:
        return int(self.y.size)


def objective(R: RatingsMatrix, U: np.ndarray, V: np.ndarray, lam: float) -> float:
    """Squared reconstruction error over observed entries plus L2 penalty."""
    pred = np.einsum("ij,ij->j", U[:, R.users], V[:, R.items])
    err = R.ratings - pred
    return float(err @ err + lam * ((U * U).sum() + (V * V).sum()))


def train_als(
    R: RatingsMatrix, d: int = 16, lam: float = 0.1, sweeps: int = 15, rng_seed=0
) -> FactorModel:
    """Alternating exact ridge solves on the squared-error objective.

    Each sweep fixes one factor and solves the other's d x d normal equations
    per column; the objective is non-increasing across sweeps."""
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if R.n_entries == 0:
        raise ValueError("cannot train on an empty ratings matrix")
    if d >= min(R.n_users, R.n_items):
        warnings.warn(f"rank d={d} >= min(n_users, n_items); model may be overparameterized")

    rng = np.random.default_rng(rng_seed)
    U = rng.normal(0.0, 0.1, size=(d, R.n_users))
    V = rng.normal(0.0, 0.1, size=(d, R.n_items))
    eye = lam * np.eye(d)

    for _ in range(sweeps):
        for i in range(R.n_users):
            items, vals = R.user_items(i)
            if items.size == 0:
                U[:, i] = 0.0
                continue
            Vi = V[:, items]
            U[:, i] = np.linalg.solve(Vi @ Vi.T + eye, Vi @ vals)
        for j in range(R.n_items):
            raters, vals = R.item_raters(j)
            if raters.size == 0:
                V[:, j] = 0.0
                continue
            Uj = U[:, raters]
            V[:, j] = np.linalg.solve(Uj @ Uj.T + eye, Uj @ vals)
        # per-row diagonal rescaling: leaves U^T V (all predictions) unchanged
        # and minimizes the L2 penalty, so the objective stays non-increasing;
        # plain alternation equilibrates the two factor norms only very slowly
        u_norms = np.linalg.norm(U, axis=1)
        v_norms = np.linalg.norm(V, axis=1)
        live = (u_norms > 0) & (v_norms > 0)
        s = np.ones(d)
        s[live] = np.sqrt(v_norms[live] / u_norms[live])
        U *= s[:, None]
        V /= s[:, None]
    return FactorModel(U=U, V=V, d=d, lam=lam)


def rescale_factors(model: FactorModel, user_rms: float = 1.0) -> FactorModel:
    """Fix the factor-scale convention: U -> cU, V -> V/c with c chosen so the
    root-mean-square user-vector norm equals `user_rms`.

    Predictions U^T V are invariant, so this only pins down the unit of latent
    distances (which the detection threshold is expressed in)."""
    if user_rms <= 0:
        raise ValueError("user_rms must be > 0")
    norms = np.linalg.norm(model.U, axis=0)
    rms = float(np.sqrt(np.mean(norms**2)))
    if rms == 0:
        return model
    c = user_rms / rms
    return FactorModel(U=model.U * c, V=model.V / c, d=model.d, lam=model.lam)


def solve_item_vector(rater_vecs: np.ndarray, ratings: Sequence[float], lam: float) -> np.ndarray:
    """Exact ridge solution for one item's vector given its raters.

    rater_vecs is d x m (one column per rater). Empty rater set -> zero vector."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    rater_vecs = np.atleast_2d(rater_vecs)
    ratings = np.asarray(ratings, dtype=np.float64)
    d = rater_vecs.shape[0]
    if ratings.size == 0:
        return np.zeros(d)
    A = rater_vecs @ rater_vecs.T + lam * np.eye(d)
    return np.linalg.solve(A, rater_vecs @ ratings)


def build_item_state(model: FactorModel, R: RatingsMatrix, item_id: int) -> ItemVectorState:
    raters, vals = R.item_raters(item_id)
    d = model.d
    if raters.size == 0:
        return ItemVectorState(item_id, np.eye(d) / model.lam, np.zeros(d), 0)
    Uj = model.U[:, raters]
    A = Uj @ Uj.T + model.lam * np.eye(d)
    A_inv = np.linalg.inv(A)
    A_inv = (A_inv + A_inv.T) / 2.0
    v = np.linalg.solve(A, Uj @ vals)
    return ItemVectorState(item_id, A_inv, v, int(raters.size))


def woodbury_update(state: ItemVectorState, block: RatingBlock) -> tuple[np.ndarray, ItemVectorState]:
    """Rank-m refresh of the item vector and cached inverse after a rating block.

    Returns (v_hat, new_state) without touching `state`; the caller decides
    whether to commit new_state."""
    X = block.X
    if X.shape[0] != state.v.size:
        raise ValueError("block dimension does not match state")
    A_inv = state.A_inv
    AX = A_inv @ X  # d x m
    C = np.eye(block.m) + X.T @ AX  # always invertible: A_inv is PD
    try:
        K = np.linalg.solve(C, AX.T)  # m x d
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"capacitance solve failed: {exc}") from exc
    resid = block.y - X.T @ state.v
    v_hat = state.v + AX @ np.linalg.solve(C, resid)
    new_A_inv = A_inv - AX @ K
    new_A_inv = (new_A_inv + new_A_inv.T) / 2.0
    if not (np.isfinite(v_hat).all() and np.isfinite(new_A_inv).all()):
        raise NumericalError("non-finite values in incremental update")
    new_state = ItemVectorState(state.item_id, new_A_inv, v_hat.copy(), state.rater_count + block.m)
    return v_hat, new_state


MODEL_FORMAT_VERSION = 1


def save_model(model: FactorModel, path: str) -> None:
    """CSV checkpoint at 17 significant digits; round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ivdrec-model,v{MODEL_FORMAT_VERSION},d={model.d},lam={model.lam:.17g},"
                 f"n_users={model.U.shape[1]},n_items={model.V.shape[1]}\n")
        for name, M in (("U", model.U), ("V", model.V)):
            for row in M:
                fh.write(name + "," + ",".join(f"{x:.17g}" for x in row) + "\n")


def load_model(path: str) -> FactorModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "ivdrec-model" or header[1] != f"v{MODEL_FORMAT_VERSION}":
            raise ValueError(f"unrecognized model checkpoint header: {header[:2]}")
        meta = dict(kv.split("=") for kv in header[2:])
        d = int(meta["d"])
        lam = float(meta["lam"])
        U_rows, V_rows = [], []
        for line in fh:
            name, rest = line.rstrip("\n").split(",", 1)
            (U_rows if name == "U" else V_rows).append(np.array(rest.split(","), dtype=np.float64))
    U = np.vstack(U_rows)
    V = np.vstack(V_rows)
    if U.shape != (d, int(meta["n_users"])) or V.shape != (d, int(meta["n_items"])):
        raise ValueError("checkpoint shape mismatch")
    return FactorModel(U=U, V=V, d=d, lam=lam)
