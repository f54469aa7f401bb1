import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ivdrec.data import RatingsMatrix
from ivdrec.mf import (
    FactorModel,
    ItemVectorState,
    RatingBlock,
    build_item_state,
    load_model,
    objective,
    rescale_factors,
    save_model,
    solve_item_vector,
    train_als,
    woodbury_update,
)


def small_ratings(seed=0, n_users=30, n_items=20, density=0.4):
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    users, items = np.nonzero(mask)
    ratings = np.clip(np.round(rng.normal(3.5, 1.0, size=users.size)), 1, 5)
    return RatingsMatrix(n_users, n_items, users, items, ratings)


def test_solve_item_vector_one_dim_oracle():
    # single rater with vector [2], rating 4, lam 1: v = 2*4 / (4 + 1)
    v = solve_item_vector(np.array([[2.0]]), [4.0], lam=1.0)
    assert v[0] == pytest.approx(1.6)


def test_solve_item_vector_matches_normal_equations():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5, 12))
    y = rng.normal(3.0, 1.0, size=12)
    lam = 0.3
    v = solve_item_vector(X, y, lam)
    expected = np.linalg.solve(X @ X.T + lam * np.eye(5), X @ y)
    np.testing.assert_allclose(v, expected, rtol=1e-12)


def test_solve_item_vector_empty_raters():
    assert solve_item_vector(np.zeros((4, 0)), [], lam=0.1).tolist() == [0.0] * 4


def test_woodbury_frozen_worked_example():
    # d=2, lam=0.5, no prior raters: A_inv = I/lam = 2I, v = 0.
    # One rater x=(1,0), rating 3: capacitance C = 1 + 2 = 3,
    # v_hat = v + A_inv x (3/3) = (2, 0); new A = [[1.5,0],[0,0.5]].
    state = ItemVectorState(0, np.eye(2) * 2.0, np.zeros(2), 0)
    block = RatingBlock(X=np.array([[1.0], [0.0]]), y=[3.0], user_ids=None, label="genuine")
    v_hat, new_state = woodbury_update(state, block)
    np.testing.assert_allclose(v_hat, [2.0, 0.0], rtol=1e-14)
    np.testing.assert_allclose(new_state.A_inv, [[2.0 / 3.0, 0.0], [0.0, 2.0]], rtol=1e-14)
    assert new_state.rater_count == 1
    # original state untouched
    np.testing.assert_array_equal(state.v, np.zeros(2))
    np.testing.assert_array_equal(state.A_inv, np.eye(2) * 2.0)


@settings(max_examples=40, deadline=None)
@given(
    d=st.integers(1, 16),
    n0=st.integers(0, 10),
    n_blocks=st.integers(1, 5),
    seed=st.integers(0, 10_000),
)
def test_woodbury_chain_equals_batch_solve(d, n0, n_blocks, seed):
    rng = np.random.default_rng(seed)
    lam = float(rng.uniform(0.05, 2.0))
    U0 = rng.normal(size=(d, n0))
    y0 = rng.normal(3.0, 1.0, size=n0)
    A_inv = np.linalg.inv(U0 @ U0.T + lam * np.eye(d))
    state = ItemVectorState(0, (A_inv + A_inv.T) / 2, solve_item_vector(U0, y0, lam), n0)

    all_X = [U0]
    all_y = [y0]
    for _ in range(n_blocks):
        m = int(rng.integers(1, 8))
        X = rng.normal(size=(d, m))
        y = rng.normal(3.0, 1.0, size=m)
        _, state = woodbury_update(state, RatingBlock(X=X, y=y, user_ids=None, label="genuine"))
        all_X.append(X)
        all_y.append(y)

    batch = solve_item_vector(np.hstack(all_X), np.concatenate(all_y), lam)
    denom = max(np.linalg.norm(batch), 1.0)
    assert np.linalg.norm(state.v - batch) / denom < 1e-8


def test_zero_residual_block_is_exact_fixed_point():
    rng = np.random.default_rng(5)
    d = 6
    U0 = rng.normal(size=(d, 15))
    y0 = rng.normal(3.0, 1.0, size=15)
    lam = 0.1
    A_inv = np.linalg.inv(U0 @ U0.T + lam * np.eye(d))
    state = ItemVectorState(0, (A_inv + A_inv.T) / 2, solve_item_vector(U0, y0, lam), 15)
    X = rng.normal(size=(d, 4))
    y = X.T @ state.v  # exactly consistent ratings
    v_hat, _ = woodbury_update(state, RatingBlock(X=X, y=y, user_ids=None, label="genuine"))
    np.testing.assert_array_equal(v_hat, state.v)  # bit-identical, not just close


def test_rating_block_validation():
    with pytest.raises(ValueError):
        RatingBlock(X=np.zeros((2, 3)), y=[1.0], user_ids=None, label="genuine")
    with pytest.raises(ValueError):
        RatingBlock(X=np.zeros((2, 0)), y=[], user_ids=None, label="genuine")
    with pytest.raises(ValueError):
        RatingBlock(X=np.zeros((2, 1)), y=[1.0], user_ids=None, label="weird")


def test_train_als_objective_non_increasing():
    R = small_ratings()
    vals = []
    for sweeps in (1, 3, 6, 10):
        m = train_als(R, d=4, lam=0.1, sweeps=sweeps, rng_seed=0)
        vals.append(objective(R, m.U, m.V, 0.1))
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_train_als_fits_low_rank_data():
    rng = np.random.default_rng(1)
    U_true = rng.normal(size=(3, 25))
    V_true = rng.normal(size=(3, 15))
    full = np.clip(U_true.T @ V_true + 3.0, 1.0, 5.0)
    users, items = np.nonzero(rng.random((25, 15)) < 0.8)
    R = RatingsMatrix(25, 15, users, items, full[users, items])
    m = train_als(R, d=6, lam=0.01, sweeps=25, rng_seed=0)
    pred = np.einsum("ij,ij->j", m.U[:, R.users], m.V[:, R.items])
    rmse = np.sqrt(np.mean((pred - R.ratings) ** 2))
    assert rmse < 0.15


def test_rescale_factors_preserves_predictions():
    R = small_ratings(seed=2)
    m = train_als(R, d=4, lam=0.1, sweeps=3, rng_seed=0)
    m2 = rescale_factors(m, user_rms=0.45)
    np.testing.assert_allclose(m2.U.T @ m2.V, m.U.T @ m.V, rtol=1e-10, atol=1e-10)
    rms = np.sqrt(np.mean(np.linalg.norm(m2.U, axis=0) ** 2))
    assert rms == pytest.approx(0.45, rel=1e-12)
    with pytest.raises(ValueError):
        rescale_factors(m, user_rms=0.0)


def test_build_item_state_matches_direct_solve():
    R = small_ratings(seed=4)
    m = train_als(R, d=4, lam=0.2, sweeps=3, rng_seed=0)
    state = build_item_state(m, R, 5)
    raters, vals = R.item_raters(5)
    expected = solve_item_vector(m.U[:, raters], vals, 0.2)
    np.testing.assert_allclose(state.v, expected, rtol=1e-10)
    assert state.rater_count == raters.size
    # A_inv really is the inverse of the regularized Gram
    A = m.U[:, raters] @ m.U[:, raters].T + 0.2 * np.eye(4)
    np.testing.assert_allclose(state.A_inv @ A, np.eye(4), atol=1e-10)


def test_model_checkpoint_round_trip_bit_exact(tmp_path):
    R = small_ratings(seed=6)
    m = train_als(R, d=5, lam=0.1, sweeps=2, rng_seed=0)
    path = tmp_path / "model.csv"
    save_model(m, str(path))
    m2 = load_model(str(path))
    np.testing.assert_array_equal(m2.U, m.U)
    np.testing.assert_array_equal(m2.V, m.V)
    assert (m2.d, m2.lam) == (m.d, m.lam)


def test_load_model_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("not-a-model,v9\n")
    with pytest.raises(ValueError):
        load_model(str(path))


def test_factor_model_validation():
    with pytest.raises(ValueError):
        FactorModel(U=np.zeros((2, 3)), V=np.zeros((2, 3)), d=2, lam=0.0)
    bad = np.zeros((2, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        FactorModel(U=bad, V=np.zeros((2, 3)), d=2, lam=0.1)
