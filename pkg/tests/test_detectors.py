import numpy as np
import pytest

from ivdrec.clustering import ClusterModel, kmeans
from ivdrec.data import compute_stats, with_extra_users
from ivdrec.detectors import (
    IvdDetector,
    block_groups,
    ivd_init,
    mpe_check,
    pca_flag_users,
)
from ivdrec.mf import FactorModel, ItemVectorState, RatingBlock, rescale_factors, train_als
from ivdrec.synthetic import synthesize_ratings


def _state_2d():
    # lam = 0.5, no raters yet: A_inv = 2I, v = 0
    return ItemVectorState(0, np.eye(2) * 2.0, np.zeros(2), 0)


def test_ivd_worked_example_flags_large_drift():
    # reference centroid at (1, 0): D_ref = |(1,0) - 0| = 1.
    det = IvdDetector(_state_2d(), U_tilde_g=np.array([1.0, 0.0]), reference_group=0, threshold=0.07)
    assert det.reference_distance == pytest.approx(1.0)
    # one rating 3 from user (1, 0) moves v to (2, 0) (see the mf worked example):
    # D_new = |(1,0) - (2,0)| = 1.0, score 0 -> accepted
    ok = det.check(RatingBlock(X=np.array([[1.0], [0.0]]), y=[3.0], user_ids=None, label="genuine"))
    assert not ok.flagged and ok.committed
    assert ok.score == pytest.approx(0.0, abs=1e-12)
    # pushing along -x drags v away from the centroid -> flagged
    bad = det.check(RatingBlock(X=np.array([[-1.0], [0.0]]), y=[5.0], user_ids=None, label="attack"))
    assert bad.flagged and not bad.committed
    assert bad.score > 0.07


def test_ivd_rejection_leaves_state_untouched():
    det = IvdDetector(_state_2d(), U_tilde_g=np.array([1.0, 0.0]), reference_group=0, threshold=0.01)
    A_before = det.state.A_inv.copy()
    v_before = det.state.v.copy()
    ref_before = det.reference_distance
    verdict = det.check(RatingBlock(X=np.array([[-1.0], [0.0]]), y=[5.0], user_ids=None, label="attack"))
    assert verdict.flagged
    np.testing.assert_array_equal(det.state.A_inv, A_before)
    np.testing.assert_array_equal(det.state.v, v_before)
    assert det.reference_distance == ref_before


def test_ivd_acceptance_commits_and_refreshes_reference():
    det = IvdDetector(_state_2d(), U_tilde_g=np.array([1.0, 0.0]), reference_group=0, threshold=5.0)
    block = RatingBlock(X=np.array([[1.0], [0.0]]), y=[3.0], user_ids=None, label="genuine")
    verdict = det.check(block)
    assert verdict.committed
    assert det.state.rater_count == 1
    np.testing.assert_allclose(det.state.v, [2.0, 0.0])
    # reference distance refreshed to the committed vector's distance
    assert det.reference_distance == pytest.approx(1.0)


def test_ivd_flag_iff_score_exceeds_threshold():
    rng = np.random.default_rng(0)
    for trial in range(20):
        d = 3
        U0 = rng.normal(size=(d, 6))
        A_inv = np.linalg.inv(U0 @ U0.T + 0.1 * np.eye(d))
        state = ItemVectorState(0, (A_inv + A_inv.T) / 2, rng.normal(size=d), 6)
        det = IvdDetector(state, U_tilde_g=rng.normal(size=d), reference_group=0, threshold=0.07)
        block = RatingBlock(X=rng.normal(size=(d, 4)), y=rng.normal(3, 1, size=4), user_ids=None, label="genuine")
        verdict = det.check(block)
        assert verdict.flagged == (verdict.score > 0.07)


def test_zero_deviation_block_scores_exactly_zero():
    rng = np.random.default_rng(1)
    d = 4
    U0 = rng.normal(size=(d, 8))
    A_inv = np.linalg.inv(U0 @ U0.T + 0.1 * np.eye(d))
    state = ItemVectorState(0, (A_inv + A_inv.T) / 2, rng.normal(size=d), 8)
    det = IvdDetector(state, U_tilde_g=rng.normal(size=d), reference_group=0, threshold=0.07)
    X = rng.normal(size=(d, 5))
    y = X.T @ state.v
    verdict = det.check(RatingBlock(X=X, y=y, user_ids=None, label="genuine"))
    assert verdict.score == 0.0 and not verdict.flagged


def test_mpe_zero_error_accepts():
    clusters = ClusterModel(U_tilde=np.array([[1.0], [0.0]]), assignment=np.array([0, 0]), k=1)
    model = FactorModel(U=np.ones((2, 2)), V=np.array([[3.0], [1.0]]), d=2, lam=0.1)
    # group prediction = (1,0) . (3,1) = 3
    block = RatingBlock(X=np.ones((2, 2)), y=[3.0, 3.0], user_ids=np.array([0, 1]), label="genuine")
    verdict = mpe_check(clusters, model, block, [0, 0], target_item=0)
    assert verdict.score == 0.0 and not verdict.flagged


def test_mpe_threshold_boundary():
    clusters = ClusterModel(U_tilde=np.array([[1.0], [0.0]]), assignment=np.array([0]), k=1)
    model = FactorModel(U=np.ones((2, 1)), V=np.array([[3.0], [1.0]]), d=2, lam=0.1)
    block_hi = RatingBlock(X=np.ones((2, 1)), y=[5.0], user_ids=np.array([0]), label="attack")
    verdict = mpe_check(clusters, model, block_hi, [0], 0, threshold=1.5)
    assert verdict.score == pytest.approx(2.0) and verdict.flagged
    block_at = RatingBlock(X=np.ones((2, 1)), y=[4.5], user_ids=np.array([0]), label="attack")
    verdict = mpe_check(clusters, model, block_at, [0], 0, threshold=1.5)
    assert verdict.score == pytest.approx(1.5) and not verdict.flagged  # flag strictly above


def test_block_groups_known_and_folded_users():
    U_tilde = np.array([[1.0, -1.0], [0.0, 0.0]])
    clusters = ClusterModel(U_tilde=U_tilde, assignment=np.array([1, 0]), k=2)
    known = RatingBlock(X=np.zeros((2, 2)), y=[3.0, 3.0], user_ids=np.array([0, 1]), label="genuine")
    assert block_groups(clusters, known).tolist() == [1, 0]
    folded = RatingBlock(X=np.array([[0.9, -0.8], [0.0, 0.1]]), y=[3.0, 3.0], user_ids=None, label="attack")
    assert block_groups(clusters, folded).tolist() == [0, 1]


def test_pca_flag_count_and_range():
    R = synthesize_ratings(n_users=80, n_items=60, n_ratings=2400, seed=2)
    flagged = pca_flag_users(R, r_pct=0.10)
    assert len(flagged) == 8
    assert all(0 <= u < 80 for u in flagged)


def test_pca_flags_uncorrelated_planted_users():
    R = synthesize_ratings(n_users=100, n_items=80, n_ratings=4000,
                           affinity_scale=1.2, noise_std=0.3, seed=4)
    rng = np.random.default_rng(0)
    # planted profiles: pure noise, no item-quality or group structure
    profiles = []
    for _ in range(6):
        items = rng.choice(80, size=30, replace=False)
        profiles.append([(int(i), float(np.clip(round(rng.normal(3.0, 1.2)), 1, 5))) for i in items])
    widened, fake_ids = with_extra_users(R, profiles)
    flagged = pca_flag_users(widened, r_pct=0.10)
    assert sum(int(u) in flagged for u in fake_ids) >= 4


def test_ivd_init_respects_eligibility(tmp_path):
    R = synthesize_ratings(n_users=120, n_items=90, n_ratings=4000, seed=3)
    model = rescale_factors(train_als(R, d=6, lam=0.1, sweeps=4, rng_seed=0), 0.45)
    clusters = kmeans(model.U, k=3, rng_seed=0)
    stats = compute_stats(R, clusters)
    from ivdrec.data import TargetCriteria, eligible_target_items

    crit = TargetCriteria(max_cluster_mean=5.0, min_ratings_per_cluster=1)
    elig = eligible_target_items(stats, crit)
    det = ivd_init(model, clusters, R, int(elig[0]), stats=stats, criteria=crit,
                   rng=np.random.default_rng(0))
    assert 0 <= det.reference_group < clusters.k
    tight = TargetCriteria(max_cluster_mean=5.0, min_ratings_per_cluster=10**6)
    with pytest.raises(ValueError):
        ivd_init(model, clusters, R, int(elig[0]), stats=stats, criteria=tight)
