import numpy as np

from ivdrec.synthetic import synthesize_ratings


def test_shapes_and_bounds():
    R = synthesize_ratings(n_users=100, n_items=80, n_ratings=3000, seed=0)
    assert (R.n_users, R.n_items, R.n_entries) == (100, 80, 3000)
    assert R.ratings.min() >= 1.0 and R.ratings.max() <= 5.0
    assert np.all(R.ratings == np.round(R.ratings))


def test_seed_determinism():
    a = synthesize_ratings(n_users=100, n_items=80, n_ratings=3000, seed=5)
    b = synthesize_ratings(n_users=100, n_items=80, n_ratings=3000, seed=5)
    np.testing.assert_array_equal(a.users, b.users)
    np.testing.assert_array_equal(a.items, b.items)
    np.testing.assert_array_equal(a.ratings, b.ratings)
    c = synthesize_ratings(n_users=100, n_items=80, n_ratings=3000, seed=6)
    assert not np.array_equal(a.ratings, c.ratings)


def test_every_user_has_min_activity():
    R = synthesize_ratings(n_users=100, n_items=80, n_ratings=3000, seed=1)
    counts = np.bincount(R.users, minlength=100)
    assert counts.min() >= 5


def test_popularity_is_skewed():
    R = synthesize_ratings(seed=0)
    counts = np.sort(R.item_counts())[::-1]
    # head items see far more traffic than the tail
    assert counts[:100].sum() > 10 * counts[-100:].sum()
