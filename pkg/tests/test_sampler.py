import numpy as np
import pytest
from scipy import stats

from simce_rec.dataset import build_dataset
from simce_rec.sampler import NegativeSampler, SamplingError, epoch_batches
from simce_rec.seeding import rng_for


def test_negatives_avoid_training_items():
    # five items; user "a" trains on two of them (n < 3 keeps both in train)
    ds = build_dataset([("a", 0), ("a", 1), ("b", 2), ("b", 3), ("c", 4)], seed=0)
    a = ds.user_id_map()["a"]
    observed = set(ds.user_train_items(a).tolist())
    sampler = NegativeSampler(ds)
    negs = sampler.sample(np.random.default_rng(0), np.full(200, a), 16)
    assert set(negs.ravel().tolist()) <= set(range(5)) - observed
    assert set(negs.ravel().tolist()) == set(range(5)) - observed


def test_epoch_is_deterministic(small_ds):
    a = list(epoch_batches(small_ds, 64, 4, seed=5, epoch=2))
    b = list(epoch_batches(small_ds, 64, 4, seed=5, epoch=2))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(x.users, y.users)
        assert np.array_equal(x.pos_items, y.pos_items)
        assert np.array_equal(x.neg_items, y.neg_items)
    c = list(epoch_batches(small_ds, 64, 4, seed=5, epoch=3))
    assert not np.array_equal(a[0].users, c[0].users)


def test_epoch_covers_each_pair_once_and_invariants(small_ds):
    batches = list(epoch_batches(small_ds, 50, 3, seed=1, epoch=1))
    assert all(b.size == 50 for b in batches[:-1]) and 1 <= batches[-1].size <= 50
    seen = np.concatenate([np.stack([b.users, b.pos_items], 1) for b in batches])
    assert sorted(map(tuple, seen.tolist())) == sorted(map(tuple, small_ds.train_pairs.tolist()))
    for b in batches:
        assert b.neg_items.shape == (b.size, 3)
        for u, p, negs in zip(b.users, b.pos_items, b.neg_items):
            items = set(small_ds.user_train_items(u).tolist())
            assert p in items
            assert not items & set(negs.tolist())


def test_negative_distribution_is_uniform_over_complement():
    num_items = 200
    pairs = [(0, i) for i in range(0, num_items, 2)] + [(1, i) for i in range(num_items)]
    # split fractions keep all of user 0's items in train for this check
    ds = build_dataset(pairs, split=(0.998, 0.001, 0.001), seed=0)
    u = ds.user_id_map()["0"]
    assert len(ds.user_train_items(u)) == num_items // 2
    sampler = NegativeSampler(ds)
    rng = rng_for(7, 3)
    draws = np.concatenate([sampler.sample(rng, np.full(1, u), 512).ravel() for _ in range(196)])
    assert draws.size >= 10**5
    complement = np.setdiff1d(np.arange(ds.num_items), ds.user_train_items(u))
    counts = np.bincount(draws, minlength=ds.num_items)
    assert counts[ds.user_train_items(u)].sum() == 0
    _, p = stats.chisquare(counts[complement])
    assert p > 0.01


def test_saturated_user_is_a_configuration_error():
    ds = build_dataset([("full", 0), ("full", 1), ("other", 0)], seed=0)
    with pytest.raises(SamplingError, match="full"):
        list(epoch_batches(ds, 4, 2, seed=0, epoch=1))


def test_retry_cap(monkeypatch):
    ds = build_dataset([("u", i) for i in range(2)] + [("v", i) for i in range(300)], split=(0.998, 0.001, 0.001), seed=0)
    v = ds.user_id_map()["v"]
    sampler = NegativeSampler(ds)
    # make every draw look observed so only the cap can stop the loop
    monkeypatch.setattr(sampler, "observed", lambda users, items: np.ones(np.broadcast(users, items).shape, bool))
    with pytest.raises(SamplingError, match="redraws"):
        sampler.sample(np.random.default_rng(0), np.array([v]), 2)


def test_argument_validation(small_ds):
    with pytest.raises(ValueError):
        list(epoch_batches(small_ds, 0, 1, 0, 1))
    with pytest.raises(ValueError):
        list(epoch_batches(small_ds, 8, 0, 0, 1))
