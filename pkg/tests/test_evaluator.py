import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simce_rec.backbone import PropagatedEmbeddings
from simce_rec.dataset import InteractionDataset, _to_pair_array
from simce_rec.evaluator import (
    EvaluationError, MetricsReport, EpochRow, evaluate, ndcg_at_k, per_user_metrics,
    recall_at_k, topk, topk_rows,
)
from simce_rec.oracle import brute_force_metrics, sorted_topk

# hand evaluation of the binary-relevance formula, hits at ranks 2 and 4 of 5
NDCG_RANKS_2_4 = 0.6509209298071326


def _final(users, items):
    return PropagatedEmbeddings(np.asarray(users, float), np.asarray(items, float), 0)


def _single_user_final(scores):
    return _final([[1.0]], np.asarray(scores, float)[:, None])


def _dataset(num_users, num_items, train, valid=(), test=()):
    return InteractionDataset(num_users, num_items, _to_pair_array(list(train)),
                              _to_pair_array(list(valid)), _to_pair_array(list(test)))


def test_topk_examples():
    final = _single_user_final([0.1, 0.9, 0.5])
    assert topk(final, 0, 2).tolist() == [1, 2]
    assert topk(final, 0, 2, mask=[1]).tolist() == [2, 0]


def test_topk_precondition():
    final = _single_user_final([0.1, 0.9, 0.5])
    with pytest.raises(EvaluationError):
        topk(final, 0, 3, mask=[1])


def test_topk_matches_full_sort(rng):
    for _ in range(20):
        scores = rng.normal(size=50)
        mask = rng.choice(50, size=rng.integers(0, 10), replace=False)
        got = topk(_single_user_final(scores), 0, 10, mask)
        assert got.tolist() == sorted_topk(scores, 10, mask)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=5, max_size=40), st.integers(1, 5))
def test_topk_rows_tie_break_by_index(values, k):
    scores = np.asarray(values, float)
    assert topk_rows(scores[None, :], k)[0].tolist() == sorted_topk(scores, k)


def test_recall_examples():
    assert recall_at_k([3, 4, 5], {4, 9}) == 0.5
    assert recall_at_k([4, 9, 1], {4, 9}) == 1.0
    assert recall_at_k([1, 2], {4, 9}) == 0.0
    with pytest.raises(EvaluationError):
        recall_at_k([1], set())


def test_ndcg_examples():
    assert ndcg_at_k([7, 1, 2], {7}, 3) == 1.0
    assert ndcg_at_k([1, 2, 3], {7}, 3) == 0.0
    expected = (1 / math.log2(3) + 1 / math.log2(5)) / (1 + 1 / math.log2(3))
    assert expected == pytest.approx(NDCG_RANKS_2_4, abs=1e-15)
    assert ndcg_at_k([0, 8, 1, 9, 2], {8, 9}, 5) == pytest.approx(NDCG_RANKS_2_4, abs=1e-15)
    with pytest.raises(EvaluationError):
        ndcg_at_k([1], set(), 1)


def test_one_eval_user_equals_its_metrics():
    # user 0 trains on item 0; item 2 is held out; 25 items so K=20 fits
    scores = np.arange(25, dtype=float)[::-1].copy()
    ds = _dataset(2, 25, [(0, 0), (1, 1)], valid=[(0, 2)])
    final = _final([[1.0], [1.0]], scores[:, None])
    m = evaluate(final, ds, split="valid")
    ranked = topk(final, 0, 20, ds.user_train_items(0))
    assert ranked[0] == 1 and ranked[1] == 2
    assert m["recall@10"] == recall_at_k(ranked[:10], {2}) == 1.0
    assert m["ndcg@20"] == ndcg_at_k(ranked, {2}, 20) == pytest.approx(1 / math.log2(3))


def test_two_users_uniform_mean():
    scores = np.arange(30, dtype=float)[::-1].copy()
    # user 0's held-out item ranks first; user 1's ranks last (outside the top 20)
    ds = _dataset(2, 30, [(0, 5), (1, 5)], test=[(0, 0), (1, 29)])
    m = evaluate(_final([[1.0], [1.0]], scores[:, None]), ds, split="test")
    assert m["recall@10"] == 0.5 and m["recall@20"] == 0.5


def test_no_eval_users_is_an_error():
    ds = _dataset(1, 25, [(0, 0)])
    with pytest.raises(EvaluationError):
        evaluate(_final([[1.0]], np.ones((25, 1))), ds)


def _random_instance(rng, num_users=20, num_items=40, dim=4, integer=False):
    train, test = [], []
    for u in range(num_users):
        items = rng.choice(num_items, size=rng.integers(3, 12), replace=False)
        n_test = int(rng.integers(0, 4))
        test += [(u, int(i)) for i in items[:n_test]]
        train += [(u, int(i)) for i in items[n_test:]]
    if integer:
        ue = rng.integers(-1, 2, size=(num_users, dim)).astype(float)
        ie = rng.integers(-1, 2, size=(num_items, dim)).astype(float)
    else:
        ue, ie = rng.normal(size=(num_users, dim)), rng.normal(size=(num_items, dim))
    return _dataset(num_users, num_items, train, test=test), ue, ie, train, test


@pytest.mark.parametrize("integer", [False, True], ids=["continuous", "tied_scores"])
def test_matches_brute_force_oracle(integer):
    rng = np.random.default_rng(99)
    for _ in range(5):
        ds, ue, ie, train, test = _random_instance(rng, integer=integer)
        final = _final(ue, ie)
        means, per_oracle = brute_force_metrics(ue, ie, train, test)
        users, per = per_user_metrics(final, ds, split="test", chunk=7)
        assert users.tolist() == sorted({u for u, _ in test})
        for name in per_oracle:
            np.testing.assert_allclose(per[name], per_oracle[name], rtol=0, atol=1e-12)
        got = evaluate(final, ds, split="test")
        for name in means:
            assert got[name] == pytest.approx(means[name], abs=1e-12)


def test_metric_invariants():
    rng = np.random.default_rng(5)
    ds, ue, ie, *_ = _random_instance(rng, num_users=30, num_items=50)
    final = _final(ue, ie)
    users, per = per_user_metrics(final, ds, split="test")
    assert np.all(per["recall@20"] >= per["recall@10"])
    for name, vals in per.items():
        assert np.all((vals >= 0) & (vals <= 1 + 1e-12)), name
    for u in users:
        mask = ds.user_train_items(u)
        assert not set(topk(final, u, 20, mask).tolist()) & set(mask.tolist())


def test_ndcg_is_one_iff_top_ranks_are_held_out():
    assert ndcg_at_k([3, 4, 0], {3, 4}, 3) == pytest.approx(1.0)
    assert ndcg_at_k([3, 0, 4], {3, 4}, 3) < 1.0
    # more held-out items than K: a full top-K of hits is perfect
    assert ndcg_at_k([1, 2], {1, 2, 3}, 2) == pytest.approx(1.0)


def test_report_csv_format():
    rep = MetricsReport(rows=[EpochRow(1, 0.5, 0.1, 0.2, 0.3, 0.4, 1.25)])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "epoch,loss,recall@10,ndcg@10,recall@20,ndcg@20,seconds"
    assert lines[1] == "1,0.5,0.1,0.2,0.3,0.4,1.250000"
    assert rep.to_csv(zero_seconds=True).splitlines()[1].endswith(",0.000000")


def test_short_candidate_lists_rank_everything():
    # 12 items, 5 in training: only 7 candidates for K=10 and K=20
    rng = np.random.default_rng(3)
    train = [(0, i) for i in range(5)] + [(1, i) for i in range(3)]
    test = [(0, 7), (0, 11), (1, 9)]
    ds = _dataset(2, 12, train, test=test)
    ue, ie = rng.normal(size=(2, 3)), rng.normal(size=(12, 3))
    users, per = per_user_metrics(_final(ue, ie), ds, split="test")
    means, per_oracle = brute_force_metrics(ue, ie, train, test)
    assert per["recall@10"].tolist() == [1.0, 1.0]
    for name in per_oracle:
        np.testing.assert_allclose(per[name], per_oracle[name], rtol=0, atol=1e-12)
