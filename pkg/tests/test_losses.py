import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simce_rec import oracle
from simce_rec.backbone import PropagatedEmbeddings, score_batch
from simce_rec.losses import bpr, chain_to_embeddings, hinge, simce, ssm
from simce_rec.sampler import TrainBatch

# high-precision (mpmath, 40 digits) evaluations of the closed forms
BPR_EQUAL = 0.69312718075994264279
BPR_GAP3 = 0.048576853758160638928
BPR_DPOS_EQUAL = -0.49999000019999600008
SSM_POS10 = 0.000090795737467244446275

scores = st.floats(-10, 10, allow_nan=False)


def score_matrix(b, n):
    return arrays(np.float64, (b, n), elements=scores)


# --- BPR ---

def test_bpr_equal_scores():
    lg = bpr([1.3], [1.3])
    assert lg.loss == pytest.approx(BPR_EQUAL, abs=1e-12)
    assert lg.d_pos[0] == pytest.approx(BPR_DPOS_EQUAL, abs=1e-12)
    assert lg.d_neg[0] == -lg.d_pos[0]


def test_bpr_gap_three():
    assert bpr([3.0], [0.0]).loss == pytest.approx(BPR_GAP3, abs=1e-12)


def test_bpr_batch_mean():
    lg = bpr([0.0, 3.0], [0.0, 0.0])
    assert lg.loss == pytest.approx((BPR_EQUAL + BPR_GAP3) / 2, abs=1e-12)


def test_bpr_finite_at_extremes():
    lg = bpr([-800.0, 800.0], [800.0, -800.0])
    assert np.isfinite(lg.per_sample).all() and np.isfinite(lg.d_pos).all()
    assert lg.per_sample[0] == pytest.approx(-math.log(1e-5))


# --- SSM ---

def test_ssm_equal_scores_n3():
    lg = ssm([2.0], [[2.0, 2.0, 2.0]])
    assert lg.loss == pytest.approx(math.log(4), abs=1e-12)
    np.testing.assert_allclose(lg.d_neg, [[0.25, 0.25, 0.25]], atol=1e-15)
    assert lg.d_pos[0] == pytest.approx(-0.75, abs=1e-15)


def test_ssm_confident_positive():
    assert ssm([10.0], [[0.0, 0.0]]).loss == pytest.approx(SSM_POS10, rel=1e-12)


def test_ssm_no_overflow():
    lg = ssm([0.0, -1000.0], [[1000.0, 0.0], [0.0, 0.0]])
    assert np.isfinite(lg.per_sample).all()
    assert lg.per_sample[0] == pytest.approx(1000.0)
    assert lg.per_sample[1] == pytest.approx(1000.0 + math.log(2))


def test_ssm_equals_full_softmax(rng):
    for _ in range(200):
        s = rng.uniform(-10, 10, size=10)
        p = int(rng.integers(0, 10))
        negs = np.delete(s, p)
        assert abs(ssm([s[p]], [negs]).loss - oracle.full_softmax_ce(s, p)) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(data=st.data(), b=st.integers(1, 6), n=st.integers(1, 8))
def test_ssm_log_form_identity(data, b, n):
    pos = data.draw(arrays(np.float64, (b,), elements=scores))
    neg = data.draw(score_matrix(b, n))
    lg = ssm(pos, neg)
    softmax_form = -np.log(np.exp(pos) / (np.exp(pos) + np.exp(neg).sum(axis=1)))
    np.testing.assert_allclose(lg.per_sample, softmax_form, atol=1e-10, rtol=0)
    # mass conservation is exact by construction
    assert np.array_equal(lg.d_pos, -lg.d_neg.sum(axis=1))


# --- SimCE ---

def test_simce_active_example():
    lg = simce([2.0], [[0.5, 1.0]], margin=5.0)
    assert lg.loss == 4.0
    assert lg.active_index.tolist() == [1]
    assert lg.d_pos.tolist() == [-1.0]
    assert lg.d_neg.tolist() == [[0.0, 1.0]]


def test_simce_inactive_example():
    lg = simce([10.0], [[1.0, 2.0]], margin=5.0)
    assert lg.loss == 0.0
    assert lg.active_index.tolist() == [-1]
    assert not lg.d_pos.any() and not lg.d_neg.any()


def test_simce_default_margin_and_ties():
    lg = simce([0.0], [[3.0, 3.0, 1.0]])
    assert lg.loss == 8.0
    assert lg.active_index.tolist() == [0]


def test_simce_exact_zero_boundary():
    lg = simce([5.0], [[0.0]], margin=5.0)
    assert lg.loss == 0.0 and lg.d_pos[0] == 0.0


@settings(max_examples=200, deadline=None)
@given(data=st.data(), b=st.integers(1, 6), margin=st.floats(-5, 10))
def test_simce_single_negative_is_hinge(data, b, margin):
    pos = data.draw(arrays(np.float64, (b,), elements=scores))
    neg = data.draw(score_matrix(b, 1))
    assert np.array_equal(simce(pos, neg, margin).per_sample, hinge(pos, neg[:, 0], margin))


@settings(max_examples=200, deadline=None)
@given(data=st.data(), b=st.integers(1, 6), n=st.integers(1, 8))
def test_simce_gradient_structure(data, b, n):
    pos = data.draw(arrays(np.float64, (b,), elements=scores))
    neg = data.draw(score_matrix(b, n))
    lg = simce(pos, neg)
    for k in range(b):
        nz = np.flatnonzero(lg.d_neg[k])
        assert len(nz) <= 1
        if len(nz):
            assert lg.d_neg[k, nz[0]] == -lg.d_pos[k] == 1.0
            assert lg.d_pos[k] + lg.d_neg[k].sum() == 0.0
        else:
            assert lg.d_pos[k] == 0.0


# --- shared properties ---

@settings(max_examples=100, deadline=None)
@given(x=st.floats(-50, 50))
def test_softplus_bound(x):
    assert math.log1p(math.exp(x)) <= math.log(2) + max(x, 0.0) + 1e-15


@settings(max_examples=100, deadline=None)
@given(data=st.data(), b=st.integers(1, 5), n=st.integers(1, 6), c=st.floats(-20, 20))
def test_translation_invariance(data, b, n, c):
    pos = data.draw(arrays(np.float64, (b,), elements=scores))
    neg = data.draw(score_matrix(b, n))
    srt = np.sort(neg, axis=1)
    # SimCE's argmax and hinge edge are kinks; rounding of +c can cross them
    assume(n == 1 or (srt[:, -1] - srt[:, -2]).min() > 1e-9)
    assume(np.abs(5.0 - pos + srt[:, -1]).min() > 1e-9)
    for fn in (ssm, simce):
        a, t = fn(pos, neg), fn(pos + c, neg + c)
        np.testing.assert_allclose(a.per_sample, t.per_sample, atol=1e-10)
        np.testing.assert_allclose(a.d_neg, t.d_neg, atol=1e-10)
        np.testing.assert_allclose(a.d_pos, t.d_pos, atol=1e-10)
    a, t = bpr(pos, neg[:, 0]), bpr(pos + c, neg[:, 0] + c)
    np.testing.assert_allclose(a.per_sample, t.per_sample, atol=1e-10)
    np.testing.assert_allclose(a.d_pos, t.d_pos, atol=1e-10)


def _fd_scores(fn, pos, neg, h=1e-6):
    d_pos = np.zeros_like(pos)
    d_neg = np.zeros_like(neg)
    for k in range(len(pos)):
        pp, pm = pos.copy(), pos.copy()
        pp[k] += h
        pm[k] -= h
        d_pos[k] = (fn(pp, neg).per_sample[k] - fn(pm, neg).per_sample[k]) / (2 * h)
        for j in range(neg.shape[1]):
            np_, nm = neg.copy(), neg.copy()
            np_[k, j] += h
            nm[k, j] -= h
            d_neg[k, j] = (fn(pos, np_).per_sample[k] - fn(pos, nm).per_sample[k]) / (2 * h)
    return d_pos, d_neg


def test_score_gradients_match_finite_differences(rng):
    for _ in range(20):
        pos = rng.uniform(-10, 10, size=4)
        neg = rng.uniform(-10, 10, size=(4, 5))
        for name, fn in (("ssm", ssm), ("simce", simce), ("bpr", None)):
            if name == "bpr":
                def fn(p, n):
                    return bpr(p, n[:, 0])
                lg = bpr(pos, neg[:, 0])
                ad_neg = lg.d_neg[:, None]
                fd_p, fd_n = _fd_scores(fn, pos, neg[:, :1])
            else:
                lg = fn(pos, neg)
                srt = np.sort(neg, axis=1)
                if name == "simce" and (np.abs(5.0 - pos + srt[:, -1]).min() < 1e-3
                                        or (srt[:, -1] - srt[:, -2]).min() < 1e-3):
                    continue  # a kink within the stencil
                ad_neg = lg.d_neg
                fd_p, fd_n = _fd_scores(fn, pos, neg)
            assert oracle.max_relative_error(lg.d_pos, fd_p) < 1e-4
            assert oracle.max_relative_error(ad_neg, fd_n) < 1e-4


def test_simce_monotone(rng):
    for _ in range(300):
        pos = rng.uniform(-10, 10, size=3)
        neg = rng.uniform(-10, 10, size=(3, 4))
        base = simce(pos, neg).per_sample
        delta = rng.uniform(0, 2)
        assert (simce(pos + delta, neg).per_sample <= base).all()
        j = int(rng.integers(0, 4))
        bumped = neg.copy()
        bumped[:, j] += delta
        assert (simce(pos, bumped).per_sample >= base).all()


def test_input_validation():
    with pytest.raises(ValueError):
        ssm([1.0], np.zeros((1, 0)))
    with pytest.raises(ValueError):
        bpr([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        simce([1.0], [[1.0]], margin=float("inf"))


# --- chain rule to embeddings ---

def _final(rng, nu=4, ni=6, d=3):
    return PropagatedEmbeddings(rng.normal(size=(nu, d)), rng.normal(size=(ni, d)))


def test_chain_zero_gradient(rng):
    f = _final(rng)
    batch = TrainBatch(np.array([0, 1]), np.array([0, 1]), np.array([[2, 3], [4, 5]]))
    lg = simce([100.0, 100.0], [[0.0, 0.0], [0.0, 0.0]])
    gu, gi = chain_to_embeddings(lg, batch, f)
    assert not gu.any() and not gi.any()


def test_chain_scalar_by_hand():
    f = PropagatedEmbeddings(np.array([[2.0]]), np.array([[3.0], [-1.0]]))
    batch = TrainBatch(np.array([0]), np.array([0]), np.array([[1]]))
    lg = simce([6.0], [[-2.0]], margin=10.0)  # active: d_pos=-1, d_neg=+1
    gu, gi = chain_to_embeddings(lg, batch, f)
    assert gu[0, 0] == -1 * 3.0 + 1 * -1.0
    assert gi[0, 0] == -1 * 2.0
    assert gi[1, 0] == 1 * 2.0


def test_chain_matches_finite_differences(rng):
    nu, ni, d = 4, 6, 3
    f0 = _final(rng, nu, ni, d)
    batch = TrainBatch(rng.integers(0, nu, 5), rng.integers(0, ni, 5), rng.integers(0, ni, (5, 3)))
    x0 = np.concatenate([f0.final_user.ravel(), f0.final_item.ravel()])

    def split(flat):
        return PropagatedEmbeddings(flat[: nu * d].reshape(nu, d), flat[nu * d:].reshape(ni, d))

    for fn in (ssm, lambda p, n: simce(p, n, margin=50.0), lambda p, n: bpr(p, n[:, 0])):
        def loss(flat):
            fin = split(flat)
            return fn(score_batch(fin, batch.users, batch.pos_items),
                      score_batch(fin, batch.users, batch.neg_items)).loss

        lg = fn(score_batch(f0, batch.users, batch.pos_items), score_batch(f0, batch.users, batch.neg_items))
        bb = batch
        if lg.d_neg.ndim == 1:
            bb = TrainBatch(batch.users, batch.pos_items, batch.neg_items[:, :1])
        gu, gi = chain_to_embeddings(lg, bb, f0)
        analytic = np.concatenate([gu.ravel(), gi.ravel()])
        assert oracle.max_relative_error(analytic, oracle.fd_gradient(loss, x0)) < 1e-5
