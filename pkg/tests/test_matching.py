import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from threadsel import numeric as nm
from threadsel.matching import batch_loss, batch_scores, match_score

from oracles import loss_by_hand, match_by_hand

finite = st.floats(-5, 5, allow_nan=False)


class TestMatchScore:
    def test_single_context(self):
        r, c = np.array([0.5, -1.0, 2.0]), np.array([1.0, 3.0, -0.5])
        m = match_score([c], r)
        assert m.weights.tolist() == [1.0]
        assert m.score == pytest.approx(r @ c, abs=1e-15)

    def test_two_thread_example(self):
        m = match_score([[2.0, 0.0], [0.0, 3.0]], [1.0, 0.0])
        np.testing.assert_allclose(m.weights, [0.8807970779778823, 0.11920292202211755], rtol=1e-12)
        assert m.score == pytest.approx(1.7615941559557646, abs=1e-12)

    def test_equal_vectors(self):
        v = np.array([0.2, 0.7])
        assert match_score([v, v, v], [1.5, -0.3]).score == pytest.approx(v @ [1.5, -0.3], abs=1e-15)

    def test_empty_context(self):
        with pytest.raises(ValueError, match="empty context"):
            match_score(np.zeros((0, 2)), [1.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(nm.ShapeError):
            match_score([[1.0, 2.0]], [1.0, 2.0, 3.0])

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.just(3)), elements=finite),
           arrays(np.float64, 3, elements=finite))
    def test_against_hand_oracle_and_bounds(self, ctx, r):
        m = match_score(ctx, r)
        w, s = match_by_hand(ctx.tolist(), r.tolist())
        np.testing.assert_allclose(m.weights, w, rtol=1e-9, atol=1e-12)
        assert m.score == pytest.approx(s, rel=1e-9, abs=1e-9)
        assert abs(m.weights.sum() - 1) < 1e-9 and len(m.weights) == len(ctx)
        dots = ctx @ r
        assert dots.min() - 1e-9 <= m.score <= dots.max() + 1e-9

    @given(arrays(np.float64, st.tuples(st.integers(2, 6), st.just(4)), elements=finite),
           arrays(np.float64, 4, elements=finite), st.floats(0.1, 10))
    def test_single_context_argmax_scale_invariant(self, cands, ctx, lam):
        best = np.argmax([match_score([ctx], c).score for c in cands])
        assert best == np.argmax([match_score([ctx], lam * c).score for c in cands])


class TestBatchScores:
    def test_one_by_one(self):
        assert batch_scores(np.ones((1, 2, 3)), np.ones((1, 3))).shape == (1, 1)

    def test_orthogonal_identity(self):
        eye = np.eye(3)
        S = batch_scores(eye[:, None, :], eye).data
        assert np.array_equal(S, eye)

    def test_matches_pairwise_calls(self):
        rng = np.random.default_rng(0)
        ctx, resp = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4))
        S = batch_scores(ctx, resp).data
        for a in range(2):
            for b in range(2):
                assert S[a, b] == pytest.approx(match_score(ctx[a], resp[b]).score, rel=1e-12)

    def test_mask_equals_dropping_vectors(self):
        rng = np.random.default_rng(1)
        ctx, resp = rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4))
        mask = np.array([[True, True, False], [True, False, False]])
        S = batch_scores(ctx, resp, mask).data
        for a in range(2):
            for b in range(3):
                assert S[a, b] == pytest.approx(match_score(ctx[a][mask[a]], resp[b]).score, rel=1e-12)


class TestBatchLoss:
    def test_singleton_is_zero(self):
        assert batch_loss(np.array([[7.3]])).item() == 0.0

    def test_identity_2x2(self):
        assert batch_loss(np.eye(2)).item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)

    def test_saturation(self):
        S = np.full((3, 3), -10.0) + np.eye(3) * 30.0
        assert batch_loss(S).item() < 1e-8

    def test_uniform_rows(self):
        assert batch_loss(np.full((5, 5), 2.5)).item() == pytest.approx(math.log(5), abs=1e-12)

    def test_rejects_non_square(self):
        with pytest.raises(nm.ShapeError):
            batch_loss(np.zeros((2, 3)))

    @settings(max_examples=100)
    @given(st.integers(1, 6).flatmap(lambda a: arrays(np.float64, (a, a), elements=st.floats(-20, 20))),
           st.floats(-50, 50))
    def test_nonnegative_shift_invariant_and_matches_oracle(self, S, c):
        loss = batch_loss(S).item()
        assert loss >= 0
        assert loss == pytest.approx(loss_by_hand(S), rel=1e-9, abs=1e-9)
        shifted = S.copy()
        shifted[0] += c
        assert batch_loss(shifted).item() == pytest.approx(loss, rel=1e-9, abs=1e-9)

    def test_gradient_through_scores(self):
        rng = np.random.default_rng(2)
        ctx = nm.Parameter("ctx", rng.normal(size=(3, 2, 4)))
        resp = nm.Parameter("resp", rng.normal(size=(3, 4)))
        mask = np.array([[True, True], [True, False], [True, True]])
        r = nm.grad_check(lambda: batch_loss(batch_scores(ctx, resp, mask)), [ctx, resp], eps=1e-5)
        assert r.max_rel_error < 1e-6
