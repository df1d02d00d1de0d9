import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from threadsel.corpus import Dialogue, build_vocab
from threadsel.encoder import PRESETS, EncoderConfig
from threadsel.evaluation import MetricsReport, RankingResult, evaluate, hits_at_k, metrics, mrr, rank_candidates, rank_from_scores
from threadsel.model import ThreadEncoderModel


def ranks(*rs):
    return [RankingResult(str(i), r, ()) for i, r in enumerate(rs)]


class TestRanking:
    def test_lower_score_ranks_second(self):
        assert rank_from_scores([1.0, 2.0], 0).rank == 2

    def test_tie_goes_to_lower_index(self):
        assert rank_from_scores([1.0, 1.0], 0).rank == 1
        assert rank_from_scores([1.0, 1.0], 1).rank == 2
        assert rank_from_scores([3.0, 5.0, 5.0, 1.0], 2).order == (1, 2, 0, 3)

    def test_hundred_candidates_span_all_ranks(self):
        scores = np.random.default_rng(0).permutation(100).astype(float)
        got = sorted(rank_from_scores(scores, k).rank for k in range(100))
        assert got == list(range(1, 101))

    def test_label_outside_pool(self):
        with pytest.raises(ValueError):
            rank_from_scores([1.0], 3)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.data())
    def test_increasing_transform_invariance(self, scores, data):
        label = data.draw(st.integers(0, len(scores) - 1))
        base = rank_from_scores(scores, label)
        for f in (np.exp, lambda x: 3 * x + 7, np.tanh, np.cbrt):
            with np.errstate(over="ignore"):
                moved = rank_from_scores(f(np.array(scores)), label)
            # tanh/exp can collapse distinct scores into ties; only compare when order is still strict
            if len(set(f(np.array(scores)).tolist())) == len(set(scores)):
                assert moved == base


class TestMetrics:
    def test_hand_counts(self):
        rs = ranks(1, 3, 2)
        assert hits_at_k(rs, 1) == pytest.approx(1 / 3, abs=1e-12)
        assert hits_at_k(rs, 2) == pytest.approx(2 / 3, abs=1e-12)
        assert mrr(rs) == pytest.approx((1 + 1 / 3 + 1 / 2) / 3, abs=1e-12)
        assert mrr(rs) == pytest.approx(0.6111, abs=1e-4)

    def test_k_at_least_pool(self):
        assert hits_at_k(ranks(10, 3, 7), 10) == 1.0

    def test_all_first(self):
        assert mrr(ranks(1, 1, 1)) == 1.0

    def test_single(self):
        assert mrr(ranks(4)) == 0.25

    def test_errors(self):
        with pytest.raises(ValueError):
            hits_at_k([], 1)
        with pytest.raises(ValueError):
            hits_at_k(ranks(1), 0)
        with pytest.raises(ValueError):
            mrr([])

    @given(st.lists(st.integers(1, 100), min_size=1, max_size=50))
    def test_monotone_and_bounded(self, rs):
        res = ranks(*rs)
        hs = [hits_at_k(res, k) for k in (1, 2, 5, 10, 50)]
        assert all(a <= b for a, b in zip(hs, hs[1:]))
        assert hs[0] <= mrr(res) <= 1.0
        if any(r > 1 for r in rs):
            assert mrr(res) > hs[0]

    def test_report_table(self):
        rep = metrics(ranks(1, 2), ks=(1, 2))
        assert isinstance(rep, MetricsReport)
        assert rep.to_dict() == {"hits": {"1": 0.5, "2": 1.0}, "mrr": 0.75, "n": 2}
        head, row = rep.table().splitlines()
        assert head.split() == ["hits@1", "hits@2", "MRR", "N"]
        assert row.split() == ["50.0", "100.0", "75.0", "2"]


@pytest.fixture(scope="module")
def setup():
    ds = [Dialogue.build(f"d{i}", [("a", "x y"), ("b", "z")], ["x", "y z", "q"], i % 3) for i in range(6)]
    tok = build_vocab(ds, 50)
    cfg = EncoderConfig(**PRESETS["toy"], vocab_size=len(tok))
    return ds, ThreadEncoderModel(cfg, tok, seed=0, init_std=0.2)


class TestRankCandidates:

    def test_missing_label(self, setup):
        _, model = setup
        d = Dialogue.build("u", [("a", "x")], ["x", "y"], None)
        with pytest.raises(ValueError, match="no label"):
            rank_candidates(model, d, None, "dep-extr")

    def test_evaluate_workers_agree(self, setup):
        ds, model = setup
        one = evaluate(model, ds, None, "dep-extr", ks=(1, 2))
        many = evaluate(model, ds, None, "dep-extr", ks=(1, 2), workers=3)
        assert one.to_dict() == many.to_dict()
        assert one.n == 6

    def test_evaluate_skips_unlabeled(self, setup):
        ds, model = setup
        extra = Dialogue.build("u", [("a", "x")], ["x", "y"], None)
        assert evaluate(model, ds + [extra], None, "full-hty", ks=(1,)).n == 6
        with pytest.raises(ValueError):
            evaluate(model, [extra], None, "full-hty")
