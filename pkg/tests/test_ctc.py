import math

import numpy as np
import pytest

from ctkt import autodiff as ad
from ctkt import ctc, oracles
from ctkt.errors import ContractError, InfeasibleAlignmentError
from ctkt.gradcheck import check_gradients


def uniform_logp(m, v):
    return np.full((m, v), -math.log(v))


class TestCtcLoss:
    def test_single_frame_single_token(self):
        loss = ctc.ctc_loss(ad.Tensor(uniform_logp(1, 2)), (1,))
        assert abs(loss.item() - math.log(2)) < 1e-12

    def test_two_frames_three_paths(self):
        # paths a.a, a.blank, blank.a of prob 1/4 each -> -ln(3/4)
        loss = ctc.ctc_loss(ad.Tensor(uniform_logp(2, 2)), (1,))
        assert abs(loss.item() - (-math.log(3 / 4))) < 1e-12

    def test_repeat_needs_blank(self):
        with pytest.raises(InfeasibleAlignmentError):
            ctc.ctc_loss(ad.Tensor(uniform_logp(1, 2)), (1, 1))

    def test_infeasible_message_not_silent_inf(self):
        with pytest.raises(InfeasibleAlignmentError, match="3 frames"):
            ctc.ctc_loss(ad.Tensor(uniform_logp(2, 3)), (2, 2))

    def test_token_range(self):
        with pytest.raises(ContractError):
            ctc.ctc_loss(ad.Tensor(uniform_logp(3, 2)), (2,))

    def test_empty_target(self):
        lp = oracles.random_log_prob_matrix(np.random.default_rng(0), 3, 3)
        loss = ctc.ctc_loss(ad.Tensor(lp), ())
        assert abs(loss.item() - (-lp[:, 0].sum())) < 1e-12

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_brute_force_enumeration(self, seed):
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(1, 7))
        v = int(rng.integers(2, 5))
        n = int(rng.integers(0, 4))
        target = tuple(int(x) for x in rng.integers(1, v, size=n))
        lp = oracles.random_log_prob_matrix(rng, m, v)
        if m < ctc.min_frames(target):
            with pytest.raises(InfeasibleAlignmentError):
                ctc.ctc_loss(ad.Tensor(lp), target)
            return
        got = ctc.ctc_loss(ad.Tensor(lp), target).item()
        want = oracles.brute_force_neg_log_prob(lp, target)
        assert abs(got - want) <= 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_total_probability_conservation(self, seed):
        rng = np.random.default_rng(7000 + seed)
        m = int(rng.integers(2, 5))
        v = int(rng.integers(2, 4))
        lp = oracles.random_log_prob_matrix(rng, m, v)
        total = 0.0
        for tr in oracles.all_transcripts(v, m):
            if m >= ctc.min_frames(tr):
                total += math.exp(-ctc.ctc_loss(ad.Tensor(lp), tr).item())
        assert abs(total - 1.0) <= 1e-6

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(500 + seed)
        m = int(rng.integers(3, 7))
        v = int(rng.integers(2, 5))
        n = int(rng.integers(1, 3))
        target = tuple(int(x) for x in rng.integers(1, v, size=n))
        if m < ctc.min_frames(target):
            m = ctc.min_frames(target) + 1
        lp = ad.Tensor(oracles.random_log_prob_matrix(rng, m, v), requires_grad=True)
        worst, _ = check_gradients(lambda: ctc.ctc_loss(lp, target), [lp])
        assert worst <= 1e-4


class TestGreedy:
    def test_collapse_and_blank_removal(self):
        # frames argmax: a a blank b  -> "ab"
        lp = np.log(np.array([
            [0.1, 0.8, 0.1],
            [0.1, 0.8, 0.1],
            [0.8, 0.1, 0.1],
            [0.1, 0.1, 0.8],
        ]))
        assert ctc.greedy_decode(lp) == (1, 2)

    def test_all_blank(self):
        lp = np.log(np.array([[0.9, 0.05, 0.05]] * 4))
        assert ctc.greedy_decode(lp) == ()

    def test_blank_separates_repeats(self):
        lp = np.log(np.array([
            [0.1, 0.9],
            [0.9, 0.1],
            [0.1, 0.9],
        ]))
        assert ctc.greedy_decode(lp) == (1, 1)

    def test_ties_break_to_lowest_index(self):
        lp = np.log(np.full((2, 3), 1 / 3))
        assert ctc.greedy_decode(lp) == ()  # blank (index 0) wins ties


class FlatLM:
    def __init__(self, vocab_tokens):
        self.v = vocab_tokens

    def next_token_logprobs(self, prefix):
        return np.full(self.v, -math.log(self.v))


class TestBeamSearch:
    def test_beam_contract(self):
        lp = uniform_logp(2, 2)
        with pytest.raises(ContractError):
            ctc.prefix_beam_search(lp, 0)
        with pytest.raises(ContractError):
            ctc.prefix_beam_search(lp, 4, lm=None, lm_weight=0.5)

    def test_zero_lm_weight_identical_to_no_lm(self):
        rng = np.random.default_rng(3)
        lp = oracles.random_log_prob_matrix(rng, 4, 3)
        plain = ctc.prefix_beam_search(lp, 5)
        with_lm = ctc.prefix_beam_search(lp, 5, lm=FlatLM(2), lm_weight=0.0)
        assert plain == with_lm

    @pytest.mark.parametrize("seed", range(30))
    def test_top1_matches_exhaustive_posterior(self, seed):
        rng = np.random.default_rng(200 + seed)
        m = int(rng.integers(1, 5))
        v = int(rng.integers(2, 4))
        lp = oracles.random_log_prob_matrix(rng, m, v)
        got = ctc.prefix_beam_search(lp, v ** m)
        want_tr, want_score = oracles.posterior_argmax(lp)
        assert got[0][0] == want_tr
        assert abs(got[0][1] - want_score) <= 1e-9

    @pytest.mark.parametrize("seed", range(50))
    def test_beam1_equals_greedy_on_peaked(self, seed):
        rng = np.random.default_rng(900 + seed)
        m = int(rng.integers(2, 7))
        v = int(rng.integers(2, 5))
        lp = oracles.random_log_prob_matrix(rng, m, v, peaked=True)
        top = ctc.prefix_beam_search(lp, 1)[0][0]
        assert top == ctc.greedy_decode(lp)

    def test_scores_monotone_non_increasing(self):
        rng = np.random.default_rng(11)
        lp = oracles.random_log_prob_matrix(rng, 5, 4)
        out = ctc.prefix_beam_search(lp, 8)
        scores = [s for _, s in out]
        assert all(a >= b - 1e-15 for a, b in zip(scores, scores[1:]))

    def test_lm_fusion_shifts_ranking(self):
        # two-frame matrix where tokens 1 and 2 are near-tied; an LM that
        # loves token 2 must promote it.
        lp = np.log(np.array([
            [0.02, 0.50, 0.48],
            [0.96, 0.02, 0.02],
        ]))
        lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))

        class Biased:
            def next_token_logprobs(self, prefix):
                return np.log(np.array([0.05, 0.95]))

        plain = ctc.prefix_beam_search(lp, 4)
        fused = ctc.prefix_beam_search(lp, 4, lm=Biased(), lm_weight=3.0)
        assert plain[0][0] == (1,)
        assert fused[0][0] == (2,)


class TestJointRescore:
    def test_gamma_one_keeps_ctc_order(self):
        nbest = [((1,), -1.0), ((2,), -2.0)]
        out = ctc.joint_rescore(nbest, lambda tr: -5.0, 1.0)
        assert [t for t, _ in out] == [(1,), (2,)]

    def test_gamma_zero_uses_attention_order(self):
        nbest = [((1,), -1.0), ((2,), -2.0)]
        att = {(1,): -9.0, (2,): -0.5}
        out = ctc.joint_rescore(nbest, lambda tr: att[tr], 0.0)
        assert [t for t, _ in out] == [(2,), (1,)]

    def test_hand_computed_convex_mix(self):
        nbest = [((1,), -1.0), ((2,), -2.0)]
        att = {(1,): -3.0, (2,): -1.0}
        out = ctc.joint_rescore(nbest, lambda tr: att[tr], 0.5)
        assert out[0][0] == (2,)
        assert abs(out[0][1] - (-1.5)) < 1e-15
        assert abs(out[1][1] - (-2.0)) < 1e-15

    def test_contracts(self):
        with pytest.raises(ContractError):
            ctc.joint_rescore([], lambda tr: 0.0, 0.5)
        with pytest.raises(ContractError):
            ctc.joint_rescore([((1,), -1.0)], lambda tr: 0.0, 1.5)
