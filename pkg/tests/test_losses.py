"""Tests for CTC, label-smoothed cross-entropy, and the multitask mixture."""

import numpy as np
import pytest

from tinyst.losses import (CtcInfeasibleError, LossWeights, ctc_feasible, ctc_loss,
                           ctc_loss_batch, ctc_loss_brute_force, ctc_min_frames,
                           label_smoothed_ce, multitask_loss)
from tinyst.tensor import Tensor, grad_check


def random_log_probs(rng, t, v):
    x = rng.normal(size=(t, v))
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


class TestCtcKnownValues:
    def test_single_frame_single_label(self):
        lp = Tensor(random_log_probs(np.random.default_rng(0), 1, 3))
        loss = ctc_loss(lp, [1], blank=0)
        np.testing.assert_allclose(loss.data, -lp.data[0, 1], atol=1e-12)

    def test_two_frames_uniform_three_quarters(self):
        # vocab {blank, a} uniform: paths (a,-), (-,a), (a,a) carry 3/4
        lp = Tensor(np.log(np.full((2, 2), 0.5)))
        loss = ctc_loss(lp, [1], blank=0)
        np.testing.assert_allclose(loss.data, -np.log(0.75), atol=1e-12)

    def test_empty_target_is_all_blank_path(self):
        rng = np.random.default_rng(1)
        lp = Tensor(random_log_probs(rng, 4, 3))
        loss = ctc_loss(lp, [], blank=0)
        np.testing.assert_allclose(loss.data, -lp.data[:, 0].sum(), atol=1e-12)

    def test_infeasible_raises_specific_error(self):
        lp = Tensor(random_log_probs(np.random.default_rng(2), 2, 3))
        with pytest.raises(CtcInfeasibleError):
            ctc_loss(lp, [1, 1], blank=0)  # repeat needs 3 frames

    def test_min_frames_counts_repeats(self):
        assert ctc_min_frames([1, 2, 3]) == 3
        assert ctc_min_frames([1, 1, 2]) == 4
        assert ctc_min_frames([1, 1, 1]) == 5
        assert ctc_min_frames([]) == 0
        assert ctc_feasible(3, [1, 2, 3]) and not ctc_feasible(2, [1, 2, 3])


class TestCtcAgainstBruteForce:
    def test_sweep_small_shapes(self):
        rng = np.random.default_rng(3)
        for t in range(1, 7):
            for length in range(0, 4):
                for v in (2, 3, 4):
                    for _ in range(10):
                        tgt = list(rng.integers(1, v, size=length))
                        if not ctc_feasible(t, tgt):
                            continue
                        lp = random_log_probs(rng, t, v)
                        got = ctc_loss(Tensor(lp), tgt, blank=0).data
                        want = ctc_loss_brute_force(lp, tgt, blank=0)
                        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_batch_matches_singles(self):
        rng = np.random.default_rng(4)
        lp = np.stack([random_log_probs(rng, 5, 4) for _ in range(6)])
        targets = [list(rng.integers(1, 4, size=2)) for _ in range(6)]
        batch = ctc_loss_batch(Tensor(lp), targets, blank=0).data
        singles = [ctc_loss(Tensor(lp[i]), targets[i], blank=0).data
                   for i in range(6)]
        np.testing.assert_allclose(batch, singles, atol=1e-12)


class TestCtcProperties:
    def test_loss_is_a_log_probability(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            t = int(rng.integers(2, 7))
            v = int(rng.integers(2, 5))
            length = int(rng.integers(0, min(t, 4)))
            tgt = list(rng.integers(1, v, size=length))
            if not ctc_feasible(t, tgt):
                continue
            loss = float(ctc_loss(Tensor(random_log_probs(rng, t, v)), tgt,
                                  blank=0).data)
            assert 0.0 < np.exp(-loss) <= 1.0 + 1e-12

    def test_reversed_target_changes_loss(self):
        rng = np.random.default_rng(6)
        lp = Tensor(random_log_probs(rng, 6, 5))
        a = float(ctc_loss(lp, [1, 2, 3], blank=0).data)
        b = float(ctc_loss(lp, [3, 2, 1], blank=0).data)
        assert abs(a - b) > 1e-6

    def test_gradient(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        err = grad_check(lambda: ctc_loss(x.log_softmax(axis=-1), [1, 3, 1],
                                          blank=0), [x])
        assert err < 1e-4

    def test_gradient_empty_target(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        err = grad_check(lambda: ctc_loss(x.log_softmax(axis=-1), [], blank=0), [x])
        assert err < 1e-4

    def test_batch_gradient(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        err = grad_check(
            lambda: ctc_loss_batch(x.log_softmax(axis=-1), [[1, 2], [3, 3]],
                                   blank=0).sum(), [x])
        assert err < 1e-4


class TestLabelSmoothedCe:
    def test_uniform_logits_give_log_v(self):
        for v in (2, 7, 33):
            logits = Tensor(np.zeros((3, v)))
            loss = label_smoothed_ce(logits, [v - 1, 1, 1], epsilon_ls=0.1)
            np.testing.assert_allclose(loss.data, np.log(v), atol=1e-12)

    def test_epsilon_zero_is_nll(self):
        rng = np.random.default_rng(10)
        logits = Tensor(rng.normal(size=(4, 6)))
        tgts = [5, 2, 3, 1]
        loss = label_smoothed_ce(logits, tgts, epsilon_ls=0.0)
        logp = logits.log_softmax(-1).data
        nll = -np.mean([logp[i, t] for i, t in enumerate(tgts)])
        np.testing.assert_allclose(loss.data, nll, atol=1e-12)

    def test_closed_form_two_way(self):
        logits = Tensor(np.array([[np.log(3.0), 0.0]]))
        loss = label_smoothed_ce(logits, [0], epsilon_ls=0.1, pad=-1)
        want = -(0.95 * np.log(0.75) + 0.05 * np.log(0.25))
        np.testing.assert_allclose(loss.data, want, atol=1e-12)

    def test_pad_positions_excluded(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(5, 6))
        full = label_smoothed_ce(Tensor(logits[:3]), [5, 2, 3], epsilon_ls=0.1)
        padded = label_smoothed_ce(Tensor(logits), [5, 2, 3, 0, 0], epsilon_ls=0.1)
        np.testing.assert_allclose(padded.data, full.data, atol=1e-12)

    def test_all_pad_rejected(self):
        with pytest.raises(ValueError, match="padding"):
            label_smoothed_ce(Tensor(np.zeros((2, 4))), [0, 0], epsilon_ls=0.1)

    def test_gibbs_inequality(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            v = int(rng.integers(2, 9))
            logits = Tensor(rng.normal(size=(1, v)) * 3.0)
            tgt = int(rng.integers(1, v))
            loss = float(label_smoothed_ce(logits, [tgt], epsilon_ls=0.1).data)
            q = np.full(v, 0.1 / v)
            q[tgt] += 0.9
            entropy = -(q * np.log(q)).sum()
            assert loss >= entropy - 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        err = grad_check(lambda: label_smoothed_ce(x, [1, 0, 4, 2], epsilon_ls=0.1),
                         [x])
        assert err < 1e-4


class TestMultitask:
    def test_linear_combination(self):
        total = multitask_loss(Tensor(2.0), Tensor(4.0), LossWeights(alpha=0.3))
        np.testing.assert_allclose(total.data, 2.6, atol=1e-12)

    def test_degenerate_weights(self):
        ce, ctc = Tensor(1.25), Tensor(7.5)
        assert multitask_loss(ce, ctc, LossWeights(alpha=0.0)).data == 1.25
        assert multitask_loss(ce, ctc, LossWeights(alpha=1.0)).data == 7.5

    def test_default_weights(self):
        w = LossWeights()
        assert w.alpha == 0.3 and w.epsilon_ls == 0.1

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=1.5)
        with pytest.raises(ValueError):
            LossWeights(epsilon_ls=1.0)
