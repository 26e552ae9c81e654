import math

import pytest
import torch

from hotspots.temporal import (
    ActionClassifier,
    ClipAggregator,
    classification_loss,
    prefix_losses,
    select_active_frame,
)


@pytest.fixture()
def aggregator():
    torch.manual_seed(1)
    return ClipAggregator(feature_dim=16, hidden_size=24)


@pytest.fixture()
def classifier():
    torch.manual_seed(2)
    return ActionClassifier(hidden_size=24, num_actions=4)


class TestAggregator:
    def test_single_step(self, aggregator):
        feats = torch.randn(1, 16)
        states, _ = aggregator(feats)
        assert states.shape == (1, 24)

    def test_prefix_states_match_fresh_runs(self, aggregator):
        feats = torch.randn(9, 16)
        full, _ = aggregator(feats)
        for t in range(1, 10):
            prefix, _ = aggregator(feats[:t])
            assert torch.equal(prefix[-1], full[t - 1])

    def test_chunked_equals_one_shot(self, aggregator):
        feats = torch.randn(40, 16)
        one_shot, _ = aggregator(feats)
        chunked, _ = aggregator(feats, chunk_size=16)
        assert torch.equal(one_shot, chunked)

    def test_chunked_batch(self, aggregator):
        feats = torch.randn(3, 33, 16)
        one_shot, _ = aggregator(feats)
        chunked, _ = aggregator(feats, chunk_size=16)
        assert torch.equal(one_shot, chunked)

    def test_empty_sequence_rejected(self, aggregator):
        with pytest.raises(ValueError, match="empty"):
            aggregator(torch.zeros(0, 16))

    def test_order_sensitivity(self, aggregator):
        torch.manual_seed(5)
        feats = torch.randn(6, 16)
        fwd, _ = aggregator(feats)
        rev, _ = aggregator(torch.flip(feats, dims=(0,)))
        assert not torch.allclose(fwd[-1], rev[-1])


class TestClassifier:
    def test_zero_state_gives_bias(self, classifier):
        out = classifier(torch.zeros(24))
        assert torch.equal(out, classifier.linear.bias)

    def test_score_length(self, classifier):
        assert classifier(torch.randn(24)).shape == (4,)

    def test_linearity_against_matmul_oracle(self, classifier):
        h = torch.randn(24)
        alpha = 2.7
        bias = classifier(torch.zeros(24))
        lhs = classifier(alpha * h) - bias
        rhs = alpha * (classifier(h) - bias)
        assert torch.allclose(lhs, rhs, atol=1e-5)
        oracle = h @ classifier.linear.weight.t() + classifier.linear.bias
        assert torch.allclose(classifier(h), oracle, atol=1e-6)


class TestClassificationLoss:
    def test_uniform_scores_seven_actions(self):
        loss = classification_loss(torch.zeros(7), 3)
        assert loss.item() == pytest.approx(math.log(7), abs=1e-6)

    def test_confident_limit(self):
        scores = torch.zeros(5)
        scores[2] = 60.0
        assert classification_loss(scores, 2).item() < 1e-9

    def test_shift_invariance(self):
        scores = torch.randn(6)
        a = classification_loss(scores, 1)
        b = classification_loss(scores + 123.0, 1)
        assert a.item() == pytest.approx(b.item(), abs=1e-5)

    def test_out_of_range_index(self):
        with pytest.raises(IndexError):
            classification_loss(torch.zeros(4), 4)
        with pytest.raises(IndexError):
            classification_loss(torch.zeros(4), -1)

    def test_nonnegative(self):
        for seed in range(20):
            torch.manual_seed(seed)
            assert classification_loss(torch.randn(5), seed % 5).item() >= 0


def brute_force_active_frame(features, action, aggregator, classifier):
    """Definitionally enumerate every prefix; earliest min wins."""
    best_t, best_loss = None, None
    with torch.no_grad():
        for t in range(1, features.shape[0] + 1):
            states, _ = aggregator(features[:t])
            loss = classification_loss(classifier(states[-1]), action).item()
            if best_loss is None or loss < best_loss:
                best_t, best_loss = t, loss
    return best_t


class TestActiveFrameSelection:
    def test_single_frame(self, aggregator, classifier):
        feats = torch.randn(1, 16)
        assert select_active_frame(feats, 0, aggregator, classifier) == 1

    def test_matches_brute_force(self, aggregator, classifier):
        for seed in range(30):
            torch.manual_seed(seed)
            T = int(torch.randint(1, 20, (1,)))
            feats = torch.randn(T, 16)
            action = seed % 4
            got = select_active_frame(feats, action, aggregator, classifier)
            want = brute_force_active_frame(feats, action, aggregator, classifier)
            assert got == want
            assert 1 <= got <= T

    def test_tie_breaks_earliest(self):
        # all-zero recurrent weights give identical prefix states, so every
        # prefix loss ties and the earliest index must win
        agg = ClipAggregator(feature_dim=8, hidden_size=8)
        clf = ActionClassifier(hidden_size=8, num_actions=3)
        with torch.no_grad():
            for p in agg.parameters():
                p.zero_()
        feats = torch.randn(7, 8)
        losses = prefix_losses(agg(feats)[0], 1, clf)
        assert torch.allclose(losses, losses[0].expand_as(losses))
        assert select_active_frame(feats, 1, agg, clf) == 1
