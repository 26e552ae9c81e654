"""Recurrent aggregation of frame features, action scoring, active-frame selection."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ClipAggregator(nn.Module):
    """Single-layer LSTM over a sequence of pooled frame features.

    The per-step outputs are the prefix states: ``states[t - 1]`` equals the
    aggregate of the first t features, which is what active-frame selection
    ranks.
    """

    def __init__(self, feature_dim: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.lstm = nn.LSTM(feature_dim, hidden_size, batch_first=True)

    def forward(self, features, state=None, chunk_size=None):
        """Aggregate (T, d) or (B, T, d) features.

        Returns (states, final_state) where states is (T, hidden) or
        (B, T, hidden). With chunk_size set, the sequence is consumed in
        chunks with the recurrent state carried across them; the result is
        identical to one-shot processing.
        """
        single = features.dim() == 2
        if single:
            features = features.unsqueeze(0)
        if features.dim() != 3:
            raise ValueError(f"expected (T, d) or (B, T, d), got {tuple(features.shape)}")
        if features.shape[1] == 0:
            raise ValueError("cannot aggregate an empty feature sequence")
        if chunk_size is None or chunk_size >= features.shape[1]:
            states, state = self.lstm(features, state)
        else:
            pieces = []
            for start in range(0, features.shape[1], chunk_size):
                out, state = self.lstm(features[:, start:start + chunk_size], state)
                pieces.append(out)
            states = torch.cat(pieces, dim=1)
        if single:
            states = states.squeeze(0)
        return states, state


class ActionClassifier(nn.Module):
    """Affine map from the aggregate state to per-action scores (no softmax)."""

    def __init__(self, hidden_size: int, num_actions: int):
        super().__init__()
        self.linear = nn.Linear(hidden_size, num_actions)

    def forward(self, h):
        return self.linear(h)


def classification_loss(scores: torch.Tensor, action) -> torch.Tensor:
    """Cross-entropy of softmax(scores) against the action index.

    scores: (|A|,) or (B, |A|); action: int or (B,) indices. Batched input
    returns the mean loss.
    """
    single = scores.dim() == 1
    if single:
        scores = scores.unsqueeze(0)
    target = torch.as_tensor(action, dtype=torch.long, device=scores.device).reshape(-1)
    if target.numel() != scores.shape[0]:
        raise ValueError("one action index per score row required")
    if ((target < 0) | (target >= scores.shape[1])).any():
        raise IndexError(f"action index out of range for {scores.shape[1]} actions")
    return F.cross_entropy(scores, target)


def prefix_losses(states: torch.Tensor, action: int, classifier: ActionClassifier) -> torch.Tensor:
    """Per-prefix classification losses, one value per step state."""
    scores = classifier(states)
    target = torch.full((scores.shape[0],), action, dtype=torch.long, device=scores.device)
    return F.cross_entropy(scores, target, reduction="none")


def select_active_frame(
    features: torch.Tensor,
    action: int,
    aggregator: ClipAggregator,
    classifier: ActionClassifier,
) -> int:
    """Prefix length (1-based, in [1, T]) minimizing the classification loss.

    The selection runs under the current parameters without gradients; ties
    break toward the earliest frame.
    """
    with torch.no_grad():
        states, _ = aggregator(features)
        losses = prefix_losses(states, action, classifier)
        return int(torch.argmin(losses).item()) + 1
