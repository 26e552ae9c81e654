"""Joint affordance model: encoder, clip aggregator, classifier, anticipation."""

from __future__ import annotations

import torch
import torch.nn as nn

from hotspots.anticipation import AnticipationNet
from hotspots.encoder import EncoderConfig, FrameEncoder, l2_pool
from hotspots.temporal import ActionClassifier, ClipAggregator, classification_loss


class AffordanceModel(nn.Module):
    """All trainable pieces behind one module so checkpoints stay single-file.

    The anticipation net is always present; training with zero anticipation
    and auxiliary weights leaves it untouched, which is exactly the plain
    recognition trunk the grad-cam baseline runs on.
    """

    def __init__(self, encoder_config: EncoderConfig, num_actions: int, hidden_size: int = 64):
        super().__init__()
        if num_actions < 2:
            raise ValueError("need at least 2 afforded actions")
        self.encoder_config = encoder_config
        self.num_actions = num_actions
        self.hidden_size = hidden_size
        self.encoder = FrameEncoder(encoder_config)
        self.anticipation = AnticipationNet(encoder_config.channels)
        self.aggregator = ClipAggregator(encoder_config.channels, hidden_size)
        self.classifier = ActionClassifier(hidden_size, num_actions)

    def pooled_sequence(self, frames: torch.Tensor) -> torch.Tensor:
        """(T, 3, s, s) frames -> (T, d) pooled features."""
        return l2_pool(self.encoder(frames))

    def video_scores(self, frames: torch.Tensor, chunk_size: int | None = None) -> torch.Tensor:
        """Action scores for a whole clip from the final aggregate state."""
        states, _ = self.aggregator(self.pooled_sequence(frames), chunk_size=chunk_size)
        return self.classifier(states[-1])

    def single_step_scores(self, feature_map: torch.Tensor) -> torch.Tensor:
        """Scores after one aggregator step on a pooled (d, n, n) feature map.

        Batched (B, d, n, n) input yields (B, |A|) scores.
        """
        pooled = l2_pool(feature_map)
        states, _ = self.aggregator(pooled.unsqueeze(-2))
        return self.classifier(states.select(-2, 0))

    def inactive_scores(self, image: torch.Tensor, through_anticipation: bool = True) -> torch.Tensor:
        """Afforded-action scores for a preprocessed inactive image.

        The default path hypothesizes the active-state features first; with
        through_anticipation=False the encoder output feeds the aggregator
        directly (the plain recognition path used by the grad-cam baseline).
        """
        features = self.encoder(image)
        if through_anticipation:
            features = self.anticipation(features)
        return self.single_step_scores(features)

    def aux_loss(self, anticipated: torch.Tensor, action) -> torch.Tensor:
        """Classification loss after a single aggregator step on anticipated features."""
        return classification_loss(self.single_step_scores(anticipated), action)
