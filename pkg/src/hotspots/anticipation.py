"""Inactive-to-active feature transform and its matching losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from hotspots.encoder import ShapeError, l2_pool


@dataclass
class TripletConfig:
    margin: float = 0.5
    normalize: bool = True

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("triplet margin must be positive")


class AnticipationNet(nn.Module):
    """Two conv-bn-relu blocks (3x3) preserving both channels and grid size."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.blocks = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ShapeError(
                f"expected (*, {self.channels}, n, n) feature map, got {tuple(x.shape)}"
            )
        out = self.blocks(x)
        return out.squeeze(0) if single else out


def _check_same_shape(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def feature_match_loss(anticipated: torch.Tensor, active: torch.Tensor) -> torch.Tensor:
    """Euclidean distance between the pooled feature vectors.

    Zero iff the pooled features coincide (up to the pooling epsilon);
    symmetric in its arguments. Accepts (d, n, n) or (B, d, n, n); batched
    input returns the mean distance.
    """
    _check_same_shape(anticipated, active)
    dist = torch.linalg.vector_norm(l2_pool(anticipated) - l2_pool(active), dim=-1)
    return dist.mean()


def triplet_match_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    config: TripletConfig | None = None,
) -> torch.Tensor:
    """Margin loss max(0, d(a, p) - d(a, n) + margin) on pooled features.

    The anchor is the selected active-frame feature; positive/negative are
    anticipated features for correct- and wrong-class inactive images.
    Pooled vectors are L2-normalized before the distances, so the loss is
    bounded by 2 + margin.
    """
    if config is None:
        config = TripletConfig()
    _check_same_shape(anchor, positive)
    _check_same_shape(anchor, negative)
    pa, pp, pn = l2_pool(anchor), l2_pool(positive), l2_pool(negative)
    if config.normalize:
        pa = F.normalize(pa, dim=-1)
        pp = F.normalize(pp, dim=-1)
        pn = F.normalize(pn, dim=-1)
    d_pos = torch.linalg.vector_norm(pa - pp, dim=-1)
    d_neg = torch.linalg.vector_norm(pa - pn, dim=-1)
    return torch.clamp(d_pos - d_neg + config.margin, min=0.0).mean()
