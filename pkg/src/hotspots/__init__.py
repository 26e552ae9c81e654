"""Weakly-supervised interaction-hotspot learning.

Trains an action-recognition-plus-anticipation model on video clips labeled
only with afforded actions, then extracts per-action hotspot heatmaps from
static images of objects at rest via gradient-weighted activation mapping.
"""

__version__ = "0.1.0"

from hotspots.encoder import EncoderConfig, FrameEncoder, l2_pool
from hotspots.model import AffordanceModel
from hotspots.training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "AffordanceModel",
    "EncoderConfig",
    "FrameEncoder",
    "TrainConfig",
    "l2_pool",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
