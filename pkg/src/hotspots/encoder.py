"""Frame encoders and the L2 spatial pooling operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

# Floor inside the pooling square root; keeps all-zero channels finite and
# differentiable. sqrt(POOL_EPS) = 1e-6 is the smallest pooled value.
POOL_EPS = 1e-12

# Pixel normalization (mean, std) applied after scaling to [0, 1].
_NORMALIZATION = {
    "desk": ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
    "paper": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
}


class ShapeError(ValueError):
    """Tensor does not match the declared geometry."""


@dataclass
class EncoderConfig:
    """Backbone geometry.

    Both presets keep their last two stages at spatial stride 1 with dilated
    filters, trading stride for dilation, so the output grid is
    ``input_size // 8`` instead of the classification-style ``// 32``.
    The "paper" preset is the modified large residual backbone
    (d=2048, n=28 at 224 input); "desk" is a small four-stage CNN for
    CPU-scale experiments.
    """

    preset: str = "desk"
    channels: int = 32
    input_size: int | None = None
    weights_path: str | None = None

    def __post_init__(self):
        if self.preset not in _NORMALIZATION:
            raise ValueError(f"unknown encoder preset {self.preset!r}")
        if self.input_size is None:
            self.input_size = 224 if self.preset == "paper" else 112
        if self.preset == "paper":
            self.channels = 2048
        if self.input_size % 8 != 0:
            raise ValueError("input_size must be a multiple of 8")
        if self.preset == "desk":
            if self.input_size < 56:
                raise ValueError("desk preset needs input_size >= 56 (7x7 output grid)")
            if not 8 <= self.channels <= 512:
                raise ValueError("desk preset expects a small channel count (8..512)")

    @property
    def out_size(self) -> int:
        return self.input_size // 8

    @property
    def schedule(self) -> dict:
        """Per-stage (stride, dilation) pairs, trunk stem first."""
        if self.preset == "desk":
            return {"strides": (2, 2, 2, 1, 1), "dilations": (1, 1, 1, 2, 4)}
        return {"strides": (2, 2, 1, 2, 1, 1), "dilations": (1, 1, 1, 1, 2, 4)}


class _DilatedResidualBlock(nn.Module):
    """conv-bn around an identity shortcut, stride 1 with a dilated filter.

    The shortcut keeps earlier, spatially faithful activations present in
    the output, which is what makes activation maps taken at the encoder
    output line up with the image.
    """

    def __init__(self, channels: int, dilation: int):
        super().__init__()
        self.conv = nn.Conv2d(
            channels, channels, 3, stride=1, padding=dilation, dilation=dilation,
            bias=False,
        )
        self.bn = nn.BatchNorm2d(channels)

    def forward(self, x):
        return torch.relu(x + self.bn(self.conv(x)))


class SmallDilatedEncoder(nn.Module):
    """Four conv stages; the last two trade stride for dilation (2 then 4).

    Overall stride is 8: an s x s input maps to channels x s/8 x s/8. The
    dilated stages are residual, mirroring the large residual backbone the
    preset stands in for.
    """

    def __init__(self, channels: int = 32):
        super().__init__()
        c = channels
        self.stage1 = nn.Sequential(
            nn.Conv2d(3, c // 2, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(c // 2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        self.stage2 = nn.Sequential(
            nn.Conv2d(c // 2, c, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(c),
            nn.ReLU(inplace=True),
        )
        self.stage3 = _DilatedResidualBlock(c, dilation=2)
        self.stage4 = _DilatedResidualBlock(c, dilation=4)

    def forward(self, x):
        x = self.stage1(x)
        x = self.stage2(x)
        x = self.stage3(x)
        return self.stage4(x)


def _paper_backbone(weights_path: str | None) -> nn.Module:
    # ResNet-50 trunk with the last two stages at stride 1, dilation 2 and 4,
    # which quadruples the output grid (7 -> 28 at 224 input).
    from torchvision.models import resnet50

    net = resnet50(weights=None, replace_stride_with_dilation=[False, True, True])
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state, strict=False)
    return nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool,
        net.layer1, net.layer2, net.layer3, net.layer4,
    )


class FrameEncoder(nn.Module):
    """Maps preprocessed RGB frames to (d, n, n) spatial feature maps."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        if config.preset == "desk":
            self.backbone = SmallDilatedEncoder(config.channels)
        else:
            self.backbone = _paper_backbone(config.weights_path)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Encode (3, s, s) or a batch (B, 3, s, s); s must equal input_size."""
        single = images.dim() == 3
        if single:
            images = images.unsqueeze(0)
        s = self.config.input_size
        if images.shape[-3:] != (3, s, s):
            raise ShapeError(
                f"expected (*, 3, {s}, {s}) input, got {tuple(images.shape)}"
            )
        out = self.backbone(images)
        return out.squeeze(0) if single else out


def l2_pool(x: torch.Tensor, eps: float = POOL_EPS) -> torch.Tensor:
    """Per-channel RMS over the spatial grid: sqrt(mean(x^2) + eps).

    Accepts (..., n, n) and pools the trailing two dims, so a (d, n, n)
    feature map becomes a d-vector. Unlike average pooling, the gradient
    of the output w.r.t. each cell scales with that cell's activation:
    d out_c / d x_cij = x_cij / (n^2 * out_c). RMS (rather than a plain
    sum of squares) keeps the output scale independent of n.
    """
    if not torch.isfinite(x).all():
        raise ValueError("non-finite values in feature map")
    return torch.sqrt(x.pow(2).mean(dim=(-2, -1)) + eps)


def center_crop_box(height: int, width: int) -> tuple[int, int, int]:
    """(top, left, size) of the largest centered square inside H x W."""
    size = min(height, width)
    return (height - size) // 2, (width - size) // 2, size


def preprocess_image(image: np.ndarray, config: EncoderConfig) -> torch.Tensor:
    """uint8 RGB (H, W, 3) -> normalized float tensor (3, s, s).

    Rectangular inputs are center-cropped to a square, then resized with
    bilinear interpolation to the encoder's input size.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) RGB array, got {image.shape}")
    top, left, size = center_crop_box(image.shape[0], image.shape[1])
    crop = image[top:top + size, left:left + size]
    s = config.input_size
    if crop.shape[0] != s:
        crop = np.asarray(
            Image.fromarray(crop).resize((s, s), Image.BILINEAR)
        )
    mean, std = _NORMALIZATION[config.preset]
    t = torch.from_numpy(np.array(crop, dtype=np.uint8)).float().div_(255.0)
    t = t.permute(2, 0, 1)
    t = (t - torch.tensor(mean).view(3, 1, 1)) / torch.tensor(std).view(3, 1, 1)
    return t
