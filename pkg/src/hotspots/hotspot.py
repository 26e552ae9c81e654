"""Gradient-weighted activation mapping for interaction hotspots."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from hotspots.encoder import center_crop_box, preprocess_image
from hotspots.model import AffordanceModel

# Overlay colors per action, cycled when there are more actions than entries.
ACTION_PALETTE = (
    (255, 0, 0),
    (0, 255, 0),
    (0, 0, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
)


@dataclass
class HotspotStack:
    """Per-action hotspot maps for one source image.

    raw holds the |A| x n x n maps straight off the feature grid; maps holds
    the same maps bilinearly upsampled to the source image size. Neither is
    normalized; entries are non-negative by construction.
    """

    image_id: str
    raw: np.ndarray
    maps: np.ndarray


def weighted_activation_map(grad: torch.Tensor, activation: torch.Tensor) -> torch.Tensor:
    """ReLU(grad * activation), accumulated over channels: (d, n, n) -> (n, n).

    Linear in the gradient: scaling grad by a positive constant scales the
    map by the same constant.
    """
    return torch.relu(grad * activation).sum(dim=0)


def hotspot_map(
    model: AffordanceModel,
    image: torch.Tensor,
    action: int,
    through_anticipation: bool = True,
) -> torch.Tensor:
    """Raw n x n hotspot map for one action on a preprocessed inactive image.

    Grid cells are weighted by the gradient of the action score taken at the
    encoder output, i.e. the gradient runs classifier -> aggregator -> pool
    -> anticipation net -> encoder features. through_anticipation=False stops
    at the anticipated features instead (the ablation path); the maps differ
    because only the default path is aligned with the input image.
    """
    if not 0 <= action < model.num_actions:
        raise IndexError(f"action {action} out of range for {model.num_actions} actions")
    was_training = model.training
    model.eval()
    try:
        features = model.encoder(image).detach().requires_grad_(True)
        anticipated = model.anticipation(features)
        probe = features if through_anticipation else anticipated
        scores = model.single_step_scores(anticipated)
        (grad,) = torch.autograd.grad(scores[action], probe)
        return weighted_activation_map(grad, probe.detach())
    finally:
        if was_training:
            model.train()


def hotspot_stack(
    model: AffordanceModel,
    image: torch.Tensor,
    out_size: tuple[int, int],
    image_id: str = "",
    through_anticipation: bool = True,
) -> HotspotStack:
    """One raw map per action, plus bilinear upsamplings to out_size."""
    was_training = model.training
    model.eval()
    try:
        features = model.encoder(image).detach().requires_grad_(True)
        anticipated = model.anticipation(features)
        probe = features if through_anticipation else anticipated
        scores = model.single_step_scores(anticipated)
        raw = []
        for a in range(model.num_actions):
            (grad,) = torch.autograd.grad(
                scores[a], probe, retain_graph=a < model.num_actions - 1
            )
            raw.append(weighted_activation_map(grad, probe.detach()))
    finally:
        if was_training:
            model.train()
    raw_t = torch.stack(raw)
    maps = F.interpolate(
        raw_t.unsqueeze(0), size=out_size, mode="bilinear", align_corners=False
    ).squeeze(0)
    return HotspotStack(image_id=image_id, raw=raw_t.numpy(), maps=maps.numpy())


def stack_for_image(
    model: AffordanceModel,
    image: np.ndarray,
    image_id: str = "",
    through_anticipation: bool = True,
) -> HotspotStack:
    """Hotspot stack for a uint8 RGB (H, W, 3) array, at source resolution.

    The model sees the centered square crop; its maps are upsampled to the
    crop and pasted back, with zeros outside the crop where the model saw
    nothing.
    """
    h, w = image.shape[:2]
    top, left, size = center_crop_box(h, w)
    tensor = preprocess_image(image, model.encoder_config)
    stack = hotspot_stack(
        model, tensor, (size, size), image_id=image_id,
        through_anticipation=through_anticipation,
    )
    if (top, left, size) == (0, 0, h) and w == h:
        return stack
    full = np.zeros((model.num_actions, h, w), dtype=stack.maps.dtype)
    full[:, top:top + size, left:left + size] = stack.maps
    return HotspotStack(image_id=image_id, raw=stack.raw, maps=full)


def video_hotspots(
    model: AffordanceModel,
    frames: list[np.ndarray],
    through_anticipation: bool = True,
) -> list[HotspotStack]:
    """Per-frame hotspot stacks; each frame is treated as an inactive image."""
    return [
        stack_for_image(model, frame, image_id=f"frame_{i:03d}",
                        through_anticipation=through_anticipation)
        for i, frame in enumerate(frames)
    ]


def _to_png16(map2d: np.ndarray) -> Image.Image:
    peak = float(map2d.max())
    scaled = map2d / peak if peak > 0 else map2d
    return Image.fromarray((scaled * 65535.0 + 0.5).astype(np.uint16))


def export_stack(
    stack: HotspotStack,
    out_dir: Path,
    action_labels: list[str],
    image: np.ndarray | None = None,
) -> dict:
    """Write per-action PNGs, raw float32 binaries, a sidecar, and an overlay.

    PNGs are 16-bit grayscale, max-normalized per map; .raw files hold the
    unnormalized map as little-endian float32. Returns the sidecar dict.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for a, label in enumerate(action_labels):
        m = stack.maps[a]
        _to_png16(m).save(out_dir / f"{label}_map.png")
        raw_path = out_dir / f"{label}_map.raw"
        raw_path.write_bytes(m.astype("<f4").tobytes())
        entries.append({
            "action": label,
            "shape": list(m.shape),
            "png": f"{label}_map.png",
            "raw": f"{label}_map.raw",
        })
    sidecar = {"image": stack.image_id, "maps": entries}
    (out_dir / "maps.json").write_text(json.dumps(sidecar, indent=2))
    if image is not None:
        overlay = render_overlay(image, stack.maps)
        Image.fromarray(overlay).save(out_dir / "overlay.png")
    return sidecar


def render_overlay(image: np.ndarray, maps: np.ndarray, base_weight: float = 0.4) -> np.ndarray:
    """Dim grayscale of the image with one palette color per action map."""
    gray = image.astype(np.float32).mean(axis=2, keepdims=True)
    out = np.repeat(gray, 3, axis=2) * base_weight
    for a in range(maps.shape[0]):
        m = maps[a]
        peak = m.max()
        if peak > 0:
            m = m / peak
        color = np.asarray(ACTION_PALETTE[a % len(ACTION_PALETTE)], dtype=np.float32)
        out += m[:, :, None] * color[None, None, :] * (1.0 - base_weight)
    return np.clip(out, 0, 255).astype(np.uint8)
