"""Procedural desk-scale benchmark with analytically known interaction regions.

Rendering is flat-shaded 2D compositing with additive pixel noise; realism is
not the goal, verifiable localization is. Every object carries a protrusion
whose placement follows a per-action geometric rule (same rule across all
objects of that action), an actor blob approaches it and "activates" it
mid-clip, and the ground-truth hotspot is the smoothed protrusion mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from hotspots.data import AffordanceDataset, load_manifest, save_gt_heatmap


class GenerationError(Exception):
    """Scene geometry escaped the canvas or the config is unusable."""


@dataclass
class SynthConfig:
    image_size: int = 64
    clip_length: int = 8
    actions: tuple[str, ...] = ("press", "rotate")
    objects_per_action: int = 4
    clips_per_object: int = 40
    noise: float = 2.0
    gt_sigma_frac: float = 0.05
    body_scale: float = 1.0
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.actions = tuple(self.actions)
        if self.clip_length < 4:
            raise ValueError("clip_length must be >= 4")
        if len(self.actions) < 2:
            raise ValueError("need at least 2 actions")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("duplicate action names")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.objects_per_action < 1 or self.clips_per_object < 1:
            raise ValueError("need at least one object and one clip per action")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")


# Outward (x, y) unit direction of the interaction protrusion, per action
# index (y grows downward). All objects of one action share the same rule,
# so generalization to held-out objects is well-posed.
_RULE_DIRECTIONS = (
    (0.0, -1.0),
    (1.0, 0.0),
    (-0.7071, 0.7071),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.7071, 0.7071),
)

_BODY_KINDS = ("rect", "ellipse", "diamond")

_BACKGROUND = 38.0
_ACTOR_COLOR = np.array([242.0, 190.0, 150.0])


@dataclass
class InstanceRender:
    """Rendered layers for one clip, kept around so invariants stay checkable."""

    frames: list[np.ndarray]
    inactive: np.ndarray
    inactive_prenoise: np.ndarray
    object_mask: np.ndarray
    region_mask: np.ndarray
    actor_masks: list[np.ndarray]
    contact_frame: int  # 1-based; strictly inside (1, T)
    gt_heatmap: np.ndarray


def _instance_rng(config: SynthConfig, action_idx: int, object_idx: int, clip_idx: int):
    # Stream derived from (seed, instance coordinates): schedule-independent.
    seq = np.random.SeedSequence(config.seed, spawn_key=(action_idx, object_idx, clip_idx))
    return np.random.default_rng(seq)


def _archetype(config: SynthConfig, object_idx: int) -> dict:
    # Body appearance depends on the object index only, never on the action:
    # objects with the same index look alike across actions, so protrusion
    # placement is the sole action cue visible on an inactive image.
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(10_000, object_idx))
    )
    body_color = rng.uniform(90, 200, size=3)
    return {
        "kind": _BODY_KINDS[object_idx % len(_BODY_KINDS)],
        "body_color": body_color,
        # complementary hue, brightness pinned high so the region stays
        # salient against both the body and the dark background
        "region_color": 255.0 - 0.5 * body_color,
        "aspect": float(rng.uniform(0.8, 1.3)),
    }


def _body_mask(kind: str, cx, cy, hx, hy, xs, ys) -> np.ndarray:
    dx, dy = (xs - cx) / hx, (ys - cy) / hy
    if kind == "rect":
        return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
    if kind == "ellipse":
        return dx * dx + dy * dy <= 1.0
    return np.abs(dx) + np.abs(dy) <= 1.0


def _boundary_distance(kind: str, hx, hy, dirx, diry) -> float:
    """Distance from the body center to its boundary along a unit direction."""
    if kind == "rect":
        return 1.0 / max(abs(dirx) / hx, abs(diry) / hy)
    if kind == "ellipse":
        return 1.0 / np.sqrt((dirx / hx) ** 2 + (diry / hy) ** 2)
    return 1.0 / (abs(dirx) / hx + abs(diry) / hy)


def render_instance(
    config: SynthConfig, action_idx: int, object_idx: int, clip_idx: int
) -> InstanceRender:
    """Render one clip (frames + inactive image + masks), deterministically."""
    size = config.image_size
    rng = _instance_rng(config, action_idx, object_idx, clip_idx)
    arch = _archetype(config, object_idx)
    dirx, diry = _RULE_DIRECTIONS[action_idx % len(_RULE_DIRECTIONS)]

    hx = size * rng.uniform(0.12, 0.17) * arch["aspect"] * config.body_scale
    hy = size * rng.uniform(0.12, 0.17) / arch["aspect"] * config.body_scale
    cx = size * rng.uniform(0.32, 0.68)
    cy = size * rng.uniform(0.32, 0.68)
    region_r = size * rng.uniform(0.075, 0.095) * config.body_scale
    reach = _boundary_distance(arch["kind"], hx, hy, dirx, diry)
    rcx, rcy = cx + dirx * reach, cy + diry * reach

    for x, y, r in ((rcx, rcy, region_r), (cx, cy, 0.0)):
        if not (r <= x <= size - 1 - r and r <= y <= size - 1 - r):
            raise GenerationError(
                f"interaction region escapes the {size}x{size} canvas "
                f"(center ({x:.1f}, {y:.1f}), radius {r:.1f})"
            )

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    body = _body_mask(arch["kind"], cx, cy, hx, hy, xs, ys)
    region = (xs - rcx) ** 2 + (ys - rcy) ** 2 <= region_r**2
    object_mask = body | region
    if not region.any():
        raise GenerationError("interaction region rasterized to zero pixels")

    base = np.full((size, size, 3), _BACKGROUND)
    base[body] = arch["body_color"]

    lit_color = 0.35 * arch["region_color"] + 0.65 * 255.0
    inactive_prenoise = base.copy()
    inactive_prenoise[region] = arch["region_color"]

    T = config.clip_length
    t_lo = max(2, int(np.ceil(T / 3)))
    t_hi = min(T - 1, int(np.floor(2 * T / 3)))
    contact = int(rng.integers(t_lo, t_hi + 1))

    actor_r = size * 0.06
    actor_color = _ACTOR_COLOR + rng.uniform(-10, 10, size=3)
    touch = np.array([rcx + dirx * (region_r + actor_r), rcy + diry * (region_r + actor_r)])
    # Start fully off-canvas along the approach direction.
    exits = []
    for comp, pos in ((dirx, rcx), (diry, rcy)):
        if comp > 1e-9:
            exits.append((size - 1 - pos) / comp)
        elif comp < -1e-9:
            exits.append(-pos / comp)
    start = np.array([rcx, rcy]) + np.array([dirx, diry]) * (min(exits) + actor_r + 2.0)

    frames, actor_masks = [], []
    for t in range(1, T + 1):
        canvas = base.copy()
        canvas[region] = lit_color if t >= contact else arch["region_color"]
        if t < contact:
            u = (t - 1) / (contact - 1)
            pos = start + (touch - start) * u
        else:
            pos = touch + rng.uniform(-1.0, 1.0, size=2)
        actor = (xs - pos[0]) ** 2 + (ys - pos[1]) ** 2 <= actor_r**2
        canvas[actor] = actor_color
        if config.noise > 0:
            canvas = canvas + rng.normal(0.0, config.noise, size=canvas.shape)
        frames.append(np.clip(canvas, 0, 255).astype(np.uint8))
        actor_masks.append(actor)

    inactive = inactive_prenoise.copy()
    if config.noise > 0:
        inactive = inactive + rng.normal(0.0, config.noise, size=inactive.shape)
    inactive = np.clip(inactive, 0, 255).astype(np.uint8)

    gt = gaussian_filter(region.astype(np.float64), sigma=config.gt_sigma_frac * size)
    gt = gt / gt.sum()

    return InstanceRender(
        frames=frames,
        inactive=inactive,
        inactive_prenoise=inactive_prenoise,
        object_mask=object_mask,
        region_mask=region,
        actor_masks=actor_masks,
        contact_frame=contact,
        gt_heatmap=gt,
    )


def instance_id(config: SynthConfig, action_idx: int, object_idx: int, clip_idx: int) -> str:
    return f"{config.actions[action_idx]}-obj{object_idx}-clip{clip_idx:03d}"


def object_label(config: SynthConfig, action_idx: int, object_idx: int) -> str:
    return f"{config.actions[action_idx]}-obj{object_idx}"


def synth_generate(config: SynthConfig, out_dir: Path | str) -> AffordanceDataset:
    """Render the full benchmark to disk and load it back as a dataset.

    Emits the standard manifest format plus a gt_heatmaps.jsonl sidecar of
    16-bit grayscale ground-truth maps. Fully deterministic given the seed.
    """
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    (out_dir / "inactive").mkdir(exist_ok=True)
    (out_dir / "gt").mkdir(exist_ok=True)

    n_clips = config.clips_per_object
    n_test = int(round(n_clips * config.test_fraction))
    manifest_lines, gt_lines = [], []
    for a, action in enumerate(config.actions):
        for j in range(config.objects_per_action):
            for k in range(n_clips):
                inst_id = instance_id(config, a, j, k)
                render = render_instance(config, a, j, k)

                clip_dir = out_dir / "clips" / inst_id
                clip_dir.mkdir(exist_ok=True)
                for t, frame in enumerate(render.frames):
                    Image.fromarray(frame).save(clip_dir / f"frame_{t:03d}.png")
                Image.fromarray(render.inactive).save(out_dir / "inactive" / f"{inst_id}.png")
                save_gt_heatmap(render.gt_heatmap, out_dir / "gt" / f"{inst_id}.png")

                neg_id = instance_id(config, a, (j + 1) % config.objects_per_action, k)
                record = {
                    "id": inst_id,
                    "frames_dir": f"clips/{inst_id}",
                    "inactive_image": f"inactive/{inst_id}.png",
                    "action": action,
                    "object": object_label(config, a, j),
                    "split": "test" if k >= n_clips - n_test else "train",
                }
                if config.objects_per_action > 1:
                    record["negative_image"] = f"inactive/{neg_id}.png"
                manifest_lines.append(json.dumps(record))
                gt_lines.append(json.dumps({"id": inst_id, "gt_heatmap": f"gt/{inst_id}.png"}))

    (out_dir / "manifest.jsonl").write_text("".join(f"{l}\n" for l in manifest_lines))
    (out_dir / "gt_heatmaps.jsonl").write_text("".join(f"{l}\n" for l in gt_lines))
    actions = sorted(config.actions)
    objects = sorted(
        object_label(config, a, j)
        for a in range(len(config.actions))
        for j in range(config.objects_per_action)
    )
    (out_dir / "actions.txt").write_text("".join(f"{a}\n" for a in actions))
    (out_dir / "objects.txt").write_text("".join(f"{o}\n" for o in objects))
    return load_manifest(out_dir / "manifest.jsonl")
