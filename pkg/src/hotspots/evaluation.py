"""Evaluation protocol, baseline heatmap generators, and embedding analysis."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from hotspots.data import (
    AffordanceDataset,
    DatasetError,
    gt_heatmap_for,
    load_image,
    union_gt_heatmaps,
)
from hotspots.encoder import EncoderConfig, center_crop_box, l2_pool, preprocess_image
from hotspots.hotspot import hotspot_map
from hotspots.metrics import auc_j, center_bias, kld, sim
from hotspots.model import AffordanceModel


class EvaluationError(RuntimeError):
    """The requested evaluation has nothing to score or lacks annotations."""


@dataclass
class MetricsRow:
    image_id: str
    action: str
    kld: float
    sim: float
    auc_j: float


@dataclass
class MetricsReport:
    """Per-(image, action) scores plus their arithmetic means."""

    method: str
    split: str
    rows: list[MetricsRow]

    def aggregates(self) -> dict:
        return {
            "method": self.method,
            "split": self.split,
            "count": len(self.rows),
            "kld": sum(r.kld for r in self.rows) / len(self.rows),
            "sim": sum(r.sim for r in self.rows) / len(self.rows),
            "auc_j": sum(r.auc_j for r in self.rows) / len(self.rows),
        }

    def to_csv(self, path: Path | str):
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(("image", "action", "kld", "sim", "auc_j"))
            for r in self.rows:
                writer.writerow((r.image_id, r.action, r.kld, r.sim, r.auc_j))

    def to_json(self, path: Path | str):
        Path(path).write_text(json.dumps(self.aggregates(), indent=2))


def _paste_to_image(map_square: np.ndarray, image_shape) -> np.ndarray:
    """Resize a model-crop map onto the source image canvas (zeros outside)."""
    h, w = image_shape[:2]
    top, left, size = center_crop_box(h, w)
    t = torch.from_numpy(np.ascontiguousarray(map_square, dtype=np.float32))
    resized = F.interpolate(
        t[None, None], size=(size, size), mode="bilinear", align_corners=False
    )[0, 0].numpy()
    if (h, w) == (size, size):
        return resized
    full = np.zeros((h, w), dtype=np.float32)
    full[top:top + size, left:left + size] = resized
    return full


def hotspot_predictor(model: AffordanceModel, through_anticipation: bool = True):
    """Heatmap generator backed by gradient-weighted activation mapping."""

    def predict(image: np.ndarray, action: int) -> np.ndarray:
        tensor = preprocess_image(image, model.encoder_config)
        raw = hotspot_map(model, tensor, action, through_anticipation=through_anticipation)
        return _paste_to_image(raw.numpy(), image.shape)

    return predict


def center_bias_predictor(sigma: float | None = None):
    """Action-agnostic centered Gaussian baseline."""

    def predict(image: np.ndarray, action: int) -> np.ndarray:
        return center_bias(image.shape[0], image.shape[1], sigma)

    return predict


def gradcam_components(grad: torch.Tensor, activation: torch.Tensor) -> torch.Tensor:
    """Classic activation map: spatially averaged gradients weight channels.

    ReLU applies after the channel sum, unlike the hotspot map which keeps
    only per-cell positive contributions before summing.
    """
    weights = grad.mean(dim=(-2, -1), keepdim=True)
    return torch.relu((weights * activation).sum(dim=0))


def gradcam_map(model: AffordanceModel, image: torch.Tensor, action: int) -> torch.Tensor:
    """Grad-cam on the plain recognition path (no anticipation step).

    Intended for trunks trained with zero anticipation/auxiliary weights;
    the map comes from one aggregator step on the encoder output.
    """
    if not 0 <= action < model.num_actions:
        raise IndexError(f"action {action} out of range for {model.num_actions} actions")
    was_training = model.training
    model.eval()
    try:
        features = model.encoder(image).detach().requires_grad_(True)
        scores = model.single_step_scores(features)
        (grad,) = torch.autograd.grad(scores[action], features)
        return gradcam_components(grad, features.detach())
    finally:
        if was_training:
            model.train()


def gradcam_predictor(model: AffordanceModel):
    def predict(image: np.ndarray, action: int) -> np.ndarray:
        tensor = preprocess_image(image, model.encoder_config)
        raw = gradcam_map(model, tensor, action)
        return _paste_to_image(raw.numpy(), image.shape)

    return predict


def evaluate(
    predict,
    dataset: AffordanceDataset,
    instance_ids,
    method: str = "method",
    split: str = "all",
) -> MetricsReport:
    """Score a heatmap generator against ground truth on the given instances.

    ``predict(image, action_index)`` must return a non-negative (H, W) map at
    the source image's resolution. Instances sharing an (inactive image,
    action) pair are collapsed into one row with their ground-truth maps
    merged by pixelwise max, so each pair counts once. Rows are ordered by
    (image, action); dataset order does not matter.
    """
    by_id = {inst.id: inst for inst in dataset.instances}
    groups: dict[tuple[str, int], list] = {}
    for instance_id in instance_ids:
        if instance_id not in by_id:
            raise EvaluationError(f"unknown instance id {instance_id!r}")
        inst = by_id[instance_id]
        try:
            image_id = str(inst.inactive_image.relative_to(dataset.root))
        except ValueError:
            image_id = str(inst.inactive_image)
        groups.setdefault((image_id, inst.action), []).append(inst)
    if not groups:
        raise EvaluationError("no evaluable (image, action) pairs")

    rows = []
    for (image_id, action) in sorted(groups, key=lambda k: (k[0], k[1])):
        members = groups[(image_id, action)]
        image = load_image(members[0].inactive_image)
        gt = union_gt_heatmaps([
            gt_heatmap_for(inst, image.shape[:2]) for inst in members
        ])
        pred = predict(image, action)
        rows.append(MetricsRow(
            image_id=image_id,
            action=dataset.actions.label(action),
            kld=kld(pred, gt),
            sim=sim(pred, gt),
            auc_j=auc_j(pred, gt),
        ))
    return MetricsReport(method=method, split=split, rows=rows)


class Img2Heatmap(nn.Module):
    """Fully convolutional encoder-decoder baseline (strongly supervised).

    Three conv+pool stages mirrored by bilinear-upsampling+conv stages; one
    sigmoid channel per action.
    """

    def __init__(self, num_actions: int, base: int = 16):
        super().__init__()
        self.num_actions = num_actions
        self.encoder = nn.Sequential(
            nn.Conv2d(3, base, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2),
            nn.Conv2d(base, base * 2, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2),
            nn.Conv2d(base * 2, base * 4, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2),
        )
        self.decoder = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(base * 4, base * 2, 3, padding=1), nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(base * 2, base, 3, padding=1), nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(base, num_actions, 3, padding=1),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        single = images.dim() == 3
        if single:
            images = images.unsqueeze(0)
        out = torch.sigmoid(self.decoder(self.encoder(images)))
        return out.squeeze(0) if single else out


def _gt_target(inst, image: np.ndarray, input_size: int) -> torch.Tensor:
    """Max-normalized GT heatmap resized to the model's square input."""
    gt = gt_heatmap_for(inst, image.shape[:2])
    top, left, size = center_crop_box(*image.shape[:2])
    crop = gt[top:top + size, left:left + size]
    t = torch.from_numpy(np.ascontiguousarray(crop, dtype=np.float32))
    t = F.interpolate(t[None, None], size=(input_size, input_size),
                      mode="bilinear", align_corners=False)[0, 0]
    peak = float(t.max())
    if peak <= 0:
        raise DatasetError(f"instance {inst.id!r}: empty ground truth after cropping")
    return t / peak


def img2heatmap_train(
    dataset: AffordanceDataset,
    instance_ids,
    input_size: int = 64,
    steps: int = 500,
    learning_rate: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> Img2Heatmap:
    """Fit the supervised baseline with per-pixel binary cross-entropy.

    Every instance must carry a ground-truth heatmap; the loss is applied to
    the channel of the instance's action.
    """
    torch.manual_seed(seed)
    by_id = {inst.id: inst for inst in dataset.instances}
    images, targets, actions = [], [], []
    for instance_id in instance_ids:
        inst = by_id[instance_id]
        if inst.gt_heatmap is None and inst.keypoints is None:
            raise DatasetError(
                f"instance {inst.id!r} has no ground-truth heatmap; "
                "the supervised baseline cannot train on it"
            )
        image = load_image(inst.inactive_image)
        scaled = preprocess_image(image, EncoderConfig(input_size=input_size))
        images.append(scaled)
        targets.append(_gt_target(inst, image, input_size))
        actions.append(inst.action)
    images_t = torch.stack(images)
    targets_t = torch.stack(targets)
    actions_t = torch.tensor(actions)

    net = Img2Heatmap(len(dataset.actions))
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)
    n = len(images)
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, n, size=min(batch_size, n)))
        pred = net(images_t[idx])
        picked = pred[torch.arange(len(idx)), actions_t[idx]]
        loss = F.binary_cross_entropy(picked, targets_t[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    net.eval()
    return net


def img2heatmap_bce(net: Img2Heatmap, dataset, instance_ids, input_size: int = 64) -> float:
    """Mean per-pixel BCE of the trained baseline over the instances."""
    by_id = {inst.id: inst for inst in dataset.instances}
    losses = []
    with torch.no_grad():
        for instance_id in instance_ids:
            inst = by_id[instance_id]
            image = load_image(inst.inactive_image)
            pred = net(preprocess_image(image, EncoderConfig(input_size=input_size)))
            target = _gt_target(inst, image, input_size)
            losses.append(float(F.binary_cross_entropy(pred[inst.action], target)))
    return sum(losses) / len(losses)


def img2heatmap_predictor(net: Img2Heatmap, input_size: int = 64):
    def predict(image: np.ndarray, action: int) -> np.ndarray:
        with torch.no_grad():
            maps = net(preprocess_image(image, EncoderConfig(input_size=input_size)))
        return _paste_to_image(maps[action].numpy(), image.shape)

    return predict


def img2heatmap_stack(net: Img2Heatmap, image: np.ndarray, input_size: int = 64,
                      image_id: str = ""):
    """All per-action baseline maps for one image, at source resolution."""
    from hotspots.hotspot import HotspotStack

    with torch.no_grad():
        maps = net(preprocess_image(image, EncoderConfig(input_size=input_size))).numpy()
    full = np.stack([_paste_to_image(maps[a], image.shape) for a in range(len(maps))])
    return HotspotStack(image_id=image_id, raw=maps, maps=full)


@dataclass
class EmbeddingTable:
    """Per-object-class average embeddings in both feature spaces."""

    classes: list[str]
    inactive: np.ndarray  # (k, d): encoder features, pooled
    active: np.ndarray    # (k, d): anticipated features, pooled

    def vectors(self, space: str) -> np.ndarray:
        if space not in ("inactive", "active"):
            raise ValueError(f"unknown embedding space {space!r}")
        return getattr(self, space)


def build_embedding_table(
    model: AffordanceModel, dataset: AffordanceDataset, instance_ids=None
) -> EmbeddingTable:
    """Average pooled embeddings per object class, inactive and active.

    Classes with no instances among the ids are dropped with a warning.
    """
    if instance_ids is None:
        instances = dataset.instances
    else:
        wanted = set(instance_ids)
        instances = [inst for inst in dataset.instances if inst.id in wanted]
    sums: dict[int, list] = {}
    model.eval()
    with torch.no_grad():
        for inst in instances:
            tensor = preprocess_image(load_image(inst.inactive_image), model.encoder_config)
            features = model.encoder(tensor)
            pooled_inactive = l2_pool(features).numpy()
            pooled_active = l2_pool(model.anticipation(features)).numpy()
            entry = sums.setdefault(inst.object, [0, 0.0, 0.0])
            entry[0] += 1
            entry[1] = entry[1] + pooled_inactive
            entry[2] = entry[2] + pooled_active
    classes, inactive, active = [], [], []
    for index, label in enumerate(dataset.objects):
        if index not in sums:
            warnings.warn(f"object class {label!r} has no instances; excluded")
            continue
        count, si, sa = sums[index]
        classes.append(label)
        inactive.append(si / count)
        active.append(sa / count)
    if len(classes) < 2:
        raise EvaluationError("need at least 2 object classes with instances")
    return EmbeddingTable(
        classes=classes, inactive=np.stack(inactive), active=np.stack(active)
    )


def nearest_neighbors(table: EmbeddingTable, label: str, space: str, k: int = 1):
    """k nearest classes by Euclidean distance, never including the query."""
    vectors = table.vectors(space)
    query = table.classes.index(label)
    distances = np.linalg.norm(vectors - vectors[query], axis=1)
    order = [i for i in np.argsort(distances, kind="stable") if i != query]
    return [(table.classes[i], float(distances[i])) for i in order[:k]]


def cluster_objects(table: EmbeddingTable, space: str):
    """Average-linkage agglomerative clustering as a nested-list dendrogram.

    Leaves are class labels; every merge is ``[left, right, distance]``.
    Distance ties break toward the earliest cluster indices, so the result
    is deterministic.
    """
    vectors = table.vectors(space)
    nodes: list = list(table.classes)
    sizes = [1] * len(nodes)
    dist = np.linalg.norm(vectors[:, None, :] - vectors[None, :, :], axis=2)
    active = list(range(len(nodes)))
    while len(active) > 1:
        best = None
        for ai in range(len(active)):
            for aj in range(ai + 1, len(active)):
                d = dist[active[ai], active[aj]]
                if best is None or d < best[0]:
                    best = (d, ai, aj)
        d, ai, aj = best
        i, j = active[ai], active[aj]
        merged = [nodes[i], nodes[j], float(d)]
        # UPGMA update: size-weighted average distance to every other cluster.
        for other in active:
            if other in (i, j):
                continue
            new_d = (sizes[i] * dist[i, other] + sizes[j] * dist[j, other]) / (
                sizes[i] + sizes[j]
            )
            dist[i, other] = dist[other, i] = new_d
        nodes[i] = merged
        sizes[i] = sizes[i] + sizes[j]
        active.pop(aj)
    return nodes[active[0]]
