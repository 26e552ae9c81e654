"""Dataset manifests, vocabularies, ground-truth heatmaps, and object splits."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class DatasetError(Exception):
    """Base class for dataset construction problems."""


class ManifestError(DatasetError):
    """A manifest line is malformed or references a missing file."""


class VocabularyError(DatasetError):
    """A label is unknown to, or duplicated in, a vocabulary."""


class Vocab:
    """Ordered label list with a contiguous label <-> index bijection."""

    def __init__(self, labels):
        labels = list(labels)
        if len(labels) != len(set(labels)):
            raise VocabularyError("duplicate labels in vocabulary")
        self.labels = labels
        self._index = {label: i for i, label in enumerate(labels)}

    @classmethod
    def from_labels(cls, labels) -> "Vocab":
        """Deterministic vocabulary: unique labels in sorted order."""
        return cls(sorted(set(labels)))

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise VocabularyError(f"unknown label {label!r}") from None

    def label(self, index: int) -> str:
        return self.labels[index]

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.labels == other.labels

    def __repr__(self):
        return f"Vocab({self.labels!r})"


@dataclass(frozen=True)
class TrainInstance:
    """One (video clip, inactive image, afforded action) training unit."""

    id: str
    frames_dir: Path
    inactive_image: Path
    action: int
    object: int
    negative_image: Path | None = None
    keypoints: tuple[tuple[float, float], ...] | None = None
    gt_heatmap: Path | None = None
    split: str | None = None

    def frame_paths(self) -> list[Path]:
        """Frame files in zero-padded filename order."""
        return sorted(p for p in self.frames_dir.iterdir() if p.is_file())


@dataclass
class AffordanceDataset:
    root: Path
    actions: Vocab
    objects: Vocab
    instances: list[TrainInstance] = field(default_factory=list)

    def __len__(self):
        return len(self.instances)

    def by_id(self, instance_id: str) -> TrainInstance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)

    def __eq__(self, other):
        return (
            isinstance(other, AffordanceDataset)
            and self.actions == other.actions
            and self.objects == other.objects
            and self.instances == other.instances
        )


def load_image(path: Path) -> np.ndarray:
    """Decode to a uint8 RGB (H, W, 3) array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _read_vocab_file(path: Path) -> Vocab:
    labels = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    return Vocab(labels)


def _write_vocab_file(vocab: Vocab, path: Path):
    path.write_text("".join(f"{label}\n" for label in vocab))


MANIFEST_KEYS = {
    "id", "frames_dir", "inactive_image", "action", "object",
    "negative_image", "keypoints", "split",
}


def load_manifest(path: Path | str) -> AffordanceDataset:
    """Load a JSON-lines manifest into a validated dataset.

    Relative paths resolve against the manifest's directory. Vocabularies
    come from ``actions.txt`` / ``objects.txt`` beside the manifest when
    present (labels must then be known), else from the manifest's labels in
    sorted order. A ``gt_heatmaps.jsonl`` sidecar, when present, attaches
    ground-truth heatmap paths by instance id.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent.resolve()

    def resolve(rel: str) -> Path:
        return Path(os.path.normpath(root / rel))

    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from None
        unknown = set(rec) - MANIFEST_KEYS
        if unknown:
            raise ManifestError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
        for key in ("id", "frames_dir", "inactive_image", "action", "object"):
            if key not in rec:
                raise ManifestError(f"{path}:{lineno}: missing key {key!r}")
        records.append(rec)
    if not records:
        raise ManifestError(f"manifest {path} contains no instances")

    ids = [r["id"] for r in records]
    if len(ids) != len(set(ids)):
        raise ManifestError(f"duplicate instance ids in {path}")

    action_file, object_file = root / "actions.txt", root / "objects.txt"
    if action_file.exists():
        actions = _read_vocab_file(action_file)
    else:
        actions = Vocab.from_labels(r["action"] for r in records)
    if object_file.exists():
        objects = _read_vocab_file(object_file)
    else:
        objects = Vocab.from_labels(r["object"] for r in records)

    gt_paths: dict[str, Path] = {}
    sidecar = root / "gt_heatmaps.jsonl"
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            gt_paths[rec["id"]] = resolve(rec["gt_heatmap"])

    instances = []
    for rec in records:
        frames_dir = resolve(rec["frames_dir"])
        if not frames_dir.is_dir():
            raise ManifestError(
                f"instance {rec['id']!r}: frames directory not found: {frames_dir}"
            )
        inactive = resolve(rec["inactive_image"])
        if not inactive.is_file():
            raise ManifestError(
                f"instance {rec['id']!r}: inactive image not found: {inactive}"
            )
        negative = None
        if rec.get("negative_image") is not None:
            negative = resolve(rec["negative_image"])
            if not negative.is_file():
                raise ManifestError(
                    f"instance {rec['id']!r}: negative image not found: {negative}"
                )
        keypoints = None
        if rec.get("keypoints") is not None:
            pts = rec["keypoints"]
            if not pts:
                raise ManifestError(f"instance {rec['id']!r}: empty keypoint list")
            keypoints = tuple((float(x), float(y)) for x, y in pts)
        inst = TrainInstance(
            id=rec["id"],
            frames_dir=frames_dir,
            inactive_image=inactive,
            action=actions.index(rec["action"]),
            object=objects.index(rec["object"]),
            negative_image=negative,
            keypoints=keypoints,
            gt_heatmap=gt_paths.get(rec["id"]),
            split=rec.get("split"),
        )
        if not inst.frame_paths():
            raise ManifestError(f"instance {rec['id']!r}: no frames in {frames_dir}")
        instances.append(inst)

    # negatives must depict a different object class; checkable whenever the
    # referenced file is some instance's inactive image
    object_of = {inst.inactive_image: inst.object for inst in instances}
    for inst in instances:
        owner = object_of.get(inst.negative_image)
        if owner is not None and owner == inst.object:
            raise ManifestError(
                f"instance {inst.id!r}: negative image depicts its own object class"
            )
    return AffordanceDataset(root=root, actions=actions, objects=objects, instances=instances)


def save_manifest(dataset: AffordanceDataset, path: Path | str):
    """Serialize back to the JSON-lines manifest format (plus vocab files).

    Paths are written relative to the manifest directory; a load of the
    result reproduces the dataset exactly.
    """
    path = Path(path)
    root = path.parent.resolve()
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    gt_lines = []
    for inst in dataset.instances:
        rec = {
            "id": inst.id,
            "frames_dir": os.path.relpath(inst.frames_dir, root),
            "inactive_image": os.path.relpath(inst.inactive_image, root),
            "action": dataset.actions.label(inst.action),
            "object": dataset.objects.label(inst.object),
        }
        if inst.negative_image is not None:
            rec["negative_image"] = os.path.relpath(inst.negative_image, root)
        if inst.keypoints is not None:
            rec["keypoints"] = [[x, y] for x, y in inst.keypoints]
        if inst.split is not None:
            rec["split"] = inst.split
        lines.append(json.dumps(rec))
        if inst.gt_heatmap is not None:
            gt_lines.append(json.dumps({
                "id": inst.id,
                "gt_heatmap": os.path.relpath(inst.gt_heatmap, root),
            }))
    path.write_text("".join(f"{line}\n" for line in lines))
    _write_vocab_file(dataset.actions, root / "actions.txt")
    _write_vocab_file(dataset.objects, root / "objects.txt")
    if gt_lines:
        (root / "gt_heatmaps.jsonl").write_text("".join(f"{l}\n" for l in gt_lines))


def keypoints_to_heatmap(points, shape: tuple[int, int], sigma: float | None = None) -> np.ndarray:
    """Sum of isotropic Gaussians centered at the points, normalized to sum 1.

    sigma defaults to 5% of min(H, W). Points are (x, y) pixel coordinates
    and must lie inside the image.
    """
    h, w = shape
    if sigma is None:
        sigma = 0.05 * min(h, w)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    points = list(points)
    if not points:
        raise ValueError("empty keypoint list")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    heat = np.zeros((h, w), dtype=np.float64)
    for x, y in points:
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"keypoint ({x}, {y}) outside {h}x{w} image")
        heat += np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma * sigma))
    return heat / heat.sum()


def union_gt_heatmaps(maps) -> np.ndarray:
    """Pixelwise maximum across the maps, renormalized to sum 1.

    The max keeps every annotated mode at full strength without
    double-weighting regions several annotators agree on.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if not maps:
        raise ValueError("empty heatmap list")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"heatmap shapes differ: {shape} vs {m.shape}")
    merged = np.maximum.reduce(maps)
    total = merged.sum()
    if total <= 0:
        raise ValueError("union of all-zero heatmaps cannot be normalized")
    return merged / total


def load_gt_heatmap(path: Path) -> np.ndarray:
    """Read a 16-bit grayscale ground-truth PNG, normalized to sum 1."""
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.float64)
    total = arr.sum()
    if total <= 0:
        raise DatasetError(f"all-zero ground-truth heatmap: {path}")
    return arr / total


def save_gt_heatmap(heatmap: np.ndarray, path: Path):
    """Write a normalized map as 16-bit grayscale, scaled so the peak is 65535."""
    peak = float(heatmap.max())
    if peak <= 0:
        raise ValueError("cannot save an all-zero heatmap")
    arr = (heatmap / peak * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(arr).save(path)


def gt_heatmap_for(instance: TrainInstance, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Ground truth for one instance: stored heatmap file, else keypoints."""
    if instance.gt_heatmap is not None:
        return load_gt_heatmap(instance.gt_heatmap)
    if instance.keypoints is not None:
        if shape is None:
            shape = load_image(instance.inactive_image).shape[:2]
        return keypoints_to_heatmap(instance.keypoints, shape)
    raise DatasetError(f"instance {instance.id!r} has no ground-truth annotation")


def sample_negative(
    dataset: AffordanceDataset, object_index: int, rng: np.random.Generator
) -> TrainInstance:
    """Uniform draw of an instance whose object class differs from the query."""
    candidates = [inst for inst in dataset.instances if inst.object != object_index]
    if not candidates:
        raise DatasetError(
            "no inactive image of a different object class is available; "
            "disable the triplet loss variant for this dataset"
        )
    return candidates[int(rng.integers(len(candidates)))]


@dataclass(frozen=True)
class SplitSpec:
    """Familiar/unfamiliar object partition plus train/test instance ids."""

    familiar: tuple[str, ...]
    unfamiliar: tuple[str, ...]
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def make_novel_split(
    dataset: AffordanceDataset,
    unfamiliar,
    seed: int = 0,
) -> SplitSpec:
    """Partition object classes into familiar/unfamiliar and split instances.

    unfamiliar is either a list of object labels or a count to sample with
    the seed. Training keeps only familiar-object instances not marked as
    ``test`` in the manifest; the test side holds every unfamiliar-object
    instance plus familiar instances the manifest marks ``test``. An empty
    unfamiliar list therefore reduces to the manifest's own standard split.
    """
    all_objects = list(dataset.objects)
    if isinstance(unfamiliar, int):
        if not 0 <= unfamiliar < len(all_objects):
            raise ValueError("unfamiliar count must leave at least one familiar object")
        rng = np.random.default_rng(seed)
        unfamiliar = sorted(rng.choice(all_objects, size=unfamiliar, replace=False).tolist())
    unfamiliar = sorted(set(unfamiliar))
    for label in unfamiliar:
        if label not in set(all_objects):
            raise VocabularyError(f"unfamiliar object {label!r} not in vocabulary")
    familiar = [o for o in all_objects if o not in set(unfamiliar)]
    if not familiar:
        raise ValueError("cannot hold out every object class: training set would be empty")

    unfamiliar_set = set(unfamiliar)
    train_ids, test_ids = [], []
    for inst in dataset.instances:
        label = dataset.objects.label(inst.object)
        if label in unfamiliar_set:
            test_ids.append(inst.id)
        elif inst.split == "test":
            test_ids.append(inst.id)
        else:
            train_ids.append(inst.id)
    return SplitSpec(
        familiar=tuple(familiar),
        unfamiliar=tuple(unfamiliar),
        train_ids=tuple(train_ids),
        test_ids=tuple(test_ids),
    )
