"""Joint training of encoder, aggregator, classifier, and anticipation net."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from hotspots.anticipation import feature_match_loss, triplet_match_loss
from hotspots.data import AffordanceDataset, TrainInstance, load_image, sample_negative
from hotspots.encoder import EncoderConfig, l2_pool, preprocess_image
from hotspots.model import AffordanceModel
from hotspots.temporal import prefix_losses

CHECKPOINT_VERSION = 1

LOSS_LOG_COLUMNS = ("epoch", "step", "L_cls", "L_ant", "L_aux", "total")


class TrainingError(RuntimeError):
    """Training cannot start or produced a non-finite loss."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable or incompatible."""


@dataclass
class TrainConfig:
    """Optimization settings; optimizer is Adam throughout.

    The ``paper`` preset pins the full-scale geometry (224 input, 2048
    channels and hidden units); ``desk`` keeps everything small enough for a
    CPU. Loss weights default to (1, 0.1, 1) for the classification,
    anticipation-matching, and auxiliary terms.
    """

    lambda_cls: float = 1.0
    lambda_ant: float = 0.1
    lambda_aux: float = 1.0
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 16
    chunk_length: int = 16
    epochs: int = 20
    seed: int = 0
    loss_variant: str = "l2"
    preset: str = "desk"
    input_size: int = 112
    encoder_channels: int = 32
    hidden_size: int = 64
    grad_clip: float = 10.0
    stop_accuracy: float | None = None

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_ant, self.lambda_aux) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1 or self.chunk_length < 1 or self.epochs < 1:
            raise ValueError("batch_size, chunk_length, and epochs must be >= 1")
        if self.loss_variant not in ("l2", "triplet"):
            raise ValueError(f"unknown loss_variant {self.loss_variant!r}")
        if self.preset == "paper":
            self.input_size = 224
            self.encoder_channels = 2048
            self.hidden_size = 2048
        elif self.preset != "desk":
            raise ValueError(f"unknown preset {self.preset!r}")

    @classmethod
    def paper_defaults(cls, **overrides) -> "TrainConfig":
        """Full-scale configuration (batch 128, 2048-d features and state)."""
        overrides.setdefault("batch_size", 128)
        return cls(preset="paper", **overrides)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            preset=self.preset, channels=self.encoder_channels, input_size=self.input_size
        )


@dataclass
class _Loaded:
    instance: TrainInstance
    frames: torch.Tensor    # (T, 3, s, s)
    inactive: torch.Tensor  # (3, s, s)


def _load_instance(instance: TrainInstance, enc: EncoderConfig) -> _Loaded:
    frames = torch.stack([
        preprocess_image(load_image(p), enc) for p in instance.frame_paths()
    ])
    inactive = preprocess_image(load_image(instance.inactive_image), enc)
    return _Loaded(instance=instance, frames=frames, inactive=inactive)


def _check_finite(name: str, value: torch.Tensor):
    if not torch.isfinite(value).all():
        raise TrainingError(f"non-finite {name} encountered; aborting")


def _batch_losses(
    model: AffordanceModel,
    batch: list[_Loaded],
    config: TrainConfig,
    negatives: list[torch.Tensor] | None = None,
):
    """Weighted loss for one batch plus the unweighted per-term breakdown.

    Frames, inactive images, and negatives share a single encoder forward.
    The active-frame target is selected without gradients and detached, so
    the matching loss trains the anticipation branch rather than the video
    branch.
    """
    use_ant = config.lambda_ant > 0
    use_aux = config.lambda_aux > 0
    lengths = [loaded.frames.shape[0] for loaded in batch]
    actions = torch.tensor([loaded.instance.action for loaded in batch])

    images = [torch.cat([loaded.frames for loaded in batch])]
    if use_ant or use_aux:
        images.append(torch.stack([loaded.inactive for loaded in batch]))
        if negatives is not None:
            images.append(torch.stack(negatives))
    features = model.encoder(torch.cat(images))

    n_frames = sum(lengths)
    frame_features = features[:n_frames]
    pooled = l2_pool(frame_features)
    sequences = list(pooled.split(lengths))
    padded = torch.nn.utils.rnn.pad_sequence(sequences, batch_first=True)
    states, _ = model.aggregator(padded, chunk_size=config.chunk_length)
    final = states[torch.arange(len(batch)), torch.tensor(lengths) - 1]
    loss_cls = F.cross_entropy(model.classifier(final), actions)
    _check_finite("L_cls", loss_cls)

    zero = torch.zeros((), dtype=loss_cls.dtype)
    loss_ant, loss_aux = zero, zero
    if use_ant or use_aux:
        inactive_features = features[n_frames:n_frames + len(batch)]
        anticipated = model.anticipation(inactive_features)
        if use_ant:
            offsets = np.cumsum([0] + lengths[:-1])
            with torch.no_grad():
                t_star = [
                    int(torch.argmin(prefix_losses(
                        states[i, :lengths[i]], int(actions[i]), model.classifier
                    )).item()) + 1
                    for i in range(len(batch))
                ]
            active_idx = torch.tensor([off + t - 1 for off, t in zip(offsets, t_star)])
            active = frame_features[active_idx].detach()
            if config.loss_variant == "l2":
                loss_ant = feature_match_loss(anticipated, active)
            else:
                if negatives is None:
                    raise TrainingError(
                        "triplet loss variant requires a negative inactive image"
                    )
                negative_features = features[n_frames + len(batch):]
                loss_ant = triplet_match_loss(
                    active, anticipated, model.anticipation(negative_features)
                )
            _check_finite("L_ant", loss_ant)
        if use_aux:
            loss_aux = model.aux_loss(anticipated, actions)
            _check_finite("L_aux", loss_aux)

    total = (
        config.lambda_cls * loss_cls
        + config.lambda_ant * loss_ant
        + config.lambda_aux * loss_aux
    )
    _check_finite("total loss", total)
    breakdown = {
        "L_cls": float(loss_cls.detach()),
        "L_ant": float(loss_ant.detach()),
        "L_aux": float(loss_aux.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown


def total_loss(instance: TrainInstance, model: AffordanceModel, config: TrainConfig):
    """Combined weighted loss for one instance, with a per-term breakdown.

    The breakdown holds the unweighted terms; the weighted sum equals
    ``total``. The triplet variant requires the instance's stored negative
    image.
    """
    loaded = _load_instance(instance, model.encoder_config)
    negatives = None
    if config.lambda_ant > 0 and config.loss_variant == "triplet":
        if instance.negative_image is None:
            raise TrainingError(
                f"instance {instance.id!r} has no negative image; "
                "the triplet loss variant needs one"
            )
        negatives = [preprocess_image(load_image(instance.negative_image), model.encoder_config)]
    return _batch_losses(model, [loaded], config, negatives)


def _train_accuracy(model: AffordanceModel, loaded: list[_Loaded], config: TrainConfig) -> float:
    was_training = model.training
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(loaded), config.batch_size):
            batch = loaded[start:start + config.batch_size]
            lengths = [l.frames.shape[0] for l in batch]
            pooled = l2_pool(model.encoder(torch.cat([l.frames for l in batch])))
            padded = torch.nn.utils.rnn.pad_sequence(
                list(pooled.split(lengths)), batch_first=True
            )
            states, _ = model.aggregator(padded, chunk_size=config.chunk_length)
            final = states[torch.arange(len(batch)), torch.tensor(lengths) - 1]
            predicted = model.classifier(final).argmax(dim=1)
            actions = torch.tensor([l.instance.action for l in batch])
            correct += int((predicted == actions).sum())
    if was_training:
        model.train()
    return correct / len(loaded)


def train(
    dataset: AffordanceDataset,
    config: TrainConfig,
    train_ids=None,
    out_dir: Path | str | None = None,
    model: AffordanceModel | None = None,
):
    """Optimize the joint model; returns (model, history).

    history is a list of per-epoch dicts with the mean loss terms and the
    train-set classification accuracy; the per-step loss log is written to
    ``<out_dir>/loss_log.csv`` when an output directory is given. Training
    order, negative draws, and parameter init all derive from the seed, so
    a rerun reproduces the loss log exactly. Instances whose manifest split
    is ``test`` are excluded unless train_ids says otherwise.
    """
    torch.manual_seed(config.seed)
    if model is None:
        model = AffordanceModel(
            config.encoder_config(), len(dataset.actions), config.hidden_size
        )
    if train_ids is None:
        instances = [inst for inst in dataset.instances if inst.split != "test"]
    else:
        wanted = set(train_ids)
        instances = [inst for inst in dataset.instances if inst.id in wanted]
    if not instances:
        raise TrainingError("empty training split")

    enc = config.encoder_config()
    loaded = [_load_instance(inst, enc) for inst in instances]
    by_path = {l.instance.inactive_image: l.inactive for l in loaded}
    train_view = AffordanceDataset(
        root=dataset.root, actions=dataset.actions, objects=dataset.objects,
        instances=instances,
    )
    use_triplet = config.loss_variant == "triplet" and config.lambda_ant > 0

    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    log_rows = []
    history = []
    model.train()
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(epoch, 0))
        )
        negative_rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(epoch, 1))
        )
        order = shuffle_rng.permutation(len(loaded))
        epoch_terms = []
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [loaded[i] for i in order[start:start + config.batch_size]]
            negatives = None
            if use_triplet:
                negatives = []
                for item in batch:
                    neg = sample_negative(train_view, item.instance.object, negative_rng)
                    tensor = by_path.get(neg.inactive_image)
                    if tensor is None:
                        tensor = preprocess_image(load_image(neg.inactive_image), enc)
                        by_path[neg.inactive_image] = tensor
                    negatives.append(tensor)
            loss, breakdown = _batch_losses(model, batch, config, negatives)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            log_rows.append((epoch, step, breakdown["L_cls"], breakdown["L_ant"],
                             breakdown["L_aux"], breakdown["total"]))
            epoch_terms.append(breakdown)

        accuracy = _train_accuracy(model, loaded, config)
        summary = {
            key: sum(t[key] for t in epoch_terms) / len(epoch_terms)
            for key in ("L_cls", "L_ant", "L_aux", "total")
        }
        summary.update(epoch=epoch, accuracy=accuracy)
        history.append(summary)
        if config.stop_accuracy is not None and accuracy >= config.stop_accuracy:
            break

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_loss_log(log_rows, out_dir / "loss_log.csv")
    model.eval()
    return model, history


def write_loss_log(rows, path: Path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(LOSS_LOG_COLUMNS)
        for row in rows:
            writer.writerow(row)


def save_checkpoint(
    model: AffordanceModel,
    path: Path | str,
    *,
    config: TrainConfig,
    actions,
    objects,
    epoch: int = 0,
    extra: dict | None = None,
):
    """Single-file checkpoint: parameters, vocabularies, config, RNG state."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "state_dict": model.state_dict(),
        "config": asdict(config),
        "actions": list(actions),
        "objects": list(objects),
        "epoch": epoch,
        "torch_rng_state": torch.get_rng_state(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: Path | str):
    """Rebuild the model from a checkpoint; returns (model, payload).

    The reloaded model reproduces the saved model's forward outputs exactly.
    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a model checkpoint")
    version = payload["format_version"]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format {version} is incompatible with supported "
            f"version {CHECKPOINT_VERSION}"
        )
    config = TrainConfig(**payload["config"])
    model = AffordanceModel(
        config.encoder_config(), len(payload["actions"]), config.hidden_size
    )
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
