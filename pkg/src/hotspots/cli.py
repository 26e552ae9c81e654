"""Command-line entry point: synth, train, eval, hotspot, video-hotspot, cluster, report."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import torch

import hotspots
from hotspots.data import load_image, load_manifest, make_novel_split
from hotspots.evaluation import (
    center_bias_predictor,
    cluster_objects,
    build_embedding_table,
    evaluate,
    gradcam_predictor,
    hotspot_predictor,
    img2heatmap_predictor,
    img2heatmap_train,
    nearest_neighbors,
)
from hotspots.hotspot import export_stack, stack_for_image
from hotspots.synth import SynthConfig, synth_generate
from hotspots.training import TrainConfig, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, malformed config, unknown keys."""


def _parse_override(text: str):
    if "=" not in text:
        raise UsageError(f"override {text!r} is not of the form key=value")
    key, _, value = text.partition("=")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _load_config_dict(path: str | None, overrides) -> dict:
    raw = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise UsageError(f"config file not found: {config_path}")
        try:
            raw = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {config_path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise UsageError(f"config {config_path} must hold a JSON object")
    for item in overrides or []:
        key, value = _parse_override(item)
        raw[key] = value
    return raw


def _build_dataclass(cls, raw: dict, extra_keys=()):
    """Instantiate a config dataclass, rejecting unknown keys.

    Returns (instance, extras) where extras holds the allowed non-dataclass
    keys (e.g. the dataset path in a training config).
    """
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known - set(extra_keys)
    if unknown:
        raise UsageError(
            f"unknown config keys {sorted(unknown)}; known keys: "
            f"{sorted(known | set(extra_keys))}"
        )
    extras = {k: raw[k] for k in extra_keys if k in raw}
    try:
        instance = cls(**{k: v for k, v in raw.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}")
    return instance, extras


def _write_run_manifest(out_dir: Path, command: str, config: dict, seed):
    canonical = json.dumps(config, sort_keys=True)
    payload = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "hotspots": hotspots.__version__,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(payload, indent=2))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_dataset_path(extras: dict, config_path: str | None) -> Path:
    if "dataset" not in extras:
        raise UsageError("config must name a 'dataset' manifest path")
    dataset = Path(extras["dataset"])
    if not dataset.is_absolute() and config_path is not None:
        dataset = Path(config_path).parent / dataset
    return dataset


def _cmd_synth(args) -> int:
    raw = _load_config_dict(args.config, args.set)
    if args.seed is not None:
        raw["seed"] = args.seed
    config, _ = _build_dataclass(SynthConfig, raw)
    out = _out_dir(args)
    dataset = synth_generate(config, out)
    _write_run_manifest(out, "synth", dataclasses.asdict(config), config.seed)
    print(f"generated {len(dataset)} instances under {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    raw = _load_config_dict(args.config, args.set)
    if args.seed is not None:
        raw["seed"] = args.seed
    config, extras = _build_dataclass(
        TrainConfig, raw, extra_keys=("dataset", "unfamiliar_objects")
    )
    dataset_path = _resolve_dataset_path(extras, args.config)
    dataset = load_manifest(dataset_path)
    unfamiliar = extras.get("unfamiliar_objects", [])
    split = make_novel_split(dataset, unfamiliar, seed=config.seed)

    out = _out_dir(args)
    model, history = train(dataset, config, train_ids=split.train_ids, out_dir=out)
    save_checkpoint(
        model,
        out / "ckpt.pt",
        config=config,
        actions=dataset.actions,
        objects=dataset.objects,
        epoch=history[-1]["epoch"],
        extra={
            "dataset": str(dataset_path.resolve()),
            "unfamiliar_objects": list(split.unfamiliar),
        },
    )
    run_config = dataclasses.asdict(config)
    run_config["dataset"] = str(dataset_path.resolve())
    run_config["unfamiliar_objects"] = list(split.unfamiliar)
    _write_run_manifest(out, "train", run_config, config.seed)
    last = history[-1]
    print(
        f"trained {len(history)} epochs; final loss {last['total']:.4f}, "
        f"train accuracy {last['accuracy']:.3f}"
    )
    return EXIT_OK


EVAL_METHODS = ("hotspot", "hotspot_at_anticipated", "gradcam", "center_bias", "img2heatmap")


@dataclasses.dataclass
class EvalConfig:
    methods: tuple[str, ...] = ("hotspot", "center_bias")
    center_sigma: float | None = None
    img2heatmap_steps: int = 500
    dataset: str | None = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        unknown = set(self.methods) - set(EVAL_METHODS)
        if unknown:
            raise ValueError(f"unknown eval methods {sorted(unknown)}")


def _cmd_eval(args) -> int:
    raw = _load_config_dict(args.config, args.set)
    config, _ = _build_dataclass(EvalConfig, raw)
    model, payload = load_checkpoint(args.checkpoint)
    dataset_path = config.dataset or payload["extra"].get("dataset")
    if dataset_path is None:
        raise UsageError("checkpoint calls out no dataset; pass one via --set dataset=...")
    dataset = load_manifest(dataset_path)

    if args.split == "novel":
        unfamiliar = payload["extra"].get("unfamiliar_objects") or []
        if not unfamiliar:
            raise UsageError(
                "checkpoint was not trained with held-out objects; "
                "novel-split evaluation is undefined"
            )
        split = make_novel_split(dataset, unfamiliar)
        unfamiliar_set = set(split.unfamiliar)
        ids = [
            i for i in split.test_ids
            if dataset.objects.label(dataset.by_id(i).object) in unfamiliar_set
        ]
    else:
        split = make_novel_split(dataset, [])
        ids = list(split.test_ids)
    if not ids:
        raise UsageError(f"split {args.split!r} holds no test instances")

    out = _out_dir(args)
    input_size = model.encoder_config.input_size
    for method in config.methods:
        if method == "hotspot":
            predictor = hotspot_predictor(model)
        elif method == "hotspot_at_anticipated":
            predictor = hotspot_predictor(model, through_anticipation=False)
        elif method == "gradcam":
            predictor = gradcam_predictor(model)
        elif method == "center_bias":
            predictor = center_bias_predictor(config.center_sigma)
        else:
            net = img2heatmap_train(
                dataset, split.train_ids, input_size=input_size,
                steps=config.img2heatmap_steps,
            )
            predictor = img2heatmap_predictor(net, input_size=input_size)
        report = evaluate(predictor, dataset, ids, method=method, split=args.split)
        report.to_csv(out / f"metrics_{method}.csv")
        report.to_json(out / f"metrics_{method}.json")
        agg = report.aggregates()
        print(
            f"{method:>24s}  kld {agg['kld']:.4f}  sim {agg['sim']:.4f}  "
            f"auc_j {agg['auc_j']:.4f}  ({agg['count']} pairs)"
        )
    run_config = dataclasses.asdict(config)
    run_config.update(checkpoint=str(args.checkpoint), split=args.split)
    _write_run_manifest(out, "eval", run_config, payload["config"]["seed"])
    return EXIT_OK


def _cmd_hotspot(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    image = load_image(Path(args.image))
    stack = stack_for_image(model, image, image_id=Path(args.image).name)
    out = _out_dir(args)
    export_stack(stack, out, payload["actions"], image=image)
    _write_run_manifest(
        out, "hotspot",
        {"checkpoint": str(args.checkpoint), "image": str(args.image)},
        payload["config"]["seed"],
    )
    print(f"wrote {len(payload['actions'])} maps + overlay under {out}")
    return EXIT_OK


def _cmd_video_hotspot(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    clip_dir = Path(args.clip)
    frame_paths = sorted(p for p in clip_dir.iterdir() if p.is_file())
    if not frame_paths:
        raise UsageError(f"no frames in {clip_dir}")
    out = _out_dir(args)
    for index, path in enumerate(frame_paths):
        image = load_image(path)
        stack = stack_for_image(model, image, image_id=path.name)
        export_stack(stack, out / f"frame_{index:03d}", payload["actions"], image=image)
    _write_run_manifest(
        out, "video-hotspot",
        {"checkpoint": str(args.checkpoint), "clip": str(args.clip)},
        payload["config"]["seed"],
    )
    print(f"wrote hotspot stacks for {len(frame_paths)} frames under {out}")
    return EXIT_OK


def _cmd_cluster(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    dataset_path = payload["extra"].get("dataset")
    if dataset_path is None:
        raise UsageError("checkpoint records no dataset path")
    dataset = load_manifest(dataset_path)
    table = build_embedding_table(model, dataset)
    out = _out_dir(args)
    for space in ("inactive", "active"):
        tree = cluster_objects(table, space)
        (out / f"dendrogram_{space}.json").write_text(json.dumps(tree, indent=2))
        with open(out / f"neighbors_{space}.csv", "w") as handle:
            handle.write("class,neighbor,distance\n")
            for label in table.classes:
                for neighbor, distance in nearest_neighbors(
                    table, label, space, k=min(3, len(table.classes) - 1)
                ):
                    handle.write(f"{label},{neighbor},{distance}\n")
    _write_run_manifest(
        out, "cluster", {"checkpoint": str(args.checkpoint)}, payload["config"]["seed"]
    )
    print(f"wrote dendrograms and neighbor tables for {len(table.classes)} classes")
    return EXIT_OK


def _cmd_report(args) -> int:
    from hotspots.doclint import doc_lint

    report = doc_lint(Path(args.docs))
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hotspots",
        description="Interaction-hotspot training, inference, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **flags):
        p = sub.add_parser(name)
        for flag, options in flags.items():
            p.add_argument(flag, **options)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.set_defaults(func=func)
        return p

    add("synth", _cmd_synth,
        **{"--config": dict(help="SynthConfig JSON"),
           "--out": dict(required=True),
           "--seed": dict(type=int, default=None)})
    add("train", _cmd_train,
        **{"--config": dict(required=True, help="TrainConfig JSON plus 'dataset'"),
           "--out": dict(required=True),
           "--seed": dict(type=int, default=None)})
    add("eval", _cmd_eval,
        **{"--checkpoint": dict(required=True),
           "--config": dict(help="EvalConfig JSON"),
           "--out": dict(required=True),
           "--split": dict(choices=("standard", "novel"), default="standard")})
    add("hotspot", _cmd_hotspot,
        **{"--checkpoint": dict(required=True),
           "--image": dict(required=True),
           "--out": dict(required=True)})
    add("video-hotspot", _cmd_video_hotspot,
        **{"--checkpoint": dict(required=True),
           "--clip": dict(required=True, help="directory of frame images"),
           "--out": dict(required=True)})
    add("cluster", _cmd_cluster,
        **{"--checkpoint": dict(required=True),
           "--out": dict(required=True)})
    add("report", _cmd_report,
        **{"--docs": dict(default="docs", help="documentation directory to lint")})
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
