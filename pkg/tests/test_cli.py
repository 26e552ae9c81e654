import json
from pathlib import Path

import pytest

from hotspots.cli import main

REPO_ROOT = Path(__file__).resolve().parent.parent
TINY_LIKE_CLIPS = 4


def write_synth_config(path, **overrides):
    config = {
        "image_size": 64,
        "clip_length": 6,
        "actions": ["press", "rotate"],
        "objects_per_action": 2,
        "clips_per_object": 4,
        "seed": 5,
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


def write_train_config(path, dataset, **overrides):
    config = {
        "dataset": str(dataset),
        "preset": "desk",
        "input_size": 64,
        "encoder_channels": 16,
        "hidden_size": 24,
        "batch_size": 8,
        "epochs": 2,
        "seed": 1,
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train once; downstream commands reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    synth_cfg = write_synth_config(root / "synth.json")
    assert main(["synth", "--config", str(synth_cfg), "--out", str(root / "data")]) == 0
    train_cfg = write_train_config(root / "train.json", root / "data" / "manifest.jsonl")
    assert main(["train", "--config", str(train_cfg), "--out", str(root / "run")]) == 0
    return root


class TestSynthCommand:
    def test_outputs_on_disk(self, pipeline):
        out = pipeline / "data"
        assert (out / "manifest.jsonl").exists()
        assert (out / "gt_heatmaps.jsonl").exists()
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert "config_hash" in manifest and "versions" in manifest

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        config = write_synth_config(tmp_path / "synth.json", wrong_key=3)
        assert main(["synth", "--config", str(config), "--out", str(tmp_path / "o")]) == 2

    def test_bad_flag_is_usage_error(self):
        assert main(["synth", "--wat"]) == 2

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["transmogrify"]) == 2


class TestTrainCommand:
    def test_artifacts(self, pipeline):
        run = pipeline / "run"
        assert (run / "ckpt.pt").exists()
        assert (run / "loss_log.csv").exists()
        manifest = json.loads((run / "run_manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["epochs"] == 2

    def test_missing_dataset_is_runtime_error(self, tmp_path):
        config = write_train_config(tmp_path / "t.json", tmp_path / "absent.jsonl")
        assert main(["train", "--config", str(config), "--out", str(tmp_path / "o")]) == 1

    def test_config_without_dataset_is_usage_error(self, tmp_path):
        config = tmp_path / "t.json"
        config.write_text(json.dumps({"epochs": 1}))
        assert main(["train", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


class TestEvalCommand:
    def test_metrics_files_and_reproducibility(self, pipeline):
        ckpt = pipeline / "run" / "ckpt.pt"
        for out in ("e1", "e2"):
            code = main([
                "eval", "--checkpoint", str(ckpt), "--out", str(pipeline / out),
                "--set", 'methods=["hotspot","center_bias"]',
            ])
            assert code == 0
        for method in ("hotspot", "center_bias"):
            a = (pipeline / "e1" / f"metrics_{method}.csv").read_bytes()
            b = (pipeline / "e2" / f"metrics_{method}.csv").read_bytes()
            assert a == b
            assert (pipeline / "e1" / f"metrics_{method}.json").exists()

    def test_unknown_method_rejected(self, pipeline):
        ckpt = pipeline / "run" / "ckpt.pt"
        code = main([
            "eval", "--checkpoint", str(ckpt), "--out", str(pipeline / "e3"),
            "--set", 'methods=["psychic"]',
        ])
        assert code == 2

    def test_novel_split_requires_heldout_training(self, pipeline):
        ckpt = pipeline / "run" / "ckpt.pt"
        code = main([
            "eval", "--checkpoint", str(ckpt), "--out", str(pipeline / "e4"),
            "--split", "novel",
        ])
        assert code == 2


class TestHotspotCommand:
    def test_file_counts(self, pipeline):
        ckpt = pipeline / "run" / "ckpt.pt"
        image = next((pipeline / "data" / "inactive").glob("*.png"))
        out = pipeline / "maps"
        assert main([
            "hotspot", "--checkpoint", str(ckpt), "--image", str(image),
            "--out", str(out),
        ]) == 0
        n_actions = 2
        assert len(list(out.glob("*_map.png"))) == n_actions
        assert len(list(out.glob("*_map.raw"))) == n_actions
        assert len(list(out.glob("overlay.png"))) == 1
        assert (out / "maps.json").exists()

    def test_video_hotspot_per_frame_dirs(self, pipeline):
        ckpt = pipeline / "run" / "ckpt.pt"
        clip = next((pipeline / "data" / "clips").iterdir())
        out = pipeline / "videomaps"
        assert main([
            "video-hotspot", "--checkpoint", str(ckpt), "--clip", str(clip),
            "--out", str(out),
        ]) == 0
        frames = sorted(p for p in clip.iterdir())
        dirs = sorted(p for p in out.iterdir() if p.is_dir())
        assert len(dirs) == len(frames)
        assert (dirs[0] / "overlay.png").exists()


class TestClusterCommand:
    def test_outputs(self, pipeline):
        ckpt = pipeline / "run" / "ckpt.pt"
        out = pipeline / "clusters"
        assert main(["cluster", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        for space in ("inactive", "active"):
            tree = json.loads((out / f"dendrogram_{space}.json").read_text())
            assert isinstance(tree, list) and len(tree) == 3
            table = (out / f"neighbors_{space}.csv").read_text().splitlines()
            assert table[0] == "class,neighbor,distance"
            assert len(table) > 1


class TestReportCommand:
    def test_passes_on_shipped_docs(self, capsys):
        assert main(["report", "--docs", str(REPO_ROOT / "docs")]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_fails_on_missing_docs(self, tmp_path):
        assert main(["report", "--docs", str(tmp_path / "nowhere")]) == 1


class TestOutputIsolation:
    def test_commands_write_only_under_out(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = write_synth_config(tmp_path / "synth.json", clips_per_object=2)
        assert main(["synth", "--config", "synth.json", "--out", "outdir"]) == 0
        entries = {p.name for p in tmp_path.iterdir()}
        assert entries == {"synth.json", "outdir"}


class TestNovelFlow:
    def test_train_with_holdout_then_novel_eval(self, tmp_path):
        synth_cfg = write_synth_config(tmp_path / "synth.json", objects_per_action=3)
        assert main(["synth", "--config", str(synth_cfg), "--out", str(tmp_path / "data")]) == 0
        train_cfg = write_train_config(
            tmp_path / "train.json", tmp_path / "data" / "manifest.jsonl",
            unfamiliar_objects=["press-obj2", "rotate-obj2"], epochs=1,
        )
        assert main(["train", "--config", str(train_cfg), "--out", str(tmp_path / "run")]) == 0
        code = main([
            "eval", "--checkpoint", str(tmp_path / "run" / "ckpt.pt"),
            "--out", str(tmp_path / "novel"), "--split", "novel",
            "--set", 'methods=["center_bias"]',
        ])
        assert code == 0
        rows = (tmp_path / "novel" / "metrics_center_bias.csv").read_text().splitlines()
        # rows cover exactly the held-out-object instances
        assert len(rows) - 1 == 2 * TINY_LIKE_CLIPS
