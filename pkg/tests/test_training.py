import dataclasses

import pytest
import torch

from hotspots.model import AffordanceModel
from hotspots.training import (
    CHECKPOINT_VERSION,
    CheckpointError,
    TrainConfig,
    TrainingError,
    _check_finite,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)


def desk_config(**overrides):
    base = dict(
        preset="desk", input_size=64, encoder_channels=16, hidden_size=24,
        batch_size=4, epochs=2, seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_documented_defaults(self):
        config = TrainConfig()
        assert (config.lambda_cls, config.lambda_ant, config.lambda_aux) == (1.0, 0.1, 1.0)
        assert config.learning_rate == 1e-4
        assert config.weight_decay == 5e-4
        assert config.chunk_length == 16

    def test_paper_preset_geometry(self):
        config = TrainConfig.paper_defaults()
        assert config.batch_size == 128
        assert config.input_size == 224
        assert config.encoder_channels == 2048
        assert config.hidden_size == 2048

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lambda_ant=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(loss_variant="contrastive")
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestTotalLoss:
    def test_reduces_to_classification_when_weights_zero(self, tiny_dataset):
        config = desk_config(lambda_ant=0.0, lambda_aux=0.0)
        torch.manual_seed(0)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        total, breakdown = total_loss(tiny_dataset.instances[0], model, config)
        assert total.item() == pytest.approx(breakdown["L_cls"], abs=1e-6)
        assert breakdown["L_ant"] == 0.0 and breakdown["L_aux"] == 0.0

    def test_breakdown_resums_to_total(self, tiny_dataset):
        config = desk_config(lambda_ant=0.3, lambda_aux=0.7)
        torch.manual_seed(1)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        total, breakdown = total_loss(tiny_dataset.instances[1], model, config)
        resummed = (
            config.lambda_cls * breakdown["L_cls"]
            + config.lambda_ant * breakdown["L_ant"]
            + config.lambda_aux * breakdown["L_aux"]
        )
        assert total.item() == pytest.approx(resummed, abs=1e-6)
        assert breakdown["total"] == pytest.approx(resummed, abs=1e-6)

    def test_triplet_without_negative_rejected(self, tiny_dataset):
        config = desk_config(loss_variant="triplet")
        torch.manual_seed(2)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        instance = dataclasses.replace(tiny_dataset.instances[0], negative_image=None)
        with pytest.raises(TrainingError, match="negative"):
            total_loss(instance, model, config)

    def test_triplet_variant_runs_with_negative(self, tiny_dataset):
        config = desk_config(loss_variant="triplet")
        torch.manual_seed(3)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        total, breakdown = total_loss(tiny_dataset.instances[0], model, config)
        assert breakdown["L_ant"] >= 0.0


class TestTrain:
    def test_overfit_smoke(self, tiny_dataset):
        ids = [i.id for i in tiny_dataset.instances[:4]]
        config = desk_config(epochs=10, learning_rate=1e-3, batch_size=4)
        model, history = train(tiny_dataset, config, train_ids=ids)
        assert history[-1]["total"] < history[0]["total"]

    def test_same_seed_identical_loss_logs(self, tiny_dataset, tmp_path):
        config = desk_config()
        train(tiny_dataset, config, out_dir=tmp_path / "a")
        train(tiny_dataset, config, out_dir=tmp_path / "b")
        log_a = (tmp_path / "a" / "loss_log.csv").read_text()
        log_b = (tmp_path / "b" / "loss_log.csv").read_text()
        assert log_a == log_b

    def test_loss_log_columns(self, tiny_dataset, tmp_path):
        train(tiny_dataset, desk_config(epochs=1), out_dir=tmp_path)
        header = (tmp_path / "loss_log.csv").read_text().splitlines()[0]
        assert header == "epoch,step,L_cls,L_ant,L_aux,total"

    def test_empty_split_rejected(self, tiny_dataset):
        with pytest.raises(TrainingError, match="empty"):
            train(tiny_dataset, desk_config(), train_ids=[])

    def test_every_parameter_group_gets_gradient(self, tiny_dataset):
        config = desk_config(loss_variant="l2")
        torch.manual_seed(4)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        total, _ = total_loss(tiny_dataset.instances[0], model, config)
        total.backward()
        groups = {
            "encoder": model.encoder,
            "anticipation": model.anticipation,
            "aggregator": model.aggregator,
            "classifier": model.classifier,
        }
        for name, module in groups.items():
            grads = [p.grad for p in module.parameters() if p.grad is not None]
            assert grads, f"{name} received no gradient"
            assert any(g.abs().max() > 0 for g in grads), f"{name} gradient is zero"

    def test_nonfinite_loss_aborts_with_term_name(self):
        with pytest.raises(TrainingError, match="L_ant"):
            _check_finite("L_ant", torch.tensor(float("nan")))

    def test_stop_accuracy_short_circuits(self, tiny_dataset):
        config = desk_config(epochs=10, stop_accuracy=0.0)
        _, history = train(tiny_dataset, config)
        assert len(history) == 1


class TestCheckpoint:
    def test_round_trip_forward_bitwise(self, tiny_dataset, tmp_path):
        config = desk_config(epochs=1)
        model, _ = train(tiny_dataset, config)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path, config=config, actions=tiny_dataset.actions,
                        objects=tiny_dataset.objects, epoch=0)
        reloaded, payload = load_checkpoint(path)
        torch.manual_seed(9)
        probe = torch.randn(3, 64, 64)
        with torch.no_grad():
            assert torch.equal(model.inactive_scores(probe), reloaded.inactive_scores(probe))
        assert payload["actions"] == list(tiny_dataset.actions)

    def test_config_survives(self, tiny_dataset, tmp_path):
        config = desk_config(lambda_ant=0.25, lambda_aux=0.5)
        torch.manual_seed(5)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path, config=config, actions=tiny_dataset.actions,
                        objects=tiny_dataset.objects)
        _, payload = load_checkpoint(path)
        assert payload["config"]["lambda_ant"] == 0.25
        assert payload["config"]["lambda_aux"] == 0.5

    def test_truncated_file_rejected(self, tiny_dataset, tmp_path):
        config = desk_config()
        torch.manual_seed(6)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path, config=config, actions=tiny_dataset.actions,
                        objects=tiny_dataset.objects)
        clipped = path.read_bytes()[: path.stat().st_size // 2]
        path.write_bytes(clipped)
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tiny_dataset, tmp_path):
        config = desk_config()
        torch.manual_seed(7)
        model = AffordanceModel(config.encoder_config(), len(tiny_dataset.actions),
                                config.hidden_size)
        path = tmp_path / "ckpt.pt"
        payload = {
            "format_version": CHECKPOINT_VERSION + 1,
            "state_dict": model.state_dict(),
            "config": dataclasses.asdict(config),
            "actions": list(tiny_dataset.actions),
            "objects": list(tiny_dataset.objects),
        }
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="incompatible"):
            load_checkpoint(path)
