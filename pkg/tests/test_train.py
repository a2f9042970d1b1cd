import json
from dataclasses import replace

import numpy as np
import pytest
import torch
from PIL import Image

import mvseg.train as train_mod
from mvseg.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mvseg.config import LossConfig, TrainConfig, toy_config
from mvseg.data import DatasetSpec, read_rgb, synthetic_shapes
from mvseg.evaluation import DataError
from mvseg.model import MultiViewSegmenter
from mvseg.train import NumericError, predict, predict_image, quantize, train

SMALL = dict(view_size=(32, 32))


@pytest.fixture
def dataset(tmp_path):
    spec = synthetic_shapes(tmp_path / "data", count=4, size=(64, 64))
    return DatasetSpec(spec.image_dir, spec.mask_dir, (64, 64))


def _cfg(tmp_path, **kw):
    base = dict(checkpoint_dir=str(tmp_path / "run"), max_steps=4)
    base.update(kw)
    return TrainConfig(**base)


def test_log_header_echoes_recipe(tmp_path, dataset):
    result = train(dataset, toy_config(**SMALL), _cfg(tmp_path, max_steps=1))
    header = json.loads(result.log_path.read_text().splitlines()[0])
    assert header["kind"] == "header"
    assert header["lambda_aux"] == 0.3
    assert header["lr_new"] == 2e-4 and header["lr_pretrained"] == 2e-5
    assert header["epochs"] == 80 and header["batch_size"] == 2
    assert result.checkpoint.exists()


def test_step_zero_deterministic(tmp_path, dataset):
    a = train(dataset, toy_config(**SMALL), _cfg(tmp_path / "a", max_steps=1))
    b = train(dataset, toy_config(**SMALL), _cfg(tmp_path / "b", max_steps=1))
    assert a.step_losses == b.step_losses
    c = train(dataset, toy_config(**SMALL), _cfg(tmp_path / "c", max_steps=1, seed=5))
    assert c.step_losses != a.step_losses


def test_epoch_loss_decreases(tmp_path, dataset):
    result = train(dataset, toy_config(**SMALL), _cfg(tmp_path, max_steps=None, epochs=5))
    epochs = result.epoch_records
    assert len(epochs) == 5
    assert epochs[4]["mean_loss"] < epochs[0]["mean_loss"]


def test_resolution_mismatch_rejected(tmp_path, dataset):
    with pytest.raises(DataError):
        train(replace(dataset, working_resolution=(32, 32)), toy_config(**SMALL), _cfg(tmp_path))


def test_non_finite_loss_aborts(tmp_path, dataset, monkeypatch):
    monkeypatch.setattr(train_mod, "total_loss", lambda *a, **k: torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(NumericError, match="step 0"):
        train(dataset, toy_config(**SMALL), _cfg(tmp_path))


def test_periodic_checkpoints(tmp_path, dataset):
    train(dataset, toy_config(**SMALL), _cfg(tmp_path, max_steps=None, epochs=2, checkpoint_every=1))
    assert (tmp_path / "run" / "epoch_0001.ckpt").exists() and (tmp_path / "run" / "final.ckpt").exists()


def test_quantize_rule():
    assert quantize(np.array([0.0, 0.5, 1.0, 0.001, 0.999])).tolist() == [0, 128, 255, 0, 255]


@pytest.fixture
def checkpoint(tmp_path):
    model = MultiViewSegmenter(toy_config(**SMALL))
    return save_checkpoint(model, tmp_path / "m.ckpt"), model


def test_predict_size_determinism_and_round_trip(tmp_path, dataset, checkpoint):
    path, model = checkpoint
    a = predict(path, dataset.image_dir, tmp_path / "a")
    b = predict(path, dataset.image_dir, tmp_path / "b")
    assert [p.name for p in a] == [f"shape_{i:02d}.png" for i in range(4)]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
        assert Image.open(pa).size == (64, 64) and Image.open(pa).mode == "L"
    model.eval()
    in_memory = predict_image(model, read_rgb(dataset.image_dir / "shape_00.png"))
    on_disk = np.asarray(Image.open(a[0]), dtype=np.float64) / 255.0
    assert np.max(np.abs(on_disk - in_memory)) <= 1 / 510 + 1e-12


def test_zero_logit_model_predicts_128(tmp_path, dataset):
    model = MultiViewSegmenter(toy_config(**SMALL))
    with torch.no_grad():
        model.drm.head_out.weight.zero_()
        model.drm.head_out.bias.zero_()
    path = save_checkpoint(model, tmp_path / "z.ckpt")
    for p in predict(path, dataset.image_dir, tmp_path / "out"):
        assert np.all(np.asarray(Image.open(p)) == 128)


def test_unreadable_image_skipped(tmp_path, dataset, checkpoint):
    (dataset.image_dir / "broken.png").write_bytes(b"garbage")
    with pytest.warns(UserWarning, match="broken"):
        written = predict(checkpoint[0], dataset.image_dir, tmp_path / "out")
    assert len(written) == 4


def test_predict_config_mismatch(tmp_path, dataset, checkpoint):
    with pytest.raises(CheckpointError):
        predict(checkpoint[0], dataset.image_dir, tmp_path / "out", toy_config(view_size=(64, 64)))


def test_global_supervision_uses_lambda(tmp_path, dataset):
    result = train(dataset, toy_config(**SMALL, supervise_global_view=True), _cfg(tmp_path, max_steps=1))
    assert np.isfinite(result.step_losses[0])


def test_trained_checkpoint_loads(tmp_path, dataset):
    result = train(dataset, toy_config(**SMALL), _cfg(tmp_path, max_steps=2), LossConfig(lambda_aux=0.0))
    loaded = load_checkpoint(result.checkpoint)
    for (n, a), (_, b) in zip(result.model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), n
