import dataclasses

import pytest
import torch

from mvseg.config import (
    ConfigError,
    LossConfig,
    ModelConfig,
    TrainConfig,
    config_to_dict,
    config_to_text,
    default_dtype,
    load_config,
    model_config_from_dict,
    parse_config_text,
    toy_config,
)


def test_recipe_defaults():
    t = TrainConfig()
    assert (t.epochs, t.batch_size, t.lr_new, t.lr_pretrained_divisor) == (80, 2, 2e-4, 10.0)
    assert ModelConfig().freeze_backbone is True
    assert ModelConfig().view_size == (512, 512)
    assert LossConfig().lambda_aux == 0.3


@pytest.mark.parametrize(
    "kwargs",
    [
        {"view_size": (48, 64)},
        {"stage_dims": (8, 16, 16)},
        {"stage_dims": (9, 16, 16, 32)},
        {"reduction_factor": 3},
        {"neck_dim": 15},
        {"num_output_tokens": 0},
    ],
)
def test_model_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        toy_config(**kwargs)


def test_train_config_rejects():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_new=0)
    with pytest.raises(ConfigError):
        TrainConfig(crop_scale=(0.9, 0.5))


def test_text_round_trip(tmp_path):
    model, loss, train = toy_config(drm_width=6), LossConfig(lambda_aux=0.5), TrainConfig(max_steps=7, seed=3)
    text = config_to_text(model, loss, train)
    path = tmp_path / "cfg.txt"
    path.write_text(text)
    assert load_config(path) == (model, loss, train)


def test_every_key_documented():
    text = config_to_text(ModelConfig(), LossConfig(), TrainConfig())
    lines = text.splitlines()
    for cls in (ModelConfig, LossConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            assert f.metadata.get("doc"), f.name
    for i, line in enumerate(lines):
        if "=" in line and not line.startswith("#"):
            assert lines[i - 1].startswith("# ") and len(lines[i - 1]) > 3


def test_parse_bare_and_grouped_keys():
    groups = parse_config_text("seed = 5\nmodel.seed = 9\nview_size = 64, 64  # comment\ndrm_width = none\n")
    assert groups["train"]["seed"] == 5
    assert groups["model"]["seed"] == 9
    assert groups["model"]["view_size"] == (64, 64)
    assert groups["model"]["drm_width"] is None


@pytest.mark.parametrize("text", ["nokey", "bogus = 1", "loss.view_size = 1", "adapter_enabled = maybe", "xx.seed = 1"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_dict_round_trip():
    cfg = toy_config()
    assert model_config_from_dict(config_to_dict(cfg)) == cfg


def test_dtype_env(monkeypatch):
    monkeypatch.setenv("MVSEG_DTYPE", "float64")
    assert default_dtype() == torch.float64
    monkeypatch.setenv("MVSEG_DTYPE", "half")
    with pytest.raises(ConfigError):
        default_dtype()
