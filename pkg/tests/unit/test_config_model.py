# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0

import json
import os
import tempfile
from pathlib import Path
from unittest import mock

import pytest

from neuroquant.config_model import (
    Command,
    ConfigError,
    ExperimentConfig,
    QuantizerConfigModel,
    dump_config,
    load_config,
    merge_values,
    resolve_config,
)
from neuroquant.train import OptimizerName, Reduction


def test_experiment_config_defaults():
    # Arrange & Act
    config = ExperimentConfig()
    # Assert
    assert config.command is None
    assert config.seed == 1
    assert config.quantizer.levels == 4
    assert config.quantizer.hidden_dim == 8
    assert config.quantizer.depth == 2
    assert config.train.eta == -0.75
    assert config.train.reduction is Reduction.SUM
    assert config.optimizer.name is OptimizerName.ADAM
    assert config.optimizer.learning_rate == 0.04
    assert config.decoder.iterations == 20
    assert config.evaluation.mode == "paired"
    assert config.paths.output_dir == Path(".")


def test_quantizer_config_model_odd_levels():
    # Arrange & Act & Assert
    with pytest.raises(ValueError) as error:
        QuantizerConfigModel(levels=5)
    assert "levels" in str(error.value)


def test_environment_overrides():
    # Arrange
    environment = {"NEUROQUANT_SEED": "9", "NEUROQUANT_TRAIN__ETA": "-0.5"}
    # Act
    with mock.patch.dict(os.environ, environment):
        config = ExperimentConfig()
    # Assert
    assert config.seed == 9
    assert config.train.eta == -0.5


def test_resolve_config_flag_wins():
    # Arrange
    file_values = {"train": {"eta": -0.25, "t_max": 10}, "seed": 3}
    flag_values = {"train": {"eta": -1.0}}
    # Act
    config = resolve_config(file_values, flag_values)
    # Assert
    assert config.train.eta == -1.0
    assert config.train.t_max == 10
    assert config.seed == 3


def test_resolve_config_unknown_key():
    # Arrange & Act
    with pytest.raises(ConfigError) as error:
        resolve_config({"quantizer": {"level": 4}}, {})
    # Assert
    assert "quantizer.level" in error.value.keys
    assert "quantizer.level" in str(error.value)


def test_resolve_config_unknown_section():
    # Arrange & Act
    with pytest.raises(ConfigError) as error:
        resolve_config({"bogus": {"x": 1}}, {})
    # Assert
    assert error.value.keys == ["bogus"]


def test_resolve_config_invalid_value():
    # Arrange & Act
    with pytest.raises(ConfigError) as error:
        resolve_config({}, {"quantizer": {"levels": 3}, "train": {"eta": 0.5}})
    # Assert
    assert set(error.value.keys) == {"quantizer.levels", "train.eta"}
    assert isinstance(error.value, ValueError)


def test_resolve_config_command():
    # Arrange & Act
    config = resolve_config({}, {"command": "train-ldpc"})
    # Assert
    assert config.command is Command.TRAIN_LDPC


def test_merge_values_is_deep():
    # Arrange & Act
    merged = merge_values({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"c": 5}})
    # Assert
    assert merged == {"a": {"b": 1, "c": 5}, "d": 3}


def test_load_config_empty_file():
    # Arrange
    with tempfile.TemporaryDirectory() as directory:
        path = Path(directory) / "empty.toml"
        path.write_text("\n", encoding="utf-8")
        # Act
        values = load_config(path)
    # Assert
    assert values == {}


def test_load_config_json():
    # Arrange
    with tempfile.TemporaryDirectory() as directory:
        path = Path(directory) / "config.json"
        path.write_text(json.dumps({"lloyd": {"levels": 8}}), encoding="utf-8")
        # Act
        config = resolve_config(load_config(path), {})
    # Assert
    assert config.lloyd.levels == 8


def test_load_config_rejects_other_formats():
    # Arrange
    with tempfile.TemporaryDirectory() as directory:
        path = Path(directory) / "config.yaml"
        path.write_text("seed: 1\n", encoding="utf-8")
        # Act & Assert
        with pytest.raises(ConfigError):
            load_config(path)


def test_load_config_rejects_broken_toml():
    # Arrange
    with tempfile.TemporaryDirectory() as directory:
        path = Path(directory) / "config.toml"
        path.write_text("[train\neta = ", encoding="utf-8")
        # Act & Assert
        with pytest.raises(ConfigError):
            load_config(path)


def test_dump_config_round_trip():
    # Arrange
    config = resolve_config(
        {"quantizer": {"levels": 8}, "paths": {"alist": "codes/PEGReg504x1008.alist"}},
        {"command": "sweep-eta", "sweep": {"etas": [-0.5, -1.0]}},
    )
    with tempfile.TemporaryDirectory() as directory:
        path = Path(directory) / "resolved.toml"
        path.write_text(dump_config(config), encoding="utf-8")
        # Act
        restored = resolve_config(load_config(path), {})
    # Assert
    assert restored.model_dump() == config.model_dump()
