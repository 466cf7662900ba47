# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Defines the configuration model."""
import json
from enum import Enum
from pathlib import Path
from typing import Any, Literal

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from neuroquant.decoder import DEFAULT_CLIP
from neuroquant.train import DecoderGradient, OptimizerName, Reduction


class ConfigError(ValueError):
    """Invalid or unknown configuration keys."""

    def __init__(self, message: str, keys: list[str]) -> None:
        """Initialize the error.

        :param message: description of the problem
        :param keys: dotted names of the offending keys

        """
        super().__init__(message)
        self.keys = keys


class Command(Enum):
    """Experiment to run.

    :param Enum: Build-in python Enum class.

    """

    TRAIN_GAUSSIAN = "train-gaussian"
    TRAIN_LDPC = "train-ldpc"
    EVAL_BER = "eval-ber"
    LLOYD = "lloyd"
    EXPORT_QUANTIZER = "export-quantizer"
    EXPORT_STAIRCASE = "export-staircase"
    SWEEP_ETA = "sweep-eta"


class Section(BaseModel):
    """Base of every configuration section; unknown keys are rejected.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(extra="forbid")


class QuantizerConfigModel(Section):
    """Configuration model for the neural quantizer."""

    levels: int = Field(
        4, ge=2, description="Number of quantization levels L", examples=[4, 8]
    )
    hidden_dim: int = Field(8, ge=1, description="Hidden state dimension u")
    depth: int = Field(2, ge=2, description="Number of layers T")

    @field_validator("levels")
    @classmethod
    def check_even(cls, levels: int) -> int:
        """The canonical level set needs an even L."""
        if levels % 2:
            raise ValueError(f"levels must be even, got {levels}")
        return levels


class OptimizerConfigModel(Section):
    """Configuration model for the optimizer."""

    name: OptimizerName = Field(OptimizerName.ADAM, description="Update rule")
    learning_rate: float = Field(0.04, gt=0.0, description="Step size")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    decay: float = Field(0.9, ge=0.0, lt=1.0)


class TrainConfigModel(Section):
    """Configuration model for training."""

    batch_size: int = Field(100, ge=1, description="Mini-batch size K")
    t_max: int = Field(200, ge=0, description="Number of mini-batches")
    eta: float = Field(-0.75, lt=0.0, description="Cooling factor")
    sigma2_floor: float = Field(1e-3, gt=0.0, description="Lowest training temperature")
    reduction: Reduction = Field(Reduction.SUM)
    decoder_gradient: DecoderGradient = Field(DecoderGradient.VECTORIZED)
    log_every: int = Field(10, ge=1)
    distortion_every: int = Field(
        0, ge=0, description="Steps between solid distortion measurements"
    )


class ChannelConfigModel(Section):
    """Configuration model for the channel."""

    snr_db: float = Field(2.5, description="Training Eb/N0 in dB")
    all_zero: bool = Field(False, description="Transmit only the all-zero codeword")


class DecoderConfigModel(Section):
    """Configuration model for the sum-product decoder."""

    iterations: int = Field(20, ge=1)
    clip: float = Field(DEFAULT_CLIP, gt=0.0)
    early_exit: bool = Field(
        False, description="Syndrome check after every iteration, evaluation only"
    )


class EvaluationConfigModel(Section):
    """Configuration model for BER and distortion evaluation."""

    snr_db: list[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0, 2.5, 3.0])
    min_frames: int = Field(2000, ge=1)
    min_bit_errors: int = Field(100, ge=0)
    max_frames: int = Field(1_000_000, ge=1)
    chunk_frames: int = Field(100, ge=1)
    distortion_samples: int = Field(100_000, ge=1)
    mode: Literal["frozen_neural", "baseline_llr", "paired"] = Field(
        "paired",
        description="Front end; paired runs baseline and neural on the same noise",
    )


class PathsConfigModel(Section):
    """Configuration model for input and output locations."""

    alist: Path | None = Field(None, description="Parity-check matrix in alist format")
    checkpoint: Path | None = Field(
        None, description="Quantizer checkpoint to read or write"
    )
    output_dir: Path = Field(Path("."), description="Directory receiving all outputs")


class SweepConfigModel(Section):
    """Configuration model for the cooling factor sweep."""

    etas: list[float] = Field(default_factory=lambda: [-0.25, -0.75, -1.0, -2.0])
    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])


class LloydConfigModel(Section):
    """Configuration model for the Lloyd baseline."""

    levels: int = Field(4, ge=1, description="Number of reproduction points")
    grid: bool = Field(False, description="Also export the quantizer curve")


class ExportConfigModel(Section):
    """Configuration model for curve exports."""

    low: float = Field(-3.0)
    high: float = Field(3.0)
    step: float = Field(0.01, gt=0.0)
    temperatures: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.5])


class ExperimentConfig(BaseSettings):
    """Neuroquant configuration model."""

    model_config = SettingsConfigDict(
        env_prefix="NEUROQUANT_", env_nested_delimiter="__", extra="forbid"
    )

    command: Command | None = Field(None, description="Experiment to run")
    seed: int = Field(1, ge=0)
    workers: int = Field(
        1, ge=1, description="Worker processes for training, threads for evaluation"
    )
    quantizer: QuantizerConfigModel = Field(default_factory=QuantizerConfigModel)
    optimizer: OptimizerConfigModel = Field(default_factory=OptimizerConfigModel)
    train: TrainConfigModel = Field(default_factory=TrainConfigModel)
    channel: ChannelConfigModel = Field(default_factory=ChannelConfigModel)
    decoder: DecoderConfigModel = Field(default_factory=DecoderConfigModel)
    evaluation: EvaluationConfigModel = Field(default_factory=EvaluationConfigModel)
    paths: PathsConfigModel = Field(default_factory=PathsConfigModel)
    sweep: SweepConfigModel = Field(default_factory=SweepConfigModel)
    lloyd: LloydConfigModel = Field(default_factory=LloydConfigModel)
    export: ExportConfigModel = Field(default_factory=ExportConfigModel)


def load_config(path: Path) -> dict[str, Any]:
    """Read a TOML or JSON configuration file into a nested mapping.

    :param path: ``.toml`` or ``.json`` file; an empty file gives an empty mapping
    :return: the raw, not yet validated values

    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return {}
    if path.suffix == ".json":
        try:
            values = json.loads(text)
        except json.JSONDecodeError as error:
            raise ConfigError(f"{path} is not valid JSON: {error}", []) from error
    elif path.suffix == ".toml":
        try:
            values = toml.loads(text)
        except toml.TomlDecodeError as error:
            raise ConfigError(f"{path} is not valid TOML: {error}", []) from error
    else:
        raise ConfigError(
            f"Unsupported configuration format {path.suffix!r}; use .toml or .json.", []
        )
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must contain a table of settings.", [])
    return values


def merge_values(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Deep merge of nested mappings; values of ``override`` win."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_values(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_config(
    file_values: dict[str, Any], flag_values: dict[str, Any]
) -> ExperimentConfig:
    """Merge file values with command line values, the latter winning, and validate the result.

    :param file_values: nested mapping from :func:`load_config`
    :param flag_values: nested mapping built from command line flags
    :return: the validated configuration
    :raises ConfigError: naming every invalid or unknown key

    """
    try:
        return ExperimentConfig(**merge_values(file_values, flag_values))
    except ValidationError as error:
        issues = error.errors()
        keys = [".".join(str(part) for part in issue["loc"]) for issue in issues]
        details = "; ".join(
            f"{key}: {issue['msg']}" for key, issue in zip(keys, issues)
        )
        raise ConfigError(f"Invalid configuration: {details}", keys) from error


def dump_config(config: ExperimentConfig) -> str:
    """Serialize ``config`` to TOML text that :func:`load_config` reads back to the same configuration."""
    values = config.model_dump(mode="json", exclude_none=True)
    return toml.dumps(values)
