# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Sources and channels.

Two channel models are simulated: a transparent standard Gaussian source and BPSK-modulated LDPC codewords over an
AWGN channel. SNR values are Eb/N0 in dB with unit symbol energy.

"""
import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from neuroquant.codes import SystematicEncoder, TannerGraph

SNR_CONVENTION: str = (
    "snr_db is Eb/N0 in dB with unit symbol energy; "
    "noise variance v2 = 1 / (2 R 10^(snr_db/10))"
)


class ChannelKind(Enum):
    """Supported channel models.

    :param Enum: Build-in python Enum class.

    """

    GAUSSIAN_SOURCE = "gaussian_source"
    BPSK_AWGN = "bpsk_awgn"


class ChannelModel(BaseModel):
    """Source plus channel description.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ChannelKind
    length: int = Field(
        1, ge=1, description="Source vector length n for the Gaussian source"
    )
    noise_variance: float | None = Field(None, gt=0.0, description="AWGN variance v^2")
    graph: TannerGraph | None = None
    encoder: SystematicEncoder | None = None
    all_zero: bool = Field(False, description="Transmit only the all-zero codeword")

    @model_validator(mode="after")
    def check_kind(self) -> "ChannelModel":
        """BPSK over AWGN needs a code and a noise variance."""
        incomplete = self.graph is None or self.noise_variance is None
        if self.kind is ChannelKind.BPSK_AWGN and incomplete:
            raise ValueError("The bpsk_awgn channel needs a code and a noise variance.")
        return self

    @property
    def n(self) -> int:
        """Length of the sampled vectors."""
        if self.kind is ChannelKind.BPSK_AWGN:
            return self.graph.n  # type: ignore[union-attr]
        return self.length


class Minibatch(BaseModel):
    """K paired source vectors and observations, stored as (K, n) arrays.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    inputs: np.ndarray
    observations: np.ndarray

    @model_validator(mode="after")
    def check_shapes(self) -> "Minibatch":
        """Inputs and observations must both be (K, n) with K >= 1."""
        shape = self.inputs.shape
        if self.inputs.ndim != 2 or shape != self.observations.shape or shape[0] < 1:
            raise ValueError(
                f"Mismatched minibatch shapes {shape} and {self.observations.shape}."
            )
        return self

    @property
    def size(self) -> int:
        """Number of samples K."""
        return int(self.inputs.shape[0])

    def chunks(self, rows: int) -> list["Minibatch"]:
        """Consecutive minibatches of ``rows`` samples each; only the last one may be shorter."""
        if rows < 1:
            raise ValueError(f"Chunks need at least one row, got {rows}.")
        return [
            Minibatch(
                inputs=self.inputs[start : start + rows],
                observations=self.observations[start : start + rows],
            )
            for start in range(0, self.size, rows)
        ]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent random generator for the stream identified by ``(seed, *stream)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(stream)))


def bipolar(bit: int) -> float:
    """Map bit 0 to +1 and bit 1 to -1."""
    if bit not in (0, 1):
        raise ValueError(f"Expected a bit, got {bit!r}.")
    return 1.0 - 2.0 * bit


def transmit(
    x: np.ndarray, noise_variance: float, rng: np.random.Generator
) -> np.ndarray:
    """Send bits over BPSK/AWGN.

    :param x: codeword bits, any shape
    :param noise_variance: noise variance v^2
    :param rng: random generator
    :return: received values beta(x) + w

    """
    bits = np.asarray(x)
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("Transmitted word must contain only bits.")
    if noise_variance <= 0.0:
        raise ValueError(f"Noise variance must be positive, got {noise_variance}.")
    noise = math.sqrt(noise_variance) * rng.standard_normal(bits.shape)
    return (1.0 - 2.0 * bits) + noise


def llr_baseline(y: float | np.ndarray, noise_variance: float) -> float | np.ndarray:
    """Exact channel LLR 2 y / v^2 of BPSK over AWGN."""
    if noise_variance <= 0.0:
        raise ValueError(f"Noise variance must be positive, got {noise_variance}.")
    return 2.0 * y / noise_variance


def snr_to_variance(snr_db: float, rate: float) -> float:
    """Noise variance for an Eb/N0 of ``snr_db`` and code rate ``rate``.

    :param snr_db: Eb/N0 in dB
    :param rate: code rate R in (0, 1]
    :return: v^2 = 1 / (2 R 10^(snr_db / 10))

    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"Rate must lie in (0, 1], got {rate}.")
    return 1.0 / (2.0 * rate * 10.0 ** (snr_db / 10.0))


def sample_minibatch(
    model: ChannelModel,
    size: int,
    rng: np.random.Generator,
    encoder: SystematicEncoder | None = None,
) -> Minibatch:
    """Sample K source vectors and their observations.

    :param model: channel model
    :param size: mini-batch size K
    :param rng: random generator
    :param encoder: encoder for random codewords, defaults to the model's encoder
    :return: the minibatch

    """
    if size < 1:
        raise ValueError(f"Minibatch size must be at least 1, got {size}.")

    if model.kind is ChannelKind.GAUSSIAN_SOURCE:
        inputs = rng.standard_normal((size, model.n))
        return Minibatch(inputs=inputs, observations=inputs.copy())

    encoder = encoder or model.encoder
    if model.all_zero:
        inputs = np.zeros((size, model.n), dtype=np.int64)
    elif encoder is None:
        raise ValueError(
            "Sampling random codewords needs an encoder; pass one or enable all_zero."
        )
    else:
        inputs = np.array(
            [encoder.random_codeword(rng) for _ in range(size)], dtype=np.int64
        )
    observations = transmit(inputs, model.noise_variance, rng)  # type: ignore[arg-type]
    return Minibatch(inputs=inputs, observations=observations)
