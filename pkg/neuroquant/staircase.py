# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Soft and solid staircase functions.

The soft staircase is the Gaussian-kernel weighted mean of a level set, which is the MMSE estimate of a uniformly
distributed level observed in Gaussian noise of variance ``temperature``. As the temperature goes to zero it turns into
the solid staircase, the nearest-level quantizer.

"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from neuroquant import grad
from neuroquant.grad import Scalar

DEFAULT_EPSILON: float = 1e-6  # Temperatures at or below this use the solid staircase


class LevelSet(BaseModel):
    """Ordered quantization output levels.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    levels: tuple[float, ...] = Field(
        ..., description="Strictly increasing output levels", min_length=1
    )

    @field_validator("levels")
    @classmethod
    def check_strictly_increasing(cls, levels: tuple[float, ...]) -> tuple[float, ...]:
        """Reject unsorted or repeated levels."""
        if any(later <= earlier for earlier, later in zip(levels, levels[1:])):
            raise ValueError("Levels must be strictly increasing.")
        return levels

    @property
    def size(self) -> int:
        """Number of levels L."""
        return len(self.levels)

    @property
    def low(self) -> float:
        """Smallest level."""
        return self.levels[0]

    @property
    def high(self) -> float:
        """Largest level."""
        return self.levels[-1]

    def as_array(self) -> np.ndarray:
        """Levels as a float array."""
        return np.asarray(self.levels, dtype=float)


class StaircaseConfig(BaseModel):
    """Level set, temperature and soft/solid switch threshold.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    levels: LevelSet
    temperature: float = Field(
        0.0, ge=0.0, allow_inf_nan=False, description="Temperature sigma^2"
    )
    epsilon: float = Field(
        DEFAULT_EPSILON, gt=0.0, description="Soft/solid switch threshold"
    )

    @property
    def is_solid(self) -> bool:
        """Tell whether the temperature selects the solid staircase."""
        return self.temperature <= self.epsilon


def make_level_set(size: int) -> LevelSet:
    """Build the canonical level set s_i = i - L/2 + 1/2.

    :param size: number of levels L, a positive even integer
    :return: level set symmetric about zero with unit spacing

    """
    if size < 2 or size % 2:
        raise ValueError(
            f"Number of levels must be a positive even integer, got {size}."
        )
    return LevelSet(levels=tuple(i - size / 2 + 0.5 for i in range(size)))


def solid_staircase(r: float, levels: LevelSet) -> float:
    """Return the level nearest to ``r``; exact ties go to the lower level."""
    distances = np.abs(float(r) - levels.as_array())
    if np.isnan(distances).any():
        return float("nan")
    # argmin returns the first minimum, which is the lower level on a tie
    return levels.levels[int(np.argmin(distances))]


def soft_staircase(r: Scalar, config: StaircaseConfig) -> Scalar:
    """Evaluate the soft staircase at ``r``.

    The largest exponent is subtracted before exponentiation. That shift cancels between numerator and denominator,
    so it is taken from the forward value and held constant on the tape.

    :param r: input, a float or a taped variable
    :param config: level set, temperature and switch threshold
    :return: weighted mean of the levels, in [min S, max S]

    """
    if config.is_solid:
        return solid_staircase(grad.value_of(r), config.levels)

    scale = -0.5 / config.temperature
    r_value = grad.value_of(r)
    shift = max((r_value - s) * (r_value - s) * scale for s in config.levels.levels)

    numerator: Scalar = 0.0
    denominator: Scalar = 0.0
    for s in config.levels.levels:
        weight = grad.exp(grad.square(r - s) * scale - shift)
        numerator = numerator + weight * s
        denominator = denominator + weight
    return numerator / denominator
