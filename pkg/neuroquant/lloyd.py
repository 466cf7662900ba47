# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Lloyd-Max scalar quantizer for the standard Gaussian source.

Cell probabilities, conditional means and second moments are evaluated in closed form with the standard normal pdf
and cdf, so the design is exact up to floating point.

"""
from collections.abc import Callable

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

DEFAULT_TOLERANCE: float = 1e-10
DEFAULT_MAX_ITERATIONS: int = 10_000
INITIAL_SPAN: float = 3.0  # Initial levels cover +-INITIAL_SPAN


class LloydQuantizer(BaseModel):
    """Threshold quantizer with the design outcome.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    levels: tuple[float, ...] = Field(
        ..., min_length=1, description="Increasing reproduction points"
    )
    thresholds: tuple[float, ...] = Field(
        ..., description="Increasing decision boundaries, one fewer than levels"
    )
    distortion: float = Field(
        ..., ge=0.0, description="Expected squared error under N(0, 1)"
    )
    iterations: int = Field(0, ge=0, description="Lloyd iterations run")
    converged: bool = Field(True, description="Level movement fell below the tolerance")
    history: tuple[float, ...] = Field(
        (), description="Closed-form distortion after every iteration"
    )

    def __call__(self, x: float | np.ndarray) -> float | np.ndarray:
        """Quantize ``x``; a value exactly on a threshold maps to the lower level."""
        levels = np.asarray(self.levels)
        indices = np.searchsorted(np.asarray(self.thresholds), x, side="left")
        if np.ndim(x) == 0:
            return float(levels[int(indices)])
        return levels[indices]


def _edges(thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lower = np.concatenate([[-np.inf], thresholds])
    return lower, np.concatenate([thresholds, [np.inf]])


def _cell_moments(thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return probability, first and second moment of N(0, 1) restricted to every cell."""
    lower, upper = _edges(thresholds)
    mass = norm.cdf(upper) - norm.cdf(lower)
    first = norm.pdf(lower) - norm.pdf(upper)
    # x * pdf(x) vanishes at +-inf
    finite_lower = np.nan_to_num(lower, posinf=0.0, neginf=0.0)
    finite_upper = np.nan_to_num(upper, posinf=0.0, neginf=0.0)
    lower_term = np.where(np.isfinite(lower), finite_lower * norm.pdf(lower), 0.0)
    upper_term = np.where(np.isfinite(upper), finite_upper * norm.pdf(upper), 0.0)
    second = mass + lower_term - upper_term
    return mass, first, second


def threshold_distortion(
    levels: np.ndarray | tuple[float, ...], thresholds: np.ndarray | tuple[float, ...]
) -> float:
    """Closed-form expected squared error of a threshold quantizer on a standard Gaussian source.

    :param levels: L reproduction points
    :param thresholds: L - 1 increasing decision boundaries
    :return: sum over cells of E[(X - level)^2; X in cell]

    """
    points = np.asarray(levels, dtype=float)
    mass, first, second = _cell_moments(np.asarray(thresholds, dtype=float))
    return float(np.sum(second - 2.0 * points * first + points * points * mass))


def design(
    levels: int, tol: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITERATIONS
) -> LloydQuantizer:
    """Run the Lloyd algorithm for ``levels`` reproduction points.

    The iteration starts from levels evenly spread over +-3 and alternates midpoint thresholds with conditional-mean
    levels until no level moves by ``tol`` or more.

    :param levels: number of levels L >= 1
    :param tol: stopping threshold on the largest level movement
    :param max_iter: iteration cap; the last iterate is returned with ``converged=False`` when it is hit
    :return: the designed quantizer

    """
    logger = structlog.getLogger("Lloyd")
    if levels < 1:
        raise ValueError(f"Number of levels must be at least 1, got {levels}.")

    points = (
        np.linspace(-INITIAL_SPAN, INITIAL_SPAN, levels) if levels > 1 else np.zeros(1)
    )
    history: list[float] = []
    converged = False
    iterations = 0
    while iterations < max_iter:
        thresholds = 0.5 * (points[:-1] + points[1:])
        mass, first, _ = _cell_moments(thresholds)
        updated = np.where(mass > 0.0, first / np.where(mass > 0.0, mass, 1.0), points)
        movement = float(np.max(np.abs(updated - points)))
        points = updated
        iterations += 1
        history.append(threshold_distortion(points, thresholds))
        if movement < tol:
            converged = True
            break

    thresholds = 0.5 * (points[:-1] + points[1:])
    distortion = threshold_distortion(points, thresholds)
    report = {"levels": levels, "iterations": iterations, "distortion": distortion}
    if converged:
        logger.info("Lloyd design converged.", **report)
    else:
        logger.warning("Lloyd design did not converge.", **report)
    return LloydQuantizer(
        levels=tuple(float(point) for point in points),
        thresholds=tuple(float(threshold) for threshold in thresholds),
        distortion=distortion,
        iterations=iterations,
        converged=converged,
        history=tuple(history),
    )


def expected_distortion(
    quantizer: Callable,
    samples: int,
    rng: np.random.Generator | None = None,
    closed_form: bool = False,
    vectorized: bool = False,
) -> float:
    """Expected squared error of ``quantizer`` on a standard Gaussian source.

    :param quantizer: scalar quantizer; a :class:`LloydQuantizer` is always evaluated on whole arrays
    :param samples: number of Monte-Carlo draws
    :param rng: random generator
    :param closed_form: use the exact cell moments; requires a :class:`LloydQuantizer`
    :param vectorized: ``quantizer`` accepts and returns numpy arrays
    :return: mean of (x - q(x))^2

    """
    if closed_form:
        if not isinstance(quantizer, LloydQuantizer):
            raise ValueError("The closed form needs a threshold quantizer.")
        return threshold_distortion(quantizer.levels, quantizer.thresholds)
    if samples < 1:
        raise ValueError(f"Need at least one sample, got {samples}.")

    rng = rng or np.random.default_rng()
    draws = rng.standard_normal(samples)
    if vectorized or isinstance(quantizer, LloydQuantizer):
        outputs = np.asarray(quantizer(draws), dtype=float)
    else:
        outputs = np.fromiter(
            (quantizer(float(draw)) for draw in draws), dtype=float, count=samples
        )
    return float(np.mean((draws - outputs) ** 2))
