# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""The neural quantizer.

A small relu network maps a received value to the input of a soft staircase whose output is scaled by a trainable
factor alpha. All symbol positions of a word share one parameter set.

"""
import json
import math
from pathlib import Path

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from neuroquant import grad
from neuroquant.grad import Scalar, Tape, Var
from neuroquant.staircase import (
    DEFAULT_EPSILON,
    LevelSet,
    StaircaseConfig,
    make_level_set,
    soft_staircase,
)

CHECKPOINT_FORMAT: str = "neuroquant-checkpoint/1"


class QuantizerParams(BaseModel):
    """Trainable parameter set of the neural quantizer plus its level set.

    ``weights[0]`` has shape (u, 1), ``weights[1:-1]`` have shape (u, u) and ``weights[-1]`` has shape (1, u). The
    biases follow the same layering with shapes (u,) and, for the last layer, (1,).

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float = Field(..., allow_inf_nan=False)
    levels: LevelSet

    @model_validator(mode="after")
    def check_shapes(self) -> "QuantizerParams":
        """Validate layer shapes against each other."""
        depth = len(self.weights)
        if depth < 2 or len(self.biases) != depth:
            raise ValueError("Need at least two layers and one bias vector per layer.")
        hidden_dim = self.weights[0].shape[0]
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            rows = 1 if layer == depth - 1 else hidden_dim
            cols = 1 if layer == 0 else hidden_dim
            if weight.shape != (rows, cols) or bias.shape != (rows,):
                raise ValueError(
                    f"Layer {layer + 1} has weight shape {weight.shape} and bias "
                    f"shape {bias.shape}, expected ({rows}, {cols}) and ({rows},)."
                )
        return self

    @property
    def hidden_dim(self) -> int:
        """Hidden state dimension u."""
        return int(self.weights[0].shape[0])

    @property
    def depth(self) -> int:
        """Number of layers T."""
        return len(self.weights)

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Return every trainable array by name: W1..WT, b1..bT and alpha."""
        arrays: dict[str, np.ndarray] = {}
        for layer, weight in enumerate(self.weights, start=1):
            arrays[f"W{layer}"] = weight
        for layer, bias in enumerate(self.biases, start=1):
            arrays[f"b{layer}"] = bias
        arrays["alpha"] = np.array([self.alpha])
        return arrays

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "QuantizerParams":
        """Return a copy with the named arrays replaced."""
        layers = range(1, self.depth + 1)
        return QuantizerParams(
            weights=[np.array(arrays[f"W{layer}"], dtype=float) for layer in layers],
            biases=[np.array(arrays[f"b{layer}"], dtype=float) for layer in layers],
            alpha=float(np.asarray(arrays["alpha"]).reshape(-1)[0]),
            levels=self.levels,
        )

    def to_vector(self) -> np.ndarray:
        """Flatten all parameters, in :meth:`named_arrays` order and row-major."""
        return np.concatenate([array.ravel() for array in self.named_arrays().values()])

    def from_vector(self, vector: np.ndarray) -> "QuantizerParams":
        """Inverse of :meth:`to_vector`."""
        arrays = {}
        offset = 0
        for name, array in self.named_arrays().items():
            chunk = np.asarray(vector[offset : offset + array.size], dtype=float)
            arrays[name] = chunk.reshape(array.shape)
            offset += array.size
        return self.replace_arrays(arrays)


class TapedParameters:
    """Quantizer parameters registered once as leaves of a tape.

    Every symbol quantized on the same tape reuses these leaves, so the gradient of a word-level loss accumulates
    into a single parameter set.

    """

    def __init__(self, tape: Tape, params: QuantizerParams) -> None:
        """Register every parameter of ``params`` on ``tape``."""
        self.params = params
        self.leaves: dict[str, list[Var]] = {
            name: [tape.variable(value) for value in array.ravel()]
            for name, array in params.named_arrays().items()
        }
        self.weights = [
            _nest(self.leaves[f"W{layer}"], weight.shape)
            for layer, weight in enumerate(params.weights, start=1)
        ]
        self.biases = [
            list(self.leaves[f"b{layer}"]) for layer in range(1, params.depth + 1)
        ]
        self.alpha = self.leaves["alpha"][0]

    def gradients(self, adjoints: dict[int, float]) -> dict[str, np.ndarray]:
        """Collect the adjoints of the registered leaves into arrays shaped like the parameters."""
        gradients = {}
        for name, array in self.params.named_arrays().items():
            values = [adjoints[leaf.index] for leaf in self.leaves[name]]
            gradients[name] = np.array(values).reshape(array.shape)
        return gradients


def _nest(flat: list, shape: tuple[int, ...]) -> list[list]:
    rows, cols = shape
    return [flat[row * cols : (row + 1) * cols] for row in range(rows)]


def taped_parameters(tape: Tape, params: QuantizerParams) -> TapedParameters:
    """Return the leaves of ``params`` on ``tape``, registering them on first use."""
    registered = tape.registry.get(id(params))
    if not isinstance(registered, TapedParameters) or registered.params is not params:
        registered = TapedParameters(tape, params)
        tape.registry[id(params)] = registered
    return registered


def init_params(
    hidden_dim: int, depth: int, levels: int, seed: int | None = None
) -> QuantizerParams:
    """Draw a fresh parameter set.

    Weights are uniform on +-sqrt(6 / (fan_in + fan_out)), biases are zero and alpha is one.

    :param hidden_dim: hidden state dimension u
    :param depth: number of layers T, at least 2
    :param levels: number of quantization levels L, even
    :param seed: seed of the random generator
    :return: the parameter set

    """
    if hidden_dim < 1:
        raise ValueError(f"Hidden dimension must be at least 1, got {hidden_dim}.")
    if depth < 2:
        raise ValueError(f"Depth must be at least 2, got {depth}.")
    level_set = make_level_set(levels)

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for layer in range(depth):
        rows = 1 if layer == depth - 1 else hidden_dim
        cols = 1 if layer == 0 else hidden_dim
        limit = math.sqrt(6.0 / (rows + cols))
        weights.append(rng.uniform(-limit, limit, size=(rows, cols)))
        biases.append(np.zeros(rows))
    return QuantizerParams(weights=weights, biases=biases, alpha=1.0, levels=level_set)


def _affine(row: list, inputs: list, bias: Scalar) -> Scalar:
    total = row[0] * inputs[0]
    for weight, value in zip(row[1:], inputs[1:]):
        total = total + weight * value
    return total + bias


def _forward(
    y: float, weights: list, biases: list, alpha: Scalar, config: StaircaseConfig
) -> Scalar:
    hidden: list = [y]
    for layer in range(len(weights) - 1):
        hidden = [
            grad.relu(_affine(row, hidden, bias))
            for row, bias in zip(weights[layer], biases[layer])
        ]
    pre = _affine(weights[-1][0], hidden, biases[-1][0])
    return alpha * soft_staircase(pre, config)


def quantize_word(
    y: np.ndarray | list[float],
    params: QuantizerParams,
    temperature: float,
    tape: Tape | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> list[Scalar]:
    """Quantize every coordinate of ``y`` with the single shared parameter set.

    :param y: received values
    :param params: quantizer parameters
    :param temperature: staircase temperature sigma^2
    :param tape: when given, the computation is recorded so a backward pass yields gradients for ``params``
    :param epsilon: soft/solid switch threshold
    :return: quantized values, taped variables when ``tape`` is given

    """
    config = StaircaseConfig(
        levels=params.levels, temperature=temperature, epsilon=epsilon
    )
    values = [float(value) for value in np.asarray(y, dtype=float).ravel()]
    if not all(math.isfinite(value) for value in values):
        raise ValueError("Quantizer input must be finite.")

    if tape is None:
        weights = [weight.tolist() for weight in params.weights]
        biases = [bias.tolist() for bias in params.biases]
        return [
            _forward(value, weights, biases, params.alpha, config) for value in values
        ]

    if config.is_solid:
        raise ValueError(
            "Refusing to tape the solid staircase "
            f"(temperature {temperature} <= {epsilon}); "
            "its gradient is zero almost everywhere."
        )
    taped = taped_parameters(tape, params)
    return [
        _forward(value, taped.weights, taped.biases, taped.alpha, config)
        for value in values
    ]


def quantize(
    y: float,
    params: QuantizerParams,
    temperature: float,
    tape: Tape | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> Scalar:
    """Quantize a single received value; see :func:`quantize_word`."""
    return quantize_word([y], params, temperature, tape, epsilon)[0]


def quantize_array(y: np.ndarray, params: QuantizerParams) -> np.ndarray:
    """Evaluate the frozen (solid staircase) quantizer on an array of any shape."""
    values = np.asarray(y, dtype=float)
    hidden = values.reshape(1, -1)
    for weight, bias in zip(params.weights[:-1], params.biases[:-1]):
        hidden = np.maximum(weight @ hidden + bias[:, None], 0.0)
    pre = (params.weights[-1] @ hidden + params.biases[-1][:, None]).ravel()
    levels = params.levels.as_array()
    nearest = np.argmin(np.abs(pre[:, None] - levels[None, :]), axis=1)
    return (params.alpha * levels[nearest]).reshape(values.shape)


def extract_table(
    params: QuantizerParams, low: float, high: float, step: float
) -> list[tuple[float, float]]:
    """Sample the frozen quantizer on the grid low, low + step, ..., up to high.

    :param params: quantizer parameters
    :param low: first grid point
    :param high: last grid point (inclusive when it falls on the grid)
    :param step: grid spacing
    :return: (input, output) pairs

    """
    if not low < high or step <= 0.0:
        raise ValueError(f"Invalid grid ({low}, {high}, {step}).")
    count = int(math.floor((high - low) / step + 1e-9)) + 1
    inputs = low + step * np.arange(count)
    outputs = quantize_word(inputs, params, temperature=0.0)
    return [(float(x), float(q)) for x, q in zip(inputs, outputs)]


def save_checkpoint(params: QuantizerParams, path: Path) -> None:
    """Write ``params`` to a JSON checkpoint.

    Floats are written in their shortest round-tripping decimal form, so loading gives back identical values.

    """
    document = {
        "format": CHECKPOINT_FORMAT,
        "hidden_dim": params.hidden_dim,
        "depth": params.depth,
        "levels": params.levels.size,
        "level_values": list(params.levels.levels),
        "alpha": params.alpha,
        "weights": [weight.ravel().tolist() for weight in params.weights],
        "biases": [bias.ravel().tolist() for bias in params.biases],
    }
    path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    structlog.getLogger("Checkpoint").info("Checkpoint written.", path=str(path))


def load_checkpoint(path: Path) -> QuantizerParams:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    document = json.loads(path.read_text(encoding="utf-8"))
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a neuroquant checkpoint.")
    hidden_dim = int(document["hidden_dim"])
    depth = int(document["depth"])
    weights = []
    for layer, flat in enumerate(document["weights"]):
        rows = 1 if layer == depth - 1 else hidden_dim
        weights.append(np.array(flat, dtype=float).reshape(rows, -1))
    return QuantizerParams(
        weights=weights,
        biases=[np.array(flat, dtype=float) for flat in document["biases"]],
        alpha=float(document["alpha"]),
        levels=LevelSet(levels=tuple(document["level_values"])),
    )
