# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Supervised training of the neural quantizer with an annealed staircase.

Every step samples a minibatch, sets the temperature from the cooling schedule, accumulates the gradient of the batch
loss over all samples and applies one optimizer update.

"""
import math
import signal
import time
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from types import FrameType

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from neuroquant import grad
from neuroquant.channel import (
    ChannelKind,
    ChannelModel,
    Minibatch,
    make_rng,
    sample_minibatch,
)
from neuroquant.codes import TannerGraph
from neuroquant.decoder import DecoderConfig, OutputMode, UnrolledDecoder, decode
from neuroquant.grad import Scalar, Tape
from neuroquant.quantizer import (
    QuantizerParams,
    quantize_array,
    quantize_word,
    taped_parameters,
)
from neuroquant.staircase import DEFAULT_EPSILON

CHUNK_ROWS: int = 10  # Samples per gradient task, the last task takes the remainder


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or infinity; training cannot continue."""

    def __init__(self, step: int, names: list[str]) -> None:
        """Initialize the error.

        :param step: optimizer step at which the gradient was seen
        :param names: parameters with a non-finite gradient entry

        """
        super().__init__(f"Non-finite gradient at step {step} for {', '.join(names)}.")
        self.step = step
        self.names = names


class Pipeline(Enum):
    """What the loss compares against the source.

    :param Enum: Build-in python Enum class.

    """

    TRANSPARENT = "transparent"
    QUANTIZE_ONLY = "quantize_only"
    QUANTIZE_DECODE = "quantize_decode"


class Reduction(Enum):
    """Batch reduction of the per-sample losses.

    :param Enum: Build-in python Enum class.

    """

    SUM = "sum"
    MEAN = "mean"


class DecoderGradient(Enum):
    """How the gradient crosses the decoder.

    :param Enum: Build-in python Enum class.

    """

    VECTORIZED = "vectorized"
    TAPE = "tape"


class OptimizerName(Enum):
    """Supported update rules.

    :param Enum: Build-in python Enum class.

    """

    SGD = "sgd"
    MOMENTUM = "momentum"
    RMSPROP = "rmsprop"
    ADAM = "adam"


class OptimizerSettings(BaseModel):
    """Update rule and its constants.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    name: OptimizerName = Field(OptimizerName.ADAM, description="Update rule")
    learning_rate: float = Field(0.04, gt=0.0, description="Step size")
    beta1: float = Field(0.9, ge=0.0, lt=1.0, description="Adam first moment decay")
    beta2: float = Field(0.999, ge=0.0, lt=1.0, description="Adam second moment decay")
    eps: float = Field(
        1e-8, gt=0.0, description="Denominator offset of Adam and RMSprop"
    )
    momentum: float = Field(
        0.9, ge=0.0, lt=1.0, description="Velocity decay of the momentum rule"
    )
    decay: float = Field(
        0.9, ge=0.0, lt=1.0, description="Squared gradient decay of RMSprop"
    )


class OptimizerState:
    """Accumulators of an update rule, one array per named parameter."""

    def __init__(self, settings: OptimizerSettings, params: QuantizerParams) -> None:
        """Create zeroed accumulators shaped like ``params``.

        :param settings: update rule and constants
        :param params: parameter set whose shapes the accumulators mirror

        """
        self.settings = settings
        self.step_count = 0
        arrays = params.named_arrays()
        self.first: dict[str, np.ndarray] = {
            name: np.zeros_like(array) for name, array in arrays.items()
        }
        self.second: dict[str, np.ndarray] = {
            name: np.zeros_like(array) for name, array in arrays.items()
        }


def _update(
    theta: np.ndarray, g: np.ndarray, name: str, state: OptimizerState
) -> np.ndarray:
    settings = state.settings
    rate = settings.learning_rate
    if settings.name is OptimizerName.SGD:
        return theta - rate * g
    if settings.name is OptimizerName.MOMENTUM:
        state.first[name] = settings.momentum * state.first[name] + g
        return theta - rate * state.first[name]
    if settings.name is OptimizerName.RMSPROP:
        decay = settings.decay
        state.second[name] = decay * state.second[name] + (1.0 - decay) * g * g
        return theta - rate * g / (np.sqrt(state.second[name]) + settings.eps)

    beta1, beta2 = settings.beta1, settings.beta2
    state.first[name] = beta1 * state.first[name] + (1.0 - beta1) * g
    state.second[name] = beta2 * state.second[name] + (1.0 - beta2) * g * g
    first_hat = state.first[name] / (1.0 - settings.beta1**state.step_count)
    second_hat = state.second[name] / (1.0 - settings.beta2**state.step_count)
    return theta - rate * first_hat / (np.sqrt(second_hat) + settings.eps)


def step(
    params: QuantizerParams, grads: dict[str, np.ndarray], state: OptimizerState
) -> QuantizerParams:
    """Apply one optimizer update.

    :param params: current parameters
    :param grads: gradient per named parameter, shaped like :meth:`QuantizerParams.named_arrays`
    :param state: optimizer accumulators, updated in place
    :return: the updated parameters
    :raises NonFiniteGradientError: when any gradient entry is NaN or infinite; ``state`` is left untouched

    """
    arrays = params.named_arrays()
    if set(grads) != set(arrays):
        raise ValueError(
            f"Gradient names {sorted(grads)} do not match parameters {sorted(arrays)}."
        )
    for name, array in arrays.items():
        if np.shape(grads[name]) != array.shape:
            raise ValueError(
                f"Gradient of {name} has shape {np.shape(grads[name])}, "
                f"expected {array.shape}."
            )
    bad = [name for name in arrays if not np.isfinite(grads[name]).all()]
    if bad:
        raise NonFiniteGradientError(state.step_count + 1, bad)

    state.step_count += 1
    updated = {
        name: _update(array, np.asarray(grads[name], dtype=float), name, state)
        for name, array in arrays.items()
    }
    return params.replace_arrays(updated)


def anneal(t: int, eta: float, floor: float) -> float:
    """Temperature max(t^eta, floor) at step ``t`` >= 1."""
    if t < 1:
        raise ValueError(f"Step index must be at least 1, got {t}.")
    return max(float(t) ** eta, floor)


def _decoder_config(config: DecoderConfig) -> DecoderConfig:
    return config.model_copy(update={"output": OutputMode.SIGMOID, "early_exit": False})


def batch_loss(
    batch: Minibatch,
    params: QuantizerParams,
    sigma2: float,
    pipeline: Pipeline,
    tape: Tape | None = None,
    reduction: Reduction = Reduction.SUM,
    graph: TannerGraph | None = None,
    decoder: DecoderConfig | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> Scalar:
    """Squared L2 distortion between the sources and the pipeline outputs over a minibatch.

    :param batch: sources x and observations y
    :param params: quantizer parameters
    :param sigma2: staircase temperature
    :param pipeline: transparent (quantize x), quantize_only (quantize y) or quantize_decode (quantize y and decode)
    :param tape: record the loss on this tape
    :param reduction: sum or mean over the K samples
    :param graph: Tanner graph, needed for quantize_decode
    :param decoder: decoder settings for quantize_decode, always run with sigmoid output
    :param epsilon: soft/solid switch threshold
    :return: the loss, a taped variable when ``tape`` is given

    """
    if pipeline is Pipeline.QUANTIZE_DECODE and graph is None:
        raise ValueError("The quantize_decode pipeline needs a Tanner graph.")
    settings = _decoder_config(decoder or DecoderConfig())

    total: Scalar = 0.0
    for x, y in zip(batch.inputs, batch.observations):
        source = x if pipeline is Pipeline.TRANSPARENT else y
        outputs = quantize_word(source, params, sigma2, tape, epsilon)
        if pipeline is Pipeline.QUANTIZE_DECODE:
            outputs = decode(graph, outputs, settings, tape)  # type: ignore[arg-type]
        for target, output in zip(x.tolist(), outputs):
            residual = target - output
            total = total + residual * residual
    if reduction is Reduction.MEAN:
        total = total / batch.size
    return total


class TrainConfig(BaseModel):
    """Everything one training run needs.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    channel: ChannelModel
    pipeline: Pipeline = Field(Pipeline.TRANSPARENT, description="Loss pipeline")
    batch_size: int = Field(100, ge=1, description="Mini-batch size K")
    t_max: int = Field(200, ge=0, description="Number of optimizer steps")
    eta: float = Field(-0.75, lt=0.0, description="Cooling factor")
    sigma2_floor: float = Field(1e-3, description="Lowest training temperature")
    epsilon: float = Field(
        DEFAULT_EPSILON, gt=0.0, description="Soft/solid switch threshold"
    )
    reduction: Reduction = Field(Reduction.SUM, description="Batch loss reduction")
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    decoder_gradient: DecoderGradient = Field(
        DecoderGradient.VECTORIZED, description="Gradient path through the decoder"
    )
    seed: int = Field(0, ge=0, description="Seed of all training randomness")
    workers: int = Field(1, ge=1, description="Processes computing gradient chunks")
    log_every: int = Field(10, ge=1, description="Steps between progress events")
    distortion_every: int = Field(
        0, ge=0, description="Steps between solid distortion measurements, 0 disables"
    )
    distortion_samples: int = Field(
        10_000, ge=1, description="Monte-Carlo draws per distortion measurement"
    )

    @model_validator(mode="after")
    def check_consistency(self) -> "TrainConfig":
        """Validate the floor against epsilon and the pipeline against the channel."""
        if self.sigma2_floor <= self.epsilon:
            raise ValueError(
                f"sigma2_floor {self.sigma2_floor} must exceed "
                f"the solid threshold {self.epsilon}."
            )
        kind = self.channel.kind
        decoding = self.pipeline is Pipeline.QUANTIZE_DECODE
        if decoding and kind is not ChannelKind.BPSK_AWGN:
            raise ValueError(
                "The quantize_decode pipeline needs the bpsk_awgn channel."
            )
        if self.distortion_every and kind is not ChannelKind.GAUSSIAN_SOURCE:
            raise ValueError(
                "Distortion tracking is only defined for the Gaussian source."
            )
        return self


class TraceRecord(BaseModel):
    """One training step.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    t: int = Field(..., ge=1)
    sigma2: float
    loss: float
    seconds: float = Field(
        ..., ge=0.0, description="Wall time since the start of training"
    )
    distortion: float = Field(
        math.nan, description="Solid staircase distortion, NaN when not measured"
    )


class TrainTrace(BaseModel):
    """Per-step training records.

    :param BaseModel: Pydantic base model

    """

    records: list[TraceRecord] = Field(default_factory=list)
    stopped_early: bool = Field(
        False, description="Training was interrupted before t_max"
    )

    @field_validator("records")
    @classmethod
    def check_increasing(cls, records: list[TraceRecord]) -> list[TraceRecord]:
        """Steps must be strictly increasing."""
        if any(later.t <= earlier.t for earlier, later in zip(records, records[1:])):
            raise ValueError("Trace steps must be strictly increasing.")
        return records

    def append(self, record: TraceRecord) -> None:
        """Add the record of the next step."""
        if self.records and record.t <= self.records[-1].t:
            raise ValueError(
                f"Step {record.t} does not follow step {self.records[-1].t}."
            )
        self.records.append(record)

    @property
    def final_loss(self) -> float:
        """Loss of the last step, NaN for an empty trace."""
        return self.records[-1].loss if self.records else math.nan

    def floor_loss(self, steps: int = 20) -> float:
        """Median loss of the last ``steps`` steps, NaN for an empty trace."""
        if not self.records:
            return math.nan
        return float(np.median([record.loss for record in self.records[-steps:]]))

    def to_frame(self) -> pd.DataFrame:
        """Records as a DataFrame with columns t, sigma2, loss, seconds and distortion."""
        return pd.DataFrame(
            [record.model_dump() for record in self.records],
            columns=["t", "sigma2", "loss", "seconds", "distortion"],
        )

    def to_csv(self, path: Path) -> None:
        """Write the trace as CSV."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


class SignalHandler:
    """Turn SIGINT and SIGTERM into a request to stop after the current step."""

    _keep_training: bool = True

    def __init__(self) -> None:
        """Install the handlers; :meth:`restore` puts the previous ones back."""
        self.logger = structlog.getLogger(self.__class__.__name__)
        self._previous = {
            signum: signal.signal(signum, self._stop_gracefully)
            for signum in (signal.SIGINT, signal.SIGTERM)
        }

    def keep_training(self) -> bool:
        """Tell if training should go on."""
        return self._keep_training

    def restore(self) -> None:
        """Reinstall the handlers that were active before this one."""
        for signum, handler in self._previous.items():
            signal.signal(signum, handler)

    def _stop_gracefully(self, signum: int, frame: FrameType | None) -> None:
        self.logger.info(
            "Stopping after the current step.",
            signum=signum,
            frame_lineno=frame.f_lineno if frame else None,
        )
        self._keep_training = False


def _chunk_gradient(
    batch: Minibatch,
    params: QuantizerParams,
    sigma2: float,
    config: TrainConfig,
    scale: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradient summed over the rows of ``batch``, each row multiplied by ``scale``."""
    graph = config.channel.graph
    settings = _decoder_config(config.decoder)
    decoding = config.pipeline is Pipeline.QUANTIZE_DECODE

    tapes = []
    rows = []
    for x, y in zip(batch.inputs, batch.observations):
        tape = Tape()
        taped_parameters(tape, params)
        source = x if config.pipeline is Pipeline.TRANSPARENT else y
        tapes.append(tape)
        rows.append(quantize_word(source, params, sigma2, tape, config.epsilon))

    losses: list[Scalar] = []
    if decoding and config.decoder_gradient is DecoderGradient.VECTORIZED:
        unrolled = UnrolledDecoder(graph, settings)  # type: ignore[arg-type]
        values = np.array([[grad.value_of(q) for q in row] for row in rows])
        outputs = unrolled.forward(values)
        residuals = batch.inputs - outputs
        coefficients = unrolled.backward(-2.0 * scale * residuals)
        loss_value = scale * float(np.sum(residuals * residuals))
        for row, weights in zip(rows, coefficients):
            surrogate: Scalar = 0.0
            for q, weight in zip(row, weights.tolist()):
                surrogate = surrogate + q * weight
            losses.append(surrogate)
    else:
        loss_value = 0.0
        for x, row, tape in zip(batch.inputs, rows, tapes):
            outputs = (
                decode(graph, row, settings, tape)  # type: ignore[arg-type]
                if decoding
                else row
            )
            loss: Scalar = 0.0
            for target, output in zip(x.tolist(), outputs):
                residual = target - output
                loss = loss + residual * residual
            loss = loss * scale
            loss_value += grad.value_of(loss)
            losses.append(loss)

    totals = _zeros_like(params)
    for tape, loss in zip(tapes, losses):
        if not isinstance(loss, grad.Var):
            continue
        adjoints = grad.backward(tape, loss)
        gradients = taped_parameters(tape, params).gradients(adjoints)
        for name, gradient in gradients.items():
            totals[name] += gradient
    return loss_value, totals


def _zeros_like(params: QuantizerParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(array) for name, array in params.named_arrays().items()}


def _chunk_task(args: tuple) -> tuple[float, dict[str, np.ndarray]]:
    return _chunk_gradient(*args)


def batch_gradient(
    batch: Minibatch,
    params: QuantizerParams,
    sigma2: float,
    config: TrainConfig,
    executor: ProcessPoolExecutor | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradient of the batch loss with respect to every parameter.

    The batch is cut into chunks of :data:`CHUNK_ROWS` samples, each with its own tapes. Chunk results are added in
    chunk order, so the outcome is the same with or without ``executor``.

    :param batch: the minibatch
    :param params: quantizer parameters
    :param sigma2: staircase temperature
    :param config: training configuration
    :param executor: optional process pool for the chunks
    :return: the batch loss and the gradient per named parameter

    """
    scale = 1.0 / batch.size if config.reduction is Reduction.MEAN else 1.0
    chunks = batch.chunks(CHUNK_ROWS)
    tasks = [(chunk, params, sigma2, config, scale) for chunk in chunks]
    if executor is not None:
        results = list(executor.map(_chunk_task, tasks))
    else:
        results = [_chunk_task(task) for task in tasks]

    loss = 0.0
    totals = _zeros_like(params)
    for chunk_loss, chunk_grads in results:
        loss += chunk_loss
        for name, gradient in chunk_grads.items():
            totals[name] += gradient
    return loss, totals


def solid_distortion(
    params: QuantizerParams, samples: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo squared error of the frozen quantizer on a standard Gaussian source."""
    draws = rng.standard_normal(samples)
    return float(np.mean((draws - quantize_array(draws, params)) ** 2))


class Trainer:
    """Runs the training loop of one configuration."""

    def __init__(self, config: TrainConfig, stop: SignalHandler | None = None) -> None:
        """Initialize the trainer.

        :param config: training configuration
        :param stop: optional handler that ends training after the current step

        """
        self.logger = structlog.getLogger(self.__class__.__name__)
        self.config = config
        self.stop = stop

    def _sample(self, t: int) -> Minibatch:
        config = self.config
        return sample_minibatch(
            config.channel, config.batch_size, make_rng(config.seed, t)
        )

    def run(self, params: QuantizerParams) -> tuple[QuantizerParams, TrainTrace]:
        """Train from ``params`` for ``t_max`` steps.

        :param params: initial parameters
        :return: final parameters and the trace
        :raises NonFiniteGradientError: when a gradient becomes non-finite

        """
        config = self.config
        state = OptimizerState(config.optimizer, params)
        trace = TrainTrace()
        start = time.perf_counter()
        executor = (
            ProcessPoolExecutor(max_workers=config.workers)
            if config.workers > 1
            else None
        )
        self.logger.info(
            "Training started.",
            pipeline=config.pipeline.value,
            t_max=config.t_max,
            batch_size=config.batch_size,
            optimizer=config.optimizer.name.value,
        )
        try:
            for t in range(1, config.t_max + 1):
                if self.stop is not None and not self.stop.keep_training():
                    trace.stopped_early = True
                    self.logger.warning("Training interrupted.", completed_steps=t - 1)
                    break
                sigma2 = anneal(t, config.eta, config.sigma2_floor)
                loss, grads = batch_gradient(
                    self._sample(t), params, sigma2, config, executor
                )
                try:
                    params = step(params, grads, state)
                except NonFiniteGradientError as error:
                    self.logger.error(
                        "Non-finite gradient.",
                        t=t,
                        sigma2=sigma2,
                        loss=loss,
                        parameters=error.names,
                    )
                    raise NonFiniteGradientError(t, error.names) from error

                distortion = math.nan
                last = t == config.t_max
                every = config.distortion_every
                if every and (t % every == 0 or last):
                    distortion = solid_distortion(
                        params, config.distortion_samples, make_rng(config.seed, t, 1)
                    )
                trace.append(
                    TraceRecord(
                        t=t,
                        sigma2=sigma2,
                        loss=loss,
                        seconds=time.perf_counter() - start,
                        distortion=distortion,
                    )
                )
                if t % config.log_every == 0 or last:
                    self.logger.info(
                        "Training step finished.", t=t, sigma2=sigma2, loss=loss
                    )
        finally:
            if executor is not None:
                executor.shutdown()
        self.logger.info(
            "Training finished.",
            steps=len(trace.records),
            final_loss=trace.final_loss,
        )
        return params, trace


def train(
    config: TrainConfig, params: QuantizerParams, stop: SignalHandler | None = None
) -> tuple[QuantizerParams, TrainTrace]:
    """Train ``params`` under ``config``; see :class:`Trainer`."""
    return Trainer(config, stop).run(params)
