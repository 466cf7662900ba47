# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Monte-Carlo evaluation of frozen quantizers.

BER simulation draws every frame from its own random stream ``(seed, snr index, frame index)``. Any two evaluations
with the same seed therefore see identical codewords and noise, which makes the quantized and the unquantized
receivers directly comparable frame by frame.

"""
import json
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from neuroquant.channel import (
    SNR_CONVENTION,
    llr_baseline,
    make_rng,
    snr_to_variance,
    transmit,
)
from neuroquant.codes import SystematicEncoder, TannerGraph, row_reduce
from neuroquant.decoder import DecoderConfig, OutputMode, UnrolledDecoder
from neuroquant.lloyd import expected_distortion
from neuroquant.quantizer import QuantizerParams, quantize_array

BER_COLUMNS: list[str] = ["snr_db", "ber", "frames", "errors"]
CURVE_COLUMNS: list[str] = ["x", "y"]


class EvalMode(Enum):
    """Receiver front end under test.

    :param Enum: Build-in python Enum class.

    """

    FROZEN_NEURAL = "frozen_neural"
    BASELINE_LLR = "baseline_llr"
    CUSTOM = "custom"


class EvalConfig(BaseModel):
    """BER simulation settings.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    snr_db: tuple[float, ...] = Field(..., min_length=1, description="Eb/N0 grid in dB")
    min_frames: int = Field(
        2000, ge=1, description="Frames simulated at least per point"
    )
    min_bit_errors: int = Field(
        100, ge=0, description="Bit errors collected at least per point"
    )
    max_frames: int = Field(1_000_000, ge=1, description="Hard cap on frames per point")
    chunk_frames: int = Field(100, ge=1, description="Frames decoded together")
    decoder: DecoderConfig = Field(
        default_factory=lambda: DecoderConfig(output=OutputMode.HARD)
    )
    mode: EvalMode = Field(EvalMode.BASELINE_LLR, description="Front end")
    all_zero: bool = Field(False, description="Transmit only the all-zero codeword")
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1, description="Threads decoding chunks")

    @model_validator(mode="after")
    def check_frames(self) -> "EvalConfig":
        """The cap may not undercut the minimum."""
        if self.max_frames < self.min_frames:
            raise ValueError(
                f"max_frames {self.max_frames} is below min_frames {self.min_frames}."
            )
        return self


class BerPoint(BaseModel):
    """Error counts at one SNR.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    snr_db: float
    frames: int = Field(..., ge=0)
    bit_errors: int = Field(..., ge=0)
    bits: int = Field(..., ge=0)
    ber: float = Field(..., ge=0.0, le=1.0)
    frame_errors: int = Field(..., ge=0)
    zero_errors: bool = Field(
        False,
        description="No bit error was observed; ber is only an upper bound estimate",
    )


FrontEnd = Callable[[np.ndarray, float], np.ndarray]


class BerSimulator:
    """Monte-Carlo BER simulation of one receiver front end over an SNR grid."""

    def __init__(
        self,
        graph: TannerGraph,
        encoder: SystematicEncoder | None,
        config: EvalConfig,
        params: QuantizerParams | None = None,
        front_end: FrontEnd | None = None,
    ) -> None:
        """Initialize the simulator.

        :param graph: Tanner graph of the code
        :param encoder: encoder for random codewords, may be None with ``all_zero``
        :param config: simulation settings
        :param params: frozen quantizer for the frozen_neural mode
        :param front_end: map from (received values, v^2) to decoder inputs for the custom mode

        """
        self.logger = structlog.getLogger(self.__class__.__name__)
        if config.mode is EvalMode.FROZEN_NEURAL and params is None:
            raise ValueError("The frozen_neural mode needs quantizer parameters.")
        if config.mode is EvalMode.CUSTOM and front_end is None:
            raise ValueError("The custom mode needs a front end.")
        if encoder is None and not config.all_zero:
            raise ValueError(
                "Random codewords need an encoder; pass one or enable all_zero."
            )
        self.graph = graph
        self.encoder = encoder
        self.config = config
        self.params = params
        self.front_end = front_end
        self.decoder = UnrolledDecoder(graph, config.decoder)
        if encoder is not None:
            self.rate = encoder.rate
        else:
            _, pivots = row_reduce(graph.to_matrix())
            self.rate = (graph.n - len(pivots)) / graph.n

    def _frame(
        self, snr_index: int, frame: int, noise_variance: float
    ) -> tuple[np.ndarray, np.ndarray]:
        rng = make_rng(self.config.seed, snr_index, frame)
        if self.config.all_zero:
            codeword = np.zeros(self.graph.n, dtype=np.int64)
        else:
            codeword = self.encoder.random_codeword(rng)  # type: ignore[union-attr]
        return codeword, transmit(codeword, noise_variance, rng)

    def _decoder_inputs(
        self, received: np.ndarray, noise_variance: float
    ) -> np.ndarray:
        if self.config.mode is EvalMode.BASELINE_LLR:
            return np.asarray(llr_baseline(received, noise_variance))
        if self.config.mode is EvalMode.CUSTOM:
            front_end = self.front_end
            return np.asarray(front_end(received, noise_variance))  # type: ignore[misc]

        inputs = quantize_array(received, self.params)  # type: ignore[arg-type]
        levels = self.params.levels.size  # type: ignore[union-attr]
        for row in inputs:
            if np.unique(row).size > levels:
                raise RuntimeError(
                    f"Frozen quantizer produced more than {levels} "
                    "distinct values in a frame."
                )
        return inputs

    def _chunk(
        self, snr_index: int, first: int, count: int, noise_variance: float
    ) -> tuple[int, int]:
        """Bit errors and frame errors of ``count`` frames starting at ``first``."""
        frames = [
            self._frame(snr_index, frame, noise_variance)
            for frame in range(first, first + count)
        ]
        codewords = np.array([codeword for codeword, _ in frames])
        received = np.array([values for _, values in frames])
        marginals = self.decoder.marginals(
            self._decoder_inputs(received, noise_variance)
        )
        errors = (marginals < 0.0).astype(np.int64) != codewords
        return int(errors.sum()), int(errors.any(axis=1).sum())

    def _enough(self, frames: int, bit_errors: int) -> bool:
        if frames >= self.config.max_frames:
            return True
        return (
            frames >= self.config.min_frames
            and bit_errors >= self.config.min_bit_errors
        )

    def point(
        self, snr_index: int, executor: ThreadPoolExecutor | None = None
    ) -> BerPoint:
        """Simulate the SNR point ``snr_db[snr_index]``.

        Chunks are started in waves of ``workers`` but counted strictly in frame order, and counting stops at the
        first chunk after which the stopping rule holds. The result does not depend on the number of workers.

        """
        config = self.config
        snr_db = config.snr_db[snr_index]
        noise_variance = snr_to_variance(snr_db, self.rate)
        frames = bit_errors = frame_errors = 0
        next_frame = 0
        while not self._enough(frames, bit_errors):
            wave = []
            for _ in range(config.workers):
                count = min(config.chunk_frames, config.max_frames - next_frame)
                if count <= 0:
                    break
                wave.append((next_frame, count))
                next_frame += count
            if executor is not None:
                results = list(
                    executor.map(
                        lambda job: self._chunk(
                            snr_index, job[0], job[1], noise_variance
                        ),
                        wave,
                    )
                )
            else:
                results = [
                    self._chunk(snr_index, first, count, noise_variance)
                    for first, count in wave
                ]
            for (_, count), (new_bit_errors, new_frame_errors) in zip(wave, results):
                frames += count
                bit_errors += new_bit_errors
                frame_errors += new_frame_errors
                if self._enough(frames, bit_errors):
                    break

        bits = frames * self.graph.n
        point = BerPoint(
            snr_db=snr_db,
            frames=frames,
            bit_errors=bit_errors,
            bits=bits,
            ber=bit_errors / bits,
            frame_errors=frame_errors,
            zero_errors=bit_errors == 0,
        )
        if point.zero_errors:
            self.logger.warning("No bit errors observed.", snr_db=snr_db, frames=frames)
        self.logger.info(
            "BER point finished.",
            snr_db=snr_db,
            frames=frames,
            bit_errors=bit_errors,
            ber=point.ber,
            mode=config.mode.value,
        )
        return point

    def run(self) -> list[BerPoint]:
        """Simulate every SNR point of the grid, in grid order."""
        indices = range(len(self.config.snr_db))
        if self.config.workers == 1:
            return [self.point(index) for index in indices]
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            return [self.point(index, executor) for index in indices]


def measure_ber(
    graph: TannerGraph,
    encoder: SystematicEncoder | None,
    quantizer: QuantizerParams | FrontEnd | None,
    config: EvalConfig,
) -> list[BerPoint]:
    """Simulate the BER of hard sum-product decoding behind a receiver front end.

    :param graph: Tanner graph of the code
    :param encoder: encoder for random codewords
    :param quantizer: frozen quantizer parameters (frozen_neural), a front end callable (custom) or None (baseline)
    :param config: simulation settings
    :return: one point per SNR, in grid order

    """
    params = quantizer if isinstance(quantizer, QuantizerParams) else None
    front_end = None if isinstance(quantizer, QuantizerParams) else quantizer
    return BerSimulator(graph, encoder, config, params, front_end).run()


def measure_distortion(
    quantizer: QuantizerParams | Callable,
    samples: int,
    rng: np.random.Generator | None = None,
) -> float:
    """Monte-Carlo squared error of ``quantizer`` on a standard Gaussian source.

    Quantizer parameters are evaluated frozen, with the solid staircase.

    """
    if isinstance(quantizer, QuantizerParams):
        params = quantizer
        return expected_distortion(
            lambda values: quantize_array(values, params), samples, rng, vectorized=True
        )
    return expected_distortion(quantizer, samples, rng)


def snr_at_ber(points: list[BerPoint], target: float) -> float:
    """Interpolate the SNR at which the BER curve crosses ``target``, linear in log10(BER).

    :param points: BER points with increasing SNR
    :param target: BER level
    :return: the crossing SNR in dB, NaN when the curve does not cross ``target``

    """
    for lower, upper in zip(points, points[1:]):
        if lower.ber >= target >= upper.ber and upper.ber > 0.0:
            if lower.ber == upper.ber:
                return lower.snr_db
            top = math.log10(lower.ber)
            fraction = (top - math.log10(target)) / (top - math.log10(upper.ber))
            return lower.snr_db + fraction * (upper.snr_db - lower.snr_db)
    return math.nan


class CurveKind(Enum):
    """Column layout of an exported curve file.

    :param Enum: Build-in python Enum class.

    """

    BER = "ber"
    PAIRS = "pairs"


def export_curves(
    results: list[BerPoint] | list[tuple[float, float]],
    path: Path,
    kind: CurveKind | None = None,
) -> None:
    """Write curve data as CSV.

    The first line is a comment stating the SNR convention. BER points are written as (snr_db, ber, frames, errors),
    pairs as (x, y), in the given order.

    :param results: BER points or (x, y) pairs
    :param path: output file
    :param kind: column layout; inferred from the first entry when omitted
    :raises ValueError: when ``kind`` is omitted for an empty result list
    :raises OSError: when the file cannot be written; the message names ``path``

    """
    if kind is None:
        if not results:
            raise ValueError("Cannot infer the columns of an empty curve; pass kind.")
        kind = CurveKind.BER if isinstance(results[0], BerPoint) else CurveKind.PAIRS
    if kind is CurveKind.BER:
        rows = [
            (point.snr_db, point.ber, point.frames, point.bit_errors)
            for point in results  # type: ignore[union-attr]
        ]
        frame = pd.DataFrame(rows, columns=BER_COLUMNS)
    else:
        frame = pd.DataFrame([tuple(pair) for pair in results], columns=CURVE_COLUMNS)
    try:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            handle.write(f"# {SNR_CONVENTION}\n")
            frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as error:
        raise OSError(
            f"Cannot write curve file {path}: {error.strerror or error}"
        ) from error


def write_summary(path: Path, config: dict, results: dict[str, list[BerPoint]]) -> None:
    """Write a JSON record of the resolved configuration and the BER points of every evaluated front end."""
    document = {
        "config": config,
        "results": {
            mode: [point.model_dump() for point in points]
            for mode, points in results.items()
        },
    }
    Path(path).write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
