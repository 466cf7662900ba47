# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0

"""Long running reproduction checks; set NEUROQUANT_LONG_TESTS=1 to run them."""
import os
import statistics
import unittest

import numpy as np

from neuroquant.channel import ChannelKind, ChannelModel, make_rng, snr_to_variance
from neuroquant.codes import build_encoder, load_alist
from neuroquant.decoder import DecoderConfig, OutputMode
from neuroquant.evaluation import (
    EvalConfig,
    EvalMode,
    measure_ber,
    measure_distortion,
    snr_at_ber,
)
from neuroquant.lloyd import design
from neuroquant.quantizer import extract_table, init_params
from neuroquant.train import OptimizerSettings, Pipeline, TrainConfig, train
from tests.small_codes import peg_alist_path

LONG_TESTS = os.environ.get("NEUROQUANT_LONG_TESTS") == "1"
SEEDS = (1, 2, 3, 4, 5)


def train_gaussian(eta: float, seed: int):
    config = TrainConfig(
        channel=ChannelModel(kind=ChannelKind.GAUSSIAN_SOURCE, length=1),
        pipeline=Pipeline.TRANSPARENT,
        batch_size=100,
        t_max=200,
        eta=eta,
        seed=seed,
    )
    params, trace = train(config, init_params(8, 2, 4, seed))
    return params, trace, measure_distortion(params, 200_000, make_rng(seed, 0))


def plateau_values(params, low: float, high: float) -> list[float]:
    return sorted({output for _, output in extract_table(params, low, high, 0.01)})


@unittest.skipUnless(LONG_TESTS, "long running")
class TestGaussianSource(unittest.TestCase):
    def test_trained_quantizer_approaches_lloyd(self):
        # Act
        runs = [train_gaussian(-0.75, seed) for seed in SEEDS]

        # Assert
        distortions = [distortion for _, _, distortion in runs]
        self.assertGreaterEqual(sum(value <= 0.13 for value in distortions), 4)
        best, _, _ = runs[int(np.argmin(distortions))]
        plateaus = plateau_values(best, -4.0, 4.0)
        self.assertEqual(len(plateaus), 4)
        np.testing.assert_allclose(plateaus, design(4).levels, atol=0.15)

    def test_fast_cooling_raises_the_floor(self):
        # Act
        runs = {
            eta: [train_gaussian(eta, seed) for seed in SEEDS]
            for eta in (-0.75, -1.0, -2.0)
        }

        # Assert
        distortions = {
            eta: statistics.median(distortion for _, _, distortion in results)
            for eta, results in runs.items()
        }
        self.assertLess(distortions[-0.75], distortions[-2.0])
        self.assertLess(distortions[-1.0], distortions[-2.0])
        floors = {
            eta: statistics.median(trace.floor_loss() for _, trace, _ in results)
            for eta, results in runs.items()
        }
        self.assertGreaterEqual(floors[-2.0], 1.3 * floors[-0.75])


@unittest.skipUnless(
    LONG_TESTS and peg_alist_path() is not None, "long running, needs PEGReg504x1008"
)
class TestPegCode(unittest.TestCase):
    def setUp(self) -> None:
        """Load the PEG code."""
        self.graph = load_alist(peg_alist_path())
        self.encoder = build_encoder(self.graph)
        self.workers = os.cpu_count() or 1
        return super().setUp()

    def train_at(self, t_max: int):
        channel = ChannelModel(
            kind=ChannelKind.BPSK_AWGN,
            noise_variance=snr_to_variance(2.5, self.encoder.rate),
            graph=self.graph,
            encoder=self.encoder,
        )
        config = TrainConfig(
            channel=channel,
            pipeline=Pipeline.QUANTIZE_DECODE,
            batch_size=100,
            t_max=t_max,
            eta=-0.5,
            optimizer=OptimizerSettings(learning_rate=0.04),
            decoder=DecoderConfig(iterations=20),
            seed=1,
            workers=self.workers,
        )
        params, _ = train(config, init_params(8, 2, 8, 1))
        return params

    def evaluation(self, snr_db: tuple[float, ...]) -> EvalConfig:
        return EvalConfig(
            snr_db=snr_db,
            min_frames=2000,
            min_bit_errors=100,
            decoder=DecoderConfig(iterations=20, output=OutputMode.HARD),
            workers=self.workers,
        )

    def test_baseline_ber_falls_with_snr(self):
        # Arrange
        config = EvalConfig(
            snr_db=(1.0, 1.5, 2.0, 2.5),
            min_frames=500,
            min_bit_errors=100,
            max_frames=20_000,
        )

        # Act
        points = measure_ber(self.graph, self.encoder, None, config)

        # Assert
        bers = [point.ber for point in points]
        self.assertTrue(all(later <= earlier for earlier, later in zip(bers, bers[1:])))

    def test_trained_quantizer_gap(self):
        # Arrange
        evaluation = self.evaluation((2.0, 2.25, 2.5, 2.75, 3.0))

        # Act
        params = self.train_at(500)
        baseline = measure_ber(self.graph, self.encoder, None, evaluation)
        neural = measure_ber(
            self.graph,
            self.encoder,
            params,
            evaluation.model_copy(update={"mode": EvalMode.FROZEN_NEURAL}),
        )

        # Assert
        gap = snr_at_ber(neural, 1e-4) - snr_at_ber(baseline, 1e-4)
        self.assertLessEqual(gap, 0.3)
        plateaus = plateau_values(params, -10.0, 10.0)
        self.assertLessEqual(len(plateaus), 8)
        self.assertGreater(
            max(abs(value) for value in plateaus), params.levels.levels[-1]
        )
        gaps = np.diff(plateaus)
        self.assertGreater(np.ptp(gaps), 0.05 * np.mean(gaps))

    def test_short_training_is_worse(self):
        # Arrange
        evaluation = self.evaluation((2.5,)).model_copy(
            update={"mode": EvalMode.FROZEN_NEURAL}
        )

        # Act
        [short] = measure_ber(self.graph, self.encoder, self.train_at(25), evaluation)
        [full] = measure_ber(self.graph, self.encoder, self.train_at(500), evaluation)

        # Assert
        self.assertGreater(short.ber, full.ber)
