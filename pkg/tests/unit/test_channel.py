# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0

"""Unit tests for channel.py"""
import math
import unittest

import numpy as np
from pydantic import ValidationError

from neuroquant.channel import (
    ChannelKind,
    ChannelModel,
    Minibatch,
    bipolar,
    llr_baseline,
    make_rng,
    sample_minibatch,
    snr_to_variance,
    transmit,
)
from neuroquant.codes import TannerGraph, build_encoder, syndrome
from tests.small_codes import HAMMING_H


class TestModulation(unittest.TestCase):
    def test_bipolar(self):
        # Act & Assert
        self.assertEqual(bipolar(0), 1.0)
        self.assertEqual(bipolar(1), -1.0)
        for bit in (0, 1):
            self.assertEqual(bipolar(bit) * bipolar(bit), 1.0)

    def test_bipolar_rejects_non_bits(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            bipolar(2)

    def test_llr_baseline(self):
        # Act & Assert
        self.assertEqual(llr_baseline(1.0, 1.0), 2.0)
        self.assertEqual(llr_baseline(0.0, 1.0), 0.0)
        self.assertEqual(llr_baseline(-0.5, 0.25), -4.0)

    def test_llr_baseline_rejects_zero_variance(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            llr_baseline(1.0, 0.0)


class TestSnr(unittest.TestCase):
    def test_zero_db_at_rate_one_half(self):
        # Act & Assert
        self.assertAlmostEqual(snr_to_variance(0.0, 0.5), 1.0, places=15)

    def test_two_and_a_half_db(self):
        # Act
        variance = snr_to_variance(2.5, 0.5)

        # Assert
        self.assertAlmostEqual(variance, 0.5623, places=4)

    def test_high_snr_vanishes(self):
        # Act & Assert
        self.assertLess(snr_to_variance(200.0, 0.5), 1e-19)

    def test_invalid_rate(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            snr_to_variance(1.0, 0.0)
        with self.assertRaises(ValueError):
            snr_to_variance(1.0, 1.5)


class TestTransmit(unittest.TestCase):
    def test_negligible_noise_gives_the_bipolar_word(self):
        # Arrange
        bits = np.array([0, 1, 1, 0, 1])

        # Act
        received = transmit(bits, 1e-30, make_rng(1))

        # Assert
        np.testing.assert_allclose(received, [1.0, -1.0, -1.0, 1.0, -1.0], atol=1e-12)

    def test_noise_statistics(self):
        # Arrange
        variance = 0.7
        bits = np.zeros(1_000_000, dtype=np.int64)

        # Act
        noise = transmit(bits, variance, make_rng(2)) - 1.0

        # Assert
        self.assertLess(abs(noise.mean()), 4.0 * math.sqrt(variance / noise.size))
        self.assertAlmostEqual(noise.var() / variance, 1.0, delta=0.02)

    def test_noise_is_uncorrelated_across_coordinates(self):
        # Arrange
        rng = make_rng(3)
        bits = rng.integers(0, 2, size=1_000_001)

        # Act
        noise = transmit(bits, 0.5, rng) - (1.0 - 2.0 * bits)

        # Assert
        correlation = np.corrcoef(noise[:-1], noise[1:])[0, 1]
        self.assertLess(abs(correlation), 0.01)

    def test_rejects_non_bits_and_bad_variance(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            transmit(np.array([0, 2]), 1.0, make_rng(1))
        with self.assertRaises(ValueError):
            transmit(np.array([0, 1]), 0.0, make_rng(1))


class TestStreams(unittest.TestCase):
    def test_same_stream_repeats(self):
        # Act
        first = make_rng(4, 1, 2).standard_normal(5)
        second = make_rng(4, 1, 2).standard_normal(5)

        # Assert
        np.testing.assert_array_equal(first, second)

    def test_different_streams_differ(self):
        # Act
        first = make_rng(4, 1, 2).standard_normal(5)
        second = make_rng(4, 2, 1).standard_normal(5)

        # Assert
        self.assertFalse(np.array_equal(first, second))


class TestSampleMinibatch(unittest.TestCase):
    def setUp(self) -> None:
        """Build the (7, 4) Hamming code."""
        self.graph = TannerGraph.from_matrix(HAMMING_H)
        self.encoder = build_encoder(self.graph)
        return super().setUp()

    def test_gaussian_source_is_transparent(self):
        # Arrange
        model = ChannelModel(kind=ChannelKind.GAUSSIAN_SOURCE, length=3)

        # Act
        batch = sample_minibatch(model, 10, make_rng(1))

        # Assert
        self.assertEqual(batch.inputs.shape, (10, 3))
        np.testing.assert_array_equal(batch.inputs, batch.observations)

    def test_gaussian_source_statistics(self):
        # Arrange
        model = ChannelModel(kind=ChannelKind.GAUSSIAN_SOURCE, length=1)

        # Act
        batch = sample_minibatch(model, 1_000_000, make_rng(6))

        # Assert
        self.assertLess(abs(batch.inputs.mean()), 0.01)
        self.assertAlmostEqual(batch.inputs.var(), 1.0, delta=0.02)

    def test_all_zero_codewords(self):
        # Arrange
        model = ChannelModel(
            kind=ChannelKind.BPSK_AWGN,
            noise_variance=0.5,
            graph=self.graph,
            all_zero=True,
        )

        # Act
        batch = sample_minibatch(model, 8, make_rng(1))

        # Assert
        self.assertFalse(batch.inputs.any())
        self.assertEqual(batch.observations.shape, (8, 7))

    def test_random_codewords_are_valid(self):
        # Arrange
        model = ChannelModel(
            kind=ChannelKind.BPSK_AWGN,
            noise_variance=0.5,
            graph=self.graph,
            encoder=self.encoder,
        )

        # Act
        batch = sample_minibatch(model, 20, make_rng(2))

        # Assert
        for codeword in batch.inputs:
            self.assertFalse(syndrome(self.graph, codeword).any())

    def test_same_seed_same_batch(self):
        # Arrange
        model = ChannelModel(
            kind=ChannelKind.BPSK_AWGN, noise_variance=0.5, graph=self.graph
        )

        # Act
        first = sample_minibatch(model, 5, make_rng(3), self.encoder)
        second = sample_minibatch(model, 5, make_rng(3), self.encoder)

        # Assert
        np.testing.assert_array_equal(first.inputs, second.inputs)
        np.testing.assert_array_equal(first.observations, second.observations)

    def test_missing_encoder(self):
        # Arrange
        model = ChannelModel(
            kind=ChannelKind.BPSK_AWGN, noise_variance=0.5, graph=self.graph
        )

        # Act & Assert
        with self.assertRaises(ValueError):
            sample_minibatch(model, 5, make_rng(1))

    def test_empty_batch(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            sample_minibatch(
                ChannelModel(kind=ChannelKind.GAUSSIAN_SOURCE), 0, make_rng(1)
            )

    def test_awgn_needs_a_code(self):
        # Act & Assert
        with self.assertRaises(ValidationError):
            ChannelModel(kind=ChannelKind.BPSK_AWGN, noise_variance=0.5)

    def test_chunks_have_fixed_size(self):
        # Arrange
        values = np.arange(46.0).reshape(23, 2)
        batch = Minibatch(inputs=values, observations=-values)

        # Act
        parts = batch.chunks(10)

        # Assert
        self.assertEqual([part.size for part in parts], [10, 10, 3])
        np.testing.assert_array_equal(
            np.concatenate([part.inputs for part in parts]), batch.inputs
        )
        np.testing.assert_array_equal(
            np.concatenate([part.observations for part in parts]), batch.observations
        )

    def test_chunks_need_a_positive_size(self):
        # Arrange
        batch = Minibatch(inputs=np.zeros((3, 1)), observations=np.zeros((3, 1)))

        # Act & Assert
        with self.assertRaises(ValueError):
            batch.chunks(0)
