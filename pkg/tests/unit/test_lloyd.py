# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0

"""Unit tests for lloyd.py"""
import math
import unittest

import numpy as np
from structlog.testing import capture_logs

from neuroquant.lloyd import (
    LloydQuantizer,
    design,
    expected_distortion,
    threshold_distortion,
)


class TestDesign(unittest.TestCase):
    def test_single_level_is_the_mean(self):
        # Act
        quantizer = design(1)

        # Assert
        self.assertEqual(quantizer.levels, (0.0,))
        self.assertEqual(quantizer.thresholds, ())
        self.assertAlmostEqual(quantizer.distortion, 1.0, places=12)

    def test_two_levels(self):
        # Act
        quantizer = design(2)

        # Assert
        self.assertAlmostEqual(quantizer.levels[1], math.sqrt(2.0 / math.pi), places=9)
        self.assertAlmostEqual(quantizer.levels[0], -math.sqrt(2.0 / math.pi), places=9)
        self.assertAlmostEqual(quantizer.thresholds[0], 0.0, places=9)
        self.assertAlmostEqual(quantizer.distortion, 1.0 - 2.0 / math.pi, places=9)

    def test_four_levels(self):
        # Act
        quantizer = design(4)

        # Assert
        self.assertTrue(quantizer.converged)
        np.testing.assert_allclose(
            quantizer.levels, [-1.5104, -0.4528, 0.4528, 1.5104], atol=1e-4
        )
        np.testing.assert_allclose(
            quantizer.thresholds, [-0.9816, 0.0, 0.9816], atol=1e-4
        )
        self.assertAlmostEqual(quantizer.distortion, 0.1175, delta=1e-4)

    def test_distortion_never_increases(self):
        # Act
        quantizer = design(8)

        # Assert
        history = np.array(quantizer.history)
        self.assertTrue((np.diff(history) <= 1e-12).all())
        self.assertEqual(len(history), quantizer.iterations)

    def test_more_levels_lower_distortion(self):
        # Act
        distortions = [design(levels).distortion for levels in (1, 2, 4, 8, 16)]

        # Assert
        self.assertEqual(distortions, sorted(distortions, reverse=True))

    def test_levels_are_centroids_and_thresholds_midpoints(self):
        # Arrange
        quantizer = design(6)
        levels = np.array(quantizer.levels)

        # Act
        midpoints = 0.5 * (levels[:-1] + levels[1:])

        # Assert
        np.testing.assert_allclose(quantizer.thresholds, midpoints, atol=1e-12)
        for index in range(levels.size):
            for shift in (-1e-3, 1e-3):
                moved = levels.copy()
                moved[index] += shift
                self.assertGreater(
                    threshold_distortion(moved, quantizer.thresholds),
                    quantizer.distortion,
                )

    def test_symmetric_about_zero(self):
        # Act
        quantizer = design(8)

        # Assert
        np.testing.assert_allclose(
            quantizer.levels, -np.array(quantizer.levels[::-1]), atol=1e-9
        )

    def test_iteration_cap_warns(self):
        # Act
        with capture_logs() as logs:
            quantizer = design(4, max_iter=2)

        # Assert
        self.assertFalse(quantizer.converged)
        self.assertEqual(quantizer.iterations, 2)
        self.assertIn("warning", [entry["log_level"] for entry in logs])

    def test_invalid_level_count(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            design(0)


class TestLloydQuantizer(unittest.TestCase):
    def setUp(self) -> None:
        """Build a fixed two-level quantizer."""
        self.quantizer = LloydQuantizer(
            levels=(-1.0, 1.0), thresholds=(0.0,), distortion=0.5
        )
        return super().setUp()

    def test_threshold_goes_to_the_lower_level(self):
        # Act & Assert
        self.assertEqual(self.quantizer(0.0), -1.0)
        self.assertEqual(self.quantizer(1e-12), 1.0)

    def test_arrays(self):
        # Act
        outputs = self.quantizer(np.array([-3.0, 0.0, 2.0]))

        # Assert
        np.testing.assert_array_equal(outputs, [-1.0, -1.0, 1.0])


class TestExpectedDistortion(unittest.TestCase):
    def test_closed_form(self):
        # Arrange
        quantizer = design(4)

        # Act
        value = expected_distortion(quantizer, 1, closed_form=True)

        # Assert
        self.assertEqual(value, quantizer.distortion)

    def test_monte_carlo_agrees_with_the_closed_form(self):
        # Arrange
        quantizer = design(4)

        # Act
        value = expected_distortion(quantizer, 200_000, np.random.default_rng(31))

        # Assert
        self.assertAlmostEqual(value, quantizer.distortion, delta=3e-3)

    def test_scalar_callable(self):
        # Act
        value = expected_distortion(lambda x: 0.0, 100_000, np.random.default_rng(32))

        # Assert
        self.assertAlmostEqual(value, 1.0, delta=0.02)

    def test_identity_has_no_distortion(self):
        # Act
        value = expected_distortion(
            lambda x: x, 1000, np.random.default_rng(33), vectorized=True
        )

        # Assert
        self.assertEqual(value, 0.0)

    def test_closed_form_needs_a_threshold_quantizer(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            expected_distortion(lambda x: x, 10, closed_form=True)

    def test_needs_samples(self):
        # Act & Assert
        with self.assertRaises(ValueError):
            expected_distortion(lambda x: x, 0)
