# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0

"""Unit tests for cli.py"""
import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import pandas as pd
import structlog

from neuroquant import cli
from neuroquant.quantizer import load_checkpoint
from neuroquant.train import NonFiniteGradientError
from tests.small_codes import REPETITION_ALIST


def run_quietly(argv: list[str]) -> tuple[int, str]:
    """Run the command line and return its exit code and the last line it printed."""
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(io.StringIO()):
        code = cli.run(argv)
    lines = stdout.getvalue().splitlines()
    return code, lines[-1] if lines else ""


def read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


class CliTestCase(unittest.TestCase):
    def setUp(self) -> None:
        """Create a scratch directory holding the repetition code."""
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)
        self.alist = self.root / "repetition.alist"
        self.alist.write_text(REPETITION_ALIST, encoding="utf-8")
        self.out = ["--out", str(self.root)]
        return super().setUp()

    def tearDown(self) -> None:
        """Remove the scratch directory and the logging configuration."""
        self.directory.cleanup()
        structlog.reset_defaults()
        return super().tearDown()


class TestUsage(CliTestCase):
    def test_unknown_flag(self):
        # Act
        code, _ = run_quietly(["lloyd", "--bogus"])

        # Assert
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_unknown_command(self):
        # Act
        code, _ = run_quietly(["compress"])

        # Assert
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_invalid_value(self):
        # Act
        code, _ = run_quietly(["export-staircase", "--L", "3"] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_missing_alist_flag(self):
        # Act
        code, _ = run_quietly(["eval-ber", "--mode", "baseline_llr"] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_missing_alist_file(self):
        # Arrange
        missing = self.root / "missing.alist"

        # Act
        code, _ = run_quietly(["eval-ber", "--alist", str(missing)] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_MISSING_FILE)

    def test_malformed_alist_file(self):
        # Arrange
        self.alist.write_text("3 2\n2 x\n", encoding="utf-8")
        argv = ["eval-ber", "--alist", str(self.alist), "--mode", "baseline_llr"]

        # Act
        code, _ = run_quietly(argv + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_MALFORMED_ALIST)

    def test_missing_checkpoint(self):
        # Arrange
        argv = ["export-quantizer", "--checkpoint", str(self.root / "none.json")]

        # Act
        code, _ = run_quietly(argv + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_MISSING_FILE)

    @mock.patch("neuroquant.cli.train")
    def test_non_finite_gradient(self, mock_train):
        # Arrange
        mock_train.side_effect = NonFiniteGradientError(3, ["alpha"])

        # Act
        code, _ = run_quietly(["train-gaussian", "--out", str(self.root)])

        # Assert
        self.assertEqual(code, cli.EXIT_NON_FINITE)
        mock_train.assert_called_once()


class TestConfiguration(CliTestCase):
    def test_flag_values(self):
        # Arrange
        args = cli.build_parser().parse_args(
            ["train-gaussian", "--eta", "-0.5", "--L", "8", "--seed", "3"]
        )

        # Act
        values = cli.flag_values(args)

        # Assert
        self.assertEqual(
            values,
            {
                "command": "train-gaussian",
                "seed": 3,
                "quantizer": {"levels": 8},
                "train": {"eta": -0.5},
            },
        )

    def test_config_file(self):
        # Arrange
        config = self.root / "config.toml"
        config.write_text("[lloyd]\nlevels = 2\n", encoding="utf-8")

        # Act
        code, summary = run_quietly(["lloyd", "--config", str(config)] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("lloyd: L=2 "))

    def test_flag_beats_config_file(self):
        # Arrange
        config = self.root / "config.toml"
        config.write_text("[lloyd]\nlevels = 2\n", encoding="utf-8")

        # Act
        code, summary = run_quietly(
            ["lloyd", "--config", str(config), "--L", "8"] + self.out
        )

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("lloyd: L=8 "))

    def test_unknown_config_key(self):
        # Arrange
        config = self.root / "config.toml"
        config.write_text("[lloyd]\nlevel = 2\n", encoding="utf-8")

        # Act
        code, _ = run_quietly(["lloyd", "--config", str(config)] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_CONFIG)


class TestCommands(CliTestCase):
    def test_lloyd(self):
        # Act
        code, summary = run_quietly(["lloyd", "--L", "4", "--grid"] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("levels=[-1.5104, -0.4528, 0.4528, 1.5104]", summary)
        levels = pd.read_csv(self.root / "lloyd_levels.csv")
        self.assertEqual(len(levels), 4)
        self.assertEqual(levels["threshold"].isna().sum(), 1)
        curve = pd.read_csv(self.root / "lloyd_curve.csv", comment="#")
        self.assertEqual(len(curve), 601)
        provenance = read_json(self.root / "provenance.json")
        self.assertEqual(provenance["command"], "lloyd")
        self.assertEqual(provenance["seed"], 1)
        self.assertEqual(
            provenance["outputs"], ["lloyd_curve.csv", "lloyd_levels.csv"]
        )
        self.assertEqual(provenance["config"]["lloyd"]["levels"], 4)

    def test_export_staircase(self):
        # Arrange
        argv = ["export-staircase", "--L", "4", "--temperatures", "0", "0.1"]

        # Act
        code, _ = run_quietly(argv + ["--step", "0.5"] + self.out)

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        solid = pd.read_csv(self.root / "staircase_sigma2_0.csv", comment="#")
        soft = pd.read_csv(self.root / "staircase_sigma2_0.1.csv", comment="#")
        self.assertEqual(len(solid), 13)
        self.assertEqual(sorted(set(solid["y"])), [-1.5, -0.5, 0.5, 1.5])
        self.assertGreater(len(set(soft["y"])), 4)

    def test_train_gaussian_then_export(self):
        # Arrange
        first = self.root / "first"
        argv = ["train-gaussian", "--tmax", "3", "--K", "10", "--seed", "2"]

        # Act
        code, summary = run_quietly(argv + ["--out", str(first)])

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("train-gaussian: steps=3 "))
        for name in (
            "quantizer.json",
            "trace.csv",
            "quantizer_curve.csv",
            "provenance.json",
        ):
            self.assertTrue((first / name).is_file(), name)
        params = load_checkpoint(first / "quantizer.json")
        self.assertEqual(params.levels.size, 4)

        # Act
        checkpoint = str(first / "quantizer.json")
        code, summary = run_quietly(
            ["export-quantizer", "--checkpoint", checkpoint, "--step", "0.5"] + self.out
        )

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("export-quantizer: points=13 "))

    def test_train_gaussian_is_reproducible(self):
        # Arrange
        argv = ["train-gaussian", "--tmax", "3", "--K", "10", "--seed", "2"]

        # Act
        run_quietly(argv + ["--out", str(self.root / "a")])
        run_quietly(argv + ["--out", str(self.root / "b")])

        # Assert
        self.assertEqual(
            (self.root / "a" / "quantizer.json").read_bytes(),
            (self.root / "b" / "quantizer.json").read_bytes(),
        )

    def test_train_ldpc_uses_its_own_defaults(self):
        # Act
        code, summary = run_quietly(
            ["train-ldpc", "--alist", str(self.alist), "--tmax", "2", "--K", "4"]
            + self.out
        )

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("train-ldpc: n=3 k=1 "))
        provenance = read_json(self.root / "provenance.json")
        self.assertEqual(provenance["config"]["quantizer"]["levels"], 8)
        self.assertEqual(provenance["config"]["train"]["eta"], -0.5)

    def test_eval_ber_baseline(self):
        # Act
        code, summary = run_quietly(
            [
                "eval-ber",
                "--alist",
                str(self.alist),
                "--mode",
                "baseline_llr",
                "--snr",
                "0",
                "2",
                "--min-frames",
                "50",
                "--min-errors",
                "0",
                "--max-frames",
                "50",
                "--out",
                str(self.root),
            ]
        )

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("eval-ber: baseline_llr=["))
        curve = pd.read_csv(self.root / "ber_baseline_llr.csv", comment="#")
        self.assertEqual(curve["snr_db"].tolist(), [0.0, 2.0])
        self.assertEqual(curve["frames"].tolist(), [50, 50])
        summary_document = read_json(self.root / "ber_summary.json")
        self.assertEqual(len(summary_document["results"]["baseline_llr"]), 2)

    def test_sweep_eta(self):
        # Act
        code, summary = run_quietly(
            [
                "sweep-eta",
                "--etas",
                "-0.5",
                "-1",
                "--seeds",
                "1",
                "2",
                "--tmax",
                "2",
                "--K",
                "5",
                "--out",
                str(self.root),
            ]
        )

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("sweep-eta: median_final_distortion="))
        table = pd.read_csv(self.root / "sweep_summary.csv")
        self.assertEqual(len(table), 4)
        medians = pd.read_csv(self.root / "sweep_medians.csv")
        self.assertEqual(medians["eta"].tolist(), [-0.5, -1.0])
        self.assertTrue((self.root / "trace_eta-0.5_seed2.csv").is_file())

    def test_sweep_eta_through_a_code(self):
        # Act
        code, summary = run_quietly(
            [
                "sweep-eta",
                "--alist",
                str(self.alist),
                "--etas",
                "-0.5",
                "-2",
                "--seeds",
                "1",
                "--tmax",
                "2",
                "--K",
                "4",
                "--out",
                str(self.root),
            ]
        )

        # Assert
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(summary.startswith("sweep-eta: median_floor_loss="))
        table = pd.read_csv(self.root / "sweep_summary.csv")
        self.assertEqual(len(table), 2)
        self.assertTrue(table["final_distortion"].isna().all())
        self.assertTrue((table["floor_loss"] >= 0.0).all())
        medians = pd.read_csv(self.root / "sweep_medians.csv")
        self.assertEqual(list(medians.columns), ["eta", "floor_loss"])
