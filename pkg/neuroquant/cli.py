# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Command line entry point.

Every subcommand resolves an :class:`~neuroquant.config_model.ExperimentConfig` from an optional config file and the
flags, runs one experiment, writes its outputs plus a ``provenance.json`` into the output directory and prints a one
line summary.

"""
import argparse
import json
import logging
import math
import sys
from collections.abc import Callable
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import structlog

from neuroquant.channel import ChannelKind, ChannelModel, make_rng, snr_to_variance
from neuroquant.codes import (
    AlistParseError,
    SystematicEncoder,
    TannerGraph,
    build_encoder,
    load_alist,
)
from neuroquant.config_model import (
    Command,
    ConfigError,
    ExperimentConfig,
    load_config,
    merge_values,
    resolve_config,
)
from neuroquant.decoder import DecoderConfig, OutputMode
from neuroquant.evaluation import (
    CurveKind,
    EvalConfig,
    EvalMode,
    export_curves,
    measure_ber,
    measure_distortion,
    snr_at_ber,
    write_summary,
)
from neuroquant.lloyd import design
from neuroquant.quantizer import (
    QuantizerParams,
    extract_table,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from neuroquant.staircase import StaircaseConfig, make_level_set, soft_staircase
from neuroquant.train import (
    NonFiniteGradientError,
    OptimizerSettings,
    Pipeline,
    SignalHandler,
    TrainConfig,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_NON_FINITE = 4
EXIT_MALFORMED_ALIST = 5

GAP_TARGET_BER = 1e-4

# Applied below file values and flags
COMMAND_DEFAULTS: dict[Command, dict[str, Any]] = {
    Command.TRAIN_LDPC: {
        "quantizer": {"levels": 8},
        "train": {"eta": -0.5, "t_max": 500},
    },
}


def _flag(parser: argparse.ArgumentParser, name: str, dest: str, **kwargs: Any) -> None:
    parser.add_argument(name, dest=dest, default=None, **kwargs)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", type=Path, default=None, help="TOML or JSON configuration file"
    )
    parser.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"]
    )
    _flag(parser, "--seed", "seed", type=int, help="Seed of all randomness")
    _flag(parser, "--out", "paths.output_dir", type=Path, help="Output directory")
    _flag(
        parser,
        "--workers",
        "workers",
        type=int,
        help="Worker processes (training) or threads (evaluation)",
    )


def _quantizer_flags(parser: argparse.ArgumentParser) -> None:
    _flag(parser, "--L", "quantizer.levels", type=int, help="Quantization levels")
    _flag(parser, "--u", "quantizer.hidden_dim", type=int, help="Hidden dimension")
    _flag(parser, "--T", "quantizer.depth", type=int, help="Number of layers")


def _train_flags(parser: argparse.ArgumentParser) -> None:
    _quantizer_flags(parser)
    _flag(parser, "--eta", "train.eta", type=float, help="Cooling factor")
    _flag(parser, "--K", "train.batch_size", type=int, help="Mini-batch size")
    _flag(parser, "--tmax", "train.t_max", type=int, help="Number of mini-batches")
    _flag(
        parser,
        "--floor",
        "train.sigma2_floor",
        type=float,
        help="Lowest temperature",
    )
    _flag(parser, "--reduction", "train.reduction", choices=["sum", "mean"])
    _flag(
        parser,
        "--optimizer",
        "optimizer.name",
        choices=["sgd", "momentum", "rmsprop", "adam"],
    )
    _flag(parser, "--rate", "optimizer.learning_rate", type=float, help="Learning rate")
    _flag(parser, "--log-every", "train.log_every", type=int)
    _flag(parser, "--distortion-every", "train.distortion_every", type=int)


def _code_flags(parser: argparse.ArgumentParser) -> None:
    _flag(parser, "--alist", "paths.alist", type=Path, help="Parity-check matrix")
    _flag(parser, "--iterations", "decoder.iterations", type=int, help="Decoder sweeps")
    _flag(parser, "--all-zero", "channel.all_zero", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subcommand per experiment."""
    parser = argparse.ArgumentParser(
        prog="neuroquant", description="Neural quantizers for LDPC decoding"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gaussian = commands.add_parser(
        Command.TRAIN_GAUSSIAN.value, help="Train on the transparent Gaussian source"
    )
    _common_flags(gaussian)
    _train_flags(gaussian)
    _flag(gaussian, "--checkpoint", "paths.checkpoint", type=Path, help="Output file")

    ldpc = commands.add_parser(
        Command.TRAIN_LDPC.value, help="Train through the sum-product decoder"
    )
    _common_flags(ldpc)
    _train_flags(ldpc)
    _code_flags(ldpc)
    _flag(ldpc, "--snr", "channel.snr_db", type=float, help="Training Eb/N0 in dB")
    _flag(
        ldpc,
        "--decoder-gradient",
        "train.decoder_gradient",
        choices=["vectorized", "tape"],
    )
    _flag(ldpc, "--checkpoint", "paths.checkpoint", type=Path, help="Output file")

    ber = commands.add_parser(
        Command.EVAL_BER.value, help="Monte-Carlo BER of a frozen quantizer"
    )
    _common_flags(ber)
    _code_flags(ber)
    _flag(ber, "--checkpoint", "paths.checkpoint", type=Path, help="Input file")
    _flag(
        ber,
        "--snr",
        "evaluation.snr_db",
        type=float,
        nargs="+",
        help="Eb/N0 grid in dB",
    )
    _flag(
        ber,
        "--mode",
        "evaluation.mode",
        choices=["frozen_neural", "baseline_llr", "paired"],
    )
    _flag(ber, "--min-frames", "evaluation.min_frames", type=int)
    _flag(ber, "--min-errors", "evaluation.min_bit_errors", type=int)
    _flag(ber, "--max-frames", "evaluation.max_frames", type=int)
    _flag(ber, "--early-exit", "decoder.early_exit", action="store_const", const=True)

    lloyd = commands.add_parser(
        Command.LLOYD.value, help="Lloyd-Max quantizer for the Gaussian source"
    )
    _common_flags(lloyd)
    _flag(lloyd, "--L", "lloyd.levels", type=int, help="Number of levels")
    _flag(
        lloyd,
        "--grid",
        "lloyd.grid",
        action="store_const",
        const=True,
        help="Also export the curve",
    )

    export = commands.add_parser(
        Command.EXPORT_QUANTIZER.value, help="Export the frozen quantizer curve"
    )
    _common_flags(export)
    _flag(export, "--checkpoint", "paths.checkpoint", type=Path, help="Input file")
    _flag(export, "--low", "export.low", type=float)
    _flag(export, "--high", "export.high", type=float)
    _flag(export, "--step", "export.step", type=float)

    staircase = commands.add_parser(
        Command.EXPORT_STAIRCASE.value, help="Export soft staircase curves"
    )
    _common_flags(staircase)
    _flag(staircase, "--L", "quantizer.levels", type=int, help="Number of levels")
    _flag(staircase, "--low", "export.low", type=float)
    _flag(staircase, "--high", "export.high", type=float)
    _flag(staircase, "--step", "export.step", type=float)
    _flag(staircase, "--temperatures", "export.temperatures", type=float, nargs="+")

    sweep = commands.add_parser(
        Command.SWEEP_ETA.value,
        help="Cooling factor sweep on the Gaussian source, or through a code",
    )
    _common_flags(sweep)
    _train_flags(sweep)
    _code_flags(sweep)
    _flag(sweep, "--snr", "channel.snr_db", type=float, help="Training Eb/N0 in dB")
    _flag(sweep, "--etas", "sweep.etas", type=float, nargs="+")
    _flag(sweep, "--seeds", "sweep.seeds", type=int, nargs="+")
    return parser


def flag_values(args: argparse.Namespace) -> dict[str, Any]:
    """Nested mapping of every flag that was given on the command line."""
    values: dict[str, Any] = {"command": args.command}
    for dest, value in vars(args).items():
        if value is None or dest in ("command", "config", "log_level"):
            continue
        *sections, key = dest.split(".")
        target = values
        for section in sections:
            target = target.setdefault(section, {})
        target[key] = value
    return values


def configure_logging(level: str) -> None:
    """Filter structlog events below ``level``."""
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(
            getattr(logging, level.upper())
        )
    )


def package_version() -> str:
    """Installed version of the package."""
    try:
        return version("neuroquant")
    except PackageNotFoundError:
        return "0+unknown"


def write_provenance(config: ExperimentConfig, outputs: list[Path]) -> Path:
    """Write the resolved configuration, seed, version and a timestamp next to the outputs."""
    path = config.paths.output_dir / "provenance.json"
    document = {
        "command": config.command.value if config.command else None,
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "version": package_version(),
        "created": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(output.name for output in outputs),
    }
    path.write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def _require(path: Path | None, key: str) -> Path:
    if path is None:
        raise ConfigError(f"{key} is required for this command.", [key])
    if not path.is_file():
        raise FileNotFoundError(f"File not found: {path}")
    return path


def _load_code(config: ExperimentConfig) -> tuple[TannerGraph, SystematicEncoder]:
    graph = load_alist(_require(config.paths.alist, "paths.alist"))
    return graph, build_encoder(graph)


def _coded_channel(
    config: ExperimentConfig, graph: TannerGraph, encoder: SystematicEncoder
) -> ChannelModel:
    return ChannelModel(
        kind=ChannelKind.BPSK_AWGN,
        noise_variance=snr_to_variance(config.channel.snr_db, encoder.rate),
        graph=graph,
        encoder=encoder,
        all_zero=config.channel.all_zero,
    )


def _train_config(
    config: ExperimentConfig,
    channel: ChannelModel,
    pipeline: Pipeline,
    **overrides: Any,
) -> TrainConfig:
    settings = dict(
        channel=channel,
        pipeline=pipeline,
        batch_size=config.train.batch_size,
        t_max=config.train.t_max,
        eta=config.train.eta,
        sigma2_floor=config.train.sigma2_floor,
        reduction=config.train.reduction,
        optimizer=OptimizerSettings(**config.optimizer.model_dump()),
        decoder=DecoderConfig(
            iterations=config.decoder.iterations, clip=config.decoder.clip
        ),
        decoder_gradient=config.train.decoder_gradient,
        seed=config.seed,
        workers=config.workers,
        log_every=config.train.log_every,
        distortion_every=config.train.distortion_every,
        distortion_samples=config.evaluation.distortion_samples,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


def _initial_params(
    config: ExperimentConfig, seed: int | None = None
) -> QuantizerParams:
    quantizer = config.quantizer
    return init_params(
        quantizer.hidden_dim,
        quantizer.depth,
        quantizer.levels,
        config.seed if seed is None else seed,
    )


def _train_with_handler(
    train_config: TrainConfig, params: QuantizerParams
) -> tuple[QuantizerParams, Any]:
    handler = SignalHandler()
    try:
        return train(train_config, params, handler)
    finally:
        handler.restore()


def _save_training(
    config: ExperimentConfig, params: QuantizerParams, trace: Any
) -> list[Path]:
    out = config.paths.output_dir
    checkpoint = config.paths.checkpoint or out / "quantizer.json"
    save_checkpoint(params, checkpoint)
    trace.to_csv(out / "trace.csv")
    curve = out / "quantizer_curve.csv"
    export = config.export
    export_curves(extract_table(params, export.low, export.high, export.step), curve)
    return [checkpoint, out / "trace.csv", curve]


def _write_table(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def run_train_gaussian(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Train on the transparent Gaussian source and report the frozen distortion."""
    channel = ChannelModel(kind=ChannelKind.GAUSSIAN_SOURCE, length=1)
    params, trace = _train_with_handler(
        _train_config(config, channel, Pipeline.TRANSPARENT), _initial_params(config)
    )
    outputs = _save_training(config, params, trace)
    distortion = measure_distortion(
        params, config.evaluation.distortion_samples, make_rng(config.seed, 0)
    )
    return (
        f"train-gaussian: steps={len(trace.records)} "
        f"final_loss={trace.final_loss:.6g} "
        f"solid_distortion={distortion:.4f} alpha={params.alpha:.4f}"
    ), outputs


def run_train_ldpc(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Train through the sum-product decoder at the configured SNR."""
    graph, encoder = _load_code(config)
    channel = _coded_channel(config, graph, encoder)
    params, trace = _train_with_handler(
        _train_config(config, channel, Pipeline.QUANTIZE_DECODE),
        _initial_params(config),
    )
    outputs = _save_training(config, params, trace)
    return (
        f"train-ldpc: n={graph.n} k={encoder.k} snr_db={config.channel.snr_db} "
        f"steps={len(trace.records)} final_loss={trace.final_loss:.6g} "
        f"alpha={params.alpha:.4f}"
    ), outputs


def run_eval_ber(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Simulate BER curves of the baseline and/or the frozen quantizer."""
    graph, encoder = _load_code(config)
    evaluation = config.evaluation
    if evaluation.mode == "paired":
        modes = [EvalMode.BASELINE_LLR, EvalMode.FROZEN_NEURAL]
    else:
        modes = [EvalMode(evaluation.mode)]
    params = None
    if EvalMode.FROZEN_NEURAL in modes:
        params = load_checkpoint(_require(config.paths.checkpoint, "paths.checkpoint"))

    results = {}
    outputs = []
    for mode in modes:
        eval_config = EvalConfig(
            snr_db=tuple(evaluation.snr_db),
            min_frames=evaluation.min_frames,
            min_bit_errors=evaluation.min_bit_errors,
            max_frames=evaluation.max_frames,
            chunk_frames=evaluation.chunk_frames,
            decoder=DecoderConfig(
                iterations=config.decoder.iterations,
                clip=config.decoder.clip,
                output=OutputMode.HARD,
                early_exit=config.decoder.early_exit,
            ),
            mode=mode,
            all_zero=config.channel.all_zero,
            seed=config.seed,
            workers=config.workers,
        )
        quantizer = params if mode is EvalMode.FROZEN_NEURAL else None
        points = measure_ber(graph, encoder, quantizer, eval_config)
        path = config.paths.output_dir / f"ber_{mode.value}.csv"
        export_curves(points, path, kind=CurveKind.BER)
        results[mode.value] = points
        outputs.append(path)

    summary_path = config.paths.output_dir / "ber_summary.json"
    write_summary(summary_path, config.model_dump(mode="json"), results)
    outputs.append(summary_path)

    parts = []
    for mode, points in results.items():
        described = ", ".join(f"{point.snr_db:g}dB:{point.ber:.3e}" for point in points)
        parts.append(f"{mode}=[{described}]")
    if len(results) == 2:
        gap = snr_at_ber(results["frozen_neural"], GAP_TARGET_BER) - snr_at_ber(
            results["baseline_llr"], GAP_TARGET_BER
        )
        parts.append(f"gap_at_{GAP_TARGET_BER:g}={gap:.3f}dB")
    return "eval-ber: " + " ".join(parts), outputs


def run_lloyd(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Design the Lloyd-Max quantizer and write its levels and thresholds."""
    quantizer = design(config.lloyd.levels)
    out = config.paths.output_dir
    table = pd.DataFrame(
        {
            "level": list(quantizer.levels),
            "threshold": list(quantizer.thresholds) + [np.nan],
        }
    )
    levels_path = out / "lloyd_levels.csv"
    _write_table(table, levels_path)
    outputs = [levels_path]
    if config.lloyd.grid:
        export = config.export
        grid = np.arange(export.low, export.high + 0.5 * export.step, export.step)
        curve_path = out / "lloyd_curve.csv"
        pairs = [(float(x), float(y)) for x, y in zip(grid, quantizer(grid))]
        export_curves(pairs, curve_path, kind=CurveKind.PAIRS)
        outputs.append(curve_path)
    levels = ", ".join(f"{level:.4f}" for level in quantizer.levels)
    return (
        f"lloyd: L={config.lloyd.levels} levels=[{levels}] "
        f"distortion={quantizer.distortion:.5f} converged={quantizer.converged}"
    ), outputs


def run_export_quantizer(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Write the frozen quantizer curve of a checkpoint."""
    params = load_checkpoint(_require(config.paths.checkpoint, "paths.checkpoint"))
    export = config.export
    table = extract_table(params, export.low, export.high, export.step)
    path = config.paths.output_dir / "quantizer_curve.csv"
    export_curves(table, path, kind=CurveKind.PAIRS)
    plateaus = sorted({output for _, output in table})
    return (
        f"export-quantizer: points={len(table)} distinct_outputs={len(plateaus)} "
        f"outputs=[{', '.join(f'{value:.4f}' for value in plateaus)}]"
    ), [path]


def run_export_staircase(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Write soft staircase curves for every configured temperature."""
    levels = make_level_set(config.quantizer.levels)
    export = config.export
    grid = np.arange(export.low, export.high + 0.5 * export.step, export.step)
    outputs = []
    for temperature in export.temperatures:
        staircase = StaircaseConfig(levels=levels, temperature=temperature)
        path = config.paths.output_dir / f"staircase_sigma2_{temperature:g}.csv"
        pairs = [(float(x), float(soft_staircase(float(x), staircase))) for x in grid]
        export_curves(pairs, path, kind=CurveKind.PAIRS)
        outputs.append(path)
    temperatures = list(export.temperatures)
    return (
        f"export-staircase: L={levels.size} temperatures={temperatures}",
        outputs,
    )


def run_sweep_eta(config: ExperimentConfig) -> tuple[str, list[Path]]:
    """Train for every cooling factor and seed.

    Without an alist file the quantizer is trained on the transparent Gaussian source and judged by its solid
    distortion. With one it is trained through the sum-product decoder and judged by its loss floor.

    """
    coded = config.paths.alist is not None
    if coded:
        channel = _coded_channel(config, *_load_code(config))
        pipeline = Pipeline.QUANTIZE_DECODE
        metric = "floor_loss"
    else:
        channel = ChannelModel(kind=ChannelKind.GAUSSIAN_SOURCE, length=1)
        pipeline = Pipeline.TRANSPARENT
        metric = "final_distortion"
    out = config.paths.output_dir
    rows = []
    outputs = []
    for eta in config.sweep.etas:
        for seed in config.sweep.seeds:
            train_config = _train_config(config, channel, pipeline, eta=eta, seed=seed)
            params, trace = _train_with_handler(
                train_config, _initial_params(config, seed)
            )
            path = out / f"trace_eta{eta:g}_seed{seed}.csv"
            trace.to_csv(path)
            outputs.append(path)
            distortion = (
                math.nan
                if coded
                else measure_distortion(
                    params, config.evaluation.distortion_samples, make_rng(seed, 0)
                )
            )
            rows.append(
                {
                    "eta": eta,
                    "seed": seed,
                    "final_distortion": distortion,
                    "final_loss": trace.final_loss,
                    "floor_loss": trace.floor_loss(),
                }
            )

    columns = ["eta", "seed", "final_distortion", "final_loss", "floor_loss"]
    summary = pd.DataFrame(rows, columns=columns)
    medians = summary.groupby("eta", sort=False)[metric].median().reset_index()
    summary_path = out / "sweep_summary.csv"
    medians_path = out / "sweep_medians.csv"
    for frame, path in ((summary, summary_path), (medians, medians_path)):
        _write_table(frame, path)
    outputs += [summary_path, medians_path]
    described = ", ".join(
        f"{eta:g}:{value:.4f}" for eta, value in zip(medians["eta"], medians[metric])
    )
    return f"sweep-eta: median_{metric}=[{described}]", outputs


COMMANDS: dict[Command, Callable[[ExperimentConfig], tuple[str, list[Path]]]] = {
    Command.TRAIN_GAUSSIAN: run_train_gaussian,
    Command.TRAIN_LDPC: run_train_ldpc,
    Command.EVAL_BER: run_eval_ber,
    Command.LLOYD: run_lloyd,
    Command.EXPORT_QUANTIZER: run_export_quantizer,
    Command.EXPORT_STAIRCASE: run_export_staircase,
    Command.SWEEP_ETA: run_sweep_eta,
}


def run(argv: list[str] | None = None) -> int:
    """Run one experiment.

    :param argv: command line arguments without the program name
    :return: process exit code; 0 on success, 2 for usage or configuration errors, 3 for a missing input file, 4 for
        a non-finite gradient and 5 for a malformed alist file

    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_CONFIG if exit_.code else EXIT_OK

    configure_logging(args.log_level)
    logger = structlog.getLogger("Main")
    try:
        file_values = load_config(args.config) if args.config else {}
        command = Command(args.command)
        defaults = COMMAND_DEFAULTS.get(command, {})
        config = resolve_config(
            merge_values(defaults, file_values), flag_values(args)
        )
        config.paths.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info("Starting experiment.", command=command.value, seed=config.seed)
        summary, outputs = COMMANDS[command](config)
        write_provenance(config, outputs)
    except FileNotFoundError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except AlistParseError as error:
        print(f"error: malformed alist file: {error}", file=sys.stderr)
        return EXIT_MALFORMED_ALIST
    except NonFiniteGradientError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_NON_FINITE
    except ValueError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_CONFIG

    print(summary)
    return EXIT_OK


def main() -> None:
    """Run the command line interface and exit with its code."""
    sys.exit(run(sys.argv[1:]))
