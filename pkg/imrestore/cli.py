"""Command-line front door: degrade images, restore them and score the result.

Exit codes: 0 converged, 1 usage or configuration error, 2 iteration cap
reached, 3 I/O error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from imrestore.core.config import RunConfig, Settings, get_settings, load_run_config, parse_overrides
from imrestore.core.errors import ConfigError, ImageFormatError, RestorationError
from imrestore.core.logging import configure_logging
from imrestore.imaging.degrade import DegradeResult, DegradeSpec, degrade
from imrestore.imaging.io import load_image, save_image
from imrestore.imaging.metrics import measure, psnr
from imrestore.optim.penalty import PenaltyKind
from imrestore.optim.prox import TVKind
from imrestore.optim.trace import IterationTrace
from imrestore.pipeline import RestoreResult, restore

logger = logging.getLogger("imrestore.cli")

TASKS = ("degrade", "deblur", "inpaint", "metrics", "verify-trace")
EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imrestore",
        description="Impulse-noise image restoration by inexact proximal majorization-minimization.",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--task", required=True, choices=TASKS, metavar="{degrade,deblur,inpaint,metrics}")
    parser.add_argument("--config", type=Path, help="key = value file; command-line flags take precedence.")
    parser.add_argument("--in", dest="input", type=Path, help="Input image (PGM/PPM) or trace JSON.")
    parser.add_argument("--ref", type=Path, help="Clean reference image for metrics.")
    parser.add_argument("--out", type=Path, help="Output directory.")
    parser.add_argument("--penalty", choices=[kind.value for kind in PenaltyKind])
    parser.add_argument("--eps", type=float, help="Penalty constant.")
    parser.add_argument("--q", type=float, help="Exponent of the power penalty.")
    parser.add_argument("--nu", type=float, help="TV weight.")
    parser.add_argument("--lambda", dest="lam", type=float, help="Column-sparsity weight (inpainting).")
    parser.add_argument("--noise", type=float, help="Salt-and-pepper level in [0, 1).")
    parser.add_argument("--blur", choices=["average", "gaussian"])
    parser.add_argument("--kernel-size", dest="kernel_size", type=int)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--mask", help="'block', 'random' or a bitmap path (dark pixels are missing).")
    parser.add_argument("--mask-missing", dest="mask_missing", type=float, help="Missing fraction of a random mask.")
    parser.add_argument("--rank", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", help="Inclusive seed range a..b; --in is then the clean image.")
    parser.add_argument("--trace", type=Path, help="Trace CSV path (JSON is written next to it).")
    parser.add_argument("--tv", choices=[kind.value for kind in TVKind])
    parser.add_argument("--no-box", dest="box", action="store_false", help="Drop the [0, 1] box constraint.")
    parser.add_argument("--fft", action="store_true", help="Apply the blur through the FFT.")
    parser.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE", help="Engine parameter override.")
    parser.add_argument("--log-level", dest="log_level")
    parser.add_argument("--workers", type=int, help="Channel-level worker threads.")
    return parser


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _image_suffix(channels: Sequence[np.ndarray]) -> str:
    return ".pgm" if len(channels) == 1 else ".ppm"


def _degrade_spec(run_config: RunConfig, seed: int, blur: bool = True, mask: bool = True) -> DegradeSpec:
    try:
        return DegradeSpec(
            noise_level=run_config.noise,
            blur=run_config.blur if blur else None,
            kernel_size=run_config.kernel_size,
            sigma=run_config.sigma,
            mask=run_config.mask if mask else None,
            mask_missing=run_config.mask_missing,
            seed=seed,
        )
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ConfigError(".".join(str(p) for p in error.get("loc", ())) or "degrade", error["msg"]) from exc


def _output_dir(run_config: RunConfig) -> Path:
    directory = run_config.out or Path(run_config.input).resolve().parent
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _write_degraded(directory: Path, result: DegradeResult, spec: DegradeSpec, source: Path) -> None:
    save_image(directory / f"degraded{_image_suffix(result.channels)}", result.channels)
    if result.mask is not None:
        save_image(directory / "mask.pgm", [result.mask.observed.astype(float)])
    sidecar = spec.model_dump(mode="json")
    sidecar.update(
        source=str(source),
        shape=list(np.shape(result.channels[0])),
        channels=len(result.channels),
        corrupted_pixels=result.corrupted_pixels,
        missing_pixels=result.mask.missing_count if result.mask is not None else 0,
    )
    _write_json(directory / "degrade.json", sidecar)


def cmd_degrade(run_config: RunConfig, settings: Settings) -> int:
    channels = load_image(run_config.input)
    spec = _degrade_spec(run_config, run_config.seed)
    result = degrade(channels, spec)
    directory = _output_dir(run_config)
    _write_degraded(directory, result, spec, run_config.input)
    _write_json(directory / "config.json", run_config.model_dump(mode="json"))
    return EXIT_OK


def _trace_paths(directory: Path, trace: Optional[Path], count: int) -> list[tuple[Path, Path]]:
    base = trace or directory / "trace.csv"
    if count == 1:
        return [(base.with_suffix(".csv"), base.with_suffix(".json"))]
    return [
        (base.with_name(f"{base.stem}_c{index}.csv"), base.with_name(f"{base.stem}_c{index}.json"))
        for index in range(count)
    ]


def _write_restored(directory: Path, result: RestoreResult, trace: Optional[Path]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_image(directory / f"restored{_image_suffix(result.channels)}", result.channels)
    for (csv_path, json_path), channel_trace in zip(_trace_paths(directory, trace, len(result.traces)), result.traces):
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        channel_trace.to_csv(csv_path)
        channel_trace.to_json(json_path)
    if result.metrics is not None:
        _write_json(directory / "metrics.json", result.metrics.model_dump())
    _write_json(directory / "config.json", result.config)


def _exit_for(result: RestoreResult) -> int:
    return EXIT_OK if result.converged else EXIT_CAP


def cmd_restore(run_config: RunConfig, settings: Settings) -> int:
    directory = _output_dir(run_config)
    if run_config.seeds is not None:
        return _restore_seeds(run_config, settings, directory)
    channels = load_image(run_config.input)
    reference = load_image(run_config.ref) if run_config.ref is not None else None
    result = restore(channels, run_config, settings.workers, reference, psnr_cap=settings.psnr_cap)
    _write_restored(directory, result, run_config.trace)
    logger.info(
        "run_finished",
        extra={
            "task": run_config.task,
            "iterations": sum(len(trace) for trace in result.traces),
            "converged": result.converged,
        },
    )
    return _exit_for(result)


def _restore_seeds(run_config: RunConfig, settings: Settings, directory: Path) -> int:
    """One degrade-and-restore round per seed; ``--in`` is the clean image."""
    clean = load_image(run_config.input)
    deblurring = run_config.task == "deblur"
    runs = []
    exit_code = EXIT_OK
    for seed in run_config.seed_range():
        seeded = run_config.model_copy(update={"seed": seed})
        spec = _degrade_spec(seeded, seed, blur=deblurring, mask=not deblurring)
        degraded = degrade(clean, spec)
        seed_dir = directory / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        _write_degraded(seed_dir, degraded, spec, run_config.input)
        trace = seed_dir / run_config.trace.name if run_config.trace is not None else None
        result = restore(degraded.channels, seeded, settings.workers, clean, degraded.mask, settings.psnr_cap)
        _write_restored(seed_dir, result, trace)
        runs.append(
            {
                "seed": seed,
                "psnr": result.metrics.psnr,
                "ssim": result.metrics.ssim,
                "corrupted_psnr": psnr(degraded.channels, clean, settings.psnr_cap),
                "iterations": [len(t) for t in result.traces],
                "termination": [t.termination for t in result.traces],
            }
        )
        exit_code = max(exit_code, _exit_for(result))
    summary = {
        "task": run_config.task,
        "runs": runs,
        "mean_psnr": float(np.mean([entry["psnr"] for entry in runs])),
        "mean_ssim": float(np.mean([entry["ssim"] for entry in runs])),
    }
    _write_json(directory / "summary.json", summary)
    logger.info("seeds_finished", extra={"runs": len(runs), "mean_psnr": summary["mean_psnr"]})
    return exit_code


def cmd_metrics(run_config: RunConfig, settings: Settings) -> int:
    report = measure(load_image(run_config.input), load_image(run_config.ref), settings.psnr_cap)
    print(report.model_dump_json())
    if run_config.out is not None:
        run_config.out.mkdir(parents=True, exist_ok=True)
        _write_json(run_config.out / "metrics.json", report.model_dump())
    return EXIT_OK


def cmd_verify_trace(run_config: RunConfig, settings: Settings) -> int:
    try:
        trace = IterationTrace.from_json(run_config.input)
    except (OSError, ValueError, TypeError) as exc:
        raise ImageFormatError(f"cannot read trace {run_config.input}: {exc}") from exc
    violations = trace.verify()
    for message in violations:
        print(message)
    logger.info("trace_verified", extra={"rows": len(trace), "violations": len(violations)})
    return EXIT_OK if not violations else EXIT_CONFIG


COMMANDS = {
    "degrade": cmd_degrade,
    "deblur": cmd_restore,
    "inpaint": cmd_restore,
    "metrics": cmd_metrics,
    "verify-trace": cmd_verify_trace,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    try:
        settings = get_settings()
    except ValidationError as exc:
        print(f"Error: invalid environment settings: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    updates = {key: args.pop(key) for key in ("log_level", "workers") if key in args}
    if updates:
        try:
            settings = Settings(**{**settings.model_dump(), **updates})
        except ValidationError as exc:
            print(f"Error: {exc.errors()[0]['msg']}", file=sys.stderr)
            return EXIT_CONFIG
    configure_logging(settings.log_level, settings.log_format)

    config_file = args.pop("config", None)
    try:
        args["overrides"] = parse_overrides(args.pop("overrides", []))
        run_config = load_run_config(args, config_file)
        return COMMANDS[run_config.task](run_config, settings)
    except RestorationError as exc:
        logger.error("run_failed", extra={"error": str(exc), "exit_code": exc.exit_code})
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error("io_failed", extra={"error": str(exc)})
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_IO
