"""
Command-line interface

    wfen dwt IMAGE --out PREFIX
    wfen idwt PREFIX --out IMAGE
    wfen train [--config FILE] [--seed N] [--out DIR]
    wfen infer CHECKPOINT IMAGE --out IMAGE
    wfen eval CHECKPOINT DIRECTORY [--config FILE]
    wfen gradcheck [SCOPE]
    wfen ablate-downsample [--config FILE] [--variant NAME ...] [--seed N] [--out DIR]
    wfen config [--defaults | --config FILE]

Every WFEN error is reported as a one-line "Error: ..." message with exit code 1.
"""

import functools
import json
import sys
from pathlib import Path
from typing import Callable, Optional, Tuple

import click
import numpy as np

from . import __version__
from .ablation import aliasing_benchmark
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DOWNSAMPLE_VARIANTS, RunConfig, WFENSettings
from .errors import FormatError, ShapeError, WFENError
from .gradcheck import gradcheck_suite
from .imageio import ImageBuffer, ppm_read, ppm_write, subband_display
from .pipeline import WFEN
from .tensor import float64_mode
from .utils import configure_logging, format_table, logger
from .wavelet import BAND_NAMES, haar_forward, haar_inverse

LAYER_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
BANDS_SUFFIX = "_bands.wfen"


def _handle_errors(func: Callable) -> Callable:
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (WFENError, FileNotFoundError) as e:
            first_line = str(e).splitlines()[0] if str(e) else type(e).__name__
            click.echo(f"Error: {first_line}", err=True)
            for line in str(e).splitlines()[1:]:
                click.echo(line, err=True)
            sys.exit(1)

    return wrapper


def _settings(ctx: click.Context) -> WFENSettings:
    return ctx.obj["settings"]


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option(
    "--mode",
    type=click.Choice(["f32", "f64"]),
    default="f32",
    show_default=True,
    help="Tensor precision",
)
@click.version_option(__version__, prog_name="wfen")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, mode: str):
    """Wavelet-guided face super-resolution"""
    settings = WFENSettings()
    configure_logging("DEBUG" if verbose else settings.log_level)
    if mode == "f64":
        ctx.with_resource(float64_mode())
    ctx.ensure_object(dict)
    ctx.obj["settings"] = settings
    ctx.obj["mode"] = mode


# ------------------------------------------------------------------
# Wavelet inspection
# ------------------------------------------------------------------


@cli.command()
@click.argument("image", type=click.Path(dir_okay=False))
@click.option("--out", "prefix", required=True, help="Output prefix for band files")
@_handle_errors
def dwt(image: str, prefix: str):
    """Split a P6 image into its four Haar subbands."""
    source = ppm_read(image)
    if source.height % 2 or source.width % 2:
        raise ShapeError(
            f"{image}: dwt needs even extents, got {source.width}x{source.height}"
        )
    # byte units keep every band integer-valued
    pixels = np.transpose(source.to_bytes().astype(np.float64), (2, 0, 1))[None]
    bands = np.split(haar_forward(pixels)[0], 4, axis=0)

    header = json.dumps(
        {"kind": "haar_bands", "units": "bytes", "height": source.height, "width": source.width}
    )
    save_checkpoint(
        prefix + BANDS_SUFFIX, dict(zip(BAND_NAMES, bands)), config_text=header
    )
    views = subband_display(*(band / 255.0 for band in bands), source=image)
    for name, view in zip(BAND_NAMES, views):
        ppm_write(view, f"{prefix}_{name}.ppm")
    click.echo(
        f"Wrote {', '.join(f'{prefix}_{n}.ppm' for n in BAND_NAMES)} and {prefix}{BANDS_SUFFIX}"
    )


@cli.command()
@click.argument("prefix")
@click.option("--out", "output", required=True, help="Reconstructed P6 image")
@_handle_errors
def idwt(prefix: str, output: str):
    """Rebuild an image from the raw bands written by `wfen dwt`."""
    path = Path(prefix + BANDS_SUFFIX)
    checkpoint = load_checkpoint(path)
    missing = [n for n in BAND_NAMES if n not in checkpoint.tensors]
    if missing:
        raise FormatError(f"{path}: missing band(s) {', '.join(missing)}")
    bands = [checkpoint.tensors[n].astype(np.float64) for n in BAND_NAMES]
    pixels = haar_inverse(np.concatenate(bands, axis=0)[None])[0]
    rounded = np.rint(pixels)
    if np.any(rounded < 0) or np.any(rounded > 255):
        raise FormatError(f"{path}: bands reconstruct values outside 0..255")
    image = ImageBuffer.from_bytes(np.transpose(rounded, (1, 2, 0)).astype(np.uint8), output)
    ppm_write(image, output)
    click.echo(f"Wrote {output} ({image.width}x{image.height})")


# ------------------------------------------------------------------
# Training and inference
# ------------------------------------------------------------------


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run config")
@click.option("--seed", type=click.IntRange(min=0), help="Override train.seed")
@click.option("--out", "output_dir", help="Output directory for checkpoint and report")
@click.pass_context
@_handle_errors
def train(ctx: click.Context, config_path: Optional[str], seed: Optional[int], output_dir):
    """Train a model and write its checkpoint and loss report."""
    pipeline = WFEN.from_file(config_path, settings=_settings(ctx))
    report = pipeline.train(output_dir=output_dir, seed=seed)
    for path in report.checkpoints[-1:]:
        click.echo(f"checkpoint {path}")
    click.echo(f"step {report.steps} loss {report.final_loss:.6f}")


@cli.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("image", type=click.Path(dir_okay=False))
@click.option("--out", "output", required=True, help="Restored P6 image")
@click.pass_context
@_handle_errors
def infer(ctx: click.Context, checkpoint: str, image: str, output: str):
    """Restore one image with a trained checkpoint."""
    result = WFEN(settings=_settings(ctx)).infer(checkpoint, image, output)
    click.echo(f"Wrote {output} ({result.width}x{result.height})")


@cli.command(name="eval")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Eval settings")
@click.option("--out", "output", help="Write per-image results to this file")
@click.pass_context
@_handle_errors
def evaluate(ctx: click.Context, checkpoint: str, directory: str, config_path, output):
    """Score a checkpoint against a directory of ground-truth images."""
    pipeline = WFEN.from_file(config_path, settings=_settings(ctx))
    result = pipeline.evaluate_directory(checkpoint, directory)
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(result.to_text(), encoding="utf-8")
    if result.failed_files:
        click.echo(f"{len(result.failed_files)} image(s) failed", err=True)
    click.echo(result.mean.to_text())


@cli.command()
@click.argument("scope", default="all")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.pass_context
@_handle_errors
def gradcheck(ctx: click.Context, scope: str, seed: int):
    """Compare analytic and finite-difference gradients (always 64-bit)."""
    if ctx.obj["mode"] == "f32":
        logger.debug("gradcheck runs in 64-bit precision regardless of --mode")
    rows = gradcheck_suite(scope, seed=seed)
    failed = False
    table = []
    for row in rows:
        tolerance = MODEL_TOLERANCE if row.layer == "model" else LAYER_TOLERANCE
        ok = row.max_rel_error < tolerance
        failed = failed or not ok
        table.append(
            (row.layer, row.max_rel_error, row.coords, row.skipped, "ok" if ok else "FAIL")
        )
    click.echo(format_table(("layer", "max_rel_error", "coords", "skipped", "status"), table))
    if failed:
        sys.exit(1)


@cli.command(name="ablate-downsample")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run config")
@click.option(
    "--variant",
    "variants",
    multiple=True,
    help=f"Variant(s) to run: {', '.join(DOWNSAMPLE_VARIANTS)} (default: all)",
)
@click.option("--seed", type=click.IntRange(min=0), help="Override train.seed")
@click.option("--out", "output_dir", help="Directory for variant checkpoints and the report")
@click.option("--benchmark-only", is_flag=True, help="Only run the checkerboard benchmark")
@click.pass_context
@_handle_errors
def ablate_downsample(
    ctx: click.Context,
    config_path: Optional[str],
    variants: Tuple[str, ...],
    seed: Optional[int],
    output_dir: Optional[str],
    benchmark_only: bool,
):
    """Train each downsampling variant identically and compare them."""
    if benchmark_only:
        click.echo(aliasing_benchmark().to_text())
        return
    pipeline = WFEN.from_file(config_path, settings=_settings(ctx))
    report = pipeline.ablate_downsample(
        variants=variants or DOWNSAMPLE_VARIANTS, output_dir=output_dir, seed=seed
    )
    click.echo(report.to_text(), nl=False)


@cli.command()
@click.option("--defaults", is_flag=True, help="Print the default run config")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Validate a file")
@_handle_errors
def config(defaults: bool, config_path: Optional[str]):
    """Print the default run config or validate one."""
    if config_path:
        click.echo(RunConfig.load(config_path).to_json())
    else:
        if not defaults:
            logger.debug("No --config given, printing defaults")
        click.echo(RunConfig.defaults_json())


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
