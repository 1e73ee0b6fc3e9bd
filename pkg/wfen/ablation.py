"""
Downsampling ablation harness

Contains:
- aliasing_benchmark(): information preserved by 2x average pooling vs the
  wavelet split on a +-1 checkerboard
- AblationMixin: trains every downsampling variant under one seed and data
  order, scores each on held-out synthetic images, and renders the comparison
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Union

import numpy as np

from .config import DOWNSAMPLE_VARIANTS, RunConfig
from .data import SyntheticDataset, make_pair
from .errors import ConfigError, WFENError
from .functional import avg_pool2
from .imageio import ImageBuffer
from .metrics import MetricReport, evaluate_pair
from .model import WFENModel, build_model
from .tensor import Tensor, no_grad
from .train import train_loop
from .utils import format_table, logger
from .wavelet import dwt2_haar, idwt2_haar

if TYPE_CHECKING:
    from .config import WFENSettings

# (PSNR dB, SSIM) at x8 on Helen with the full-size network
REFERENCE_RESULTS = {
    "stride": (26.22, 0.7743),
    "avgpool": (26.26, 0.7747),
    "bicubic": (26.21, 0.7731),
    "wfd": (26.36, 0.7795),
}


def checkerboard(size: int = 8, channels: int = 1) -> np.ndarray:
    """1 x channels x size x size array of alternating +1 / -1"""
    yy, xx = np.indices((size, size))
    board = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
    return np.broadcast_to(board, (1, channels, size, size)).copy()


@dataclass
class AliasingBenchmark:
    avgpool_max_abs: float
    wavelet_reconstruction_error: float
    high_band_energy_fraction: float

    @property
    def avgpool_destroys_signal(self) -> bool:
        return self.avgpool_max_abs == 0.0

    @property
    def wavelet_is_lossless(self) -> bool:
        return self.wavelet_reconstruction_error == 0.0

    def to_text(self) -> str:
        return (
            f"Checkerboard (+-1) information preservation:\n"
            f"  avgpool-2 max |feature|: {self.avgpool_max_abs:.3g}\n"
            f"  wavelet bands -> inverse max error: {self.wavelet_reconstruction_error:.3g}\n"
            f"  energy in high bands: {100 * self.high_band_energy_fraction:.1f}%"
        )


def aliasing_benchmark(size: int = 8, channels: int = 1) -> AliasingBenchmark:
    """
    Feed a +-1 checkerboard through 2x average pooling and the Haar split

    Pooling averages every 2x2 cell to exactly zero; the four subbands keep the
    pattern (all of it in the diagonal band) and invert back bit-exactly.
    """
    x = Tensor(checkerboard(size, channels))
    with no_grad():
        pooled = avg_pool2(x).data
        bands = dwt2_haar(x)
        restored = idwt2_haar(bands).data
    energies = [float(np.sum(b.data.astype(np.float64) ** 2)) for b in bands.bands()]
    total = sum(energies)
    return AliasingBenchmark(
        avgpool_max_abs=float(np.max(np.abs(pooled))),
        wavelet_reconstruction_error=float(np.max(np.abs(restored - x.data))),
        high_band_energy_fraction=sum(energies[1:]) / total if total else 0.0,
    )


@dataclass
class VariantResult:
    variant: str
    param_count: int
    initial_loss: float
    final_loss: float
    metrics: MetricReport
    wall_time: float
    data_digest: str


@dataclass
class AblationReport:
    """Comparison of downsampling variants trained identically"""

    results: List[VariantResult]
    baseline: MetricReport
    benchmark: AliasingBenchmark
    seed: int
    steps: int
    image_size: int
    metric_mode: str
    processing_time: float = 0.0
    notes: List[str] = field(default_factory=list)

    @property
    def best_variant(self) -> Optional[str]:
        if not self.results:
            return None
        return max(self.results, key=lambda r: (r.metrics.psnr_db, r.metrics.ssim)).variant

    def to_text(self) -> str:
        rows = [
            (
                r.variant,
                r.param_count,
                r.initial_loss,
                r.final_loss,
                r.metrics.psnr_db,
                r.metrics.ssim,
                f"{r.wall_time:.1f}s",
            )
            for r in self.results
        ]
        rows.append(("bicubic input", 0, "-", "-", self.baseline.psnr_db, self.baseline.ssim, "-"))
        table = format_table(
            ("variant", "params", "loss@1", "loss@end", "psnr", "ssim", "time"), rows
        )
        reference = ", ".join(
            f"{name} {psnr:.2f}/{ssim:.4f}" for name, (psnr, ssim) in REFERENCE_RESULTS.items()
        )
        lines = [
            f"Downsampling ablation (seed {self.seed}, {self.steps} steps, "
            f"{self.image_size}px, metrics {self.metric_mode})",
            "",
            table,
            "",
            f"Best at this scale: {self.best_variant}",
            "",
            self.benchmark.to_text(),
            "",
            f"Reference values (Helen, x8, full-size network): {reference}",
        ]
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return (
            f"Ablation Summary:\n"
            f"  Variants: {', '.join(r.variant for r in self.results)}\n"
            f"  Best: {self.best_variant}\n"
            f"  Processing time: {self.processing_time:.2f} seconds"
        )


def held_out_metrics(model: Optional[WFENModel], run_config: RunConfig) -> MetricReport:
    """
    Mean metrics on synthetic images disjoint from the training indices

    With model=None the pre-upsampled input itself is scored (bicubic baseline).
    """
    train, evaluation = run_config.train, run_config.eval
    dataset = SyntheticDataset(
        train.seed, evaluation.num_images, train.image_size, evaluation.index_offset
    )
    reports = []
    with no_grad():
        for i in range(len(dataset)):
            lr_up, hr = make_pair(dataset[i].to_tensor(), train.sr_factor)
            output = model(lr_up) if model is not None else lr_up
            restored = ImageBuffer.from_tensor(np.clip(output.data, 0.0, 1.0))
            reports.append(
                evaluate_pair(restored, ImageBuffer.from_tensor(hr), evaluation.metric_mode)
            )
    return _mean_report(reports, evaluation.metric_mode)


def _mean_report(reports: List[MetricReport], mode: str) -> MetricReport:
    return MetricReport(
        float(np.mean([r.psnr_db for r in reports])),
        float(np.mean([r.ssim for r in reports])),
        mode,
    )


def variant_config(run_config: RunConfig, variant: str) -> RunConfig:
    """Copy of the run config differing only in the downsampling operator"""
    if variant not in DOWNSAMPLE_VARIANTS:
        valid = ", ".join(DOWNSAMPLE_VARIANTS)
        raise ConfigError([f"unknown downsample variant '{variant}', valid: {valid}"])
    config = run_config.model_copy(deep=True)
    config.model.downsample = variant
    config.check()
    return config


class AblationMixin:
    """AblationMixin class containing the downsampling ablation for WFEN"""

    run_config: RunConfig
    settings: "WFENSettings"

    def ablate_downsample(
        self,
        variants: Sequence[str] = DOWNSAMPLE_VARIANTS,
        output_dir: Union[str, Path, None] = None,
        seed: Optional[int] = None,
    ) -> AblationReport:
        """
        Train and score each downsampling variant under identical conditions

        Args:
            variants: Subset of stride, avgpool, bicubic, wfd
            output_dir: Where per-variant checkpoints and the report go (None: no files)
            seed: Overrides train.seed for every variant

        Returns:
            AblationReport

        Raises:
            ConfigError: unknown variant names
            WFENError: if the variants did not see the same training batches
        """
        start_time = time.time()
        base = self.run_config.model_copy(deep=True)
        if seed is not None:
            base.train.seed = seed
        configs = [variant_config(base, v) for v in variants]

        out = Path(output_dir) if output_dir is not None else None
        results: List[VariantResult] = []
        for variant, config in zip(variants, configs):
            logger.info(f"Ablation variant '{variant}'")
            model, store = build_model(config.model, config.train.seed)
            checkpoint = out / variant / config.io.checkpoint_name if out is not None else None
            report = train_loop(model, store, config, self.settings, checkpoint_path=checkpoint)
            metrics = held_out_metrics(model, config)
            logger.info(f"  {variant}: {metrics.to_text()}")
            results.append(
                VariantResult(
                    variant=variant,
                    param_count=report.param_count,
                    initial_loss=report.initial_loss,
                    final_loss=report.final_loss,
                    metrics=metrics,
                    wall_time=report.wall_time,
                    data_digest=report.data_digest,
                )
            )

        digests = {r.data_digest for r in results}
        if len(digests) > 1:
            raise WFENError(
                "Ablation variants trained on different batches: "
                + ", ".join(f"{r.variant}={r.data_digest[:12]}" for r in results)
            )

        ablation = AblationReport(
            results=results,
            baseline=held_out_metrics(None, base),
            benchmark=aliasing_benchmark(),
            seed=base.train.seed,
            steps=base.train.steps,
            image_size=base.train.image_size,
            metric_mode=base.eval.metric_mode,
            processing_time=time.time() - start_time,
            notes=[f"Training data digest: {next(iter(digests))[:16]}"] if digests else [],
        )
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            path = out / "ablation_downsample.txt"
            path.write_text(ablation.to_text(), encoding="utf-8")
            logger.info(f"Wrote ablation report to {path}")
        logger.info(ablation.summary())
        return ablation
