"""
Inference and directory evaluation

Contains methods for running a trained checkpoint on single images and for
scoring it against a directory of ground-truth images
"""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from .checkpoint import load_checkpoint
from .config import RunConfig
from .data import bicubic_resize, make_pair
from .errors import WFENError
from .imageio import ImageBuffer, ppm_read, ppm_write
from .metrics import MetricReport, evaluate_pair
from .model import WFENModel, build_model
from .nn import ParameterStore
from .tensor import Tensor, no_grad
from .utils import logger

if TYPE_CHECKING:
    from .config import WFENSettings


@dataclass
class LoadedModel:
    model: WFENModel
    store: ParameterStore
    run_config: RunConfig
    source: str


@dataclass
class EvalResult:
    """Result of scoring a checkpoint on a directory of images"""

    reports: Dict[str, MetricReport]
    failed_files: List[str]
    total_files: int
    processing_time: float
    errors: Dict[str, str] = field(default_factory=dict)
    metric_mode: str = "rgb_mean"

    @property
    def success_rate(self) -> float:
        if self.total_files == 0:
            return 0.0
        return (len(self.reports) / self.total_files) * 100

    @property
    def mean(self) -> MetricReport:
        if not self.reports:
            return MetricReport(float("nan"), float("nan"), self.metric_mode)
        values = [self.reports[name] for name in sorted(self.reports)]
        return MetricReport(
            float(np.mean([r.psnr_db for r in values])),
            float(np.mean([r.ssim for r in values])),
            self.metric_mode,
        )

    def to_text(self) -> str:
        lines = [f"{name} {self.reports[name].to_text()}" for name in sorted(self.reports)]
        lines.append(self.mean.to_text())
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return (
            f"Evaluation Summary:\n"
            f"  Total images: {self.total_files}\n"
            f"  Scored: {len(self.reports)} ({self.success_rate:.1f}%)\n"
            f"  Failed: {len(self.failed_files)}\n"
            f"  Mean: {self.mean.to_text()} ({self.metric_mode})\n"
            f"  Processing time: {self.processing_time:.2f} seconds"
        )


def load_model(checkpoint_path: Union[str, Path], fallback: Optional[RunConfig] = None):
    """
    Rebuild a model from a checkpoint

    The architecture comes from the run config echoed in the checkpoint; a
    checkpoint without one uses `fallback`.
    """
    checkpoint = load_checkpoint(checkpoint_path)
    if checkpoint.config_text.strip():
        run_config = RunConfig.parse(checkpoint.config_text)
    else:
        run_config = fallback if fallback is not None else RunConfig()
    model, store = build_model(run_config.model, run_config.train.seed)
    store.load_state_dict(checkpoint.tensors)
    return LoadedModel(model, store, run_config, str(checkpoint_path))


def prepare_input(image: ImageBuffer, run_config: RunConfig) -> Tensor:
    """Network input for an image, pre-upsampled when it is 1/sr_factor of the configured size"""
    x = image.to_tensor()
    size, factor = run_config.train.image_size, run_config.train.sr_factor
    if factor > 1 and (image.height, image.width) == (size // factor, size // factor):
        logger.debug(f"Pre-upsampling {image.source} from {image.height}px to {size}px")
        x = bicubic_resize(x, size, size)
    return x


def restore(loaded: LoadedModel, x: Tensor) -> np.ndarray:
    with no_grad():
        return loaded.model(x).data


class EvalMixin:
    """EvalMixin class containing inference and evaluation functionality for WFEN"""

    run_config: RunConfig
    settings: "WFENSettings"

    def load(self, checkpoint_path: Union[str, Path]) -> LoadedModel:
        return load_model(checkpoint_path, self.run_config)

    def infer(
        self,
        checkpoint_path: Union[str, Path],
        input_path: Union[str, Path],
        output_path: Union[str, Path],
    ) -> ImageBuffer:
        """
        Restore one image and write it as P6

        Args:
            checkpoint_path: Trained checkpoint
            input_path: Low-resolution (1/sr_factor) or pre-upsampled P6 image
            output_path: Destination P6 file

        Returns:
            The restored image (clamped on write)
        """
        loaded = self.load(checkpoint_path)
        image = ppm_read(input_path)
        output = restore(loaded, prepare_input(image, loaded.run_config))
        result = ImageBuffer.from_tensor(output, source=str(output_path))
        ppm_write(result, output_path)
        logger.info(
            f"Restored {input_path} ({image.width}x{image.height}) -> {output_path} "
            f"({result.width}x{result.height})"
        )
        return result

    def _score_single(
        self, loaded: LoadedModel, path: Path, mode: str
    ) -> Tuple[bool, str, Optional[MetricReport], Optional[str]]:
        try:
            hr_image = ppm_read(path)
            lr_up, hr = make_pair(hr_image.to_tensor(), loaded.run_config.train.sr_factor)
            output = np.clip(loaded.model(lr_up).data, 0.0, 1.0)
            restored, truth = ImageBuffer.from_tensor(output), ImageBuffer.from_tensor(hr)
            report = evaluate_pair(restored, truth, mode)
            logger.debug(f"{path.name}: {report.to_text()}")
            return True, path.name, report, None
        except (WFENError, OSError) as e:
            error_msg = f"Failed to evaluate {path}: {e}"
            logger.error(error_msg)
            return False, path.name, None, error_msg

    def evaluate_directory(
        self,
        checkpoint_path: Union[str, Path],
        directory: Union[str, Path],
        max_workers: Optional[int] = None,
    ) -> EvalResult:
        """
        Score a checkpoint on every P6 image of a directory

        Each ground-truth image is degraded with the training pipeline, restored
        and compared with the configured metric mode. Images are processed
        concurrently; results are aggregated in sorted file-name order.

        Args:
            checkpoint_path: Trained checkpoint
            directory: Folder of ground-truth .ppm files
            max_workers: Worker threads (defaults to WFEN_THREADS)

        Returns:
            EvalResult with per-image and mean metrics
        """
        start_time = time.time()
        folder = Path(directory)
        if not folder.is_dir():
            raise FileNotFoundError(f"Folder not found: {directory}")
        paths = sorted(folder.glob("*.ppm"))
        mode = self.run_config.eval.metric_mode
        if not paths:
            logger.warning(f"No .ppm files found in {folder}")
            return EvalResult({}, [], 0, 0.0, metric_mode=mode)

        loaded = self.load(checkpoint_path)
        workers = max_workers or self.settings.threads
        logger.info(f"Evaluating {len(paths)} images with {workers} worker(s)")

        reports: Dict[str, MetricReport] = {}
        failed_files: List[str] = []
        errors: Dict[str, str] = {}
        pbar = tqdm(
            total=len(paths),
            desc="Evaluating",
            unit="image",
            disable=not self.settings.show_progress,
        )
        # graph recording is process-global; switch it off once for all workers
        with no_grad():
            try:
                with ThreadPoolExecutor(max_workers=workers) as executor:
                    futures = [
                        executor.submit(self._score_single, loaded, path, mode) for path in paths
                    ]
                    for future in as_completed(futures):
                        success, name, report, error_msg = future.result()
                        if success:
                            reports[name] = report
                        else:
                            failed_files.append(name)
                            errors[name] = error_msg
                        pbar.update(1)
            finally:
                pbar.close()

        result = EvalResult(
            reports=dict(sorted(reports.items())),
            failed_files=sorted(failed_files),
            total_files=len(paths),
            processing_time=time.time() - start_time,
            errors=errors,
            metric_mode=mode,
        )
        logger.info(result.summary())
        return result
