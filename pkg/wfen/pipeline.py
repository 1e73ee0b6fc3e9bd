"""
WFEN pipeline: training, inference, evaluation and ablation behind one object
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .ablation import AblationMixin
from .config import RunConfig, WFENSettings
from .evaluate import EvalMixin
from .train import TrainMixin
from .utils import logger


@dataclass
class WFEN(TrainMixin, EvalMixin, AblationMixin):
    """Wavelet-guided face restoration pipeline"""

    # Configuration
    # ---
    run_config: Optional[RunConfig] = field(default=None)
    """Run configuration, defaults when None."""

    settings: Optional[WFENSettings] = field(default=None)
    """Process settings, read from the environment when None."""

    config_text: Optional[str] = field(default=None)
    """Run-config text echoed into checkpoints; the JSON dump of run_config when None."""

    def __post_init__(self):
        if self.run_config is None:
            self.run_config = RunConfig()
        if self.settings is None:
            self.settings = WFENSettings()
        if self.config_text is None:
            self.config_text = self.run_config.to_json()

        # Use the shared logger, don't configure it
        self.logger = logger

        model = self.run_config.model
        self.logger.debug("WFEN initialized with config:")
        self.logger.debug(
            f"  Model: C={model.base_channels}, downsample={model.downsample}, "
            f"upsample={model.upsample}, attention={model.attention_mode}"
        )
        self.logger.debug(
            f"  Train: {self.run_config.train.steps} steps, seed {self.run_config.train.seed}, "
            f"{self.run_config.train.dataset} data"
        )
        self.logger.debug(f"  Threads: {self.settings.threads}")

    @classmethod
    def from_file(
        cls, path: Union[str, Path, None], settings: Optional[WFENSettings] = None
    ) -> "WFEN":
        """Pipeline for a JSON run-config file, keeping its text verbatim for checkpoints"""
        if path is None:
            return cls(settings=settings)
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Run config not found: {path}")
        text = path.read_text(encoding="utf-8")
        return cls(run_config=RunConfig.parse(text), settings=settings, config_text=text)
