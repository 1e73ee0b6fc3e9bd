"""
Configuration classes for WFEN

Contains:
- WFENSettings: process-level settings with environment variable support
- WFENConfig / TrainConfig / EvalConfig / IOConfig: sections of the JSON run config
- RunConfig: the complete run description, with cross-field validation
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .utils import get_env_value

# OS environment takes precedence over .env
load_dotenv(dotenv_path=".env", override=False)

DOWNSAMPLE_VARIANTS = ("stride", "avgpool", "bicubic", "wfd")
TINY_PRESET = {
    "base_channels": 16,
    "encoder_blocks": [1, 1, 1],
    "bottleneck_blocks": 2,
    "decoder_blocks": [1, 1, 1],
}


@dataclass
class WFENSettings:
    """Process-level settings with environment variable support"""

    # Parallelism
    # ---
    threads: int = field(default=get_env_value("WFEN_THREADS", 1, int))
    """Maximum number of worker threads used by directory evaluation."""

    # Logging
    # ---
    log_level: str = field(default=get_env_value("WFEN_LOG_LEVEL", "INFO", str))
    """Log level of the stderr sink."""

    show_progress: bool = field(default=get_env_value("WFEN_SHOW_PROGRESS", True, bool))
    """Show tqdm progress bars for training and evaluation loops."""

    # Output
    # ---
    output_dir: str = field(default=get_env_value("WFEN_OUTPUT_DIR", "./runs", str))
    """Default directory for checkpoints and reports when the run config names none."""

    def __post_init__(self):
        if self.threads < 1:
            self.threads = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WFENConfig(_Section):
    """Architecture of the network; fully determines parameter names and shapes"""

    base_channels: int = Field(40, ge=1)
    channel_multipliers: List[int] = Field(default_factory=lambda: [1, 2, 4, 4])
    encoder_blocks: List[int] = Field(default_factory=lambda: [2, 1, 1])
    bottleneck_blocks: int = Field(6, ge=0)
    decoder_blocks: List[int] = Field(default_factory=lambda: [1, 1, 1])
    windows: List[int] = Field(default_factory=lambda: [8, 8, 8, 8])
    heads: List[int] = Field(default_factory=lambda: [1, 2, 4, 4])
    ffn_expansion: int = Field(2, ge=1)
    norm_eps: float = Field(1e-5, gt=0)
    shift_windows: bool = True
    shuffle_heads: bool = True
    qk_norm: bool = False
    attention_mode: Literal["full", "regional", "global"] = "full"
    downsample: Literal["wfd", "stride", "avgpool", "bicubic"] = "wfd"
    upsample: Literal["wfu", "nearest"] = "wfu"
    tiny: bool = False

    @model_validator(mode="after")
    def _apply_tiny_preset(self) -> "WFENConfig":
        """The preset fills only sizes the caller left unset"""
        if self.tiny:
            explicit = set(self.model_fields_set)
            for key, value in TINY_PRESET.items():
                if key not in explicit:
                    setattr(self, key, list(value) if isinstance(value, list) else value)
        return self

    def stage_channels(self) -> List[int]:
        return [self.base_channels * m for m in self.channel_multipliers]

    def violations(self, image_size: Optional[Tuple[int, int]] = None) -> List[str]:
        """
        Every structural constraint the config (and optionally an input size) breaks

        Args:
            image_size: (H, W) of the network input, if known

        Returns:
            Human-readable violations, empty when valid
        """
        problems: List[str] = []
        for name, values, expected in (
            ("channel_multipliers", self.channel_multipliers, 4),
            ("windows", self.windows, 4),
            ("heads", self.heads, 4),
            ("encoder_blocks", self.encoder_blocks, 3),
            ("decoder_blocks", self.decoder_blocks, 3),
        ):
            if len(values) != expected:
                problems.append(f"model.{name} must have {expected} entries, got {len(values)}")
            if any(v < (0 if name.endswith("blocks") else 1) for v in values):
                problems.append(f"model.{name} has out-of-range entries: {values}")
        if problems:
            return problems

        for i, (channels, heads) in enumerate(zip(self.stage_channels(), self.heads)):
            if channels % heads:
                problems.append(
                    f"model.heads[{i}]={heads} does not divide stage {i} channels {channels}"
                )

        if image_size is not None:
            H, W = image_size
            if H <= 0 or W <= 0 or H % 8 or W % 8:
                problems.append(f"input extents {H}x{W} must be positive multiples of 8")
                return problems
            for i, window in enumerate(self.windows):
                # stage i runs at H/2^i; the WFD low band of stage i at H/2^(i+1)
                extents = [(H >> i, W >> i)]
                if i < 3 and self.downsample == "wfd":
                    extents.append((H >> (i + 1), W >> (i + 1)))
                for h, w in extents:
                    n = min(window, h, w)
                    if h % n or w % n:
                        problems.append(
                            f"model.windows[{i}]={window} (effective {n}) does not tile {h}x{w}"
                        )
        return problems


class TrainConfig(_Section):
    steps: int = Field(1000, ge=0)
    batch_size: int = Field(4, ge=1)
    seed: int = Field(0, ge=0)
    lr: float = Field(2e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.99, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    lr_schedule: Literal["constant"] = "constant"
    loss: Literal["l1"] = "l1"
    loss_weight: float = Field(1.0, gt=0)
    dataset: Literal["synthetic", "directory"] = "synthetic"
    data_dir: Optional[str] = None
    num_images: int = Field(64, ge=1)
    image_size: int = Field(128, ge=8)
    sr_factor: int = Field(8, ge=1)
    log_every: int = Field(50, ge=1)
    checkpoint_every: int = Field(0, ge=0)


class EvalConfig(_Section):
    metric_mode: Literal["rgb_mean", "luma"] = "rgb_mean"
    num_images: int = Field(8, ge=1)
    index_offset: int = Field(1_000_000, ge=0)


class IOConfig(_Section):
    output_dir: Optional[str] = None
    checkpoint_name: str = "model.wfen"
    report_name: str = "train_report.txt"


class RunConfig(_Section):
    """Complete, self-describing description of one run"""

    model: WFENConfig = Field(default_factory=WFENConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    io: IOConfig = Field(default_factory=IOConfig)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        """
        Parse and validate JSON run-config text

        Raises:
            ConfigError: listing every schema and cross-field violation
        """
        try:
            config = cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError([_format_error(err) for err in e.errors()]) from e
        config.check()
        return config

    @classmethod
    def load(cls, path: Union[str, Path, None]) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Run config not found: {path}")
        return cls.parse(path.read_text(encoding="utf-8"))

    def violations(self) -> List[str]:
        problems = self.model.violations((self.train.image_size, self.train.image_size))
        if self.train.image_size % self.train.sr_factor:
            problems.append(
                f"train.image_size={self.train.image_size} not divisible by "
                f"train.sr_factor={self.train.sr_factor}"
            )
        if self.train.dataset == "directory" and not self.train.data_dir:
            problems.append("train.data_dir is required when train.dataset is 'directory'")
        return problems

    def check(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigError(problems)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=False)

    @classmethod
    def defaults_json(cls) -> str:
        return cls().to_json()

    def output_dir(self, settings: Optional[WFENSettings] = None) -> Path:
        settings = settings or WFENSettings()
        return Path(self.io.output_dir or settings.output_dir)


def _format_error(err: dict) -> str:
    location = ".".join(str(part) for part in err["loc"]) or "<root>"
    return f"{location}: {err['msg']}"
