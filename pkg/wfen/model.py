"""
Wavelet-guided encoder-decoder network

Contains:
- WaveletFeatureDownsample (WFD): low band through an FDT block, high bands through
  a residual block, fused by a 1x1 convolution
- WaveletFeatureUpgrade (WFU): decoder feature joins the encoder low band, encoder
  high bands are refined, the inverse transform restores resolution
- Downsample/upsample replacements used by the ablation harness
- WFENModel: shallow conv, three encoder stages, bottleneck, three decoder stages, head
"""

from collections import OrderedDict
from typing import Dict, List, Tuple

from .config import DOWNSAMPLE_VARIANTS, WFENConfig
from .data import bicubic_resize
from .errors import ConfigError, ShapeError
from .fdt import FDTBlock, build_stage
from .functional import avg_pool2, upsample_nearest2
from .nn import Conv2d, Module, ModuleList, ParameterStore, ResidualBlock, init_parameters
from .tensor import Tensor, concat, split
from .utils import logger
from .wavelet import dwt2_haar, idwt2_haar, subbands_from

COMPONENTS = ("shallow", "encoder", "bottleneck", "decoder", "fuse_out")


def _block_kwargs(config: WFENConfig) -> dict:
    return dict(
        mode=config.attention_mode,
        shuffle=config.shuffle_heads,
        ffn_expansion=config.ffn_expansion,
        eps=config.norm_eps,
        shift_windows=config.shift_windows,
        qk_norm=config.qk_norm,
    )


class WaveletFeatureDownsample(Module):
    def __init__(
        self, in_channels: int, out_channels: int, window: int, heads: int, config: WFENConfig
    ):
        super().__init__()
        self.in_channels = in_channels
        self.low = FDTBlock(in_channels, window, heads, **_block_kwargs(config))
        self.high = ResidualBlock(3 * in_channels, in_channels)
        self.fuse = Conv2d(2 * in_channels, out_channels, 1)

    def pre_fusion(self, f: Tensor) -> Tensor:
        """concat(F_low, F_high) before the 1x1 fusion"""
        bands = dwt2_haar(f)
        return concat([self.low(bands.ll), self.high(bands.highs())], axis=1)

    def forward(self, f: Tensor) -> Tensor:
        return self.fuse(self.pre_fusion(f))


class StrideDownsample(Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, stride=2, padding=1)

    def forward(self, f: Tensor) -> Tensor:
        return self.conv(f)


class AvgPoolDownsample(Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.expand = Conv2d(in_channels, out_channels, 1)

    def forward(self, f: Tensor) -> Tensor:
        return self.expand(avg_pool2(f))


class BicubicDownsample(Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.expand = Conv2d(in_channels, out_channels, 1)

    def forward(self, f: Tensor) -> Tensor:
        H, W = f.shape[2], f.shape[3]
        if H % 2 or W % 2:
            raise ShapeError(f"bicubic downsample needs even extents, got {H}x{W}")
        return self.expand(bicubic_resize(f, H // 2, W // 2))


def make_downsample(
    kind: str, in_channels: int, out_channels: int, window: int, heads: int, config: WFENConfig
) -> Module:
    if kind == "wfd":
        return WaveletFeatureDownsample(in_channels, out_channels, window, heads, config)
    if kind == "stride":
        return StrideDownsample(in_channels, out_channels)
    if kind == "avgpool":
        return AvgPoolDownsample(in_channels, out_channels)
    if kind == "bicubic":
        return BicubicDownsample(in_channels, out_channels)
    valid = ", ".join(DOWNSAMPLE_VARIANTS)
    raise ConfigError([f"unknown downsample variant '{kind}', valid: {valid}"])


def _check_scales(f_enc: Tensor, f_dec: Tensor) -> None:
    if f_enc.shape[1] != f_dec.shape[1]:
        raise ShapeError(
            f"encoder feature has {f_enc.shape[1]} channels, decoder feature {f_dec.shape[1]}"
        )
    if f_enc.shape[2] != 2 * f_dec.shape[2] or f_enc.shape[3] != 2 * f_dec.shape[3]:
        raise ShapeError(
            f"encoder extents {f_enc.shape[2:]} must be exactly double "
            f"decoder extents {f_dec.shape[2:]}"
        )


class WaveletFeatureUpgrade(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.low = Conv2d(2 * channels, channels, 1)
        self.high = ResidualBlock(3 * channels, 3 * channels)

    def forward(self, f_enc: Tensor, f_dec: Tensor) -> Tensor:
        _check_scales(f_enc, f_dec)
        bands = dwt2_haar(f_enc)
        low = self.low(concat([bands.ll, f_dec], axis=1))
        C = self.channels
        lh, hl, hh = split(self.high(bands.highs()), [C, C, C], axis=1)
        return idwt2_haar(subbands_from(low, lh, hl, hh))


class NearestUpgrade(Module):
    """Nearest 2x upsampling of the decoder feature, concat with the encoder feature, 1x1 fuse"""

    def __init__(self, channels: int):
        super().__init__()
        self.fuse = Conv2d(2 * channels, channels, 1)

    def forward(self, f_enc: Tensor, f_dec: Tensor) -> Tensor:
        _check_scales(f_enc, f_dec)
        return self.fuse(concat([f_enc, upsample_nearest2(f_dec)], axis=1))


def wfd_forward(f: Tensor, wfd: WaveletFeatureDownsample) -> Tensor:
    return wfd(f)


def wfu_forward(f_enc: Tensor, f_dec: Tensor, wfu: WaveletFeatureUpgrade) -> Tensor:
    return wfu(f_enc, f_dec)


class EncoderStage(Module):
    def __init__(self, level: int, config: WFENConfig):
        super().__init__()
        channels = config.stage_channels()
        window, heads = config.windows[level], config.heads[level]
        self.blocks = ModuleList(
            build_stage(
                channels[level], config.encoder_blocks[level], window, heads,
                **_block_kwargs(config),
            )
        )
        self.down = make_downsample(
            config.downsample, channels[level], channels[level + 1], window, heads, config
        )

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Returns (skip feature stored before downsampling, downsampled feature)"""
        for block in self.blocks:
            x = block(x)
        return x, self.down(x)


class DecoderStage(Module):
    def __init__(self, level: int, num_blocks: int, config: WFENConfig):
        super().__init__()
        channels = config.stage_channels()
        self.reduce = Conv2d(channels[level + 1], channels[level], 1)
        if config.upsample == "wfu":
            self.upgrade = WaveletFeatureUpgrade(channels[level])
        else:
            self.upgrade = NearestUpgrade(channels[level])
        self.blocks = ModuleList(
            build_stage(
                channels[level], num_blocks, config.windows[level], config.heads[level],
                **_block_kwargs(config),
            )
        )

    def forward(self, f_dec: Tensor, skip: Tensor) -> Tensor:
        x = self.upgrade(skip, self.reduce(f_dec))
        for block in self.blocks:
            x = block(x)
        return x


class WFENModel(Module):
    """
    Resolution-preserving restoration network operating on pre-upsampled inputs

    Channels follow [C, 2C, 4C, 4C] at H, H/2, H/4, H/8. Decoder stages run
    from the deepest level up and are stored in that order.
    """

    def __init__(self, config: WFENConfig):
        super().__init__()
        problems = config.violations()
        if problems:
            raise ConfigError(problems)
        self.config = config
        channels = config.stage_channels()
        self.shallow = Conv2d(3, channels[0], 3)
        self.encoder = ModuleList([EncoderStage(level, config) for level in range(3)])
        self.bottleneck = ModuleList(
            build_stage(
                channels[3], config.bottleneck_blocks, config.windows[3], config.heads[3],
                **_block_kwargs(config),
            )
        )
        self.decoder = ModuleList(
            [DecoderStage(level, config.decoder_blocks[2 - level], config) for level in (2, 1, 0)]
        )
        self.fuse_out = Conv2d(2 * channels[0], 3, 3)

    def validate_input(self, shape: Tuple[int, ...]) -> None:
        """Raise ConfigError listing every violation for an input of this shape"""
        problems: List[str] = []
        if len(shape) != 4:
            raise ConfigError([f"input must be B x 3 x H x W, got shape {tuple(shape)}"])
        if shape[1] != 3:
            problems.append(f"input must have 3 channels, got {shape[1]}")
        problems.extend(self.config.violations((shape[2], shape[3])))
        if problems:
            raise ConfigError(problems)

    def forward(self, x: Tensor) -> Tensor:
        self.validate_input(x.shape)
        f0 = self.shallow(x)
        skips: List[Tensor] = []
        f = f0
        for stage in self.encoder:
            skip, f = stage(f)
            skips.append(skip)
        for block in self.bottleneck:
            f = block(f)
        for stage, skip in zip(self.decoder, reversed(skips)):
            f = stage(f, skip)
        return self.fuse_out(concat([f, f0], axis=1)) + x

    def component_param_counts(self) -> "OrderedDict[str, int]":
        counts: "OrderedDict[str, int]" = OrderedDict((name, 0) for name in COMPONENTS)
        for name, tensor, _ in self.named_parameters():
            counts[name.split(".", 1)[0]] += tensor.size
        return counts


def build_model(config: WFENConfig, seed: int) -> Tuple[WFENModel, ParameterStore]:
    """Construct the network and initialize its parameters deterministically"""
    model = WFENModel(config)
    store = init_parameters(model, seed)
    logger.info(
        f"Built WFEN (C={config.base_channels}, downsample={config.downsample}, "
        f"upsample={config.upsample}, attention={config.attention_mode}): "
        f"{store.param_count():,} parameters"
    )
    return model, store


def wfen_forward(model: WFENModel, x: Tensor) -> Tensor:
    return model(x)


def parameter_report(model: WFENModel) -> Dict[str, int]:
    """Per-component parameter counts plus the total"""
    report = dict(model.component_param_counts())
    report["total"] = sum(report.values())
    return report
