"""
Full-domain transformer block

Contains:
- window_partition / window_merge / cyclic_shift / shuffle_heads: lossless data movement
- RegionalSelfAttention (RSA): C x C transposed attention inside (shifted) N x N windows
- GlobalSelfAttention (GSA): per-head channel attention with C_hat x C_hat maps
- FDTBlock: attention -> FFN -> attention -> FFN, every sublayer pre-normalized with a residual

Both attentions gate the score matrix with ReLU(score / temperature) instead of softmax.
Scores are token means of q k^T by default; with qk_norm, q and k are L2-normalized
along the token axis and the score is their cosine similarity.
"""

from dataclasses import dataclass
from typing import List, Tuple

from .errors import ConfigError, ShapeError
from .functional import l2_normalize, relu_attention
from .nn import Conv2d, FeedForward, LayerNorm2d, Module
from .tensor import Tensor, rearrange, roll2d, split

ATTENTION_MODES = ("full", "regional", "global")


def window_partition(x: Tensor, window: int) -> Tensor:
    """(B, C, H, W) -> (B * H/N * W/N, C, N, N), windows in row-major order"""
    B, C, H, W = x.shape
    if window <= 0 or H % window or W % window:
        raise ShapeError(f"Window size {window} does not divide spatial extents {H}x{W}")
    return rearrange(
        x,
        "b c (nh p) (nw q) -> (b nh nw) c p q",
        nh=H // window,
        nw=W // window,
        p=window,
        q=window,
    )


def window_merge(windows: Tensor, height: int, width: int) -> Tensor:
    """Inverse of window_partition for a (height, width) feature map"""
    window = windows.shape[2]
    if height % window or width % window:
        raise ShapeError(f"Window size {window} does not divide spatial extents {height}x{width}")
    return rearrange(
        windows,
        "(b nh nw) c p q -> b c (nh p) (nw q)",
        nh=height // window,
        nw=width // window,
        p=window,
        q=window,
    )


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Circularly shift both spatial axes by `shift`; cyclic_shift(., -s) undoes it"""
    return roll2d(x, shift)


def shuffle_heads(x: Tensor, heads: int) -> Tensor:
    """Channel c = g * C_hat + k moves to k * heads + g"""
    C = x.shape[1]
    if heads <= 0 or C % heads:
        raise ShapeError(f"{heads} heads do not divide {C} channels")
    if heads == 1:
        return x
    return rearrange(x, "b (g k) y x -> b (k g) y x", g=heads)


@dataclass
class RSAConfig:
    """Window geometry of one regional attention sublayer"""

    window: int
    shifted: bool = False
    qk_norm: bool = False

    def effective_window(self, height: int, width: int) -> int:
        """Window clipped to the feature map; must tile it exactly"""
        n = min(self.window, height, width)
        if n <= 0 or height % n or width % n:
            raise ShapeError(
                f"Window size {n} (configured {self.window}) does not divide {height}x{width}"
            )
        return n

    def shift_for(self, window: int) -> int:
        return window // 2 if self.shifted else 0


@dataclass
class GSAConfig:
    channels: int
    heads: int
    shuffle: bool = True
    qk_norm: bool = False

    def __post_init__(self):
        if self.heads <= 0 or self.channels % self.heads:
            raise ConfigError([f"GSA: {self.heads} heads do not divide {self.channels} channels"])

    @property
    def head_channels(self) -> int:
        return self.channels // self.heads


class RegionalSelfAttention(Module):
    def __init__(self, channels: int, cfg: RSAConfig, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.cfg = cfg
        self.norm = LayerNorm2d(channels, eps)
        self.qkv = Conv2d(channels, 3 * channels, 1)
        self.qkv_dw = Conv2d(3 * channels, 3 * channels, 3, groups=3 * channels)
        self.add_parameter("temperature", (1,), "ones")
        self.project = Conv2d(channels, channels, 1)

    def attend(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Attention branch before the output projection, plus the per-window maps"""
        B, C, H, W = x.shape
        if C != self.channels:
            raise ShapeError(f"RSA expects {self.channels} channels, got {C}")
        n = self.cfg.effective_window(H, W)
        shift = self.cfg.shift_for(n)

        qkv = self.qkv_dw(self.qkv(self.norm(x)))
        tokens = []
        for part in split(qkv, [C, C, C], axis=1):
            part = cyclic_shift(part, -shift)
            part = window_partition(part, n)
            tokens.append(part.reshape(part.shape[0], C, n * n))
        q, k, v = tokens
        if self.cfg.qk_norm:
            q, k = l2_normalize(q), l2_normalize(k)

        out, attn = relu_attention(
            q, k, v, self.temperature, transpose_map=True, token_mean=not self.cfg.qk_norm
        )
        out = window_merge(out.reshape(out.shape[0], C, n, n), H, W)
        return cyclic_shift(out, shift), attn

    def forward(self, x: Tensor) -> Tensor:
        branch, _ = self.attend(x)
        return x + self.project(branch)


class GlobalSelfAttention(Module):
    def __init__(self, cfg: GSAConfig, eps: float = 1e-5):
        super().__init__()
        self.cfg = cfg
        C = cfg.channels
        self.norm = LayerNorm2d(C, eps)
        self.qkv = Conv2d(C, 3 * C, 1)
        self.qkv_dw = Conv2d(3 * C, 3 * C, 3, groups=3 * C)
        self.add_parameter("temperature", (1,), "ones")
        self.project = Conv2d(C, C, 1)

    def attend(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        B, C, H, W = x.shape
        if C != self.cfg.channels:
            raise ShapeError(f"GSA expects {self.cfg.channels} channels, got {C}")
        h = self.cfg.heads

        qkv = self.qkv_dw(self.qkv(self.norm(x)))
        q, k, v = (
            rearrange(part, "b (g k) y x -> (b g) k (y x)", g=h, b=B, y=H)
            for part in split(qkv, [C, C, C], axis=1)
        )
        if self.cfg.qk_norm:
            q, k = l2_normalize(q), l2_normalize(k)
        out, attn = relu_attention(q, k, v, self.temperature, token_mean=not self.cfg.qk_norm)
        out = rearrange(out, "(b g) k (y x) -> b (g k) y x", g=h, b=B, y=H)
        if self.cfg.shuffle:
            out = shuffle_heads(out, h)
        return out, attn

    def forward(self, x: Tensor) -> Tensor:
        branch, _ = self.attend(x)
        return x + self.project(branch)


def rsa_forward(x: Tensor, layer: RegionalSelfAttention) -> Tensor:
    return layer(x)


def gsa_forward(x: Tensor, layer: GlobalSelfAttention) -> Tensor:
    return layer(x)


class FDTBlock(Module):
    """
    One full-domain transformer block

    Sublayer order is attention -> FFN -> attention -> FFN. In the default
    "full" mode the first attention is RSA and the second GSA; "regional"
    uses two RSA sublayers (the second on the opposite shift phase) and
    "global" two GSA sublayers.

    Args:
        channels: Feature channels C at this stage
        window: Configured RSA window N
        heads: GSA heads h (must divide C)
        shifted: Whether this block's RSA runs on the N/2-shifted grid
        shift_windows: When false no sublayer shifts
        mode: One of ATTENTION_MODES
        shuffle: Apply head shuffling after GSA
        qk_norm: Cosine-similarity scores instead of token-mean scores
        ffn_expansion: Hidden ratio of the feed-forward sublayers
        eps: Layer-norm epsilon
    """

    def __init__(
        self,
        channels: int,
        window: int,
        heads: int,
        shifted: bool = False,
        mode: str = "full",
        shuffle: bool = True,
        ffn_expansion: int = 2,
        eps: float = 1e-5,
        shift_windows: bool = True,
        qk_norm: bool = False,
    ):
        super().__init__()
        if mode not in ATTENTION_MODES:
            raise ConfigError([f"attention_mode '{mode}' not in {ATTENTION_MODES}"])
        self.mode = mode
        gsa_cfg = GSAConfig(channels, heads, shuffle, qk_norm)

        if mode == "global":
            self.gsa_pre = GlobalSelfAttention(gsa_cfg, eps)
            first = "gsa_pre"
        else:
            rsa_cfg = RSAConfig(window, shifted and shift_windows, qk_norm)
            self.rsa = RegionalSelfAttention(channels, rsa_cfg, eps)
            first = "rsa"
        self.ffn1 = FeedForward(channels, ffn_expansion, eps)
        if mode == "regional":
            alt_cfg = RSAConfig(window, shift_windows and not shifted, qk_norm)
            self.rsa_alt = RegionalSelfAttention(channels, alt_cfg, eps)
            second = "rsa_alt"
        else:
            self.gsa = GlobalSelfAttention(gsa_cfg, eps)
            second = "gsa"
        self.ffn2 = FeedForward(channels, ffn_expansion, eps)
        self._order: List[str] = [first, "ffn1", second, "ffn2"]

    def sublayers(self) -> List[Module]:
        return [getattr(self, name) for name in self._order]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.sublayers():
            x = layer(x)
        return x


def fdt_forward(x: Tensor, block: FDTBlock) -> Tensor:
    return block(x)


def build_stage(
    channels: int,
    count: int,
    window: int,
    heads: int,
    shift_windows: bool = True,
    mode: str = "full",
    shuffle: bool = True,
    ffn_expansion: int = 2,
    eps: float = 1e-5,
    qk_norm: bool = False,
) -> List[FDTBlock]:
    """Consecutive FDT blocks alternating the shift phase 0, N/2, 0, ..."""
    return [
        FDTBlock(
            channels,
            window,
            heads,
            shifted=shift_windows and i % 2 == 1,
            mode=mode,
            shuffle=shuffle,
            ffn_expansion=ffn_expansion,
            eps=eps,
            shift_windows=shift_windows,
            qk_norm=qk_norm,
        )
        for i in range(count)
    ]
