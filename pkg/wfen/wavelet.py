"""
Single-level 2D Haar wavelet transform

The forward transform uses the unnormalized filters [1, 1] (low-pass) and
[1, -1] (high-pass) on non-overlapping pairs (2j-1, 2j): first along rows
(halving the width), then along columns (halving the height). All 1/2 factors
live in the inverse, so integer-valued inputs round-trip bit-exactly.

Band order everywhere is (LL, LH, HL, HH):
    LL  approximation           A_LL = XL(2i-1) + XL(2i)
    LH  horizontal detail       H_LH = XL(2i-1) - XL(2i)
    HL  vertical detail         V_HL = XH(2i-1) + XH(2i)
    HH  diagonal detail         D_HH = XH(2i-1) - XH(2i)
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ShapeError
from .tensor import Function, Tensor, concat, split

BAND_NAMES = ("ll", "lh", "hl", "hh")


def haar_forward(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, 4C, H/2, W/2), bands stacked band-major along channels"""
    if x.ndim != 4:
        raise ShapeError(f"dwt2_haar expects BCHW input, got shape {x.shape}")
    H, W = x.shape[2], x.shape[3]
    if H % 2 or W % 2:
        raise ShapeError(f"dwt2_haar needs even spatial extents, got {H}x{W}")
    odd_cols, even_cols = x[..., 0::2], x[..., 1::2]
    xl = odd_cols + even_cols
    xh = odd_cols - even_cols
    ll = xl[:, :, 0::2] + xl[:, :, 1::2]
    lh = xl[:, :, 0::2] - xl[:, :, 1::2]
    hl = xh[:, :, 0::2] + xh[:, :, 1::2]
    hh = xh[:, :, 0::2] - xh[:, :, 1::2]
    return np.concatenate([ll, lh, hl, hh], axis=1)


def haar_inverse(bands: np.ndarray) -> np.ndarray:
    """(B, 4C, h, w) -> (B, C, 2h, 2w); exact inverse of haar_forward"""
    if bands.ndim != 4 or bands.shape[1] % 4:
        raise ShapeError(f"idwt2_haar expects B x 4C x h x w bands, got {bands.shape}")
    B, C4, h, w = bands.shape
    ll, lh, hl, hh = np.split(bands, 4, axis=1)
    half = bands.dtype.type(0.5)

    xl = np.empty((B, C4 // 4, 2 * h, w), dtype=bands.dtype)
    xh = np.empty_like(xl)
    xl[:, :, 0::2] = (ll + lh) * half
    xl[:, :, 1::2] = (ll - lh) * half
    xh[:, :, 0::2] = (hl + hh) * half
    xh[:, :, 1::2] = (hl - hh) * half

    x = np.empty((B, C4 // 4, 2 * h, 2 * w), dtype=bands.dtype)
    x[..., 0::2] = (xl + xh) * half
    x[..., 1::2] = (xl - xh) * half
    return x


class Dwt2Haar(Function):
    # M M^T = 4 I, so the adjoint of the forward map is 4 * inverse
    def forward(self, x: np.ndarray) -> np.ndarray:
        return haar_forward(x)

    def backward(self, grad):
        return (haar_inverse(grad) * grad.dtype.type(4.0),)


class Idwt2Haar(Function):
    def forward(self, bands: np.ndarray) -> np.ndarray:
        return haar_inverse(bands)

    def backward(self, grad):
        return (haar_forward(grad) * grad.dtype.type(0.25),)


@dataclass
class SubbandSet:
    """The four Haar subbands of one tensor, each at half resolution"""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    source_shape: Tuple[int, int]

    def __post_init__(self):
        shapes = {b.shape for b in self.bands()}
        if len(shapes) != 1:
            raise ShapeError(f"Subbands must share one shape, got {sorted(shapes)}")
        h, w = self.ll.shape[2], self.ll.shape[3]
        if tuple(self.source_shape) != (2 * h, 2 * w):
            raise ShapeError(
                f"Subband extents {h}x{w} inconsistent with source shape {self.source_shape}"
            )

    def bands(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh

    def highs(self) -> Tensor:
        """LH, HL and HH concatenated along channels"""
        return concat([self.lh, self.hl, self.hh], axis=1)


def dwt2_haar(x: Tensor) -> SubbandSet:
    """
    Decompose a BCHW tensor into its four Haar subbands

    Raises:
        ShapeError: when H or W is odd (no implicit padding)
    """
    stacked = Dwt2Haar.apply(x)
    C = x.shape[1]
    ll, lh, hl, hh = split(stacked, [C, C, C, C], axis=1)
    return SubbandSet(ll, lh, hl, hh, source_shape=(x.shape[2], x.shape[3]))


def idwt2_haar(bands: SubbandSet) -> Tensor:
    """Reassemble the source tensor from its four subbands"""
    return Idwt2Haar.apply(concat(list(bands.bands()), axis=1))


def subbands_from(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> SubbandSet:
    """Build a SubbandSet from independently computed bands"""
    return SubbandSet(ll, lh, hl, hh, source_shape=(2 * ll.shape[2], 2 * ll.shape[3]))
