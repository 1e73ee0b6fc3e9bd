"""
Differentiable layer primitives built on the tensor engine

Contains convolution (im2col + batched matmul, grouped/depthwise capable),
batched matrix products, channel layer normalization, separable resampling,
2x pooling/upsampling and the ReLU-gated transposed attention used by the
Full-Domain Transformer.
"""

from typing import Optional, Tuple

import numpy as np

from .errors import NumericalError, ShapeError
from .tensor import Function, Tensor, relu, scalar_mul

TEMPERATURE_EPS = 1e-6


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """(B, C, H, W) -> strided view (B, C, K, K, Ho, Wo)"""
    sB, sC, sH, sW = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(x.shape[0], x.shape[1], kernel, kernel, out_h, out_w),
        strides=(sB, sC, sH, sW, stride * sH, stride * sW),
        writeable=False,
    )


class Conv2dOp(Function):
    """2D cross-correlation with zero padding, stride and channel groups"""

    def forward(
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: Optional[np.ndarray] = None,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
    ) -> np.ndarray:
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(
                f"conv2d expects BCHW input and OIKK weight, got {x.shape} and {weight.shape}"
            )
        B, C, H, W = x.shape
        O, Cg, K, K2 = weight.shape
        if K != K2:
            raise ShapeError(f"conv2d kernel must be square, got {K}x{K2}")
        if groups < 1 or C % groups != 0:
            raise ShapeError(f"conv2d: groups={groups} does not divide {C} input channels")
        if O % groups != 0:
            raise ShapeError(f"conv2d: groups={groups} does not divide {O} output channels")
        if Cg != C // groups:
            raise ShapeError(
                f"conv2d: weight input extent {Cg} != channels/groups = {C // groups}"
            )
        if bias is not None and bias.shape != (O,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({O},)")
        if stride < 1 or padding < 0:
            raise ShapeError(f"conv2d: invalid stride {stride} / padding {padding}")

        Ho = conv_output_extent(H, K, stride, padding)
        Wo = conv_output_extent(W, K, stride, padding)
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"conv2d: kernel {K} larger than padded input {H}x{W}")

        G = groups
        Og = O // G
        CKK = Cg * K * K
        L = Ho * Wo

        if K == 1 and stride == 1 and padding == 0:
            cols = x.reshape(B, G, CKK, L)
        else:
            pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
            xp = np.pad(x, pad) if padding else x
            patches = _im2col(xp, K, stride, Ho, Wo)
            cols = np.ascontiguousarray(patches).reshape(B, G, CKK, L)

        wmat = weight.reshape(G, Og, CKK)
        out = np.matmul(wmat[None], cols).reshape(B, O, Ho, Wo)
        if bias is not None:
            out = out + bias[None, :, None, None]

        self.cols = cols
        self.wmat = wmat
        self.meta = (B, C, H, W, O, K, stride, padding, G, Ho, Wo)
        self.has_bias = bias is not None
        return out

    def backward(self, grad):
        B, C, H, W, O, K, stride, padding, G, Ho, Wo = self.meta
        Og = O // G
        L = Ho * Wo
        gout = grad.reshape(B, G, Og, L)

        grad_w = np.matmul(gout, self.cols.transpose(0, 1, 3, 2)).sum(axis=0)
        grad_w = grad_w.reshape(O, C // G, K, K)

        gcols = np.matmul(self.wmat.transpose(0, 2, 1)[None], gout)
        if K == 1 and stride == 1 and padding == 0:
            grad_x = gcols.reshape(B, C, H, W)
        else:
            gcols = gcols.reshape(B, C, K, K, Ho, Wo)
            Hp, Wp = H + 2 * padding, W + 2 * padding
            gxp = np.zeros((B, C, Hp, Wp), dtype=grad.dtype)
            for ki in range(K):
                for kj in range(K):
                    gxp[:, :, ki : ki + stride * Ho : stride, kj : kj + stride * Wo : stride] += (
                        gcols[:, :, ki, kj]
                    )
            grad_x = np.ascontiguousarray(gxp[:, :, padding : padding + H, padding : padding + W])

        grads = [grad_x, grad_w]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """
    2D convolution (cross-correlation) of a BCHW tensor

    Args:
        x: Input B x C x H x W
        weight: O x (C/groups) x K x K
        bias: Optional O-vector
        stride: Positive step
        padding: Zero padding on every side
        groups: Channel groups (groups == C gives a depthwise convolution)

    Returns:
        B x O x Ho x Wo with Ho = floor((H + 2p - K)/stride) + 1
    """
    tensors = (x, weight) if bias is None else (x, weight, bias)
    return Conv2dOp.apply(*tensors, stride=stride, padding=padding, groups=groups)


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or a.ndim != b.ndim:
            raise ShapeError(f"matmul_batched: operand orders differ: {a.shape} vs {b.shape}")
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(
                f"matmul_batched: batch extents {a.shape[:-2]} and {b.shape[:-2]} differ"
            )
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul_batched: inner dimensions {a.shape[-1]} and {b.shape[-2]} differ"
            )
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        return (
            np.matmul(grad, np.swapaxes(self.b, -1, -2)),
            np.matmul(np.swapaxes(self.a, -1, -2), grad),
        )


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes, batch axes must match exactly"""
    return MatMul.apply(a, b)


class LayerNormChannel(Function):
    """Normalize each (b, h, w) channel vector, then apply per-channel affine"""

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"layer_norm_channel expects BCHW input, got {x.shape}")
        C = x.shape[1]
        if C == 0:
            raise ShapeError("layer_norm_channel: input has zero channels")
        if gamma.shape != (C,) or beta.shape != (C,):
            raise ShapeError(
                f"layer_norm_channel: gamma {gamma.shape} / beta {beta.shape} must be ({C},)"
            )
        if eps <= 0:
            raise ValueError(f"layer_norm_channel: eps must be positive, got {eps}")
        mu = x.mean(axis=1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
        self.xhat = centered * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        g_hat = grad * self.gamma[None, :, None, None]
        mean_g = g_hat.mean(axis=1, keepdims=True)
        mean_gx = (g_hat * self.xhat).mean(axis=1, keepdims=True)
        grad_x = self.inv_std * (g_hat - mean_g - self.xhat * mean_gx)
        grad_gamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        grad_beta = grad.sum(axis=(0, 2, 3))
        return grad_x, grad_gamma, grad_beta


def layer_norm_channel(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNormChannel.apply(x, gamma, beta, eps=eps)


class L2Normalize(Function):
    """Scale vectors along the last axis to unit length"""

    def forward(self, x: np.ndarray, eps: float) -> np.ndarray:
        self.norm = np.sqrt((x * x).sum(axis=-1, keepdims=True) + x.dtype.type(eps))
        self.y = x / self.norm
        return self.y

    def backward(self, grad):
        dot = (grad * self.y).sum(axis=-1, keepdims=True)
        return ((grad - self.y * dot) / self.norm,)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    return L2Normalize.apply(x, eps=eps)


class TemperatureScale(Function):
    """x / (|t| + 1e-6) for a learnable single-element temperature t"""

    def forward(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        if t.size != 1:
            raise ShapeError(f"temperature must hold one element, got shape {t.shape}")
        value = t.reshape(())
        if value == 0:
            raise NumericalError("attention temperature is exactly zero")
        self.denom = np.abs(value) + x.dtype.type(TEMPERATURE_EPS)
        self.sign = np.sign(value)
        self.x = x
        self.t_shape = t.shape
        return x / self.denom

    def backward(self, grad):
        grad_x = grad / self.denom
        grad_t = -(grad * self.x).sum() * self.sign / (self.denom * self.denom)
        return grad_x, np.asarray(grad_t, dtype=grad.dtype).reshape(self.t_shape)


def temperature_scale(x: Tensor, temperature: Tensor) -> Tensor:
    return TemperatureScale.apply(x, temperature)


def relu_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    temperature: Tensor,
    transpose_map: bool = False,
    token_mean: bool = False,
) -> Tuple[Tensor, Tensor]:
    """
    ReLU-gated transposed attention over channel-first token matrices

    Operands are (batch, c, tokens). The map is ReLU(q k^T / t), of size c x c;
    with token_mean the product is divided by the token count first, so the
    map is ReLU(cov(q, k) / t) with cov the mean over tokens.
    With transpose_map the output is map^T v, i.e. the token-major product
    V . ReLU(Q^T K / t); otherwise map v.

    Returns:
        (output of shape (batch, c, tokens), attention map of shape (batch, c, c))
    """
    scores = matmul_batched(query, key.transpose_last())
    if token_mean:
        scores = scalar_mul(scores, 1.0 / query.shape[-1])
    attn = relu(temperature_scale(scores, temperature))
    mixer = attn.transpose_last() if transpose_map else attn
    return matmul_batched(mixer, value), attn


class SeparableResize(Function):
    """out = R x C^T applied to the two spatial axes (linear, fixed matrices)"""

    def forward(self, x: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"resize expects BCHW input, got {x.shape}")
        if rows.shape[1] != x.shape[2] or cols.shape[1] != x.shape[3]:
            raise ShapeError(
                f"resize matrices {rows.shape}/{cols.shape} do not fit input {x.shape}"
            )
        self.rows = rows.astype(x.dtype)
        self.cols = cols.astype(x.dtype)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


def separable_resize(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    return SeparableResize.apply(x, rows=rows, cols=cols)


class AvgPool2(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        B, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ShapeError(f"avg_pool2 needs even extents, got {H}x{W}")
        return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(self, grad):
        up = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
        return (up * grad.dtype.type(0.25),)


def avg_pool2(x: Tensor) -> Tensor:
    return AvgPool2.apply(x)


class UpsampleNearest2(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, grad):
        B, C, H, W = grad.shape
        return (grad.reshape(B, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5)),)


def upsample_nearest2(x: Tensor) -> Tensor:
    return UpsampleNearest2.apply(x)
