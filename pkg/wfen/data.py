"""
Degradation pipeline and training data

Contains:
- cubic_kernel / resize_weights / bicubic_resize: separable bicubic resampling
  (a = -0.5, pixel-center mapping, edge clamp, no antialiasing)
- make_pair: bicubic degrade-then-pre-upsample pair generation
- synth_sample: procedural face-like images
- SyntheticDataset / DirectoryDataset and a seeded batch sampler
"""

from functools import lru_cache
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError
from .functional import separable_resize
from .imageio import ImageBuffer, ppm_read, stack_images
from .tensor import Tensor, no_grad
from .utils import logger

CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel W(x)"""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=64)
def resize_weights(in_size: int, out_size: int, a: float = CUBIC_A) -> np.ndarray:
    """
    (out_size, in_size) interpolation matrix for one axis

    Each output sample at src = (dst + 0.5) * in/out - 0.5 draws on the four
    nearest input taps; taps outside the signal are clamped to the border.
    """
    if in_size < 1 or out_size < 1:
        raise ShapeError(f"resize extents must be >= 1, got {in_size} -> {out_size}")
    scale = in_size / out_size
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    for offset in range(-1, 3):
        taps = base + offset
        weights = cubic_kernel(src - taps, a)
        np.add.at(matrix, (np.arange(out_size), np.clip(taps, 0, in_size - 1)), weights)
    matrix.setflags(write=False)
    return matrix


def bicubic_resize(img: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize a BCHW tensor; differentiable and linear in the input"""
    if img.ndim != 4:
        raise ShapeError(f"bicubic_resize expects BCHW input, got {img.shape}")
    rows = resize_weights(img.shape[2], out_h)
    cols = resize_weights(img.shape[3], out_w)
    return separable_resize(img, rows, cols)


def make_pair(hr: Tensor, factor: int = 8) -> Tuple[Tensor, Tensor]:
    """
    Build a training pair from a high-resolution batch

    Args:
        hr: B x 3 x H x W ground truth
        factor: Super-resolution factor (H and W must be divisible by it)

    Returns:
        (lr_up, hr) where lr_up is the bicubic degraded and re-upsampled input
    """
    H, W = hr.shape[2], hr.shape[3]
    if factor < 1 or H % factor or W % factor:
        raise ShapeError(f"Image extents {H}x{W} are not divisible by factor {factor}")
    lr = bicubic_resize(hr, H // factor, W // factor)
    return bicubic_resize(lr, H, W), hr


def _gaussian(xx: np.ndarray, yy: np.ndarray, cx: float, cy: float, sx: float, sy: float):
    return np.exp(-(((xx - cx) / sx) ** 2 + ((yy - cy) / sy) ** 2))


def synth_sample(seed: int, index: int, size: int) -> ImageBuffer:
    """
    Procedural face-like image, a pure function of (seed, index)

    Low-frequency elliptical gradients, oriented sinusoidal texture patches
    and two dark elliptical blobs, clamped to [0, 1].
    """
    if size <= 0 or size % 8:
        raise ShapeError(f"synthetic image size must be a positive multiple of 8, got {size}")
    rng = np.random.default_rng([seed, index])
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    background = rng.uniform(0.1, 0.5, size=3)
    face = rng.uniform(0.45, 0.95, size=3)
    center = rng.uniform(-0.2, 0.2, size=2)
    axes = rng.uniform(0.45, 0.8, size=2)
    envelope = _gaussian(xx, yy, center[0], center[1], axes[0], axes[1] * 1.2)
    img = background[:, None, None] + (face - background)[:, None, None] * envelope

    for _ in range(int(rng.integers(2, 5))):
        px, py = rng.uniform(-0.7, 0.7, size=2)
        radius = rng.uniform(0.15, 0.4)
        theta = rng.uniform(0.0, np.pi)
        cycles = rng.uniform(4.0, 12.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amplitude = rng.uniform(0.05, 0.2)
        wave = np.sin(np.pi * cycles * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        patch = amplitude * wave * _gaussian(xx, yy, px, py, radius, radius)
        img = img + patch[None] * rng.uniform(0.6, 1.0, size=3)[:, None, None]

    spread = rng.uniform(0.2, 0.35)
    height = center[1] - rng.uniform(0.1, 0.25)
    blob_axes = rng.uniform(0.06, 0.12, size=2)
    darkness = rng.uniform(0.5, 0.8)
    for side in (-1.0, 1.0):
        blob = _gaussian(xx, yy, center[0] + side * spread, height, blob_axes[0], blob_axes[1])
        img = img * (1.0 - darkness * blob)[None]

    values = np.clip(np.transpose(img, (1, 2, 0)), 0.0, 1.0)
    return ImageBuffer(values, source=f"synthetic:{seed}:{index}")


class SyntheticDataset:
    """Indexable collection of synth_sample images"""

    def __init__(self, seed: int, num_images: int, size: int, index_offset: int = 0):
        self.seed = seed
        self.num_images = num_images
        self.size = size
        self.index_offset = index_offset
        self._cache: dict = {}

    def __len__(self) -> int:
        return self.num_images

    def __getitem__(self, i: int) -> ImageBuffer:
        if not 0 <= i < self.num_images:
            raise IndexError(f"Synthetic index {i} out of range [0, {self.num_images})")
        if i not in self._cache:
            self._cache[i] = synth_sample(self.seed, self.index_offset + i, self.size)
        return self._cache[i]


class DirectoryDataset:
    """All P6 images of a directory, in sorted file-name order"""

    def __init__(self, directory: Union[str, Path], size: Optional[int] = None):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"Image directory not found: {self.directory}")
        self.paths: List[Path] = sorted(self.directory.glob("*.ppm"))
        if not self.paths:
            raise FileNotFoundError(f"No .ppm files in {self.directory}")
        self.size = size
        logger.info(f"Found {len(self.paths)} images in {self.directory}")

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> ImageBuffer:
        image = ppm_read(self.paths[i])
        if self.size is not None and (image.height, image.width) != (self.size, self.size):
            raise ShapeError(
                f"{self.paths[i]}: expected {self.size}x{self.size}, "
                f"got {image.height}x{image.width}"
            )
        return image


class BatchSampler:
    """Seeded epoch permutations cut into fixed-size batches"""

    def __init__(self, num_items: int, batch_size: int, seed: int):
        if num_items < 1:
            raise ValueError("BatchSampler needs at least one item")
        self.num_items = num_items
        self.batch_size = batch_size
        self.seed = seed

    def __iter__(self) -> Iterator[List[int]]:
        rng = np.random.default_rng(self.seed)
        queue: List[int] = []
        while True:
            while len(queue) < self.batch_size:
                queue.extend(int(i) for i in rng.permutation(self.num_items))
            batch, queue = queue[: self.batch_size], queue[self.batch_size :]
            yield batch


def make_batch(
    dataset: Sequence[ImageBuffer], indices: Sequence[int], factor: int
) -> Tuple[Tensor, Tensor]:
    """(lr_up, hr) tensors for the given dataset indices"""
    hr = Tensor(stack_images([dataset[i] for i in indices]))
    with no_grad():
        return make_pair(hr, factor)
