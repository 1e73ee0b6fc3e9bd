"""
Image buffers and the binary PPM (P6) codec

Only 8-bit P6 files are supported. Values are mapped linearly between bytes
[0, 255] and reals [0, 1]; clamping happens only when encoding.
"""

import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from .errors import FormatError, ShapeError
from .tensor import Tensor
from .utils import logger

_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


@dataclass
class ImageBuffer:
    """RGB image with values in [0, 1], stored as an (H, W, 3) float array"""

    values: np.ndarray
    source: str = "memory"

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ShapeError(f"ImageBuffer expects (H, W, 3) values, got {self.values.shape}")

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def channels(self) -> int:
        return 3

    def to_tensor(self) -> Tensor:
        """1 x 3 x H x W tensor in the current default dtype"""
        return Tensor(np.transpose(self.values, (2, 0, 1))[None])

    @classmethod
    def from_tensor(
        cls, tensor: Union[Tensor, np.ndarray], source: str = "tensor"
    ) -> "ImageBuffer":
        data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
        if data.ndim == 4:
            if data.shape[0] != 1:
                raise ShapeError(f"Expected a single image, got batch of {data.shape[0]}")
            data = data[0]
        if data.ndim != 3 or data.shape[0] != 3:
            raise ShapeError(f"Expected 3 x H x W data, got {data.shape}")
        return cls(np.transpose(data, (1, 2, 0)).astype(np.float64), source)

    def to_bytes(self) -> np.ndarray:
        """uint8 (H, W, 3) array, clamped to the valid range"""
        return np.rint(np.clip(self.values, 0.0, 1.0) * 255.0).astype(np.uint8)

    @classmethod
    def from_bytes(cls, pixels: np.ndarray, source: str = "memory") -> "ImageBuffer":
        return cls(pixels.astype(np.float64) / 255.0, source)


def stack_images(images: Sequence[ImageBuffer]) -> np.ndarray:
    """B x 3 x H x W array of equally sized images"""
    shapes = {im.values.shape for im in images}
    if len(shapes) != 1:
        raise ShapeError(f"Cannot batch images of different sizes: {sorted(shapes)}")
    return np.stack([np.transpose(im.values, (2, 0, 1)) for im in images])


def ppm_decode(payload: bytes, source: str = "memory") -> ImageBuffer:
    """
    Decode P6 bytes

    Raises:
        FormatError: non-P6 magic, unsupported maxval, malformed header or truncated payload
    """
    if not payload.startswith(b"P6"):
        raise FormatError(f"{source}: not a binary PPM (magic {payload[:2]!r}, expected P6)")
    tokens: List[bytes] = []
    pos = 0
    for _ in range(4):
        match = _HEADER_TOKEN.match(payload, pos)
        if match is None:
            raise FormatError(f"{source}: truncated PPM header")
        tokens.append(match.group(1))
        pos = match.end()

    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError(f"{source}: malformed PPM header {tokens!r}") from e
    if maxval != 255:
        raise FormatError(f"{source}: unsupported maxval {maxval} (only 255 is supported)")
    if width <= 0 or height <= 0:
        raise FormatError(f"{source}: invalid extents {width}x{height}")
    if pos >= len(payload) or not payload[pos : pos + 1].isspace():
        raise FormatError(f"{source}: missing whitespace after PPM header")
    pos += 1

    expected = width * height * 3
    body = payload[pos : pos + expected]
    if len(body) < expected:
        raise FormatError(
            f"{source}: truncated payload, expected {expected} bytes, found {len(body)}"
        )
    if len(payload) > pos + expected:
        logger.warning(f"{source}: ignoring {len(payload) - pos - expected} trailing bytes")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer.from_bytes(pixels, source)


def ppm_encode(image: ImageBuffer) -> bytes:
    """
    Encode as binary P6 with the canonical header "P6\\n<w> <h>\\n255\\n"

    Comments and non-canonical header whitespace of a decoded file are not
    kept: re-encoding such a file preserves the pixel bytes, not the header.
    """
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.to_bytes().tobytes()


def ppm_read(path: Union[str, Path]) -> ImageBuffer:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")
    return ppm_decode(path.read_bytes(), str(path))


def ppm_write(image: ImageBuffer, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ppm_encode(image))


def subband_display(
    ll: np.ndarray, lh: np.ndarray, hl: np.ndarray, hh: np.ndarray, source: str = "dwt"
) -> List[ImageBuffer]:
    """
    Viewable images for the four bands of a [0, 1] image

    Args:
        ll, lh, hl, hh: 3 x h x w band arrays computed from [0, 1] values

    Returns:
        [LL / 4, LH / 8 + 0.5, HL / 8 + 0.5, HH / 8 + 0.5] as ImageBuffers
    """
    views = [ll / 4.0] + [band / 8.0 + 0.5 for band in (lh, hl, hh)]
    return [
        ImageBuffer(np.clip(np.transpose(v, (1, 2, 0)), 0.0, 1.0), f"{source}:{name}")
        for v, name in zip(views, ("ll", "lh", "hl", "hh"))
    ]
