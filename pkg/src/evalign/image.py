"""Grayscale image container and file ingest/export.

Images are stored as row-major float64 luminance in [0, 1]. Color input is
reduced to luminance with BT.601 weights (0.299 R + 0.587 G + 0.114 B) at
ingest, before the /255 normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageGray:
    """A width x height luminance image, values in [0, 1]."""

    width: int
    height: int
    data: np.ndarray  # shape (height, width), float64

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"image geometry must be positive, got {self.width}x{self.height}")
        if self.data.shape != (self.height, self.width):
            raise ConfigError(
                f"data shape {self.data.shape} does not match geometry {self.width}x{self.height}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("image contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ConfigError("image values must lie in [0, 1]")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageGray":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luminance of an (h, w, 3) array, same value range as the input."""
    return rgb @ LUMA_WEIGHTS


def read_image(path: str | Path) -> ImageGray:
    """Load a PGM (P5, 8-bit) or PNG image as normalized luminance."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix == ".png":
        return _read_png(path)
    raise FormatError(f"unsupported image format: {path.name}")


def _read_pgm(path: Path) -> ImageGray:
    raw = path.read_bytes()
    if raw[:2] != b"P5":
        raise FormatError(f"{path.name}: not a P5 PGM", offset=0)
    # Header tokens may be separated by arbitrary whitespace and '#' comments.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path.name}: truncated PGM header", offset=start)
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path.name}: non-numeric PGM header", offset=2) from None
    if maxval != 255:
        raise FormatError(f"{path.name}: only 8-bit PGM supported, maxval={maxval}")
    expected = width * height
    payload = raw[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path.name}: truncated PGM payload", offset=pos + len(payload))
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return ImageGray(width=width, height=height, data=data.astype(np.float64) / 255.0)


def _read_png(path: Path) -> ImageGray:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        gray = luminance(arr[..., :3].astype(np.float64))
    else:
        gray = arr.astype(np.float64)
    return ImageGray.from_array(np.clip(gray / 255.0, 0.0, 1.0))


def write_pgm(img: ImageGray, path: str | Path) -> None:
    """Write an ImageGray as binary 8-bit PGM."""
    payload = np.rint(img.data * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    Path(path).write_bytes(header + payload.tobytes())


def write_ppm(rgb: np.ndarray, path: str | Path) -> None:
    """Write an (h, w, 3) float array in [0, 1] as binary PPM (P6)."""
    h, w, _ = rgb.shape
    payload = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + payload.tobytes())


def write_png(rgb: np.ndarray, path: str | Path) -> None:
    """Write an (h, w, 3) float array in [0, 1] as PNG."""
    from PIL import Image

    arr = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
