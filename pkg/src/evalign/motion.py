"""Random linear affine motion over a static image.

A motion is one of three patterns: translation along a straight line,
uniform scaling about the image center, or rotation about the image center.
The pattern progresses linearly with the frame index, so frame i of an
n-frame sequence sits at progress s = i / (n - 1). Warping uses inverse
affine mapping with bilinear interpolation and replicate-edge borders
(replication avoids injecting artificial brightness edges that would spew
spurious events at the image boundary).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .image import ImageGray


class MotionKind(enum.Enum):
    TRANSLATION = "translation"
    SCALING = "scaling"
    ROTATION = "rotation"


ALL_KINDS = (MotionKind.TRANSLATION, MotionKind.SCALING, MotionKind.ROTATION)


@dataclass(frozen=True)
class MotionRanges:
    """Sampling ranges for each motion parameter, plus fixed timing.

    Each (lo, hi) pair is inclusive; collapse it to a point to pin the value.
    Restrict `kinds` to force a particular pattern.
    """

    dx_max: tuple[float, float] = (-8.0, 8.0)
    dy_max: tuple[float, float] = (-8.0, 8.0)
    scale_end: tuple[float, float] = (0.7, 1.4)
    angle_end: tuple[float, float] = (-np.pi / 4, np.pi / 4)
    duration: float = 0.05
    n_frames: int = 8
    kinds: tuple[MotionKind, ...] = ALL_KINDS

    def __post_init__(self):
        for name in ("dx_max", "dy_max", "scale_end", "angle_end"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range has min {lo} > max {hi}")
        if self.scale_end[0] <= 0:
            raise ConfigError("scale_end range must be positive")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")
        if not self.kinds:
            raise ConfigError("at least one motion kind must be allowed")


@dataclass(frozen=True)
class MotionSpec:
    """A concrete sampled motion: one kind, its end-state parameters, timing."""

    kind: MotionKind
    dx_max: float = 0.0  # translation end displacement, pixels
    dy_max: float = 0.0
    scale_end: float = 1.0  # scale factor reached at s=1 (start fixed at 1)
    angle_end: float = 0.0  # rotation angle reached at s=1, radians (start 0)
    duration: float = 0.05
    n_frames: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")
        if self.kind is MotionKind.SCALING and self.scale_end <= 0:
            raise ConfigError("scale_end must be positive")


@dataclass(frozen=True)
class FrameSequence:
    """Warped frames with uniformly spaced timestamps over [0, duration]."""

    frames: list[ImageGray]
    timestamps: np.ndarray  # seconds, strictly increasing

    def __post_init__(self):
        if len(self.frames) != len(self.timestamps):
            raise ConfigError("frame/timestamp count mismatch")
        if len(self.frames) < 2:
            raise ConfigError("a sequence needs at least 2 frames")

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1])

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


def sample_motion(rng_seed: int, ranges: MotionRanges) -> MotionSpec:
    """Draw a MotionSpec uniformly from the given ranges, deterministically.

    The kind is chosen uniformly among ``ranges.kinds``; only the chosen
    kind's parameters are drawn, so specs for different kinds share no RNG
    state beyond the kind draw.
    """
    rng = np.random.default_rng(rng_seed)
    kind = ranges.kinds[int(rng.integers(len(ranges.kinds)))]
    spec = dict(kind=kind, duration=ranges.duration, n_frames=ranges.n_frames, seed=rng_seed)
    if kind is MotionKind.TRANSLATION:
        spec["dx_max"] = float(rng.uniform(*ranges.dx_max))
        spec["dy_max"] = float(rng.uniform(*ranges.dy_max))
    elif kind is MotionKind.SCALING:
        spec["scale_end"] = float(rng.uniform(*ranges.scale_end))
    else:
        spec["angle_end"] = float(rng.uniform(*ranges.angle_end))
    return MotionSpec(**spec)


def _inverse_coords(spec: MotionSpec, s: float, width: int, height: int):
    """Source sample coordinates for each output pixel at progress s."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    if spec.kind is MotionKind.TRANSLATION:
        return gx - s * spec.dx_max, gy - s * spec.dy_max
    if spec.kind is MotionKind.SCALING:
        k = 1.0 + s * (spec.scale_end - 1.0)
        return (gx - cx) / k + cx, (gy - cy) / k + cy
    angle = s * spec.angle_end
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    # Inverse of a rotation by `angle` about the center.
    rx, ry = gx - cx, gy - cy
    return cos_a * rx + sin_a * ry + cx, -sin_a * rx + cos_a * ry + cy


def _bilinear_replicate(data: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = data.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    return np.clip(top * (1.0 - fy) + bot * fy, 0.0, 1.0)


def warp_frame(src: ImageGray, spec: MotionSpec, s: float) -> ImageGray:
    """Warp `src` to progress s in [0, 1] along the motion."""
    if not 0.0 <= s <= 1.0:
        raise ConfigError(f"progress s={s} outside [0, 1]")
    sx, sy = _inverse_coords(spec, s, src.width, src.height)
    return ImageGray(src.width, src.height, _bilinear_replicate(src.data, sx, sy))


def render_sequence(src: ImageGray, spec: MotionSpec) -> FrameSequence:
    """Render the full interpolated sequence frames[i] = warp at i/(n-1)."""
    n = spec.n_frames
    if n < 2:
        raise ConfigError("n_frames must be at least 2")
    frames = [warp_frame(src, spec, i / (n - 1)) for i in range(n)]
    timestamps = np.linspace(0.0, spec.duration, n)
    return FrameSequence(frames=frames, timestamps=timestamps)
