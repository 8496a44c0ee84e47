"""Fixed-size event tensors and human-viewable renderings.

The representation is a two-channel per-pixel count histogram (channel 0 =
positive events, channel 1 = negative) normalized per channel by its max
count. Counts are the simplest representation that preserves the spatial
sparsity the embedding-side analysis depends on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emitter import EventStream


@dataclass(frozen=True)
class EventFrame:
    """Polarity count histogram plus its max-normalized view.

    `counts` holds raw integer-valued accumulations; `data` is counts with
    each channel divided by that channel's max (all-zero channels stay
    zero). Both are (2, height, width).
    """

    width: int
    height: int
    counts: np.ndarray
    data: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.counts.shape != (2, self.height, self.width):
            raise ValueError(f"counts shape {self.counts.shape} does not match geometry")
        if self.counts.min() < 0:
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "data", _max_normalize(self.counts))


def _max_normalize(counts: np.ndarray) -> np.ndarray:
    out = counts.astype(np.float64, copy=True)
    for c in range(out.shape[0]):
        peak = out[c].max()
        if peak > 0:
            out[c] /= peak
    return out


def to_event_frame(stream: EventStream, window: tuple[float, float]) -> EventFrame:
    """Bin events with t0 <= t <= t1 (seconds, inclusive) into an EventFrame."""
    t0, t1 = window
    if t0 >= t1:
        raise ValueError(f"empty window [{t0}, {t1})")
    if t0 < 0 or t1 > stream.duration:
        raise ValueError(f"window [{t0}, {t1}] outside [0, {stream.duration}]")
    counts = np.zeros((2, stream.height, stream.width), dtype=np.int64)
    sel = (stream.t_us >= t0 * 1e6) & (stream.t_us <= t1 * 1e6)
    chan = (stream.polarity[sel] < 0).astype(np.int64)  # 0 = positive, 1 = negative
    np.add.at(counts, (chan, stream.y[sel], stream.x[sel]), 1)
    return EventFrame(stream.width, stream.height, counts)


def render_rgb(frame: EventFrame) -> np.ndarray:
    """Render on a white background: red for positive, blue for negative.

    Each polarity subtracts its normalized intensity from the complementary
    color channels; overlapping polarities blend additively and clamp, so a
    pixel carrying both drifts toward the magenta family.
    """
    r = frame.data[0]
    b = frame.data[1]
    out = np.empty((frame.height, frame.width, 3))
    out[..., 0] = 1.0 - b
    out[..., 1] = 1.0 - r - b
    out[..., 2] = 1.0 - r
    return np.clip(out, 0.0, 1.0)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic overlap weights for 1-D area averaging."""
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for j in range(n_out):
        lo, hi = j * scale, (j + 1) * scale
        for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            w[j, i] = max(0.0, min(hi, i + 1) - max(lo, i))
    return w / scale


def resize_area(counts: np.ndarray, width: int, height: int) -> np.ndarray:
    """Area-average a (2, h, w) count tensor to (2, height, width)."""
    wy = _area_weights(counts.shape[1], height)
    wx = _area_weights(counts.shape[2], width)
    return np.einsum("oi,cij,pj->cop", wy, counts.astype(np.float64), wx)


def frame_to_feature(frame: EventFrame, size: tuple[int, int] | None = None) -> np.ndarray:
    """Flatten both channels channel-major into a length 2*W*H vector.

    If `size` = (width, height) differs from the frame geometry, counts are
    first area-averaged to that size and re-normalized per channel.
    """
    if size is None or size == (frame.width, frame.height):
        return frame.data.reshape(-1).copy()
    width, height = size
    resized = resize_area(frame.counts, width, height)
    return _max_normalize(resized).reshape(-1)
