"""Idealized DVS event emission from a frame sequence.

Each pixel keeps a log-intensity memory, initialized to log(frame0 + eps).
Between consecutive frames the log intensity is linearly interpolated in
time; every time the interpolant reaches memory +/- theta an event is
emitted at the interpolated crossing time and the memory steps by exactly
+/- theta (integrate-and-fire, not reset-to-sample). A crossing that falls
inside the refractory window of the last *emitted* event at that pixel
still steps the memory but produces no event record.

With threshold_noise_sigma > 0 every pixel gets a fixed multiplicative
threshold jitter max(0.1, 1 + sigma * z), z standard normal, drawn once per
run from the config seed and applied to both polarities.

`emit` and `emit_reference` implement the same rule; the reference walks
pixels and intervals with scalar Python loops and exists so tests can check
the vectorized path bit-for-bit. Both consume the same log-intensity and
jitter arrays, so equality is exact, not approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .motion import FrameSequence


@dataclass(frozen=True)
class EmitterConfig:
    theta_pos: float = 0.2  # log-intensity contrast threshold, ON events
    theta_neg: float = 0.2  # OFF events
    log_eps: float = 1e-3  # bounds log(I + eps) for black pixels
    refractory: float = 0.0  # seconds; 0 disables
    threshold_noise_sigma: float = 0.0  # 0 = ideal pixel
    seed: int = 0

    def __post_init__(self):
        if self.theta_pos <= 0 or self.theta_neg <= 0:
            raise ConfigError("contrast thresholds must be positive")
        if self.log_eps <= 0:
            raise ConfigError("log_eps must be positive")
        if self.refractory < 0:
            raise ConfigError("refractory must be non-negative")
        if self.threshold_noise_sigma < 0:
            raise ConfigError("threshold_noise_sigma must be non-negative")


@dataclass(frozen=True)
class Event:
    """One brightness-change record."""

    t: int  # microseconds since sequence start
    x: int
    y: int
    polarity: int  # +1 or -1


class EventStream:
    """Events over a sensor of width x height, canonically sorted.

    The sort key is (t, y, x, polarity) ascending, which is total and
    deterministic; construction always re-sorts, so streams built from the
    same event set compare equal regardless of production order.
    """

    __slots__ = ("width", "height", "duration", "t_us", "x", "y", "polarity")

    def __init__(self, width, height, duration, t_us, x, y, polarity):
        self.width = int(width)
        self.height = int(height)
        self.duration = float(duration)
        t_us = np.asarray(t_us, dtype=np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        polarity = np.asarray(polarity, dtype=np.int8)
        order = np.lexsort((polarity, x, y, t_us))
        self.t_us = t_us[order]
        self.x = x[order]
        self.y = y[order]
        self.polarity = polarity[order]
        self._validate()

    def _validate(self):
        n = len(self.t_us)
        if not (len(self.x) == len(self.y) == len(self.polarity) == n):
            raise ConfigError("event field lengths differ")
        if n == 0:
            return
        if self.x.min() < 0 or self.x.max() >= self.width:
            raise ConfigError("event x coordinate out of bounds")
        if self.y.min() < 0 or self.y.max() >= self.height:
            raise ConfigError("event y coordinate out of bounds")
        if self.t_us.min() < 0 or self.t_us.max() > duration_us(self.duration):
            raise ConfigError("event timestamp outside [0, duration]")
        if not np.all(np.abs(self.polarity) == 1):
            raise ConfigError("polarity must be +1 or -1")

    @classmethod
    def from_events(cls, width: int, height: int, duration: float, events) -> "EventStream":
        events = list(events)
        return cls(
            width,
            height,
            duration,
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.polarity for e in events],
        )

    def __len__(self) -> int:
        return len(self.t_us)

    def __iter__(self):
        for i in range(len(self)):
            yield Event(int(self.t_us[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.duration == other.duration
            and np.array_equal(self.t_us, other.t_us)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.polarity, other.polarity)
        )

    def __repr__(self) -> str:
        return f"EventStream({self.width}x{self.height}, {len(self)} events, {self.duration}s)"


def duration_us(duration_s: float) -> int:
    return int(np.rint(duration_s * 1e6))


def log_frames(seq: FrameSequence, log_eps: float) -> list[np.ndarray]:
    """Per-frame log intensity, the quantity the pixel model thresholds."""
    return [np.log(f.data + log_eps) for f in seq.frames]


def threshold_jitter(cfg: EmitterConfig, height: int, width: int) -> np.ndarray:
    """Fixed per-pixel threshold multipliers for one run."""
    if cfg.threshold_noise_sigma == 0.0:
        return np.ones((height, width))
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((height, width))
    return np.maximum(0.1, 1.0 + cfg.threshold_noise_sigma * z)


def emit(seq: FrameSequence, cfg: EmitterConfig) -> EventStream:
    """Convert a frame sequence into an event stream (vectorized over pixels)."""
    h, w = seq.height, seq.width
    logs = log_frames(seq, cfg.log_eps)
    jitter = threshold_jitter(cfg, h, w)
    tp = cfg.theta_pos * jitter
    tn = cfg.theta_neg * jitter
    refr_us = duration_us(cfg.refractory)
    dur_us = duration_us(seq.duration)

    mem = logs[0].copy()
    last_emit = np.full((h, w), np.iinfo(np.int64).min // 2, dtype=np.int64)
    out_t, out_x, out_y, out_p = [], [], [], []

    for i in range(len(logs) - 1):
        ta_us = seq.timestamps[i] * 1e6
        tb_us = seq.timestamps[i + 1] * 1e6
        dt_us = tb_us - ta_us
        la, lb = logs[i], logs[i + 1]
        for sign, theta in ((1, tp), (-1, tn)):
            while True:
                if sign > 0:
                    mask = (lb - mem) >= theta
                else:
                    mask = (mem - lb) >= theta
                if not mask.any():
                    break
                ys, xs = np.nonzero(mask)
                if sign > 0:
                    lvl = mem[mask] + theta[mask]
                else:
                    lvl = mem[mask] - theta[mask]
                t_f = ta_us + (lvl - la[mask]) / (lb[mask] - la[mask]) * dt_us
                t_us = np.minimum(np.rint(t_f).astype(np.int64), dur_us)
                keep = (t_us - last_emit[mask]) >= refr_us
                out_t.append(t_us[keep])
                out_x.append(xs[keep])
                out_y.append(ys[keep])
                out_p.append(np.full(int(keep.sum()), sign, dtype=np.int8))
                le = last_emit[mask]
                le[keep] = t_us[keep]
                last_emit[mask] = le
                mem[mask] = lvl

    cat = lambda parts, dtype: np.concatenate(parts) if parts else np.empty(0, dtype=dtype)
    return EventStream(
        w,
        h,
        seq.duration,
        cat(out_t, np.int64),
        cat(out_x, np.intp),
        cat(out_y, np.intp),
        cat(out_p, np.int8),
    )


def emit_reference(seq: FrameSequence, cfg: EmitterConfig) -> EventStream:
    """Scalar per-pixel, per-interval implementation of the same rule.

    Test oracle only; restricted to small inputs.
    """
    h, w = seq.height, seq.width
    if w > 64 or h > 64 or len(seq.frames) > 32:
        raise ConfigError("emit_reference is restricted to <=64x64 and <=32 frames")
    logs = log_frames(seq, cfg.log_eps)
    jitter = threshold_jitter(cfg, h, w)
    refr_us = duration_us(cfg.refractory)
    dur_us = duration_us(seq.duration)

    events = []
    for y in range(h):
        for x in range(w):
            tp = cfg.theta_pos * jitter[y, x]
            tn = cfg.theta_neg * jitter[y, x]
            mem = logs[0][y, x]
            last_emit = np.iinfo(np.int64).min // 2
            for i in range(len(logs) - 1):
                ta_us = seq.timestamps[i] * 1e6
                tb_us = seq.timestamps[i + 1] * 1e6
                dt_us = tb_us - ta_us
                la = logs[i][y, x]
                lb = logs[i + 1][y, x]
                for sign, theta in ((1, tp), (-1, tn)):
                    while (lb - mem >= theta) if sign > 0 else (mem - lb >= theta):
                        lvl = mem + theta if sign > 0 else mem - theta
                        t_f = ta_us + (lvl - la) / (lb - la) * dt_us
                        t_us = min(int(np.rint(t_f)), dur_us)
                        if t_us - last_emit >= refr_us:
                            events.append(Event(t_us, x, y, sign))
                            last_emit = t_us
                        mem = lvl
    return EventStream.from_events(w, h, seq.duration, events)
