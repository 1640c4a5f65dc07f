"""Self-contact detection from a wrist-to-wrist bioimpedance recording.

Pipeline: linear resampling to a fixed rate, running median, first difference,
then an adaptive onset threshold derived from the deepest slope minima of the
whole recording. A contact ends when the smoothed magnitude climbs back to a
fixed fraction of its pre-contact level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, InsufficientData, ThresholdUndefined


@dataclass(frozen=True)
class BioimpedanceTrace:
    """Raw impedance magnitude samples (seconds, ohms); times may be irregular."""

    times: np.ndarray
    magnitudes: np.ndarray
    nominal_rate: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        m = np.asarray(self.magnitudes, dtype=np.float64)
        if t.shape != m.shape or t.ndim != 1:
            raise InsufficientData("times and magnitudes must be 1-D and of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise InsufficientData("sample times must be strictly increasing")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise InsufficientData("magnitudes must be finite and positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "magnitudes", m)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class UniformTrace:
    start_time: float
    rate: float
    values: np.ndarray

    @property
    def times(self):
        return self.start_time + np.arange(self.values.size) / self.rate


@dataclass
class ContactTimeline:
    intervals: list[tuple[float, float]]
    frame_flags: list[bool]
    frame_rate: float
    baselines: list[float] = field(default_factory=list)

    def to_dict(self):
        return {
            "intervals": [{"onset_s": a, "offset_s": b} for a, b in self.intervals],
            "frame_rate_hz": self.frame_rate,
            "frame_flags": [bool(f) for f in self.frame_flags],
        }

    @classmethod
    def from_dict(cls, data):
        intervals = [(float(iv["onset_s"]), float(iv["offset_s"])) for iv in data["intervals"]]
        return cls(intervals, [bool(f) for f in data.get("frame_flags", [])],
                   float(data["frame_rate_hz"]))


@dataclass(frozen=True)
class DetectorConfig:
    resample_rate: float = 1000.0
    median_window: float = 100.0  # ms
    threshold_fraction: float = 1.0 / 3.0
    recovery_fraction: float = 0.98
    min_contact_duration: float = 150.0  # ms
    min_gap: float = 100.0  # ms
    baseline_window: float = 200.0  # ms
    frame_rate: float = 30.0

    def __post_init__(self):
        for name in ("resample_rate", "median_window", "min_contact_duration", "min_gap",
                     "baseline_window", "frame_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("threshold_fraction", "recovery_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")


def resample(trace: BioimpedanceTrace, rate: float) -> UniformTrace:
    if len(trace) < 2:
        raise InsufficientData("need at least 2 samples to resample")
    if not rate > 0:
        raise ConfigError("rate must be positive")
    t0 = trace.times[0]
    rel = trace.times - t0
    # small slack so a span that is an exact multiple of the period keeps its endpoint
    n = int(math.floor(rel[-1] * rate + 1e-9)) + 1
    grid = np.arange(n) / rate
    return UniformTrace(float(t0), float(rate), np.interp(grid, rel, trace.magnitudes))


def window_samples(window_ms: float, rate: float) -> int:
    """Window length in samples, rounded up to the next odd count."""
    n = max(1, math.ceil(window_ms * 1e-3 * rate - 1e-9))
    return n if n % 2 else n + 1


def median_filter(trace: UniformTrace, window: float) -> UniformTrace:
    half = window_samples(window, trace.rate) // 2
    return UniformTrace(trace.start_time, trace.rate, kernels.sliding_median(trace.values, half))


def differentiate(trace: UniformTrace) -> UniformTrace:
    """First difference in units per second, stamped at the interval midpoints."""
    if trace.values.size < 2:
        raise InsufficientData("need at least 2 values to differentiate")
    return UniformTrace(trace.start_time + 0.5 / trace.rate, trace.rate,
                        np.diff(trace.values) * trace.rate)


def local_minima(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values)
    if v.size < 3:
        return np.empty(0)
    inner = v[1:-1]
    return inner[(inner < v[:-2]) & (inner < v[2:])]


def adaptive_threshold(deriv: UniformTrace, fraction: float) -> float:
    minima = local_minima(deriv.values)
    if minima.size < 3:
        raise ThresholdUndefined(f"found {minima.size} local minima, need 3")
    lowest = np.partition(minima, 2)[:3]
    return float(fraction * lowest.mean())


def align_to_frames(timeline: ContactTimeline | list, frame_times) -> list[bool]:
    """Flag each frame time that falls in some [onset, offset)."""
    intervals = timeline.intervals if isinstance(timeline, ContactTimeline) else timeline
    ft = np.asarray(frame_times, dtype=np.float64)
    flags = np.zeros(ft.size, dtype=bool)
    for onset, offset in intervals:
        flags |= (ft >= onset) & (ft < offset)
    return flags.tolist()


def frame_times_for(n_frames: int, frame_rate: float) -> np.ndarray:
    return np.arange(n_frames) / frame_rate


def _find_events(smooth: UniformTrace, deriv: UniformTrace, thr: float, cfg: DetectorConfig):
    s = smooth.values
    d = deriv.values
    rate = smooth.rate
    base_n = max(1, int(round(cfg.baseline_window * 1e-3 * rate)))
    entry_n = max(1, int(round(cfg.min_contact_duration * 1e-3 * rate)))
    events = []
    below = d < thr
    k = 0
    n = d.size
    while k < n:
        if not below[k] or (k > 0 and below[k - 1]):
            k += 1
            continue
        onset_t = deriv.start_time + k / rate
        # derivative sample k spans smoothed samples k and k+1; onset sits between them
        i_on = k
        baseline = float(np.median(s[max(0, i_on - base_n):i_on + 1]))
        level = cfg.recovery_fraction * baseline
        stop = min(s.size, i_on + entry_n + 1)
        inside = np.flatnonzero(s[i_on:stop] < level)
        if inside.size == 0:
            k += 1
            continue
        i_in = i_on + int(inside[0])
        back = np.flatnonzero(s[i_in:] >= level)
        i_off = i_in + int(back[0]) if back.size else s.size - 1
        events.append((onset_t, smooth.start_time + i_off / rate, baseline))
        k = max(i_off, k + 1)
    return events


def _clean(events, cfg: DetectorConfig):
    min_len = cfg.min_contact_duration * 1e-3
    gap = cfg.min_gap * 1e-3
    kept = [e for e in events if e[1] - e[0] >= min_len]
    merged: list[list[float]] = []
    for onset, offset, base in kept:
        if merged and onset - merged[-1][1] < gap:
            merged[-1][1] = max(merged[-1][1], offset)
            merged[-1][2] = base
        else:
            merged.append([onset, offset, base])
    return merged


def detect_contacts(trace: BioimpedanceTrace, cfg: DetectorConfig | None = None,
                    n_frames: int | None = None) -> ContactTimeline:
    """Detect contact intervals and flag video frames at ``cfg.frame_rate``.

    Frames are stamped at ``k / frame_rate`` from time zero; by default they cover
    the trace up to its last sample.
    """
    cfg = cfg or DetectorConfig()
    uniform = resample(trace, cfg.resample_rate)
    smooth = median_filter(uniform, cfg.median_window)
    deriv = differentiate(smooth)
    if n_frames is None:
        n_frames = int(math.floor(trace.times[-1] * cfg.frame_rate + 1e-9)) + 1
    try:
        thr = adaptive_threshold(deriv, cfg.threshold_fraction)
    except ThresholdUndefined:
        thr = None
    if thr is None or thr >= 0.0:
        # no usable negative slope: report nothing rather than guess
        return ContactTimeline([], [False] * n_frames, cfg.frame_rate, [])
    merged = _clean(_find_events(smooth, deriv, thr, cfg), cfg)
    intervals = [(a, b) for a, b, _ in merged]
    flags = align_to_frames(intervals, frame_times_for(n_frames, cfg.frame_rate))
    return ContactTimeline(intervals, flags, cfg.frame_rate, [m[2] for m in merged])


def frame_confusion(pred_flags, true_flags):
    """(tp, fp, tn, fn) counts over paired frame flags."""
    p = np.asarray(pred_flags, dtype=bool)
    t = np.asarray(true_flags, dtype=bool)
    return (int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t)))
