"""OneEuro low-pass filtering of per-frame pose parameters (post-processing only)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .body import PoseParams
from .errors import ConfigError


@dataclass(frozen=True)
class OneEuroParams:
    min_cutoff: float = 1.0  # Hz
    beta: float = 0.5
    derivative_cutoff: float = 1.0  # Hz
    sample_rate: float = 30.0  # Hz

    def __post_init__(self):
        for name in ("min_cutoff", "derivative_cutoff", "sample_rate"):
            v = getattr(self, name)
            if not (v > 0):
                raise ConfigError(f"{name} must be positive")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError("beta must be nonnegative")

    @classmethod
    def from_dict(cls, d):
        known = {"min_cutoff", "beta", "derivative_cutoff", "sample_rate"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown smoothing settings: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def smoothing_factor(cutoff, rate):
    tau = 1.0 / (2.0 * math.pi * cutoff)
    return 1.0 / (1.0 + tau * rate)


def one_euro_filter(series, params: OneEuroParams | None = None):
    """Filter each column of ``series`` (frames x components) independently."""
    p = params or OneEuroParams()
    x = np.asarray(series, dtype=np.float64)
    squeeze = x.ndim == 1
    x = x.reshape(len(x), -1)
    if len(x) == 0:
        raise ValueError("need at least one sample")
    out = np.empty_like(x)
    out[0] = x[0]
    dx_hat = np.zeros(x.shape[1])
    a_d = smoothing_factor(p.derivative_cutoff, p.sample_rate)
    for k in range(1, len(x)):
        dx = (x[k] - out[k - 1]) * p.sample_rate
        dx_hat = a_d * dx + (1.0 - a_d) * dx_hat
        cutoff = p.min_cutoff + p.beta * np.abs(dx_hat)
        tau = 1.0 / (2.0 * np.pi * cutoff)
        a = 1.0 / (1.0 + tau * p.sample_rate)
        out[k] = out[k - 1] + a * (x[k] - out[k - 1])
    return out[:, 0] if squeeze else out


def smooth_poses(poses, params: OneEuroParams | None = None):
    """Smooth a refined pose sequence component-wise in axis-angle space."""
    if not poses:
        return []
    stack = np.array([p.as_vector() for p in poses])
    filtered = one_euro_filter(stack, params)
    return [PoseParams.from_vector(v) for v in filtered]
