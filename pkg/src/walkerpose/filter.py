"""One-euro adaptive low-pass filtering of keypoint streams."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import NonMonotonicTime
from .skeleton import Skeleton3D

RESET_GAP = 0.5


@dataclass(frozen=True)
class OneEuroConfig:
    fc_min: float = 1.5
    beta: float = 0.15
    d_cutoff: float = 1.0
    reset_gap: float = RESET_GAP

    def __post_init__(self):
        if not self.fc_min > 0:
            raise ValueError("fc_min must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not self.d_cutoff > 0:
            raise ValueError("d_cutoff must be positive")


def smoothing_factor(cutoff, dt):
    """alpha = 1 / (1 + tau/dt) with tau = 1 / (2 pi cutoff)."""
    tau = 1.0 / (2.0 * math.pi * cutoff)
    return 1.0 / (1.0 + tau / dt)


class OneEuroState:
    """Filter memory for a fixed-shape group of channels (e.g. 17x3).

    All channels of one state share a timestamp; use separate states for
    streams sampled at different times.
    """

    def __init__(self, shape=(17, 3)):
        self.shape = tuple(shape)
        self.x = np.zeros(self.shape)
        self.dx = np.zeros(self.shape)
        self.t = None

    @property
    def initialized(self):
        return self.t is not None

    def reset(self):
        self.t = None


def filter_step(state: OneEuroState, value, t, cfg: OneEuroConfig = OneEuroConfig()):
    """Advance the filter by one sample at time ``t`` (seconds); returns the filtered value."""
    x = np.asarray(value, dtype=float)
    if state.t is not None:
        if not t > state.t:
            raise NonMonotonicTime(f"timestamp {t} is not after {state.t}")
        if t - state.t > cfg.reset_gap:
            state.reset()
    if state.t is None:
        state.x = np.array(x, dtype=float).reshape(state.shape)
        state.dx = np.zeros(state.shape)
        state.t = float(t)
        return state.x.copy()
    dt = t - state.t
    a_d = smoothing_factor(cfg.d_cutoff, dt)
    raw_dx = (x - state.x) / dt
    dx = a_d * raw_dx + (1.0 - a_d) * state.dx
    cutoff = cfg.fc_min + cfg.beta * np.abs(dx)
    tau = 1.0 / (2.0 * np.pi * cutoff)
    alpha = 1.0 / (1.0 + tau / dt)
    out = alpha * x + (1.0 - alpha) * state.x
    # clamp away round-off so the output stays between input and previous value
    # (this also makes a constant signal an exact fixed point)
    out = np.clip(out, np.minimum(x, state.x), np.maximum(x, state.x))
    state.x = out
    state.dx = dx
    state.t = float(t)
    return out.copy()


def filter_skeleton_stream(state: OneEuroState, skel: Skeleton3D, cfg: OneEuroConfig = OneEuroConfig()):
    return Skeleton3D(filter_step(state, skel.coords, skel.timestamp, cfg), skel.timestamp)


def filter_sequence(timestamps, values, cfg: OneEuroConfig = OneEuroConfig()):
    """Filter a whole (T, ...) sequence with a fresh state."""
    vals = np.asarray(values, dtype=float)
    state = OneEuroState(vals.shape[1:])
    return np.stack([filter_step(state, v, t, cfg) for t, v in zip(timestamps, vals)])


class OneEuroSmoother(TransformerMixin, BaseEstimator):
    """Transformer wrapper: ``transform(X, timestamps=None)`` filters a (T, ...) sequence.

    Without timestamps, samples are taken as uniformly spaced at ``rate`` Hz.
    Each call starts from a fresh state.
    """

    def __init__(self, fc_min=1.5, beta=0.15, d_cutoff=1.0, rate=30.0):
        self.fc_min = fc_min
        self.beta = beta
        self.d_cutoff = d_cutoff
        self.rate = rate

    def fit(self, X, y=None):
        self.config_ = OneEuroConfig(self.fc_min, self.beta, self.d_cutoff)
        return self

    def transform(self, X, timestamps=None):
        cfg = getattr(self, "config_", None) or OneEuroConfig(self.fc_min, self.beta, self.d_cutoff)
        x = np.asarray(X, dtype=float)
        ts = np.arange(len(x)) / self.rate if timestamps is None else np.asarray(timestamps, dtype=float)
        return filter_sequence(ts, x, cfg)
