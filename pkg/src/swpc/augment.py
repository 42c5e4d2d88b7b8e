"""Stochastic trial augmentations for classification-module SSL.

Four kinds: additive uniform noise, amplitude scaling, channel masking,
and segment masking. Every function is a pure, deterministic function of
(input, seed) and preserves the [ch, ts] shape. Noise and scaling act in
signal space; the noise amplitude follows each channel's own standard
deviation so channels with different gains are perturbed proportionally.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class AugmentKind(enum.Enum):
    ADD_NOISE = "add_noise"
    SCALE_AMPLITUDE = "scale_amplitude"
    MASK_CHANNELS = "mask_channels"
    MASK_SEGMENTS = "mask_segments"


@dataclass(frozen=True)
class AugmentParams:
    noise_factor: float = 0.5
    scale_choices: tuple[float, float] = (0.75, 1.25)
    channel_fraction: float = 0.25
    n_segments: int = 2
    segment_fraction: float = 0.1

    def validate(self) -> None:
        if not 0 < self.channel_fraction < 1:
            raise ValueError(f"channel_fraction must be in (0,1), got {self.channel_fraction}")
        if not 0 < self.segment_fraction < 1:
            raise ValueError(f"segment_fraction must be in (0,1), got {self.segment_fraction}")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def add_noise(trial: np.ndarray, seed, noise_factor: float = 0.5) -> np.ndarray:
    """x + factor * u with u ~ U(-d_c, d_c), d_c = channel standard deviation."""
    rng = _rng(seed)
    delta_c = trial.std(axis=-1, keepdims=True)
    u = rng.uniform(-1.0, 1.0, size=trial.shape) * delta_c
    return trial + noise_factor * u


def scale_amplitude(trial: np.ndarray, seed, choices: tuple[float, ...] = (0.75, 1.25)) -> np.ndarray:
    """Multiply the whole trial by one factor drawn uniformly from `choices`."""
    rng = _rng(seed)
    return trial * choices[rng.integers(len(choices))]


def mask_channels(trial: np.ndarray, fraction: float, seed) -> np.ndarray:
    """Zero ceil(fraction * ch) distinct channels; zeroing all is an error."""
    rng = _rng(seed)
    ch = trial.shape[0]
    n_mask = math.ceil(fraction * ch)
    if n_mask >= ch:
        raise ValueError(
            f"fraction {fraction} would zero all {ch} channels"
        )
    if n_mask < 1:
        raise ValueError(f"fraction {fraction} masks no channel")
    out = trial.copy()
    out[rng.choice(ch, size=n_mask, replace=False)] = 0.0
    return out


def mask_segments(trial: np.ndarray, n_segments: int, seg_fraction: float, seed) -> np.ndarray:
    """Zero n_segments random time intervals of round(seg_fraction * ts)
    samples across all channels; intervals may overlap."""
    rng = _rng(seed)
    ts = trial.shape[-1]
    seg_len = int(round(seg_fraction * ts))
    if seg_len < 1:
        raise ValueError(
            f"segment length round({seg_fraction} * {ts}) is zero"
        )
    if seg_len > ts:
        raise ValueError("segment longer than the trial")
    out = trial.copy()
    for _ in range(n_segments):
        start = int(rng.integers(0, ts - seg_len + 1))
        out[:, start : start + seg_len] = 0.0
    return out


def apply(kind: AugmentKind, trial: np.ndarray, seed, params: AugmentParams) -> np.ndarray:
    if kind is AugmentKind.ADD_NOISE:
        return add_noise(trial, seed, params.noise_factor)
    if kind is AugmentKind.SCALE_AMPLITUDE:
        return scale_amplitude(trial, seed, params.scale_choices)
    if kind is AugmentKind.MASK_CHANNELS:
        return mask_channels(trial, params.channel_fraction, seed)
    if kind is AugmentKind.MASK_SEGMENTS:
        return mask_segments(trial, params.n_segments, params.segment_fraction, seed)
    raise ValueError(f"unknown augmentation kind {kind!r}")


@dataclass
class ViewPair:
    view1: np.ndarray
    view2: np.ndarray
    kind1: AugmentKind
    kind2: AugmentKind


def pick_two_distinct(trial: np.ndarray, seed, params: AugmentParams | None = None) -> ViewPair:
    """Two views of one trial under two distinct augmentation kinds,
    sampled without replacement; each kind is applied to the original."""
    params = params or AugmentParams()
    params.validate()
    rng = _rng(seed)
    kinds = list(AugmentKind)
    i, j = rng.choice(len(kinds), size=2, replace=False)
    k1, k2 = kinds[int(i)], kinds[int(j)]
    return ViewPair(
        view1=apply(k1, trial, rng, params),
        view2=apply(k2, trial, rng, params),
        kind1=k1,
        kind2=k2,
    )
