"""Filtering and windowing primitives for continuous EEG.

Filtering wraps scipy's IIR design routines; the contract here is the
frequency response (checked in the tests against a direct evaluation of
the transfer function), not the implementation. Both filters are applied
zero-phase via forward-backward filtering, so the passband group delay
is zero and edge effects are handled by odd-symmetric padding.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, filtfilt, iirnotch

# Mu/beta band used by every pipeline stage.
DEFAULT_BAND = (8.0, 30.0)
DEFAULT_BANDPASS_ORDER = 4
DEFAULT_NOTCH_FREQ = 50.0
DEFAULT_NOTCH_Q = 30.0


def bandpass_filter(
    x: np.ndarray,
    low_hz: float,
    high_hz: float,
    fs: float,
    order: int = DEFAULT_BANDPASS_ORDER,
) -> np.ndarray:
    """Zero-phase Butterworth bandpass along the last axis.

    `order` is the design order of the analog prototype; the bandpass
    transform doubles the pole count, and forward-backward application
    squares the magnitude response.
    """
    if not 0 < low_hz < high_hz:
        raise ValueError(f"need 0 < low ({low_hz}) < high ({high_hz})")
    nyq = fs / 2.0
    if high_hz >= nyq:
        raise ValueError(f"high edge {high_hz} Hz must be below Nyquist {nyq} Hz")
    b, a = butter(order, [low_hz / nyq, high_hz / nyq], btype="bandpass")
    return filtfilt(b, a, x, axis=-1, padtype="odd", padlen=3 * max(len(a), len(b)))


def notch_filter(
    x: np.ndarray,
    freq_hz: float = DEFAULT_NOTCH_FREQ,
    fs: float = 250.0,
    q: float = DEFAULT_NOTCH_Q,
) -> np.ndarray:
    """Zero-phase IIR notch (biquad) along the last axis."""
    nyq = fs / 2.0
    if not 0 < freq_hz < nyq:
        raise ValueError(f"notch frequency {freq_hz} Hz outside (0, {nyq})")
    b, a = iirnotch(freq_hz / nyq, q)
    return filtfilt(b, a, x, axis=-1, padtype="odd", padlen=3 * max(len(a), len(b)))


def preprocess_recording(samples: np.ndarray, fs: float) -> np.ndarray:
    """Standard front end: 50 Hz notch, then 8-30 Hz bandpass.

    Skips the notch when 50 Hz lies outside the representable band
    (low sampling rates put it at or above Nyquist).
    """
    out = np.asarray(samples, dtype=np.float64)
    if DEFAULT_NOTCH_FREQ < fs / 2.0:
        out = notch_filter(out, DEFAULT_NOTCH_FREQ, fs, DEFAULT_NOTCH_Q)
    out = bandpass_filter(out, DEFAULT_BAND[0], DEFAULT_BAND[1], fs)
    return out


def window_count(frame_len: int, window_len: int, step: int) -> int:
    """Number of full windows of window_len starting every `step` samples.

    Equals floor((frame_len - window_len) / step) + 1, or 0 when the frame
    is shorter than one window.
    """
    if window_len <= 0 or step <= 0:
        raise ValueError("window_len and step must be positive")
    if frame_len < window_len:
        return 0
    return (frame_len - window_len) // step + 1


def window_starts(frame_len: int, window_len: int, step: int) -> np.ndarray:
    """Start indices of the windows counted by window_count."""
    n = window_count(frame_len, window_len, step)
    return np.arange(n, dtype=np.int64) * step


def sliding_windows(x: np.ndarray, window_len: int, step: int) -> np.ndarray:
    """View of shape [n_windows, ch, window_len] over the last axis of x.

    Zero-copy (numpy stride tricks); callers that mutate must copy first.
    """
    if window_len > x.shape[-1]:
        raise ValueError(
            f"window_len {window_len} exceeds frame length {x.shape[-1]}"
        )
    starts = window_starts(x.shape[-1], window_len, step)
    n = len(starts)
    windows = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)
    # windows: [ch, frame_len - window_len + 1, window_len]
    return windows[:, ::step, :][:, :n, :].transpose(1, 0, 2)
