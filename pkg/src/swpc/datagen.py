"""Synthetic EEG with known ground truth for end-to-end verification.

Each channel carries a constant-amplitude mu-band sinusoid on top of 1/f
noise. During an MI event of class k, the channels assigned to class k
have their mu amplitude suppressed by erd_depth (event-related
desynchronization); class identity is encoded by WHICH channels
desynchronize, never by amplitude increase. The sinusoid's phase executes
a slow random walk per channel, so cross-channel phase carries no stable
information and amplitude is the only learnable cue (a phase-locked tone
would let a decoder key on recording-specific phase geometry that cannot
transfer to new data). Everything is a deterministic function of the
spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataio import ContinuousRecording, Event, TrialSet, extract_adjacent_rest, extract_mi_trials


@dataclass(frozen=True)
class SynthSpec:
    n_channels: int = 4
    fs: float = 128.0
    n_classes: int = 2
    mu_freq: float = 11.0
    mu_amp: float = 10.0
    # Std of per-sample phase increments (rad); 0 gives a phase-locked tone.
    phase_drift: float = 0.15
    erd_depth: float = 0.6
    noise_amp: float = 2.0
    trial_len_s: float = 3.0
    rest_len_range_s: tuple[float, float] = (2.0, 4.0)
    n_events: int = 40
    total_len_s: float | None = None
    seed: int = 0
    # Channels suppressed per class (index k-1 holds class k's channels);
    # default splits the montage evenly across classes.
    class_channels: tuple[tuple[int, ...], ...] | None = None

    def channel_map(self) -> tuple[tuple[int, ...], ...]:
        if self.class_channels is not None:
            return self.class_channels
        split = np.array_split(np.arange(self.n_channels), self.n_classes)
        return tuple(tuple(int(c) for c in part) for part in split)

    def validate(self) -> None:
        if not 0 <= self.erd_depth < 1:
            raise ValueError(f"erd_depth must be in [0, 1), got {self.erd_depth}")
        if self.mu_freq >= self.fs / 2:
            raise ValueError(f"mu_freq {self.mu_freq} at or above Nyquist {self.fs / 2}")
        if self.phase_drift < 0:
            raise ValueError("phase_drift must be non-negative")
        if self.n_classes < 1 or self.n_channels < 1 or self.n_events < 0:
            raise ValueError("counts must be positive")
        lo, hi = self.rest_len_range_s
        if not 0 < lo <= hi:
            raise ValueError(f"bad rest length range {self.rest_len_range_s}")
        if self.trial_len_s <= 0:
            raise ValueError("trial_len_s must be positive")
        cmap = self.channel_map()
        if len(cmap) != self.n_classes:
            raise ValueError("class_channels must list one channel tuple per class")
        for chans in cmap:
            if not chans or any(not 0 <= c < self.n_channels for c in chans):
                raise ValueError(f"bad channel assignment {chans}")


def pink_noise(n: int, rng: np.random.Generator, n_rows: int = 16) -> np.ndarray:
    """Voss-McCartney 1/f noise: rows of held white noise updated at
    octave-spaced intervals, summed. Unit variance up to estimation error."""
    total = rng.standard_normal(n)
    for k in range(1, n_rows):
        step = 2**k
        if step >= 2 * n:
            break
        vals = rng.standard_normal(n // step + 1)
        total += np.repeat(vals, step)[:n]
    std = total.std()
    return total / std if std > 0 else total


def _layout_events(spec: SynthSpec, rng: np.random.Generator) -> tuple[list[Event], int]:
    trial_len = int(round(spec.trial_len_s * spec.fs))
    lo, hi = spec.rest_len_range_s
    gaps = rng.uniform(lo, hi, size=spec.n_events + 1)
    labels = np.tile(np.arange(1, spec.n_classes + 1), spec.n_events // spec.n_classes + 1)
    labels = labels[: spec.n_events]
    rng.shuffle(labels)
    events = []
    cursor = 0
    for gap, label in zip(gaps[:-1], labels):
        cursor += int(round(gap * spec.fs))
        events.append(Event(onset=cursor, duration=trial_len, label=int(label)))
        cursor += trial_len
    cursor += int(round(gaps[-1] * spec.fs))
    if spec.total_len_s is not None:
        requested = int(round(spec.total_len_s * spec.fs))
        if cursor > requested:
            raise ValueError(
                f"events need {cursor} samples but total_len_s allows {requested}"
            )
        cursor = requested
    return events, cursor


def synth_recording(spec: SynthSpec) -> ContinuousRecording:
    """Mu sinusoid (continuous phase) + pink noise, with per-event ERD."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    events, n = _layout_events(spec, rng)
    cmap = spec.channel_map()
    t = np.arange(n) / spec.fs
    amp = np.full((spec.n_channels, n), spec.mu_amp)
    for ev in events:
        for c in cmap[ev.label - 1]:
            amp[c, ev.onset : ev.onset + ev.duration] *= 1.0 - spec.erd_depth
    phase = 2 * np.pi * spec.mu_freq * t[None, :]
    phase = phase + rng.uniform(0, 2 * np.pi, size=spec.n_channels)[:, None]
    if spec.phase_drift > 0:
        phase = phase + np.cumsum(
            spec.phase_drift * rng.standard_normal((spec.n_channels, n)), axis=1
        )
    samples = amp * np.sin(phase)
    for c in range(spec.n_channels):
        samples[c] += spec.noise_amp * pink_noise(n, rng)
    return ContinuousRecording(samples=samples, fs=spec.fs, events=events)


def synth_dataset(
    spec: SynthSpec, n_trials_per_class: int, transform=None
) -> tuple[TrialSet, TrialSet]:
    """Training material: (multiclass MI set, balanced binary MI/rest set).

    Rest gaps are widened to at least one trial length so every event has
    a clean preceding rest window and the binary set is exactly twice the
    multiclass size. `transform(samples, fs) -> samples` is applied to the
    whole recording before trial extraction (front-end filtering hook).
    """
    lo, hi = spec.rest_len_range_s
    train_spec = replace(
        spec,
        n_events=spec.n_classes * n_trials_per_class,
        rest_len_range_s=(max(lo, spec.trial_len_s), max(hi, spec.trial_len_s)),
        total_len_s=None,
    )
    rec = synth_recording(train_spec)
    if transform is not None:
        rec = ContinuousRecording(
            samples=transform(rec.samples, rec.fs), fs=rec.fs, events=rec.events
        )
    trial_len = int(round(spec.trial_len_s * spec.fs))
    multiclass = extract_mi_trials(rec, trial_len)
    binary = extract_adjacent_rest(rec, trial_len)
    if len(binary) != 2 * len(multiclass):
        raise AssertionError("gap widening should make rest extraction lossless")
    return multiclass, binary
