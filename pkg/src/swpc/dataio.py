"""Binary container format for continuous EEG recordings and trial extraction.

The container holds one multichannel recording plus its ground-truth event
table. Layout (all little-endian):

    magic   4 bytes  b"SWPC"
    header  version u16, n_channels u16, n_samples u64, fs f64, n_events u32
    samples n_channels * n_samples float32, channel-major
    events  per event: onset u64, duration u64, label u16

Samples are stored as float32 (EEG dynamic range fits comfortably); all
in-memory numerics are float64. Label 0 is reserved for rest, so events in
the table carry MI class codes 1..K only.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"SWPC"
FORMAT_VERSION = 1
REST_LABEL = 0

_HEADER = struct.Struct("<HHQdI")
_EVENT = struct.Struct("<QQH")


class ContainerError(Exception):
    """Malformed container file."""


class BadMagicError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


@dataclass
class Event:
    """One MI cue: [onset, onset + duration) with class code label >= 1."""

    onset: int
    duration: int
    label: int


@dataclass
class ContinuousRecording:
    """A long multichannel stream with its ground-truth event table.

    samples has shape [n_channels, n_samples] in microvolts.
    """

    samples: np.ndarray
    fs: float
    events: list[Event] = field(default_factory=list)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def validate(self) -> None:
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.n_samples <= 0:
            raise ValueError("recording must contain at least one sample")
        if self.fs <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if not np.isfinite(self.samples).all():
            raise ValueError("samples contain NaN or Inf")
        prev_end = 0
        for ev in self.events:
            if ev.duration <= 0:
                raise ValueError(f"event at {ev.onset} has non-positive duration")
            if ev.label < 1:
                raise ValueError(f"event label must be >= 1, got {ev.label}")
            if ev.onset < prev_end:
                raise ValueError("events must be sorted and non-overlapping")
            if ev.onset + ev.duration > self.n_samples:
                raise ValueError(
                    f"event [{ev.onset}, {ev.onset + ev.duration}) exceeds "
                    f"recording length {self.n_samples}"
                )
            prev_end = ev.onset + ev.duration


@dataclass
class Trial:
    """One fixed-length segment [ch x ts]; label is a class code or MI/rest flag."""

    samples: np.ndarray
    label: int


@dataclass
class TrialSet:
    trials: list[Trial]
    kind: str  # "multiclass" or "binary"
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.trials)

    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    def validate(self) -> None:
        if self.kind not in ("multiclass", "binary"):
            raise ValueError(f"unknown trial set kind {self.kind!r}")
        if not self.trials:
            return
        ts = self.trials[0].samples.shape
        for t in self.trials:
            if t.samples.shape != ts:
                raise ValueError("trials have inconsistent shapes")
            if not np.isfinite(t.samples).all():
                raise ValueError("trial contains NaN or Inf")
        if self.kind == "binary":
            labels = self.labels()
            if not set(np.unique(labels)) <= {0, 1}:
                raise ValueError("binary set labels must be 0 (rest) or 1 (MI)")
            if (labels == 0).sum() != (labels == 1).sum():
                raise ValueError("binary set must balance MI and rest counts")


def write_recording(rec: ContinuousRecording, path) -> None:
    """Serialize a recording; rejects invariant violations before writing."""
    rec.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            _HEADER.pack(
                FORMAT_VERSION, rec.n_channels, rec.n_samples, float(rec.fs),
                len(rec.events),
            )
        )
        fh.write(np.ascontiguousarray(rec.samples, dtype="<f4").tobytes())
        for ev in rec.events:
            fh.write(_EVENT.pack(ev.onset, ev.duration, ev.label))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"file truncated while reading {what}")
    return buf


def read_recording(path) -> ContinuousRecording:
    """Exact inverse of write_recording (bit-exact float32 round trip)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if len(magic) < len(MAGIC):
            raise TruncatedFileError("file shorter than magic")
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        version, n_channels, n_samples, fs, n_events = _HEADER.unpack(
            _read_exact(fh, _HEADER.size, "header")
        )
        if version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"unsupported format version {version}, expected {FORMAT_VERSION}"
            )
        raw = _read_exact(fh, n_channels * n_samples * 4, "sample block")
        samples = (
            np.frombuffer(raw, dtype="<f4")
            .reshape(n_channels, n_samples)
            .astype(np.float64)
        )
        events = []
        for _ in range(n_events):
            onset, duration, label = _EVENT.unpack(
                _read_exact(fh, _EVENT.size, "event table")
            )
            events.append(Event(onset=onset, duration=duration, label=label))
        trailing = fh.read(1)
        if trailing:
            raise ContainerError("trailing bytes after event table")
    rec = ContinuousRecording(samples=samples, fs=fs, events=events)
    rec.validate()
    return rec


def extract_mi_trials(rec: ContinuousRecording, trial_len: int) -> TrialSet:
    """One trial per event, samples [onset, onset + trial_len), in event order."""
    if trial_len <= 0:
        raise ValueError("trial_len must be positive")
    trials = []
    for ev in rec.events:
        if ev.duration < trial_len:
            raise ValueError(
                f"event at {ev.onset} has duration {ev.duration} < trial_len {trial_len}"
            )
        seg = rec.samples[:, ev.onset : ev.onset + trial_len].astype(np.float64)
        trials.append(Trial(samples=seg.copy(), label=ev.label))
    n_classes = max((ev.label for ev in rec.events), default=0)
    names = [f"class_{k}" for k in range(1, n_classes + 1)]
    return TrialSet(trials=trials, kind="multiclass", class_names=names)


def extract_adjacent_rest(rec: ContinuousRecording, trial_len: int) -> TrialSet:
    """Binary MI/rest set: per event one rest trial from the window just before it.

    The rest window [onset - trial_len, onset) must lie inside the recording
    and intersect no event; events without that clearance are skipped in
    pairs (their MI trial is dropped too) and the skip count is logged.
    """
    if trial_len <= 0:
        raise ValueError("trial_len must be positive")
    mi_trials: list[Trial] = []
    rest_trials: list[Trial] = []
    n_skipped = 0
    prev_end = 0
    for ev in rec.events:
        if ev.duration < trial_len:
            raise ValueError(
                f"event at {ev.onset} has duration {ev.duration} < trial_len {trial_len}"
            )
        rest_start = ev.onset - trial_len
        if rest_start < 0 or rest_start < prev_end:
            n_skipped += 1
        else:
            rest = rec.samples[:, rest_start : ev.onset]
            mi = rec.samples[:, ev.onset : ev.onset + trial_len]
            rest_trials.append(Trial(samples=rest.astype(np.float64).copy(), label=0))
            mi_trials.append(Trial(samples=mi.astype(np.float64).copy(), label=1))
        prev_end = ev.onset + ev.duration
    if n_skipped:
        logger.warning(
            "adjacent-rest extraction skipped %d of %d event pairs "
            "(insufficient inter-event gap)",
            n_skipped, len(rec.events),
        )
    if not mi_trials:
        raise ValueError("no event has enough preceding rest; all pairs skipped")
    out = TrialSet(
        trials=mi_trials + rest_trials,
        kind="binary",
        class_names=["rest", "mi"],
    )
    out.validate()
    return out
