"""Fetch BNCI subject files, validate them, and emit SWPC containers.

The converter does no signal processing: samples are copied through verbatim
apart from unit normalization to microvolts, so the consumer stays the single
place filtering happens. Event onsets mark the start of the imagery period
(trial marker plus the paradigm's cue offset) and durations cover the
documented imagery length; everything between events is implicit rest.

For two-class cuts of a richer source, the imagery periods of deselected
classes are excised from the stream rather than left in place: unlabeled,
they would read as rest to both scoring and rest-pool extraction while
actually containing motor imagery.

Each output directory carries a manifest.json mapping container names to
their provenance: source file, its sha256, and the checked metadata.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from swpc.dataio import ContinuousRecording, Event, write_recording
from swpc_convert.bnci import load_runs
from swpc_convert.datasets import REGISTRY, DatasetDescriptor

logger = logging.getLogger(__name__)

BASE_URL = "https://bnci-horizon-2020.eu/database/data-sets"
CACHE_ENV = "SWPC_BNCI_CACHE"
MANIFEST_NAME = "manifest.json"
CHECKSUM_FILE = "checksums.json"


class ConversionError(Exception):
    """Anything that stops a container from being emitted."""


class ExcludedSubjectError(ConversionError):
    pass


class MetadataError(ConversionError):
    """Parsed data disagrees with the descriptor."""


class FetchError(ConversionError):
    pass


class ChecksumError(ConversionError):
    pass


@dataclass
class ConversionResult:
    out_path: Path
    source_file: str
    source_sha256: str
    n_channels: int
    fs: float
    n_samples: int
    n_events: int


def cache_dir(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "swpc-bnci"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _check_pinned_checksum(root: Path, name: str, digest: str) -> None:
    """Compare against a user-pinned checksums.json in the cache, if any."""
    pin_path = root / CHECKSUM_FILE
    if not pin_path.exists():
        return
    pins = json.loads(pin_path.read_text())
    want = pins.get(name)
    if want is not None and want != digest:
        raise ChecksumError(
            f"{name}: sha256 {digest} does not match pinned {want}"
        )


def _download(url: str, dest: Path) -> None:
    with urllib.request.urlopen(url, timeout=60) as resp, open(dest, "wb") as fh:
        while block := resp.read(1 << 20):
            fh.write(block)


def fetch_mat(desc: DatasetDescriptor, subject: int, session: int,
              cache=None) -> Path:
    """Return the cached subject file, downloading it on a miss."""
    root = cache_dir(cache)
    name = desc.mat_name(subject, session)
    path = root / desc.source / name
    if not path.exists():
        url = f"{BASE_URL}/{desc.source}/{name}"
        path.parent.mkdir(parents=True, exist_ok=True)
        part = path.with_suffix(".part")
        logger.info("downloading %s", url)
        try:
            _download(url, part)
        except (urllib.error.URLError, OSError) as exc:
            part.unlink(missing_ok=True)
            raise FetchError(
                f"could not download {url}: {exc}; place the file at {path} "
                f"or point {CACHE_ENV} at a pre-seeded cache"
            ) from exc
        part.replace(path)
    return path


def _resolve(dataset) -> DatasetDescriptor:
    if isinstance(dataset, DatasetDescriptor):
        return dataset
    try:
        return REGISTRY[dataset]
    except KeyError:
        raise MetadataError(
            f"unknown dataset {dataset!r}; expected one of "
            f"{', '.join(sorted(REGISTRY))}"
        ) from None


def _assemble(desc: DatasetDescriptor, runs, source: str):
    """Concatenate runs and build the selected event table.

    Imagery periods of deselected cue classes are cut out of the signal;
    kept event onsets shift left accordingly.
    """
    duration = int(round(desc.imagery_len_s * desc.fs))
    cue_offset = int(round(desc.cue_offset_s * desc.fs))
    blocks = []
    events = []
    offset = 0
    for i, run in enumerate(runs):
        if abs(run.fs - desc.fs) > 1e-6:
            raise MetadataError(
                f"{source}: run {i} sampled at {run.fs} Hz, descriptor "
                f"says {desc.fs}"
            )
        if run.x.shape[1] < desc.n_channels:
            raise MetadataError(
                f"{source}: run {i} has {run.x.shape[1]} columns, need "
                f"{desc.n_channels} EEG channels"
            )
        spans = []  # (onset, label or None); every trial's imagery period
        prev_end = -1
        for start, code in zip(run.trial_starts, run.labels):
            onset = int(start) + cue_offset
            if onset < 0 or onset + duration > run.n_samples:
                raise MetadataError(
                    f"{source}: run {i} trial at sample {int(start)} puts the "
                    f"imagery period outside the recording"
                )
            if onset <= prev_end:
                raise MetadataError(
                    f"{source}: run {i} has overlapping imagery periods"
                )
            prev_end = onset + duration - 1
            spans.append((onset, desc.label_for(int(code))))

        keep = np.ones(run.n_samples, dtype=bool)
        for onset, label in spans:
            if label is None:
                keep[onset : onset + duration] = False
        for onset, label in spans:
            if label is not None:
                events.append(
                    Event(offset + int(keep[:onset].sum()), duration, label)
                )
        blocks.append(run.x[keep, : desc.n_channels])
        offset += int(keep.sum())
    signal = np.concatenate(blocks, axis=0).T * desc.to_microvolts
    return signal, events


def _merge_manifest(out_dir: Path, name: str, entry: dict) -> None:
    path = out_dir / MANIFEST_NAME
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest[name] = entry
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def convert(dataset, subject: int, session: int, out_dir,
            cache=None) -> ConversionResult:
    """Emit one subject-session container plus its manifest entry."""
    desc = _resolve(dataset)
    if not 1 <= subject <= desc.n_subjects:
        raise MetadataError(
            f"{desc.id} has subjects 1..{desc.n_subjects}, got {subject}"
        )
    if subject in desc.excluded_subjects:
        raise ExcludedSubjectError(
            f"subject {subject} is excluded from {desc.id} "
            f"(excluded: {sorted(desc.excluded_subjects)})"
        )
    if session not in (1, 2):
        raise MetadataError(f"session must be 1 or 2, got {session}")

    mat_path = fetch_mat(desc, subject, session, cache)
    digest = sha256_file(mat_path)
    _check_pinned_checksum(cache_dir(cache), mat_path.name, digest)

    try:
        runs = load_runs(mat_path)
    except ValueError as exc:
        raise MetadataError(str(exc)) from exc
    signal, events = _assemble(desc, runs, mat_path.name)

    # Session 1 defines the benchmark's per-subject trial count; evaluation
    # files legitimately hold a different number of runs.
    if session == 1 and len(events) != desc.trials_session1:
        raise MetadataError(
            f"{mat_path.name}: selected {len(events)} trials, descriptor "
            f"says session 1 has {desc.trials_session1}"
        )
    if not events:
        raise MetadataError(f"{mat_path.name}: no trials left after selection")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / desc.out_name(subject, session)
    rec = ContinuousRecording(samples=signal, fs=desc.fs, events=events)
    write_recording(rec, out_path)

    entry = {
        "dataset": desc.id,
        "subject": subject,
        "session": session,
        "source_file": mat_path.name,
        "source_sha256": digest,
        "n_channels": rec.n_channels,
        "fs": desc.fs,
        "n_samples": rec.n_samples,
        "n_events": len(events),
        "class_names": list(desc.class_names),
    }
    _merge_manifest(out_dir, out_path.name, entry)
    logger.info(
        "wrote %s: %d events, %d ch @ %g Hz",
        out_path, len(events), rec.n_channels, desc.fs,
    )
    return ConversionResult(
        out_path=out_path,
        source_file=mat_path.name,
        source_sha256=digest,
        n_channels=rec.n_channels,
        fs=desc.fs,
        n_samples=rec.n_samples,
        n_events=len(events),
    )
