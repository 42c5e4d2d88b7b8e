"""Statistical contracts of the synthetic generator: ERD bandpower ratio,
stationarity, determinism, and dataset counts."""

import numpy as np
import pytest

from reference import mu_bandpower
from swpc.datagen import SynthSpec, pink_noise, synth_dataset, synth_recording


def rest_segments(rec, min_len=256):
    segs = []
    prev_end = 0
    for ev in rec.events:
        if ev.onset - prev_end >= min_len:
            segs.append(rec.samples[:, prev_end : ev.onset])
        prev_end = ev.onset + ev.duration
    if rec.n_samples - prev_end >= min_len:
        segs.append(rec.samples[:, prev_end:])
    return segs


def test_erd_bandpower_ratio_point_six():
    spec = SynthSpec(seed=5)
    rec = synth_recording(spec)
    ch = spec.channel_map()[0][0]  # a class-1 channel
    mi = [mu_bandpower(rec.samples[ch, e.onset : e.onset + e.duration], spec.fs)
          for e in rec.events if e.label == 1]
    rest = [mu_bandpower(seg[ch], spec.fs) for seg in rest_segments(rec)]
    ratio = np.mean(mi) / np.mean(rest)
    assert 0.16 * 0.8 <= ratio <= 0.16 * 1.2


def test_erd_depth_zero_is_indistinguishable():
    spec = SynthSpec(erd_depth=0.0, seed=6)
    rec = synth_recording(spec)
    ch = spec.channel_map()[0][0]
    mi = [mu_bandpower(rec.samples[ch, e.onset : e.onset + e.duration], spec.fs)
          for e in rec.events if e.label == 1]
    rest = [mu_bandpower(seg[ch], spec.fs) for seg in rest_segments(rec)]
    ratio = np.mean(mi) / np.mean(rest)
    assert 0.85 <= ratio <= 1.15


def test_rest_bandpower_stationary():
    spec = SynthSpec(seed=7)
    rec = synth_recording(spec)
    powers = [mu_bandpower(seg[0], spec.fs) for seg in rest_segments(rec)]
    assert len(powers) >= 10
    cv = np.std(powers) / np.mean(powers)
    assert cv < 0.3


def test_same_seed_identical_recording():
    a = synth_recording(SynthSpec(seed=8))
    b = synth_recording(SynthSpec(seed=8))
    assert np.array_equal(a.samples, b.samples)
    assert a.events == b.events


def test_different_seeds_differ():
    a = synth_recording(SynthSpec(seed=9))
    b = synth_recording(SynthSpec(seed=10))
    assert not np.array_equal(a.samples, b.samples)


def test_recording_passes_dataio_invariants():
    rec = synth_recording(SynthSpec(seed=11))
    rec.validate()
    labels = {e.label for e in rec.events}
    assert labels == {1, 2}
    assert len(rec.events) == 40


def test_event_durations_and_gaps():
    spec = SynthSpec(seed=12)
    rec = synth_recording(spec)
    trial_len = int(round(spec.trial_len_s * spec.fs))
    lo = int(round(spec.rest_len_range_s[0] * spec.fs))
    prev_end = 0
    for ev in rec.events:
        assert ev.duration == trial_len
        assert ev.onset - prev_end >= lo - 1
        prev_end = ev.onset + ev.duration


def test_total_len_overflow_rejected():
    with pytest.raises(ValueError):
        synth_recording(SynthSpec(total_len_s=10.0, seed=13))


def test_total_len_padding_applied():
    rec = synth_recording(SynthSpec(n_events=2, total_len_s=60.0, seed=14))
    assert rec.n_samples == int(60.0 * 128.0)


def test_channel_map_default_split():
    assert SynthSpec().channel_map() == ((0, 1), (2, 3))
    assert SynthSpec(n_channels=5, n_classes=2).channel_map() == ((0, 1, 2), (3, 4))


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(erd_depth=1.0).validate()
    with pytest.raises(ValueError):
        SynthSpec(mu_freq=64.0).validate()  # at Nyquist for fs=128
    with pytest.raises(ValueError):
        SynthSpec(phase_drift=-0.1).validate()
    with pytest.raises(ValueError):
        SynthSpec(class_channels=((0,), (9,))).validate()


def test_synth_dataset_counts_and_labels():
    multiclass, binary = synth_dataset(SynthSpec(seed=15), 20)
    assert len(multiclass) == 40
    assert len(binary) == 80
    m_labels = [t.label for t in multiclass.trials]
    assert m_labels.count(1) == 20 and m_labels.count(2) == 20
    b_labels = [t.label for t in binary.trials]
    assert b_labels.count(0) == 40 and b_labels.count(1) == 40
    assert multiclass.kind == "multiclass" and binary.kind == "binary"


def test_synth_dataset_transform_applied():
    spec = SynthSpec(seed=16)
    plain, _ = synth_dataset(spec, 5)
    halved, _ = synth_dataset(spec, 5, transform=lambda x, fs: 0.5 * x)
    for a, b in zip(plain.trials, halved.trials):
        assert np.allclose(b.samples, 0.5 * a.samples, atol=1e-12)


def test_pink_noise_normalized_and_low_frequency_heavy():
    rng = np.random.default_rng(17)
    x = pink_noise(2**14, rng)
    assert x.std() == pytest.approx(1.0, abs=1e-9)
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(2**14)
    low = spec[(freqs > 0.001) & (freqs < 0.01)].mean()
    high = spec[(freqs > 0.1) & (freqs < 0.5)].mean()
    assert low > 5 * high
