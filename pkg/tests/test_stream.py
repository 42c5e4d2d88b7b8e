"""Gating, run averaging, the two decoding drivers, and the decision log."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference
from swpc import model
from swpc.dataio import REST_LABEL, ContinuousRecording
from swpc.datagen import SynthSpec, synth_recording
from swpc.model import NetConfig
from swpc.stream_engine import (
    DecisionRecord,
    StreamConfig,
    StreamDecoder,
    decode_stream,
    decode_stream_online,
    gate_and_average,
    read_decision_log,
    running_average,
    window_probabilities,
    write_decision_log,
)


def records_from(p_bar, p, tau=0.2, averaging=True, step=10):
    starts = np.arange(len(p_bar)) * step
    cfg = StreamConfig(tau=tau, averaging=averaging, step_samples=step)
    return gate_and_average(starts, np.asarray(p_bar, dtype=float), np.asarray(p, dtype=float), cfg)


# ------------------------------------------------------------ validation

def test_config_validation():
    for bad in (
        StreamConfig(tau=0.0),
        StreamConfig(tau=1.0),
        StreamConfig(lw_seconds=0.0),
        StreamConfig(step_samples=0),
    ):
        with pytest.raises(ValueError):
            bad.validate()
    StreamConfig().validate()


def test_window_len_rounds():
    assert StreamConfig(lw_seconds=1.0).window_len(250) == 250
    assert StreamConfig(lw_seconds=0.5).window_len(128) == 64
    assert StreamConfig(lw_seconds=0.3).window_len(250) == 75
    assert StreamConfig(lw_seconds=1.0).window_len(250.4) == 250


# ------------------------------------------------------- running average

def test_running_average_single_vector_is_identity():
    v = np.array([0.2, 0.8])
    assert np.array_equal(running_average([v]), v)


def test_running_average_scalar_sequence():
    vs = [np.array([x]) for x in (0.2, 0.4, 0.6)]
    assert running_average(vs) == pytest.approx(0.4)


def test_running_average_matches_prefix_means():
    rng = np.random.default_rng(0)
    vs = [rng.random(4) for _ in range(7)]
    expected = reference.running_means(vs)
    for k in range(1, 8):
        assert np.allclose(running_average(vs[:k]), expected[k - 1], atol=1e-12)


def test_running_average_empty_run_raises():
    with pytest.raises(ValueError):
        running_average([])


# ----------------------------------------------------------------- gating

def test_gate_sequence_hand_case():
    # below-threshold bookends, a two-window run in the middle
    p = np.array([[0.9, 0.1], [0.2, 0.8], [0.9, 0.1], [0.5, 0.5]])
    recs = records_from([0.1, 0.3, 0.3, 0.1], p)
    assert [r.predicted_label for r in recs] == [REST_LABEL, 2, 1, REST_LABEL]
    assert recs[0].p is None and recs[0].p_hat is None and recs[0].run_start is None
    assert recs[1].run_start == 1 and recs[2].run_start == 1
    assert np.allclose(recs[1].p_hat, [0.2, 0.8])
    assert np.allclose(recs[2].p_hat, [(0.2 + 0.9) / 2, (0.8 + 0.1) / 2])
    assert recs[3].run_start is None


def test_single_gated_window_uses_its_own_probs():
    recs = records_from([0.9], [[0.3, 0.7]])
    assert np.array_equal(recs[0].p_hat, recs[0].p)
    assert recs[0].predicted_label == 2


def test_boundary_tau_gates_window_in():
    # gate is p_bar < tau, so exactly tau passes
    recs = records_from([0.2], [[0.3, 0.7]], tau=0.2)
    assert recs[0].predicted_label != REST_LABEL


def test_argmax_tie_takes_lowest_class():
    recs = records_from([0.9], [[0.5, 0.5]])
    assert recs[0].predicted_label == 1


def test_rest_window_resets_run():
    p = np.tile([0.1, 0.9], (5, 1))
    recs = records_from([0.5, 0.5, 0.1, 0.5, 0.5], p)
    assert recs[0].run_start == recs[1].run_start == 0
    assert recs[2].predicted_label == REST_LABEL
    assert recs[3].run_start == recs[4].run_start == 3


def test_averaging_off_uses_instant_probs():
    rng = np.random.default_rng(1)
    p = rng.random((10, 3))
    p_bar = rng.random(10)
    recs = records_from(p_bar, p, tau=0.5, averaging=False)
    for r in recs:
        if r.predicted_label != REST_LABEL:
            assert np.array_equal(r.p_hat, r.p)
            assert r.predicted_label == int(r.p.argmax()) + 1


def test_run_means_match_bruteforce_blocks():
    rng = np.random.default_rng(2)
    p = rng.random((60, 4))
    p_bar = rng.random(60)
    recs = records_from(p_bar, p, tau=0.5)
    i = 0
    while i < len(recs):
        if recs[i].predicted_label == REST_LABEL:
            i += 1
            continue
        block = [recs[i]]
        while i + len(block) < len(recs) and recs[i + len(block)].predicted_label != REST_LABEL:
            block.append(recs[i + len(block)])
        expected = reference.running_means([r.p for r in block])
        for r, e in zip(block, expected):
            assert np.allclose(r.p_hat, e, atol=1e-12)
            assert r.run_start == block[0].window_index
        i += len(block)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
@settings(max_examples=60, deadline=None)
def test_gated_set_shrinks_as_tau_grows(seed, tau):
    rng = np.random.default_rng(seed)
    n = 40
    p_bar = rng.random(n)
    p = rng.random((n, 3))
    lo = records_from(p_bar, p, tau=tau)
    hi = records_from(p_bar, p, tau=min(tau + 0.3, 0.99))
    gated_lo = {r.window_index for r in lo if r.predicted_label != REST_LABEL}
    gated_hi = {r.window_index for r in hi if r.predicted_label != REST_LABEL}
    assert gated_hi <= gated_lo


# ------------------------------------------------------------ the drivers

def model_pair(seed=0, n_classes=3, n_channels=4, input_len=128):
    mk = lambda k, s: model.init(
        NetConfig(n_channels=n_channels, input_len=input_len, n_classes=k,
                  temporal_kernel=input_len // 2),
        s,
    )
    return mk(2, seed), mk(n_classes, seed + 1)


def short_recording(seed=0):
    return synth_recording(SynthSpec(seed=seed, n_events=4, trial_len_s=1.5))


def test_streaming_matches_batch_decoding():
    pre, clf = model_pair()
    rec = short_recording()
    cfg = StreamConfig(lw_seconds=1.0, tau=0.5)
    batch = decode_stream(pre, clf, rec, cfg)
    online = decode_stream_online(pre, clf, rec, cfg)
    assert len(batch) == len(online) > 0
    assert any(r.predicted_label != REST_LABEL for r in batch)
    assert any(r.predicted_label == REST_LABEL for r in batch)
    for b, o in zip(batch, online):
        assert b.window_index == o.window_index
        assert b.start_sample == o.start_sample
        assert b.p_bar == o.p_bar
        assert b.predicted_label == o.predicted_label
        assert b.run_start == o.run_start
        if b.p is not None:
            assert np.array_equal(b.p, o.p)
            assert np.array_equal(b.p_hat, o.p_hat)


def test_decode_stream_composes_probabilities_and_gating():
    pre, clf = model_pair(seed=3)
    rec = short_recording(seed=3)
    cfg = StreamConfig(lw_seconds=1.0, tau=0.5)
    starts, p_bar, p = window_probabilities(pre, clf, rec, cfg)
    assert np.array_equal(
        [r.predicted_label for r in gate_and_average(starts, p_bar, p, cfg)],
        [r.predicted_label for r in decode_stream(pre, clf, rec, cfg)],
    )


def test_push_window_rejects_bad_shape():
    pre, clf = model_pair()
    dec = StreamDecoder(pre, clf, StreamConfig(lw_seconds=1.0), fs=128)
    with pytest.raises(ValueError):
        dec.push_window(np.zeros((4, 64)), 0)


def test_decoder_rejects_incompatible_models():
    pre, clf = model_pair()
    with pytest.raises(ValueError):
        StreamDecoder(pre, clf, StreamConfig(lw_seconds=2.0), fs=128)  # window 256 != 128
    with pytest.raises(ValueError):
        StreamDecoder(clf, clf, StreamConfig(lw_seconds=1.0), fs=128)  # 3-class prescreen


def test_decoder_is_stateful_across_pushes():
    pre, clf = model_pair()
    # force the gate open so every window joins one long run
    pre.psi["head_w"].data[...] = 0.0
    pre.psi["head_b"].data[:] = [-5.0, 5.0]
    dec = StreamDecoder(pre, clf, StreamConfig(lw_seconds=1.0, tau=0.2), fs=128)
    rng = np.random.default_rng(4)
    pushed = [dec.push_window(rng.standard_normal((4, 128)), 10 * k) for k in range(6)]
    expected = reference.running_means([r.p for r in pushed])
    for r, e in zip(pushed, expected):
        assert np.allclose(r.p_hat, e, atol=1e-12)
        assert r.run_start == 0


# ------------------------------------------------------------ decision log

def test_decision_log_round_trip():
    pre, clf = model_pair(seed=5)
    rec = short_recording(seed=5)
    cfg = StreamConfig(lw_seconds=1.0, tau=0.5, averaging=False)
    records = decode_stream(pre, clf, rec, cfg)
    buf = io.StringIO()
    write_decision_log(records, cfg, rec.fs, buf)
    buf.seek(0)
    loaded, cfg2, fs2 = read_decision_log(buf)
    assert cfg2 == cfg and fs2 == rec.fs
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert a.window_index == b.window_index
        assert a.start_sample == b.start_sample
        assert a.p_bar == b.p_bar
        assert a.predicted_label == b.predicted_label
        assert a.run_start == b.run_start
        if a.p is None:
            assert b.p is None and b.p_hat is None
        else:
            assert np.array_equal(a.p, b.p)
            assert np.array_equal(a.p_hat, b.p_hat)


def test_decision_log_rejects_empty_and_headerless():
    with pytest.raises(ValueError):
        read_decision_log(io.StringIO())
    with pytest.raises(ValueError):
        read_decision_log(io.StringIO('{"i": 0}\n'))
