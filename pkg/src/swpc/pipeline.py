"""End-to-end orchestration: data preparation, module training, decoding,
scoring, and the ablation/sweep grids.

Module training always runs supervised first; the SSL stages run only
when their ablation switches are on. The averaging switch is applied at
decode time. Everything here is deterministic per (config, seed): the
training recording uses seed 2s and the test recording 2s + 1, so the
two never share a noise stream.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import datagen, dsp, model, training
from .config import SwpcConfig
from .dataio import ContinuousRecording, TrialSet, extract_adjacent_rest, extract_mi_trials
from .evaluation import ScoreReport, score_stream
from .model import ModelBundle, NetConfig
from .stream_engine import DecisionRecord, decode_stream, gate_and_average
from .training import LogFn


def preprocess(rec: ContinuousRecording) -> ContinuousRecording:
    """Front-end filtering of a whole recording; events pass through."""
    return ContinuousRecording(
        samples=dsp.preprocess_recording(rec.samples, rec.fs),
        fs=rec.fs,
        events=list(rec.events),
    )


def build_net_config(
    n_channels: int, fs: float, input_len: int, n_classes: int, overrides: dict
) -> NetConfig:
    base = model.default_config(n_channels, fs, input_len, n_classes)
    cfg = replace(base, **overrides) if overrides else base
    cfg.validate()
    return cfg


def effective_stream(cfg: SwpcConfig):
    return replace(cfg.stream, averaging=cfg.ablation.averaging)


def extract_sets(
    recs: list[ContinuousRecording], trial_len: int | None = None
) -> tuple[TrialSet, TrialSet]:
    """Pool MI and adjacent-rest trials from preprocessed recordings.

    trial_len defaults to the shortest event duration so every event
    qualifies. Recordings must share channel count and class inventory.
    """
    if not recs:
        raise ValueError("no recordings given")
    if trial_len is None:
        trial_len = min(ev.duration for rec in recs for ev in rec.events)
    mc_trials, bin_trials = [], []
    for rec in recs:
        mc_trials.extend(extract_mi_trials(rec, trial_len).trials)
        bin_trials.extend(extract_adjacent_rest(rec, trial_len).trials)
    n_classes = max(t.label for t in mc_trials)
    multiclass = TrialSet(
        trials=mc_trials, kind="multiclass",
        class_names=[f"class_{k}" for k in range(1, n_classes + 1)],
    )
    binary = TrialSet(trials=bin_trials, kind="binary", class_names=["rest", "mi"])
    binary.validate()
    return multiclass, binary


def train_modules(
    multiclass: TrialSet,
    binary: TrialSet,
    fs: float,
    cfg: SwpcConfig,
    seed: int,
    log: LogFn | None = None,
) -> tuple[ModelBundle, ModelBundle]:
    """Train the prescreening and classification modules on prepared sets."""
    cfg.validate()
    input_len = cfg.stream.window_len(fs)
    ch, ts = multiclass.trials[0].samples.shape
    if ts < input_len:
        raise ValueError(f"trials ({ts} samples) shorter than the window ({input_len})")
    n_classes = int(multiclass.labels().max())
    sup = replace(cfg.supervised, seed=seed)

    prescreen = model.init(build_net_config(ch, fs, input_len, 2, cfg.net), seed)
    tr, va = training.split_train_valid(binary, sup.valid_fraction, seed)
    prescreen = training.train_supervised(prescreen, tr, va, sup, log)
    if cfg.ablation.ssl_prescreen and cfg.ssl.epochs_ssl > 0:
        transitions = training.make_transition_trials(binary, seed)
        prescreen = training.ssl_prescreen(
            prescreen, binary, transitions, cfg.ssl, seed=seed, log=log
        )

    classifier = model.init(build_net_config(ch, fs, input_len, n_classes, cfg.net), seed)
    tr, va = training.split_train_valid(multiclass, sup.valid_fraction, seed)
    classifier = training.train_supervised(classifier, tr, va, sup, log)
    if cfg.ablation.ssl_classification and cfg.ssl.epochs_ssl > 0:
        classifier = training.ssl_classification(
            classifier, multiclass, cfg.ssl, aug_params=cfg.augment, seed=seed, log=log
        )
    return prescreen, classifier


def decode_and_score(
    prescreen: ModelBundle,
    classifier: ModelBundle,
    rec_raw: ContinuousRecording,
    cfg: SwpcConfig,
    seed: int = 0,
    log: LogFn | None = None,
) -> tuple[list[DecisionRecord], ScoreReport]:
    """Preprocess, optionally adapt on the test stream, decode, score."""
    stream_cfg = effective_stream(cfg)
    rec = preprocess(rec_raw)
    window_len = stream_cfg.window_len(rec.fs)
    if cfg.offline_adapt and cfg.ssl.epochs_ssl > 0:
        windows = dsp.sliding_windows(rec.samples, window_len, stream_cfg.step_samples)
        prescreen = copy.deepcopy(prescreen)
        classifier = copy.deepcopy(classifier)
        training.ssl_offline_adapt(
            prescreen, classifier, np.ascontiguousarray(windows), cfg.ssl,
            tau=stream_cfg.tau, aug_params=cfg.augment, seed=seed, log=log,
        )
    records = decode_stream(prescreen, classifier, rec, stream_cfg)
    report = score_stream(records, rec.events, window_len)
    return records, report


@dataclass
class ExperimentResult:
    seed: int
    report: ScoreReport
    records: list[DecisionRecord]
    prescreen: ModelBundle
    classifier: ModelBundle


def synth_train_material(cfg: SwpcConfig, seed: int) -> tuple[TrialSet, TrialSet, float]:
    train_spec = replace(cfg.synth, seed=2 * seed)
    mc, bn = datagen.synth_dataset(
        train_spec, cfg.train_trials_per_class, transform=dsp.preprocess_recording
    )
    return mc, bn, train_spec.fs


def synth_test_recording(cfg: SwpcConfig, seed: int) -> ContinuousRecording:
    return datagen.synth_recording(replace(cfg.synth, seed=2 * seed + 1))


def run_synthetic_experiment(
    cfg: SwpcConfig, seed: int, log: LogFn | None = None
) -> ExperimentResult:
    """Generate train and test material, train, decode, score."""
    mc, bn, fs = synth_train_material(cfg, seed)
    prescreen, classifier = train_modules(mc, bn, fs, cfg, seed, log)
    rec_test = synth_test_recording(cfg, seed)
    records, report = decode_and_score(prescreen, classifier, rec_test, cfg, seed=seed, log=log)
    return ExperimentResult(
        seed=seed, report=report, records=records,
        prescreen=prescreen, classifier=classifier,
    )


ABLATION_GRID = tuple(itertools.product((True, False), repeat=3))


def ablate(
    multiclass: TrialSet,
    binary: TrialSet,
    rec_test: ContinuousRecording,
    fs: float,
    cfg: SwpcConfig,
    seed: int,
    log: LogFn | None = None,
) -> list[dict]:
    """The 2^3 component grid (SSL prescreen x SSL classification x
    averaging), sharing one supervised base per module and one window
    evaluation per model variant."""
    base_cfg = replace(cfg, ablation=replace(cfg.ablation, ssl_prescreen=False, ssl_classification=False))
    pre_sup, cls_sup = train_modules(multiclass, binary, fs, base_cfg, seed, log)
    transitions = training.make_transition_trials(binary, seed)
    pre_ssl = training.ssl_prescreen(
        copy.deepcopy(pre_sup), binary, transitions, cfg.ssl, seed=seed, log=log
    )
    cls_ssl = training.ssl_classification(
        copy.deepcopy(cls_sup), multiclass, cfg.ssl, aug_params=cfg.augment, seed=seed, log=log
    )

    rec = preprocess(rec_test)
    window_len = cfg.stream.window_len(rec.fs)
    starts = dsp.window_starts(rec.n_samples, window_len, cfg.stream.step_samples)
    windows = dsp.sliding_windows(rec.samples, window_len, cfg.stream.step_samples)
    p_bar = {
        True: model.predict_probs(pre_ssl, windows)[:, 1],
        False: model.predict_probs(pre_sup, windows)[:, 1],
    }
    p = {
        True: model.predict_probs(cls_ssl, windows),
        False: model.predict_probs(cls_sup, windows),
    }
    rows = []
    for sw_pre, sw_cls, sw_avg in ABLATION_GRID:
        stream_cfg = replace(cfg.stream, averaging=sw_avg)
        records = gate_and_average(starts, p_bar[sw_pre], p[sw_cls], stream_cfg)
        report = score_stream(records, rec.events, window_len)
        rows.append({
            "seed": seed,
            "ssl_prescreen": sw_pre,
            "ssl_classification": sw_cls,
            "averaging": sw_avg,
            "acc": report.acc,
            "prescreen_acc": report.prescreen_acc,
            "false_alarm_rate": report.false_alarm_rate,
        })
    return rows


def sweep(
    multiclass: TrialSet,
    binary: TrialSet,
    rec_test: ContinuousRecording,
    fs: float,
    cfg: SwpcConfig,
    seed: int,
    lw_values: list[float],
    tau_values: list[float],
    log: LogFn | None = None,
) -> list[dict]:
    """Sensitivity grid over window length and threshold. Each window
    length retrains the modules (the input shape changes); each tau
    point reuses the window probabilities."""
    rec = preprocess(rec_test)
    rows = []
    for lw in lw_values:
        cfg_lw = replace(cfg, stream=replace(cfg.stream, lw_seconds=lw))
        prescreen, classifier = train_modules(multiclass, binary, fs, cfg_lw, seed, log)
        window_len = cfg_lw.stream.window_len(rec.fs)
        starts = dsp.window_starts(rec.n_samples, window_len, cfg.stream.step_samples)
        windows = dsp.sliding_windows(rec.samples, window_len, cfg.stream.step_samples)
        p_bar = model.predict_probs(prescreen, windows)[:, 1]
        p = model.predict_probs(classifier, windows)
        for tau in tau_values:
            stream_cfg = replace(cfg_lw.stream, tau=tau, averaging=cfg.ablation.averaging)
            records = gate_and_average(starts, p_bar, p, stream_cfg)
            report = score_stream(records, rec.events, window_len)
            rows.append({
                "lw_seconds": lw,
                "tau": tau,
                "acc": report.acc,
                "prescreen_acc": report.prescreen_acc,
                "false_alarm_rate": report.false_alarm_rate,
            })
    return rows
