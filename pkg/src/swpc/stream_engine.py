"""Test-time decoding loop: windowing, prescreen gating, run averaging.

The stream is cut into windows of round(lw_seconds * fs) samples every
step_samples. Each window gets a prescreening MI probability p_bar; a
window below threshold tau is labeled REST and closes the current run.
A gated window joins the run and is labeled by the argmax of p_hat, the
mean of the instantaneous class probabilities over the run so far.

Two equivalent drivers exist: decode_stream evaluates all windows in
chunked batches, StreamDecoder consumes one window at a time with O(1)
run state. They produce bit-identical records, which the tests pin down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import model
from .dataio import REST_LABEL, ContinuousRecording
from .dsp import sliding_windows, window_starts
from .model import ModelBundle


@dataclass(frozen=True)
class StreamConfig:
    lw_seconds: float = 1.0
    step_samples: int = 10
    tau: float = 0.2
    averaging: bool = True

    def validate(self) -> None:
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must be in (0,1), got {self.tau}")
        if self.lw_seconds <= 0:
            raise ValueError("lw_seconds must be positive")
        if self.step_samples < 1:
            raise ValueError("step_samples must be >= 1")

    def window_len(self, fs: float) -> int:
        return int(round(self.lw_seconds * fs))


@dataclass
class DecisionRecord:
    """One window's verdict. p, p_hat, run_start are None when the window
    was gated out (p_bar < tau), in which case the label is REST."""

    window_index: int
    start_sample: int
    p_bar: float
    p: np.ndarray | None
    p_hat: np.ndarray | None
    predicted_label: int
    run_start: int | None


def running_average(p_run: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean over a run of probability vectors."""
    if not p_run:
        raise ValueError("cannot average an empty run")
    return np.mean(p_run, axis=0)


def _check_compatible(
    prescreen: ModelBundle, classifier: ModelBundle, n_channels: int, window_len: int
) -> None:
    for name, bundle in (("prescreening", prescreen), ("classification", classifier)):
        c = bundle.config
        if c.input_len != window_len:
            raise ValueError(
                f"{name} model expects input length {c.input_len}, window is {window_len}"
            )
        if c.n_channels != n_channels:
            raise ValueError(
                f"{name} model expects {c.n_channels} channels, stream has {n_channels}"
            )
    if prescreen.config.n_classes != 2:
        raise ValueError("prescreening model must be binary")


class StreamDecoder:
    """Online driver: feed windows in order, get one DecisionRecord each.

    Holds only the running sum and length of the current gated run, so
    memory does not grow with the stream.
    """

    def __init__(self, prescreen: ModelBundle, classifier: ModelBundle, cfg: StreamConfig, fs: float):
        cfg.validate()
        self.prescreen = prescreen
        self.classifier = classifier
        self.cfg = cfg
        self.window_len = cfg.window_len(fs)
        _check_compatible(prescreen, classifier, prescreen.config.n_channels, self.window_len)
        self._next_index = 0
        self._run_sum: np.ndarray | None = None
        self._run_len = 0
        self._run_start: int | None = None

    def push_window(self, window: np.ndarray, start_sample: int) -> DecisionRecord:
        if window.shape != (self.prescreen.config.n_channels, self.window_len):
            raise ValueError(
                f"window shape {window.shape} != "
                f"({self.prescreen.config.n_channels}, {self.window_len})"
            )
        i = self._next_index
        self._next_index += 1
        batch = window[None, :, :]
        p_bar = float(model.embed_and_classify(self.prescreen, batch).data[0, 1])
        if p_bar < self.cfg.tau:
            self._run_sum = None
            self._run_len = 0
            self._run_start = None
            return DecisionRecord(
                window_index=i, start_sample=start_sample, p_bar=p_bar,
                p=None, p_hat=None, predicted_label=REST_LABEL, run_start=None,
            )
        if self._run_start is None:
            self._run_start = i
            self._run_sum = np.zeros(self.classifier.config.n_classes)
        p = model.embed_and_classify(self.classifier, batch).data[0]
        self._run_sum += p
        self._run_len += 1
        p_hat = (self._run_sum / self._run_len) if self.cfg.averaging else p
        label = int(p_hat.argmax()) + 1
        return DecisionRecord(
            window_index=i, start_sample=start_sample, p_bar=p_bar,
            p=p, p_hat=p_hat, predicted_label=label, run_start=self._run_start,
        )


def window_probabilities(
    prescreen: ModelBundle,
    classifier: ModelBundle,
    rec: ContinuousRecording,
    cfg: StreamConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched model evaluation for every window of a recording.

    Returns (starts [n], p_bar [n], p [n, K]). Classification
    probabilities are computed for all windows; gating decides later
    which ones appear in records. This is the expensive half of
    decoding, factored out so threshold sweeps can reuse it.
    """
    cfg.validate()
    window_len = cfg.window_len(rec.fs)
    _check_compatible(prescreen, classifier, rec.n_channels, window_len)
    starts = window_starts(rec.n_samples, window_len, cfg.step_samples)
    windows = sliding_windows(rec.samples, window_len, cfg.step_samples)
    p_bar = model.predict_probs(prescreen, windows)[:, 1]
    p = model.predict_probs(classifier, windows)
    return starts, p_bar, p


def gate_and_average(
    starts: np.ndarray, p_bar: np.ndarray, p: np.ndarray, cfg: StreamConfig
) -> list[DecisionRecord]:
    """Algorithm core: threshold gating plus run averaging over
    precomputed per-window probabilities."""
    records: list[DecisionRecord] = []
    run_sum = np.zeros(p.shape[1])
    run_len = 0
    run_start: int | None = None
    for i in range(len(starts)):
        pb = float(p_bar[i])
        if pb < cfg.tau:
            run_sum[:] = 0.0
            run_len = 0
            run_start = None
            records.append(DecisionRecord(
                window_index=i, start_sample=int(starts[i]), p_bar=pb,
                p=None, p_hat=None, predicted_label=REST_LABEL, run_start=None,
            ))
            continue
        if run_start is None:
            run_start = i
        run_sum += p[i]
        run_len += 1
        p_hat = (run_sum / run_len) if cfg.averaging else p[i].copy()
        records.append(DecisionRecord(
            window_index=i, start_sample=int(starts[i]), p_bar=pb,
            p=p[i].copy(), p_hat=p_hat, predicted_label=int(p_hat.argmax()) + 1,
            run_start=run_start,
        ))
    return records


def decode_stream(
    prescreen: ModelBundle,
    classifier: ModelBundle,
    rec: ContinuousRecording,
    cfg: StreamConfig,
) -> list[DecisionRecord]:
    """Batch decoding of a whole recording."""
    starts, p_bar, p = window_probabilities(prescreen, classifier, rec, cfg)
    return gate_and_average(starts, p_bar, p, cfg)


def decode_stream_online(
    prescreen: ModelBundle,
    classifier: ModelBundle,
    rec: ContinuousRecording,
    cfg: StreamConfig,
) -> list[DecisionRecord]:
    """One-window-at-a-time decoding through StreamDecoder; same records
    as decode_stream."""
    decoder = StreamDecoder(prescreen, classifier, cfg, rec.fs)
    window_len = cfg.window_len(rec.fs)
    out = []
    for start in window_starts(rec.n_samples, window_len, cfg.step_samples):
        out.append(decoder.push_window(rec.samples[:, start : start + window_len], int(start)))
    return out


# ---------------------------------------------------------------------------
# Decision log serialization (line-delimited JSON)


def write_decision_log(records: list[DecisionRecord], cfg: StreamConfig, fs: float, fh) -> None:
    header = {
        "type": "header",
        "lw_seconds": cfg.lw_seconds,
        "step_samples": cfg.step_samples,
        "tau": cfg.tau,
        "averaging": cfg.averaging,
        "fs": fs,
    }
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    for r in records:
        row: dict = {
            "i": r.window_index,
            "start_sample": r.start_sample,
            "p_bar": r.p_bar,
            "label": r.predicted_label,
        }
        if r.p_hat is not None:
            row["p_hat"] = [float(v) for v in r.p_hat]
            row["p"] = [float(v) for v in r.p]
            row["run_start"] = r.run_start
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_decision_log(fh) -> tuple[list[DecisionRecord], StreamConfig, float]:
    first = fh.readline()
    if not first:
        raise ValueError("empty decision log")
    header = json.loads(first)
    if header.get("type") != "header":
        raise ValueError("decision log missing header line")
    cfg = StreamConfig(
        lw_seconds=header["lw_seconds"],
        step_samples=header["step_samples"],
        tau=header["tau"],
        averaging=header["averaging"],
    )
    records = []
    for line in fh:
        row = json.loads(line)
        gated = "p_hat" in row
        records.append(DecisionRecord(
            window_index=row["i"],
            start_sample=row["start_sample"],
            p_bar=row["p_bar"],
            p=np.array(row["p"]) if gated else None,
            p_hat=np.array(row["p_hat"]) if gated else None,
            predicted_label=row["label"],
            run_start=row.get("run_start"),
        ))
    return records, cfg, header["fs"]
