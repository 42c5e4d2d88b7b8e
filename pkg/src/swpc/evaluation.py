"""Scoring of decoder output against ground-truth events.

An MI event is scored by the three-case rule: among windows fully
contained in the event span, if none was gated in by the prescreening
threshold the event counts as wrong; otherwise the LAST gated contained
window decides, and the event is correct iff that window's averaged-
probability argmax equals the event label.

Window-level prescreening accuracy uses only unambiguous windows: fully
inside an event (truth MI) or fully inside a rest gap (truth rest);
windows straddling a boundary mix both states and are excluded. The
false alarm rate (gated fraction of pure-rest windows) is a diagnostic
the accuracy alone cannot expose.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .dataio import REST_LABEL, Event
from .stream_engine import DecisionRecord


@dataclass
class EventVerdict:
    event_index: int
    label: int
    n_contained: int
    n_gated: int
    decided_label: int | None
    correct: bool
    too_short: bool  # no window fits inside the event span


@dataclass
class ScoreReport:
    acc: float
    n_events: int
    verdicts: list[EventVerdict]
    prescreen_acc: float
    false_alarm_rate: float
    n_mi_windows: int
    n_rest_windows: int
    n_excluded_windows: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _window_truth(start: int, window_len: int, events: list[Event]) -> str:
    """'mi' if [start, start+window_len) lies inside an event, 'rest' if it
    intersects no event, 'excluded' otherwise."""
    end = start + window_len
    for ev in events:
        ev_end = ev.onset + ev.duration
        if start >= ev.onset and end <= ev_end:
            return "mi"
        if start < ev_end and end > ev.onset:
            return "excluded"
    return "rest"


def _gated(record: DecisionRecord) -> bool:
    return record.predicted_label != REST_LABEL


def score_events(
    records: list[DecisionRecord], events: list[Event], window_len: int
) -> tuple[float, list[EventVerdict]]:
    """Per-event accuracy under the three-case rule."""
    if not events:
        raise ValueError("no MI events to score")
    ordered = sorted(records, key=lambda r: r.window_index)
    verdicts = []
    n_correct = 0
    for k, ev in enumerate(events):
        contained = [
            r for r in ordered
            if r.start_sample >= ev.onset
            and r.start_sample + window_len <= ev.onset + ev.duration
        ]
        gated = [r for r in contained if _gated(r)]
        decided = gated[-1].predicted_label if gated else None
        correct = decided == ev.label
        n_correct += correct
        verdicts.append(EventVerdict(
            event_index=k,
            label=ev.label,
            n_contained=len(contained),
            n_gated=len(gated),
            decided_label=decided,
            correct=correct,
            too_short=len(contained) == 0,
        ))
    return n_correct / len(events), verdicts


def prescreen_accuracy(
    records: list[DecisionRecord], events: list[Event], window_len: int
) -> float:
    """Accuracy of the gate as a binary MI/rest detector over
    unambiguous windows."""
    n_correct = 0
    n_total = 0
    for r in records:
        truth = _window_truth(r.start_sample, window_len, events)
        if truth == "excluded":
            continue
        n_total += 1
        n_correct += _gated(r) == (truth == "mi")
    if n_total == 0:
        raise ValueError("no window fully inside an event or a rest gap")
    return n_correct / n_total


def score_stream(
    records: list[DecisionRecord], events: list[Event], window_len: int
) -> ScoreReport:
    """Full report: event accuracy, window-level prescreening accuracy,
    and rest-window false alarm rate."""
    acc, verdicts = score_events(records, events, window_len)
    n_mi = n_rest = n_excluded = 0
    n_ps_correct = 0
    n_false_alarm = 0
    for r in records:
        truth = _window_truth(r.start_sample, window_len, events)
        if truth == "excluded":
            n_excluded += 1
            continue
        if truth == "mi":
            n_mi += 1
        else:
            n_rest += 1
            n_false_alarm += _gated(r)
        n_ps_correct += _gated(r) == (truth == "mi")
    if n_mi + n_rest == 0:
        raise ValueError("no window fully inside an event or a rest gap")
    return ScoreReport(
        acc=acc,
        n_events=len(events),
        verdicts=verdicts,
        prescreen_acc=n_ps_correct / (n_mi + n_rest),
        false_alarm_rate=(n_false_alarm / n_rest) if n_rest else 0.0,
        n_mi_windows=n_mi,
        n_rest_windows=n_rest,
        n_excluded_windows=n_excluded,
    )
