"""Command-line surface: synthesize, train, decode, eval, sweep, ablate.

Every command is reproducible from (config JSON, seed): artifacts carry
no timestamps and metrics logs are sorted-key JSON lines, so re-running
a command yields byte-identical outputs. Progress messages go to stderr;
artifacts go to the paths given by --out.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import datagen, model, pipeline, training
from .config import SwpcConfig, config_from_json
from .dataio import read_recording, write_recording
from .evaluation import score_stream
from .stream_engine import read_decision_log, write_decision_log

logger = logging.getLogger("swpc")


def _load_config(path: str | None) -> SwpcConfig:
    if path is None:
        cfg = SwpcConfig()
        cfg.validate()
        return cfg
    return config_from_json(Path(path).read_text())


def _apply_overrides(cfg: SwpcConfig, args: argparse.Namespace) -> SwpcConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "tau", None) is not None:
        cfg.stream = replace(cfg.stream, tau=args.tau)
    if getattr(args, "lw", None) is not None:
        cfg.stream = replace(cfg.stream, lw_seconds=args.lw)
    if getattr(args, "offline_adapt", False):
        cfg.offline_adapt = True
    cfg.validate()
    return cfg


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def _read_training_sets(paths: list[str], cfg: SwpcConfig):
    recs = [pipeline.preprocess(read_recording(p)) for p in paths]
    fs = recs[0].fs
    if any(r.fs != fs for r in recs):
        raise ValueError("training recordings disagree on sampling rate")
    multiclass, binary = pipeline.extract_sets(recs)
    return multiclass, binary, fs


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    spec = replace(cfg.synth, seed=cfg.seeds[0])
    if args.training:
        lo, hi = spec.rest_len_range_s
        spec = replace(
            spec,
            rest_len_range_s=(max(lo, spec.trial_len_s), max(hi, spec.trial_len_s)),
        )
    rec = datagen.synth_recording(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_recording(rec, out)
    sidecar = out.with_suffix(out.suffix + ".events.json")
    sidecar.write_text(json.dumps(
        {
            "fs": rec.fs,
            "events": [
                {"onset": e.onset, "duration": e.duration, "label": e.label}
                for e in rec.events
            ],
        },
        sort_keys=True, indent=2,
    ))
    logger.info("wrote %s (%d events) and %s", out, len(rec.events), sidecar)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    if cfg.mode == "cross_subject" and len(args.train) < 2:
        raise ValueError("cross_subject mode expects recordings from several subjects")
    multiclass, binary, fs = _read_training_sets(args.train, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        with open(out / f"metrics_s{seed}.jsonl", "w") as fh:
            log = training.jsonl_logger(fh)
            prescreen, classifier = pipeline.train_modules(
                multiclass, binary, fs, cfg, seed, log
            )
        model.save_bundle(prescreen, out / f"prescreen_s{seed}.ckpt")
        model.save_bundle(classifier, out / f"classify_s{seed}.ckpt")
        logger.info("seed %d: checkpoints written to %s", seed, out)
    (out / "config.json").write_text(cfg.to_json())
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    prescreen = model.load_bundle(args.prescreen)
    classifier = model.load_bundle(args.classify)
    rec = read_recording(args.rec)
    seed = cfg.seeds[0]
    records, _report = pipeline.decode_and_score(
        prescreen, classifier, rec, cfg, seed=seed
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        write_decision_log(records, pipeline.effective_stream(cfg), rec.fs, fh)
    logger.info("wrote %d decisions to %s", len(records), out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    with open(args.decisions) as fh:
        records, stream_cfg, fs = read_decision_log(fh)
    if not records:
        raise ValueError(f"decision log {args.decisions} holds no records")
    rec = read_recording(args.rec)
    report = score_stream(records, rec.events, stream_cfg.window_len(fs))
    summary = {
        "acc": report.acc,
        "n_events": report.n_events,
        "prescreen_acc": report.prescreen_acc,
        "false_alarm_rate": report.false_alarm_rate,
    }
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        Path(args.out).write_text(report.to_json())
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    multiclass, binary, fs = _read_training_sets(args.train, cfg)
    rec_test = read_recording(args.test)
    lw_values = [float(v) for v in args.lw_grid.split(",")]
    tau_values = [float(v) for v in args.tau_grid.split(",")]
    rows = pipeline.sweep(
        multiclass, binary, rec_test, fs, cfg, cfg.seeds[0], lw_values, tau_values
    )
    _write_csv(
        Path(args.out), rows,
        ["lw_seconds", "tau", "acc", "prescreen_acc", "false_alarm_rate"],
    )
    logger.info("wrote %d sweep rows to %s", len(rows), args.out)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    multiclass, binary, fs = _read_training_sets(args.train, cfg)
    rec_test = read_recording(args.test)
    rows = []
    for seed in cfg.seeds:
        rows.extend(pipeline.ablate(multiclass, binary, rec_test, fs, cfg, seed))
    _write_csv(
        Path(args.out), rows,
        ["seed", "ssl_prescreen", "ssl_classification", "averaging",
         "acc", "prescreen_acc", "false_alarm_rate"],
    )
    logger.info("wrote %d ablation rows to %s", len(rows), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swpc",
        description="Sliding-window prescreening and classification for asynchronous MI decoding",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic recording with ground truth")
    p.add_argument("--config", help="config JSON path")
    p.add_argument("--out", required=True, help="output container path (.swpc)")
    p.add_argument("--seed", type=int)
    p.add_argument("--training", action="store_true",
                   help="widen rest gaps so adjacent-rest extraction loses nothing")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train prescreening and classification modules")
    p.add_argument("--config")
    p.add_argument("--train", nargs="+", required=True, help="training recording(s)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="run the streaming decoder over a recording")
    p.add_argument("--config")
    p.add_argument("--prescreen", required=True, help="prescreening checkpoint")
    p.add_argument("--classify", required=True, help="classification checkpoint")
    p.add_argument("--rec", required=True, help="recording to decode")
    p.add_argument("--out", required=True, help="decision log path (.jsonl)")
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lw", type=float)
    p.add_argument("--offline-adapt", dest="offline_adapt", action="store_true",
                   help="self-supervised adaptation on the test stream before decoding")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="score a decision log against ground truth")
    p.add_argument("--decisions", required=True)
    p.add_argument("--rec", required=True, help="recording providing truth events")
    p.add_argument("--out", help="full report JSON path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="window-length x threshold sensitivity grid")
    p.add_argument("--config")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--seed", type=int)
    p.add_argument("--lw-grid", default="1.0", help="comma-separated seconds")
    p.add_argument("--tau-grid", default="0.1,0.2,0.3,0.4,0.5", help="comma-separated thresholds")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="the 8-row component toggle grid")
    p.add_argument("--config")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
