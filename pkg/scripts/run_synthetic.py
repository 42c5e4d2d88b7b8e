#!/usr/bin/env python3
"""Multi-seed synthetic experiment: train both modules, stream the test
recording, report stream accuracy, prescreen accuracy, and false alarms.

    python3 scripts/run_synthetic.py --seeds 5
    python3 scripts/run_synthetic.py --seeds 10 --erd-depth 0.35 --json out.json
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from swpc.config import SwpcConfig, config_from_json
from swpc.pipeline import run_synthetic_experiment


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..N-1")
    ap.add_argument("--erd-depth", type=float, default=None)
    ap.add_argument("--n-events", type=int, default=None)
    ap.add_argument("--offline-adapt", action="store_true")
    ap.add_argument("--config", type=Path, help="JSON config overriding the defaults")
    ap.add_argument("--json", type=Path, help="write per-seed results here")
    return ap.parse_args()


def main():
    args = parse_args()
    cfg = config_from_json(args.config.read_text()) if args.config else SwpcConfig()
    synth = cfg.synth
    if args.erd_depth is not None:
        synth = replace(synth, erd_depth=args.erd_depth)
    if args.n_events is not None:
        synth = replace(synth, n_events=args.n_events)
    cfg = replace(cfg, synth=synth, offline_adapt=args.offline_adapt)
    cfg.validate()

    rows = []
    print(f"{'seed':>4}  {'acc':>6}  {'prescreen':>9}  {'far':>6}  {'events':>6}  {'time':>6}")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        result = run_synthetic_experiment(cfg, seed)
        dt = time.perf_counter() - t0
        r = result.report
        rows.append({
            "seed": seed,
            "acc": r.acc,
            "prescreen_acc": r.prescreen_acc,
            "false_alarm_rate": r.false_alarm_rate,
            "n_events": r.n_events,
            "seconds": round(dt, 1),
        })
        print(f"{seed:>4}  {r.acc:>6.3f}  {r.prescreen_acc:>9.3f}  "
              f"{r.false_alarm_rate:>6.3f}  {r.n_events:>6}  {dt:>5.0f}s")

    def stats(key):
        vals = [row[key] for row in rows]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        return mean, var ** 0.5

    for key in ("acc", "prescreen_acc", "false_alarm_rate"):
        mean, std = stats(key)
        print(f"{key}: {mean:.4f} +- {std:.4f}")

    if args.json:
        args.json.write_text(json.dumps(rows, indent=2) + "\n")
        print(f"wrote {args.json}")


if __name__ == "__main__":
    main()
