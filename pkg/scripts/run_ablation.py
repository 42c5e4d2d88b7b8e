#!/usr/bin/env python3
"""Component ablation on synthetic streams: every combination of SSL
prescreen, SSL classification, and run averaging, aggregated over seeds.

    python3 scripts/run_ablation.py --seeds 10 --erd-depth 0.35 --csv grid.csv
"""

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from swpc.config import SwpcConfig, config_from_json
from swpc.pipeline import ABLATION_GRID, ablate, synth_test_recording, synth_train_material


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--erd-depth", type=float, default=0.35)
    ap.add_argument("--config", type=Path, help="JSON config overriding the defaults")
    ap.add_argument("--csv", type=Path, help="write the per-seed grid here")
    return ap.parse_args()


def main():
    args = parse_args()
    cfg = config_from_json(args.config.read_text()) if args.config else SwpcConfig()
    cfg = replace(cfg, synth=replace(cfg.synth, erd_depth=args.erd_depth))
    cfg.validate()

    all_rows = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        mc, bn, fs = synth_train_material(cfg, seed)
        rec_test = synth_test_recording(cfg, seed)
        all_rows.extend(ablate(mc, bn, rec_test, fs, cfg, seed))
        print(f"seed {seed}: {time.perf_counter() - t0:.0f}s", file=sys.stderr)

    print(f"{'prescreen':>9}  {'classif':>7}  {'averaging':>9}  {'mean acc':>8}  {'mean far':>8}")
    for sw_pre, sw_cls, sw_avg in ABLATION_GRID:
        sel = [r for r in all_rows
               if (r["ssl_prescreen"], r["ssl_classification"], r["averaging"])
               == (sw_pre, sw_cls, sw_avg)]
        acc = sum(r["acc"] for r in sel) / len(sel)
        far = sum(r["false_alarm_rate"] for r in sel) / len(sel)
        onoff = lambda b: "on" if b else "off"
        print(f"{onoff(sw_pre):>9}  {onoff(sw_cls):>7}  {onoff(sw_avg):>9}  "
              f"{acc:>8.4f}  {far:>8.4f}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(all_rows[0]))
            writer.writeheader()
            writer.writerows(all_rows)
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
