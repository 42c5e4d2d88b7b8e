#!/usr/bin/env python3
"""Within-subject evaluation on converted recordings: for every subject in a
directory, train on the session-1 container and stream-decode session 2.

Expects the converter's naming, one pair per subject:

    <dataset>_subject<N>_session1.swpc
    <dataset>_subject<N>_session2.swpc

    python3 scripts/run_within_subject.py containers/ --seeds 5
    python3 scripts/run_within_subject.py containers/ --seeds 5 --no-ssl
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from swpc import dataio
from swpc.config import SwpcConfig, config_from_json
from swpc.pipeline import decode_and_score, extract_sets, preprocess, train_modules


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("container_dir", type=Path)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--no-ssl", action="store_true",
                    help="skip both self-supervised stages")
    ap.add_argument("--offline-adapt", action="store_true")
    ap.add_argument("--config", type=Path, help="JSON config overriding the defaults")
    return ap.parse_args()


def subject_pairs(root: Path):
    for train_path in sorted(root.glob("*_session1.swpc")):
        test_path = Path(str(train_path).replace("_session1", "_session2"))
        if test_path.exists():
            yield train_path.stem.replace("_session1", ""), train_path, test_path


def main():
    args = parse_args()
    cfg = config_from_json(args.config.read_text()) if args.config else SwpcConfig()
    if args.no_ssl:
        cfg = replace(cfg, ablation=replace(
            cfg.ablation, ssl_prescreen=False, ssl_classification=False))
    cfg = replace(cfg, offline_adapt=args.offline_adapt)
    cfg.validate()

    pairs = list(subject_pairs(args.container_dir))
    if not pairs:
        sys.exit(f"no *_session1.swpc / *_session2.swpc pairs in {args.container_dir}")

    grand = []
    for name, train_path, test_path in pairs:
        rec_train = preprocess(dataio.read_recording(train_path))
        rec_test = dataio.read_recording(test_path)
        multiclass, binary = extract_sets([rec_train])
        accs = []
        for seed in range(args.seeds):
            t0 = time.perf_counter()
            prescreen, classifier = train_modules(
                multiclass, binary, rec_train.fs, cfg, seed)
            _, report = decode_and_score(
                prescreen, classifier, rec_test, cfg, seed=seed)
            accs.append(report.acc)
            print(f"  {name} seed {seed}: acc {report.acc:.3f} "
                  f"far {report.false_alarm_rate:.3f} "
                  f"({time.perf_counter() - t0:.0f}s)", file=sys.stderr)
        mean = sum(accs) / len(accs)
        std = (sum((a - mean) ** 2 for a in accs) / len(accs)) ** 0.5
        grand.append(mean)
        print(f"{name}: {mean:.4f} +- {std:.4f}  (seeds: "
              + " ".join(f"{a:.3f}" for a in accs) + ")")

    overall = sum(grand) / len(grand)
    spread = (sum((m - overall) ** 2 for m in grand) / len(grand)) ** 0.5
    print(f"mean over {len(grand)} subjects: {overall:.4f} +- {spread:.4f}")


if __name__ == "__main__":
    main()
