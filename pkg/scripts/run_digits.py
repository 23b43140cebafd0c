#!/usr/bin/env python3
"""Full routing vs single-head modes on the rotated-digits pair."""
import argparse
import sys
from pathlib import Path

import numpy as np

from enforced_transfer.config import load_config
from enforced_transfer.experiment import ABLATIONS, run_ablation
from enforced_transfer.report import emit_report

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "digits.cfg")
    p.add_argument("--out", default="runs/digits")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()

    overrides = dict(kv.split("=", 1) for kv in args.set)
    overrides["out"] = args.out
    cfg = load_config(args.config, overrides)
    report = run_ablation(cfg)
    emit_report(report, cfg.out)
    for mode in ABLATIONS:
        rows = report.rows(ablation=mode)
        acc = [r.test_accuracy for r in rows]
        print(f"{mode:17s} accuracy {np.mean(acc):.4f} +- {np.std(acc):.4f}  "
              f"macro-F1 {np.mean([r.test_macro_f1 for r in rows]):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
