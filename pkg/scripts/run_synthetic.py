#!/usr/bin/env python3
"""Layer sweep on the shifted-blob pair; writes report.json, metrics.csv and plots/."""
import argparse
import sys
from pathlib import Path

from enforced_transfer.config import load_config
from enforced_transfer.experiment import run_sweep
from enforced_transfer.report import emit_report

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "synthetic.cfg")
    p.add_argument("--out", default="runs/synthetic")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    cfg = load_config(args.config, {"out": args.out, "workers": str(args.workers)})
    report = run_sweep(cfg)
    emit_report(report, cfg.out)
    print("layer  val macro-F1")
    for layer, f1 in report.layer_curve:
        print(f"{layer:5d}  {f1:.4f}")
    best = report.rows(ablation="full", layer=report.best_layer)
    print(f"best layer {report.best_layer}; mean test routing accuracy "
          f"{sum(r.test_routing_accuracy for r in best) / len(best):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
