#!/usr/bin/env python3
"""Band-width grid for the probe, tied (lambda_t = lambda_s) and untied.

With tied widths, a sample that falls in both bands or in neither is sent
to the smaller z-deviation, and that is exactly the side whose band it is
"more inside". So a tied grid cannot change any route. Untying the two
widths is what moves the decision boundary.
"""
import argparse
import sys
from pathlib import Path

from enforced_transfer.config import load_config
from enforced_transfer.experiment import run_ablation
from enforced_transfer.report import emit_report

ROOT = Path(__file__).resolve().parent.parent
GRID = "1.0, 1.5, 2.0, 3.0, 4.0"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "synthetic.cfg")
    p.add_argument("--out", default="runs/lambda")
    p.add_argument("--seeds", default="0, 1, 2")
    args = p.parse_args()

    for name, extra in (("tied", {}), ("untied", {"lambda_t_grid": GRID})):
        cfg = load_config(args.config, {"lambda_grid": GRID, "seeds": args.seeds, "layer": "1",
                                        "out": f"{args.out}/{name}", **extra})
        report = run_ablation(cfg, modes=("full",))
        emit_report(report, cfg.out)
        print(f"{name}: lambda_s lambda_t  val macro-F1")
        for ls, lt, f1 in report.lambda_curve:
            print(f"  {ls:8.2f} {lt:8.2f}  {f1:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
