#!/usr/bin/env python3
"""Routing with the hidden-layer + score critique vs the bare discriminator score."""
import argparse
import sys
from pathlib import Path

import numpy as np

from enforced_transfer.config import load_config
from enforced_transfer.experiment import run_ablation

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "digits.cfg")
    args = p.parse_args()

    for mode in ("hidden", "scalar"):
        cfg = load_config(args.config, {"cell.critique": mode, "out": f"runs/critique_{mode}"})
        rows = run_ablation(cfg, modes=("full",)).runs
        print(f"{mode:6s} routing {np.mean([r.test_routing_accuracy for r in rows]):.4f}  "
              f"accuracy {np.mean([r.test_accuracy for r in rows]):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
