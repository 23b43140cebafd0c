"""Command line entry point: ``train``, ``sweep``, ``ablate``, ``route``, ``gen-data``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cell import EtcModels, generate_pseudo_labels, save_pseudo_labels
from .config import dump_config, load_config
from .data import load_csv, save_csv
from .experiment import (
    ABLATIONS,
    StageError,
    build_pair,
    run_ablation,
    run_sweep,
    stage,
    train_single,
)
from .features import Backbone, extract_activations
from .nn import load_network, save_network
from .probe import classify_batch, load_probe, save_probe
from .report import emit_report

log = logging.getLogger("enforced_transfer")


def _config(args):
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, overrides)


def cmd_gen_data(args):
    cfg = _config(args)
    out = Path(cfg.out)
    with stage("data"):
        pair = build_pair(cfg, cfg.seeds[0])
        out.mkdir(parents=True, exist_ok=True)
        save_csv(pair.source, out / "source.csv")
        save_csv(pair.target, out / "target.csv")
        (out / "shift.json").write_text(json.dumps(pair.shift_spec, indent=2))
    print(f"wrote {len(pair.source)} source / {len(pair.target)} target samples to {out}")


def cmd_train(args):
    cfg = _config(args)
    out = Path(cfg.out)
    ctx, cell, rows, diag = train_single(cfg, cfg.seeds[0])
    with stage("save"):
        out.mkdir(parents=True, exist_ok=True)
        save_network(ctx.backbone.net, out / "backbone.npz")
        cell.models.save(out / "cell")
        save_probe(cell.probe, out / "probe.json")
        xt = extract_activations(ctx.backbone, ctx.splits["train"].target, cell.models.layer_index, "target")
        save_pseudo_labels(generate_pseudo_labels(cell.models.e_target, cell.models.d_source, xt),
                           out / "pseudo_labels.txt")
        (out / "config.cfg").write_text(dump_config(cfg))
        (out / "diagnostics.json").write_text(json.dumps(diag, indent=2))
    full = next(r for r in rows if r.ablation == "full")
    print(f"layer {cell.models.layer_index}: test accuracy {full.test_accuracy:.4f}, "
          f"macro-F1 {full.test_macro_f1:.4f}, routing accuracy {full.test_routing_accuracy:.4f}")
    print(f"saved model to {out}")


def _print_summary(report):
    print(f"best layer: {report.best_layer}")
    for r in report.runs:
        print(f"  seed {r.seed} layer {r.layer_index} {r.ablation:17s} "
              f"test acc {r.test_accuracy:.4f} F1 {r.test_macro_f1:.4f} routing {r.test_routing_accuracy:.4f}")


def cmd_sweep(args):
    cfg = _config(args)
    report = run_sweep(cfg)
    with stage("report"):
        emit_report(report, cfg.out)
    _print_summary(report)


def cmd_ablate(args):
    cfg = _config(args)
    if args.layer is not None:
        cfg.layer = args.layer
    report = run_ablation(cfg, tuple(args.modes) if args.modes else ABLATIONS)
    with stage("report"):
        emit_report(report, cfg.out)
    _print_summary(report)


def cmd_route(args):
    model = Path(args.model)
    with stage("load"):
        backbone = Backbone(load_network(model / "backbone.npz"))
        models = EtcModels.load(model / "cell")
        probe = load_probe(model / "probe.json")
        if args.labeled:
            data = load_csv(args.input, header=args.header)
            x, y = data.samples, data.labels
        else:
            x = np.loadtxt(args.input, delimiter=",", ndmin=2, skiprows=1 if args.header else 0)
            y = None
    with stage("route"):
        acts = extract_activations(backbone, x, models.layer_index).activations
        labels, routes = classify_batch(models, probe, acts)
    out = Path(args.out or (model / "routes.csv"))
    with stage("write"):
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "label", "branch", "in_source", "in_target",
                        "m_source", "m_target", "tie_broken"])
            for i in range(len(labels)):
                w.writerow([i, int(labels[i]), "target" if routes.to_target[i] else "source",
                            int(routes.in_source[i]), int(routes.in_target[i]),
                            repr(float(routes.m_source[i])), repr(float(routes.m_target[i])),
                            int(routes.tie_broken[i])])
    msg = f"routed {len(labels)} samples ({int(routes.to_target.sum())} to target head) -> {out}"
    if y is not None:
        msg += f"; accuracy {float(np.mean(labels == y)):.4f}"
    print(msg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="run a single seed (overrides 'seeds')")
    common.add_argument("--out", help="output directory (overrides 'out')")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="enforced-transfer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="write a synthetic or digit domain pair as CSV")
    sub.add_parser("train", parents=[common], help="train backbone, cell and probe at one layer")
    sub.add_parser("sweep", parents=[common], help="injection-layer sweep with report")
    a = sub.add_parser("ablate", parents=[common], help="full routing vs single-head modes")
    a.add_argument("--layer", type=int)
    a.add_argument("--modes", nargs="+", choices=ABLATIONS)
    r = sub.add_parser("route", parents=[common], help="classify a CSV of raw samples with a saved model")
    r.add_argument("--model", required=True, help="directory written by 'train'")
    r.add_argument("--input", required=True, help="CSV of raw samples")
    r.add_argument("--labeled", action="store_true", help="last CSV column is a class label")
    r.add_argument("--header", action="store_true")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "route": cmd_route,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with stage("config"):
            if args.command != "route":
                _config(args)
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
