"""Experiment reports: ``report.json``, ``metrics.csv`` and ``plots/*.dat``."""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

REPORT_VERSION = 1
MEMBERSHIP_KINDS = ("source", "target", "both", "neither")

CSV_COLUMNS = (
    "seed", "layer_index", "ablation", "lambda_s", "lambda_t",
    "val_accuracy", "val_macro_f1", "val_routing_accuracy",
    "test_accuracy", "test_macro_f1", "test_routing_accuracy",
    "conf_source_source", "conf_source_target", "conf_target_source", "conf_target_target",
    "mem_source", "mem_target", "mem_both", "mem_neither",
)


@dataclass
class RunRecord:
    seed: int
    layer_index: int
    ablation: str
    lambda_s: float
    lambda_t: float
    val_accuracy: float
    val_macro_f1: float
    val_routing_accuracy: float
    test_accuracy: float
    test_macro_f1: float
    test_routing_accuracy: float
    confusion: list  # true origin x chosen branch, on the test mixed set
    membership: dict
    predictions: dict | None = None

    def csv_row(self) -> dict:
        row = {k: getattr(self, k) for k in CSV_COLUMNS[:11]}
        (ss, st), (ts, tt) = self.confusion
        row.update(conf_source_source=ss, conf_source_target=st,
                   conf_target_source=ts, conf_target_target=tt)
        row.update({f"mem_{k}": self.membership.get(k, 0) for k in MEMBERSHIP_KINDS})
        return row


@dataclass
class ExperimentReport:
    config: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)
    best_layer: int | None = None
    layer_curve: list = field(default_factory=list)  # [layer, mean val macro-F1]
    lambda_curve: list = field(default_factory=list)  # [lambda_s, lambda_t, mean val macro-F1]
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "config": self.config,
            "best_layer": self.best_layer,
            "layer_curve": self.layer_curve,
            "lambda_curve": self.lambda_curve,
            "diagnostics": self.diagnostics,
            "runs": [dataclasses.asdict(r) for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')}")
        return cls(
            config=d["config"],
            runs=[RunRecord(**r) for r in d["runs"]],
            best_layer=d["best_layer"],
            layer_curve=d["layer_curve"],
            lambda_curve=d["lambda_curve"],
            diagnostics=d["diagnostics"],
        )

    def rows(self, ablation=None, layer=None, seed=None):
        return [
            r for r in self.runs
            if (ablation is None or r.ablation == ablation)
            and (layer is None or r.layer_index == layer)
            and (seed is None or r.seed == seed)
        ]


def emit_report(report: ExperimentReport, directory) -> dict:
    """Write the report directory; returns the written paths by name."""
    d = Path(directory)
    plots = d / "plots"
    paths = {
        "report": d / "report.json",
        "metrics": d / "metrics.csv",
        "layer_sweep": plots / "layer_sweep.dat",
        "lambda_sweep": plots / "lambda_sweep.dat",
    }
    try:
        plots.mkdir(parents=True, exist_ok=True)
        paths["report"].write_text(json.dumps(report.to_dict(), indent=1))
        with open(paths["metrics"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in report.runs:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.csv_row().items()})
        _write_dat(paths["layer_sweep"], "layer_index val_macro_f1", report.layer_curve)
        _write_dat(paths["lambda_sweep"], "lambda_s lambda_t val_macro_f1", report.lambda_curve)
    except OSError as exc:
        raise OSError(f"cannot write report under {d}: {exc}") from exc
    return paths


def _write_dat(path: Path, header: str, rows) -> None:
    lines = [f"# {header}"]
    lines += [" ".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def parse_report(directory) -> ExperimentReport:
    path = Path(directory) / "report.json"
    return ExperimentReport.from_dict(json.loads(path.read_text()))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
