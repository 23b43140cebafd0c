"""End-to-end runs: injection-layer sweep, head ablations and report assembly."""
from __future__ import annotations

import contextlib
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cell import EtcModels, generate_pseudo_labels, train_cell, with_seeds
from .config import ExperimentConfig, flatten
from .data import (
    DomainPair,
    MixedTestSet,
    load_csv,
    load_idx,
    make_blob_pair,
    make_digit_pair,
    mix,
    split_pair,
)
from .features import Backbone, extract_activations, train_backbone
from .metrics import compute_metrics
from .nn import accuracy
from .probe import (
    ProbeParams,
    classify_batch,
    critiques,
    fit_probe_from_critiques,
    source_labels,
    target_labels,
)
from .report import ExperimentReport, RunRecord
from .seeding import substream_seed

log = logging.getLogger(__name__)

ABLATIONS = ("full", "only_source_head", "only_target_head")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# data ----------------------------------------------------------------------

def build_pair(cfg: ExperimentConfig, seed: int) -> DomainPair:
    d = cfg.data
    data_seed = substream_seed(seed, "data")
    if d.kind == "blobs":
        return make_blob_pair(d.class_count, d.per_class, d.dim, d.separation,
                              d.rotation_deg, d.translation, d.noise_sigma, data_seed)
    if d.kind == "digits":
        return make_digit_pair(d.rotation_deg, d.noise_sigma, data_seed)
    return DomainPair(_load(d.source_path, d.source_labels_path, d.header),
                      _load(d.target_path, d.target_labels_path, d.header),
                      {"kind": "files", "source": d.source_path, "target": d.target_path})


def _load(path, labels_path, header):
    if not path:
        raise ValueError("data.kind = files needs data.source_path and data.target_path")
    if str(path).endswith(".csv"):
        return load_csv(path, header=header)
    if not labels_path:
        raise ValueError(f"{path}: IDX images need a matching labels path")
    return load_idx(path, labels_path)


def max_mixed_size(n_source: int, n_target: int, contamination: float) -> int:
    """Largest N such that a mixed set of N samples fits in the two pools."""
    n = n_source + n_target
    while n > 0:
        k = int(round(contamination * n))
        if k <= n_source and n - k <= n_target:
            return n
        n -= 1
    return 0


def _mixed(pair: DomainPair, size: int, contamination: float, seed: int) -> MixedTestSet:
    if size <= 0:
        size = max_mixed_size(len(pair.source), len(pair.target), contamination)
    return mix(pair.source, pair.target, size, contamination, seed)


# one seed ------------------------------------------------------------------

@dataclass(eq=False)
class SeedContext:
    seed: int
    splits: dict
    backbone: Backbone
    val_mixed: MixedTestSet
    test_mixed: MixedTestSet


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedContext:
    with stage("data"):
        pair = build_pair(cfg, seed)
        splits = split_pair(pair, cfg.data.fractions, substream_seed(seed, "split"))
        val_mixed = _mixed(splits["val"], cfg.val_mixed_size, cfg.contamination, substream_seed(seed, "mixed_val"))
        test_mixed = _mixed(splits["test"], cfg.mixed_size, cfg.contamination, substream_seed(seed, "mixed_test"))
    with stage("backbone"):
        bcfg = dataclasses.replace(cfg.backbone, seed=substream_seed(seed, "backbone"))
        backbone = train_backbone(splits["train"].source, bcfg, cfg.backbone_hidden, splits["val"].source)
    return SeedContext(seed, splits, backbone, val_mixed, test_mixed)


@dataclass(eq=False)
class TrainedCell:
    models: EtcModels
    probe: ProbeParams
    diagnostics: dict


def train_at_layer(cfg: ExperimentConfig, ctx: SeedContext, layer: int) -> TrainedCell:
    train, val = ctx.splits["train"], ctx.splits["val"]
    class_count = train.source.class_count
    with stage("features"):
        xs = extract_activations(ctx.backbone, train.source, layer, "source")
        xt = extract_activations(ctx.backbone, train.target, layer, "target")
        vs = extract_activations(ctx.backbone, val.source, layer, "source")
        vt = extract_activations(ctx.backbone, val.target, layer, "target")
    with stage("etc"):
        history: list = []
        models = train_cell(xs, xt, with_seeds(cfg.cell, ctx.seed), class_count,
                            held_out=(vs.activations, vt.activations), history=history)
    with stage("probe"):
        probe = fit_probe_from_critiques(critiques(models, xs.activations), critiques(models, xt.activations),
                                         *lambda_pairs(cfg)[0], cfg.ridge)
    pseudo = generate_pseudo_labels(models.e_target, models.d_source, xt)
    accs = [h["disc_accuracy"] for h in history if "disc_accuracy" in h]
    diagnostics = {
        "seed": ctx.seed,
        "layer_index": layer,
        "backbone_val_accuracy": accuracy(ctx.backbone.net, val.source.samples, val.source.labels),
        "pseudo_label_accuracy": float(np.mean(pseudo.labels == xt.labels)),
        "centroid_distance_start": history[0]["centroid_distance"],
        "centroid_distance_end": history[-1]["centroid_distance"],
        "disc_accuracy_peak": max(accs),
        "disc_accuracy_end": accs[-1],
    }
    return TrainedCell(models, probe, diagnostics)


def evaluate(models: EtcModels, probe: ProbeParams, acts: np.ndarray, mixed: MixedTestSet,
             mode: str = "full", keep_predictions=False) -> dict:
    """Metrics for one ablation mode on an activation matrix of a mixed set."""
    if mode not in ABLATIONS:
        raise ValueError(f"unknown ablation mode {mode!r}")
    labels, routes = classify_batch(models, probe, acts)
    branches = routes.to_target.astype(np.int64)
    if mode == "only_source_head":
        labels, branches = source_labels(models, acts), np.zeros(len(acts), dtype=np.int64)
    elif mode == "only_target_head":
        labels, branches = target_labels(models, acts), np.ones(len(acts), dtype=np.int64)
    classes = np.arange(models.class_count)
    out = compute_metrics(labels, mixed.labels, branches, mixed.origin, routes.membership_counts(), classes)
    if keep_predictions:
        out["predictions"] = {
            "predicted": labels.tolist(),
            "label": mixed.labels.tolist(),
            "branch": branches.tolist(),
            "origin": mixed.origin.tolist(),
        }
    return out


def lambda_pairs(cfg: ExperimentConfig):
    """``(lambda_s, lambda_t)`` candidates; an empty ``lambda_t_grid`` ties lambda_t to lambda_s."""
    if not cfg.lambda_t_grid:
        return [(v, v) for v in cfg.lambda_grid]
    return [(a, b) for a in cfg.lambda_grid for b in cfg.lambda_t_grid]


def _choose_lambda(models, base: ProbeParams, val_acts, val_mixed, pairs):
    """Best lambda pair on validation macro-F1 (earliest on ties) plus the full curve."""
    curve = []
    for ls, lt in pairs:
        m = evaluate(models, base.with_lambdas(ls, lt), val_acts, val_mixed, "full")
        curve.append([ls, lt, m["macro_f1"]])
    best = max(range(len(curve)), key=lambda i: (curve[i][2], -i))
    return pairs[best], curve


def run_cell(cfg: ExperimentConfig, ctx: SeedContext, layer: int, modes=ABLATIONS):
    """Train, tune lambda on validation, and evaluate every mode at one layer."""
    cell = train_at_layer(cfg, ctx, layer)
    with stage("evaluate"):
        val_acts = extract_activations(ctx.backbone, ctx.val_mixed.data, layer).activations
        test_acts = extract_activations(ctx.backbone, ctx.test_mixed.data, layer).activations
        (ls, lt), curve = _choose_lambda(cell.models, cell.probe, val_acts, ctx.val_mixed, lambda_pairs(cfg))
        probe = cell.probe.with_lambdas(ls, lt)
        rows = []
        for mode in modes:
            v = evaluate(cell.models, probe, val_acts, ctx.val_mixed, mode)
            t = evaluate(cell.models, probe, test_acts, ctx.test_mixed, mode, keep_predictions=(mode == "full"))
            rows.append(RunRecord(
                seed=ctx.seed, layer_index=layer, ablation=mode, lambda_s=ls, lambda_t=lt,
                val_accuracy=v["accuracy"], val_macro_f1=v["macro_f1"],
                val_routing_accuracy=v["routing_accuracy"],
                test_accuracy=t["accuracy"], test_macro_f1=t["macro_f1"],
                test_routing_accuracy=t["routing_accuracy"],
                confusion=t["confusion"], membership=t["membership"],
                predictions=t.get("predictions"),
            ))
    diag = dict(cell.diagnostics, lambda_curve=curve)
    return rows, diag, TrainedCell(cell.models, probe, cell.diagnostics)


def _layers(cfg: ExperimentConfig, backbone: Backbone):
    return list(cfg.layers) if cfg.layers else list(range(1, backbone.n_layers + 1))


def _sweep_seed(cfg: ExperimentConfig, seed: int):
    ctx = prepare_seed(cfg, seed)
    rows, diags = [], []
    for layer in _layers(cfg, ctx.backbone):
        r, d, _ = run_cell(cfg, ctx, layer)
        rows.extend(r)
        diags.append(d)
    return rows, diags


def _map_seeds(fn, cfg: ExperimentConfig):
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, [cfg] * len(cfg.seeds), cfg.seeds))
    return [fn(cfg, s) for s in cfg.seeds]


def select_layer(rows) -> int | None:
    """Layer with the best mean validation macro-F1 in full mode; ties go to the shallowest."""
    scores = {}
    for r in rows:
        if r.ablation == "full":
            scores.setdefault(r.layer_index, []).append(r.val_macro_f1)
    if not scores:
        return None
    means = {k: float(np.mean(v)) for k, v in scores.items()}
    return min(means, key=lambda k: (-means[k], k))


def _curves(rows, diags, best):
    layer_curve = []
    for layer in sorted({r.layer_index for r in rows if r.ablation == "full"}):
        vals = [r.val_macro_f1 for r in rows if r.ablation == "full" and r.layer_index == layer]
        layer_curve.append([layer, float(np.mean(vals))])
    per_pair = {}
    for d in diags:
        if d["layer_index"] == best:
            for ls, lt, v in d["lambda_curve"]:
                per_pair.setdefault((ls, lt), []).append(v)
    lambda_curve = [[ls, lt, float(np.mean(v))] for (ls, lt), v in sorted(per_pair.items())]
    return layer_curve, lambda_curve


def _assemble(cfg, results) -> ExperimentReport:
    rows = [r for res in results for r in res[0]]
    diags = [d for res in results for d in res[1]]
    rows.sort(key=lambda r: (r.seed, r.layer_index, ABLATIONS.index(r.ablation)))
    best = select_layer(rows)
    layer_curve, lambda_curve = _curves(rows, diags, best)
    return ExperimentReport(
        config=flatten(cfg), runs=rows, best_layer=best,
        layer_curve=layer_curve, lambda_curve=lambda_curve, diagnostics=diags,
    )


def run_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Train one cell per injectable layer and seed; pick the layer on validation macro-F1."""
    cfg.validate()
    return _assemble(cfg, _map_seeds(_sweep_seed, cfg))


def _ablate_seed(cfg: ExperimentConfig, seed: int):
    ctx = prepare_seed(cfg, seed)
    layer = cfg.layer or ctx.backbone.n_layers
    with stage("features"):
        ctx.backbone._check(layer)
    rows, diag, _ = run_cell(cfg, ctx, layer)
    return rows, [diag]


def run_ablation(cfg: ExperimentConfig, modes=ABLATIONS) -> ExperimentReport:
    """Full routing against the two single-head modes at ``cfg.layer``."""
    cfg.validate()
    for m in modes:
        if m not in ABLATIONS:
            raise ValueError(f"unknown ablation mode {m!r}")
    report = _assemble(cfg, _map_seeds(_ablate_seed, cfg))
    report.runs = [r for r in report.runs if r.ablation in modes]
    return report


def train_single(cfg: ExperimentConfig, seed: int):
    """Backbone, cell and tuned probe at ``cfg.layer`` for one seed."""
    ctx = prepare_seed(cfg, seed)
    layer = cfg.layer or ctx.backbone.n_layers
    with stage("features"):
        ctx.backbone._check(layer)
    rows, diag, cell = run_cell(cfg, ctx, layer)
    return ctx, cell, rows, diag
