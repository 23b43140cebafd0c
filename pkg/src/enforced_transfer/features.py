"""Backbone source classifier and the hidden-layer activations the cell is injected after."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .nn import LayerSpec, Network, TrainConfig, accuracy, forward, train_supervised

log = logging.getLogger(__name__)

DOMAINS = ("source", "target")


@dataclass(eq=False)
class Backbone:
    net: Network

    @property
    def n_layers(self) -> int:
        """Injectable hidden layers; the softmax output layer is excluded."""
        return len(self.net) - 1

    def activation_dim(self, layer_index: int) -> int:
        self._check(layer_index)
        return self.net.specs[layer_index - 1].output_dim

    def _check(self, layer_index: int) -> None:
        if not 1 <= layer_index <= self.n_layers:
            raise ValueError(f"layer index {layer_index} outside [1, {self.n_layers}]")


@dataclass(eq=False)
class ActivationSet:
    activations: np.ndarray
    labels: np.ndarray | None
    domain_tag: str
    layer_index: int

    def __post_init__(self):
        self.activations = np.asarray(self.activations, dtype=np.float64)
        if self.activations.ndim != 2:
            raise ValueError("activations must be a 2-D array")
        if self.domain_tag not in DOMAINS:
            raise ValueError(f"domain_tag must be one of {DOMAINS}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.activations.shape[0],):
                raise ValueError("labels do not align with activations")

    def __len__(self):
        return self.activations.shape[0]

    @property
    def dim(self) -> int:
        return self.activations.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = [f"a{i}" for i in range(self.dim)]
            w.writerow(cols + (["label"] if self.labels is not None else []))
            for i, row in enumerate(self.activations):
                vals = [repr(float(v)) for v in row]
                if self.labels is not None:
                    vals.append(int(self.labels[i]))
                w.writerow(vals)


def build_backbone(input_dim: int, class_count: int, hidden=(64, 64, 64), rng=None) -> Backbone:
    dims = [input_dim, *hidden]
    specs = [LayerSpec(a, b, "relu") for a, b in zip(dims, dims[1:])]
    specs.append(LayerSpec(dims[-1], class_count, "softmax"))
    rng = rng if rng is not None else np.random.default_rng(0)
    return Backbone(Network.init(specs, rng))


def train_backbone(train: LabeledDataset, config: TrainConfig, hidden=(64, 64, 64),
                   val: LabeledDataset | None = None) -> Backbone:
    if len(train) == 0:
        raise ValueError("empty source dataset")
    rng = np.random.default_rng(config.seed)
    backbone = build_backbone(train.dim, train.class_count, hidden, rng)
    backbone = Backbone(train_supervised(backbone.net, train.samples, train.labels, config))
    if val is not None and len(val):
        log.info("backbone validation accuracy %.4f", accuracy(backbone.net, val.samples, val.labels))
    return backbone


def extract_activations(backbone: Backbone, dataset, layer_index: int,
                        domain_tag: str = "source") -> ActivationSet:
    """Post-activation output of hidden layer ``layer_index`` (1-based) per sample."""
    backbone._check(layer_index)
    if isinstance(dataset, LabeledDataset):
        x, labels = dataset.samples, dataset.labels
    else:
        x, labels = np.asarray(dataset, dtype=np.float64), None
    acts = forward(backbone.net, np.atleast_2d(x), upto=layer_index)
    return ActivationSet(acts, labels, domain_tag, layer_index)
