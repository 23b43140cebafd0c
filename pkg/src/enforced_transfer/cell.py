"""Training of the five networks of one Enforced Transfer Cell.

Source encoder + source head are trained jointly on labeled source
activations. The target encoder (warm-started from the source encoder) plays
generator against a real/fake discriminator. The target head is fit on target
embeddings with pseudo-labels.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import ActivationSet
from .nn import (
    LayerSpec,
    Network,
    OptimizerState,
    TrainConfig,
    backward,
    concat,
    forward,
    forward_cached,
    load_network,
    loss_and_gradients,
    minibatches,
    optimizer_step,
    output_loss,
    save_network,
    split,
    train_supervised,
)
from .seeding import substream_seed

log = logging.getLogger(__name__)

CRITIQUE_MODES = ("hidden", "scalar")
COMPONENTS = ("e_source", "e_target", "discriminator", "d_source", "d_target")


@dataclass
class CellConfig:
    encoder_hidden: tuple = (32, 32)
    embedding_dim: int = 16
    disc_hidden: int = 16
    head_hidden: int = 32
    critique: str = "hidden"
    pseudo_labels: str = "self"  # "self" or a path to a label file
    disc_warmup_steps: int = 20
    generator_lr: float | None = None  # defaults to the adversarial learning rate
    source: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3, epochs=30, batch_size=64))
    adversarial: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=5e-4, epochs=30, batch_size=64, beta1=0.5)
    )
    target: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3, epochs=30, batch_size=64))

    def __post_init__(self):
        if self.critique not in CRITIQUE_MODES:
            raise ValueError(f"critique must be one of {CRITIQUE_MODES}")
        self.encoder_hidden = tuple(self.encoder_hidden)


@dataclass(eq=False)
class EtcModels:
    e_source: Network
    e_target: Network
    discriminator: Network
    d_source: Network
    d_target: Network
    layer_index: int
    critique_mode: str = "hidden"

    def __post_init__(self):
        if self.e_source.input_dim != self.e_target.input_dim:
            raise ValueError("encoders disagree on input dim")
        emb = self.e_source.output_dim
        if self.e_target.output_dim != emb:
            raise ValueError("encoders disagree on embedding dim")
        if self.discriminator.input_dim != emb or self.discriminator.output_dim != 1:
            raise ValueError("discriminator must map the embedding to one probability")
        if self.discriminator.specs[-1].activation != "sigmoid":
            raise ValueError("discriminator output must be a sigmoid")
        for head in (self.d_source, self.d_target):
            if head.input_dim != emb:
                raise ValueError("dense heads must take the embedding as input")
        if self.d_source.output_dim != self.d_target.output_dim:
            raise ValueError("dense heads disagree on class count")
        if self.critique_mode not in CRITIQUE_MODES:
            raise ValueError(f"critique_mode must be one of {CRITIQUE_MODES}")

    @property
    def class_count(self) -> int:
        return self.d_source.output_dim

    @property
    def critique_half_dim(self) -> int:
        if self.critique_mode == "scalar":
            return 1
        return self.discriminator.specs[-2].output_dim + 1 if len(self.discriminator) > 1 else 1

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in COMPONENTS:
            save_network(getattr(self, name), d / f"{name}.npz")
        meta = {"version": 1, "layer_index": self.layer_index, "critique_mode": self.critique_mode}
        (d / "cell.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory) -> "EtcModels":
        d = Path(directory)
        meta = json.loads((d / "cell.json").read_text())
        if meta.get("version") != 1:
            raise ValueError(f"unsupported cell version {meta.get('version')}")
        nets = {name: load_network(d / f"{name}.npz") for name in COMPONENTS}
        return cls(**nets, layer_index=meta["layer_index"], critique_mode=meta["critique_mode"])


@dataclass(eq=False)
class PseudoLabels:
    labels: np.ndarray
    origin: str  # "file" or "self_generated"

    def __len__(self):
        return len(self.labels)


# builders ------------------------------------------------------------------

def build_encoder(input_dim, cfg: CellConfig, rng) -> Network:
    dims = [input_dim, *cfg.encoder_hidden, cfg.embedding_dim]
    specs = [LayerSpec(a, b, "relu") for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], "linear"))
    return Network.init(specs, rng)


def build_head(cfg: CellConfig, class_count, rng) -> Network:
    specs = [
        LayerSpec(cfg.embedding_dim, cfg.head_hidden, "relu"),
        LayerSpec(cfg.head_hidden, class_count, "softmax"),
    ]
    return Network.init(specs, rng)


def build_discriminator(cfg: CellConfig, rng) -> Network:
    specs = [
        LayerSpec(cfg.embedding_dim, cfg.disc_hidden, "relu"),
        LayerSpec(cfg.disc_hidden, 1, "sigmoid"),
    ]
    return Network.init(specs, rng)


def discriminator_response(disc: Network, emb, mode="hidden") -> np.ndarray:
    """Per-sample discriminator response: last hidden layer + score, or the score alone."""
    emb = np.atleast_2d(emb)
    if mode == "scalar" or len(disc) == 1:
        return forward(disc, emb)
    hidden = forward(disc, emb, upto=len(disc) - 1)
    return np.concatenate([hidden, forward(disc, emb)], axis=1)


def _require(x: ActivationSet, tag: str, labels=False):
    if x.domain_tag != tag:
        raise ValueError(f"expected {tag} activations, got {x.domain_tag}")
    if labels and x.labels is None:
        raise ValueError(f"{tag} activations carry no labels")


# training ------------------------------------------------------------------

def train_source_branch(x_s: ActivationSet, cfg: CellConfig, class_count: int | None = None):
    """Joint E_s -> D_s training on source labels; returns ``(e_source, d_source)``."""
    _require(x_s, "source", labels=True)
    if class_count is None:
        class_count = int(x_s.labels.max()) + 1
    rng = np.random.default_rng(cfg.source.seed)
    encoder = build_encoder(x_s.dim, cfg, rng)
    head = build_head(cfg, class_count, rng)
    joint = train_supervised(concat(encoder, head), x_s.activations, x_s.labels, cfg.source)
    return split(joint, len(encoder))


def _disc_accuracy(disc, real, fake) -> float:
    p_real = forward(disc, real)[:, 0]
    p_fake = forward(disc, fake)[:, 0]
    correct = np.sum(p_real >= 0.5) + np.sum(p_fake < 0.5)
    return float(correct / (len(p_real) + len(p_fake)))


def centroid_distance(a, b) -> float:
    return float(np.linalg.norm(np.mean(a, axis=0) - np.mean(b, axis=0)))


def _disc_step(disc, emb_s, emb_t, cfg, state):
    x = np.concatenate([emb_s, emb_t])
    y = np.concatenate([np.ones(len(emb_s)), np.zeros(len(emb_t))])
    value, grads = loss_and_gradients(disc, x, y, "binary_cross_entropy")
    optimizer_step(disc, grads, cfg, state)
    return value


def _generator_step(e_target, disc, xt, cfg, state):
    emb, enc_cache = forward_cached(e_target, xt)
    out, disc_cache = forward_cached(disc, emb)
    # non-saturating loss: the generator wants its outputs labeled real
    value, delta = output_loss(disc, disc_cache[-1][1], out, np.ones(len(xt)), "binary_cross_entropy")
    _, grad_emb = backward(disc, disc_cache, delta, pre_activation=True)
    grads, _ = backward(e_target, enc_cache, grad_emb)
    optimizer_step(e_target, grads, cfg, state)
    return value


def train_adversarial(e_source: Network, x_s: ActivationSet, x_t: ActivationSet, cfg: CellConfig,
                      held_out: tuple | None = None, history: list | None = None):
    """Alternating discriminator / target-encoder updates (one step each).

    ``held_out`` is an optional ``(source_acts, target_acts)`` pair used to
    record discriminator accuracy into ``history`` after every epoch.
    Returns ``(e_target, discriminator)``; ``e_source`` is never modified.
    """
    _require(x_s, "source")
    _require(x_t, "target")
    if x_s.dim != x_t.dim or x_s.dim != e_source.input_dim:
        raise ValueError(
            f"dimension mismatch: source {x_s.dim}, target {x_t.dim}, encoder {e_source.input_dim}"
        )
    tc = cfg.adversarial
    rng = np.random.default_rng(tc.seed)
    disc = build_discriminator(cfg, rng)
    e_target = e_source.copy()
    xs, xt = x_s.activations, x_t.activations
    emb_s_all = forward(e_source, xs)

    def record(phase, step):
        if history is None:
            return
        entry = {"phase": phase, "step": step,
                 "centroid_distance": centroid_distance(forward(e_target, xt), emb_s_all)}
        if held_out is not None:
            hs, ht = held_out
            entry["disc_accuracy"] = _disc_accuracy(disc, forward(e_source, hs), forward(e_target, ht))
        history.append(entry)

    record("init", 0)
    if tc.epochs == 0:
        return e_target, disc

    d_state, g_state = OptimizerState(), OptimizerState()
    gc = tc if cfg.generator_lr is None else dataclasses.replace(tc, learning_rate=cfg.generator_lr)
    bs = min(tc.batch_size, len(xs), len(xt))
    for step in range(cfg.disc_warmup_steps):
        si = rng.choice(len(xs), bs, replace=False)
        ti = rng.choice(len(xt), bs, replace=False)
        _disc_step(disc, emb_s_all[si], forward(e_target, xt[ti]), tc, d_state)
    if cfg.disc_warmup_steps:
        record("warmup", cfg.disc_warmup_steps)

    steps = 0
    for epoch in range(tc.epochs):
        for ti in minibatches(len(xt), bs, rng):
            si = rng.choice(len(xs), len(ti), replace=False)
            _disc_step(disc, emb_s_all[si], forward(e_target, xt[ti]), tc, d_state)
            _generator_step(e_target, disc, xt[ti], gc, g_state)
            steps += 1
        record("adversarial", epoch + 1)
    return e_target, disc


def generate_pseudo_labels(e_target: Network, d_source: Network, x_t: ActivationSet) -> PseudoLabels:
    """Label each target sample with ``argmax D_s(E_t(x))``."""
    emb = forward(e_target, x_t.activations)
    return PseudoLabels(np.argmax(forward(d_source, emb), axis=1), "self_generated")


def load_pseudo_labels(path, n_samples: int, class_count: int) -> PseudoLabels:
    """One integer class index per line; line count must equal ``n_samples``."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: not an integer: {text!r}") from None
            if not 0 <= value < class_count:
                raise ValueError(f"{path}: row {lineno}: label {value} outside [0, {class_count})")
            labels.append(value)
    if len(labels) != n_samples:
        raise ValueError(f"{path}: {len(labels)} labels for {n_samples} target samples")
    return PseudoLabels(np.array(labels, dtype=np.int64), "file")


def save_pseudo_labels(pseudo: PseudoLabels, path) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in pseudo.labels))


def train_target_dense(e_target: Network, x_t: ActivationSet, pseudo: PseudoLabels,
                       cfg: CellConfig, class_count: int) -> Network:
    if len(pseudo) != len(x_t):
        raise ValueError(f"{len(pseudo)} pseudo-labels for {len(x_t)} target samples")
    rng = np.random.default_rng(cfg.target.seed)
    head = build_head(cfg, class_count, rng)
    emb = forward(e_target, x_t.activations)
    return train_supervised(head, emb, pseudo.labels, cfg.target)


def with_seeds(cfg: CellConfig, root_seed: int) -> CellConfig:
    """Copy of ``cfg`` whose component train configs draw from named substreams of ``root_seed``."""
    return dataclasses.replace(
        cfg,
        source=dataclasses.replace(cfg.source, seed=substream_seed(root_seed, "source_branch")),
        adversarial=dataclasses.replace(cfg.adversarial, seed=substream_seed(root_seed, "adversarial")),
        target=dataclasses.replace(cfg.target, seed=substream_seed(root_seed, "target_dense")),
    )


def train_cell(x_s: ActivationSet, x_t: ActivationSet, cfg: CellConfig, class_count: int,
               held_out: tuple | None = None, history: list | None = None) -> EtcModels:
    """Full cell training at the layer the activations were taken from."""
    if x_s.layer_index != x_t.layer_index:
        raise ValueError("source and target activations come from different layers")
    e_s, d_s = train_source_branch(x_s, cfg, class_count)
    e_t, disc = train_adversarial(e_s, x_s, x_t, cfg, held_out=held_out, history=history)
    if cfg.pseudo_labels == "self":
        pseudo = generate_pseudo_labels(e_t, d_s, x_t)
    else:
        pseudo = load_pseudo_labels(cfg.pseudo_labels, len(x_t), class_count)
    d_t = train_target_dense(e_t, x_t, pseudo, cfg, class_count)
    return EtcModels(e_s, e_t, disc, d_s, d_t, x_s.layer_index, cfg.critique)
