"""Dense feedforward networks with hand-written backprop, SGD and Adam."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "softmax", "linear")
LOSSES = ("cross_entropy", "binary_cross_entropy")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError(f"layer dims must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    return z


def _activation_backward(z, a, grad_a, kind):
    if kind == "relu":
        return grad_a * (z > 0)
    if kind == "tanh":
        return grad_a * (1.0 - a * a)
    if kind == "sigmoid":
        return grad_a * a * (1.0 - a)
    if kind == "softmax":
        return a * (grad_a - np.sum(grad_a * a, axis=-1, keepdims=True))
    return grad_a


class Network:
    """Stack of dense layers. Weights are stored ``(input_dim, output_dim)``."""

    def __init__(self, specs, weights, biases):
        specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        if not specs:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(specs, specs[1:]):
            if prev.output_dim != nxt.input_dim:
                raise ValueError(f"layer dims do not chain: {prev} -> {nxt}")
        for s in specs[:-1]:
            if s.activation == "softmax":
                raise ValueError("softmax is only allowed on the final layer")
        if len(weights) != len(specs) or len(biases) != len(specs):
            raise ValueError("parameter count does not match layer count")
        self.specs = tuple(specs)
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for s, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (s.input_dim, s.output_dim) or b.shape != (s.output_dim,):
                raise ValueError(f"parameter shapes do not match {s}")

    @classmethod
    def init(cls, specs, rng: np.random.Generator) -> "Network":
        """Glorot-uniform weights, zero biases."""
        specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        weights, biases = [], []
        for s in specs:
            limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
            weights.append(rng.uniform(-limit, limit, size=(s.input_dim, s.output_dim)))
            biases.append(np.zeros(s.output_dim))
        return cls(specs, weights, biases)

    @classmethod
    def mlp(cls, dims, hidden="relu", output="linear", rng=None) -> "Network":
        specs = [
            LayerSpec(a, b, hidden if i < len(dims) - 2 else output)
            for i, (a, b) in enumerate(zip(dims, dims[1:]))
        ]
        return cls.init(specs, rng if rng is not None else np.random.default_rng(0))

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    def __len__(self):
        return len(self.specs)

    def copy(self) -> "Network":
        return Network(self.specs, self.weights, self.biases)

    def params(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.specs == other.specs and all(
            np.array_equal(a, b) for a, b in zip(self.params(), other.params())
        )

    def __repr__(self):
        dims = [self.input_dim] + [s.output_dim for s in self.specs]
        acts = ",".join(s.activation for s in self.specs)
        return f"Network({'-'.join(map(str, dims))}; {acts})"

    def __call__(self, x):
        return forward(self, x)


def concat(first: Network, second: Network) -> Network:
    return Network(
        first.specs + second.specs,
        first.weights + second.weights,
        first.biases + second.biases,
    )


def split(net: Network, at: int) -> tuple[Network, Network]:
    if not 0 < at < len(net):
        raise ValueError(f"split point {at} out of range for {len(net)} layers")
    return (
        Network(net.specs[:at], net.weights[:at], net.biases[:at]),
        Network(net.specs[at:], net.weights[at:], net.biases[at:]),
    )


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (net.input_dim,) or x.ndim not in (1, 2):
        raise ValueError(
            f"dimension mismatch: input shape {x.shape}, network expects {net.input_dim}"
        )
    return x


def forward(net: Network, x, upto: int | None = None) -> np.ndarray:
    """Evaluate ``net`` on a vector or a batch; ``upto`` stops after that many layers."""
    a = _check_input(net, x)
    n = len(net) if upto is None else upto
    if not 0 <= n <= len(net):
        raise ValueError(f"layer count {upto} out of range")
    for s, w, b in zip(net.specs[:n], net.weights[:n], net.biases[:n]):
        a = _activate(a @ w + b, s.activation)
    return a


def forward_cached(net: Network, x):
    """Forward pass on a batch, keeping ``(inputs, pre-activations, outputs)`` per layer."""
    a = _check_input(net, x)
    if a.ndim == 1:
        a = a[None, :]
    cache = []
    for s, w, b in zip(net.specs, net.weights, net.biases):
        z = a @ w + b
        out = _activate(z, s.activation)
        cache.append((a, z, out))
        a = out
    return a, cache


def backward(net: Network, cache, grad, pre_activation=False):
    """Backpropagate ``grad`` (w.r.t. the network output) through the cached pass.

    With ``pre_activation=True`` the gradient is already taken w.r.t. the final
    layer's pre-activation. Returns ``(grads, grad_input)`` where ``grads`` is a
    list of ``(dW, db)`` pairs.
    """
    grads = [None] * len(net)
    g = np.asarray(grad, dtype=np.float64)
    for i in range(len(net) - 1, -1, -1):
        a_in, z, out = cache[i]
        if not (pre_activation and i == len(net) - 1):
            g = _activation_backward(z, out, g, net.specs[i].activation)
        grads[i] = (a_in.T @ g, g.sum(axis=0))
        g = g @ net.weights[i].T
    return grads, g


def _logsumexp(z):
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def output_loss(net: Network, z_last, out, targets, loss):
    """Mean loss and its gradient w.r.t. the final pre-activation."""
    n = z_last.shape[0]
    if loss == "cross_entropy":
        if net.specs[-1].activation != "softmax":
            raise ValueError("cross_entropy requires a softmax output layer")
        y = np.asarray(targets)
        if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
            raise ValueError("cross_entropy targets must be one class index per sample")
        if np.any((y < 0) | (y >= net.output_dim)):
            raise ValueError(f"class index out of range [0, {net.output_dim})")
        value = float(np.mean(_logsumexp(z_last) - z_last[np.arange(n), y]))
        delta = out.copy()
        delta[np.arange(n), y] -= 1.0
        return value, delta / n
    if loss == "binary_cross_entropy":
        if net.specs[-1].activation != "sigmoid" or net.output_dim != 1:
            raise ValueError("binary_cross_entropy requires a single sigmoid output")
        y = np.asarray(targets, dtype=np.float64).reshape(-1)
        if y.shape != (n,) or not np.all((y == 0) | (y == 1)):
            raise ValueError("binary targets must be 0 or 1, one per sample")
        z = z_last[:, 0]
        value = float(np.mean(_softplus(z) - y * z))
        return value, (out[:, 0] - y)[:, None] / n
    raise ValueError(f"unknown loss {loss!r}")


def loss_and_gradients(net: Network, x, targets, loss="cross_entropy"):
    out, cache = forward_cached(net, x)
    value, delta = output_loss(net, cache[-1][1], out, targets, loss)
    grads, _ = backward(net, cache, delta, pre_activation=True)
    return value, grads


@dataclass
class OptimizerState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(net: Network, grads, config: TrainConfig, state: OptimizerState | None = None):
    """Apply one update in place; returns ``(net, state)``."""
    if state is None:
        state = OptimizerState()
    flat = [g for pair in grads for g in pair]
    params = list(net.params())
    if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
        raise ValueError("gradient shapes do not match network parameters")
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for p, g in zip(params, flat):
            p -= lr * g
        state.step += 1
        return net, state
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, flat, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    return net, state


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; the last partial batch is kept."""
    order = rng.permutation(n)
    bs = min(batch_size, n)
    for start in range(0, n, bs):
        yield order[start:start + bs]


def train_supervised(net: Network, x, y, config: TrainConfig, loss="cross_entropy") -> Network:
    """Mini-batch training on a copy of ``net``; the input network is untouched."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if y.shape[0] != x.shape[0]:
        raise ValueError("samples and targets differ in length")
    net = net.copy()
    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    for _ in range(config.epochs):
        for idx in minibatches(x.shape[0], config.batch_size, rng):
            _, grads = loss_and_gradients(net, x[idx], y[idx], loss)
            optimizer_step(net, grads, config, state)
    return net


def predict(net: Network, x) -> np.ndarray:
    return np.argmax(forward(net, np.atleast_2d(x)), axis=1)


def accuracy(net: Network, x, y) -> float:
    return float(np.mean(predict(net, x) == np.asarray(y)))


def save_network(net: Network, path) -> None:
    path = Path(path)
    header = {
        "version": CHECKPOINT_VERSION,
        "layers": [asdict(s) for s in net.specs],
    }
    arrays = {f"w{i}": w for i, w in enumerate(net.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(net.biases)})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_network(path) -> Network:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        specs = [LayerSpec(**s) for s in header["layers"]]
        weights = [data[f"w{i}"] for i in range(len(specs))]
        biases = [data[f"b{i}"] for i in range(len(specs))]
    return Network(specs, weights, biases)
