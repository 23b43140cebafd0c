"""Slow, loop-based reference computations used to check the vectorised code.

The statistics helpers never touch the package. The gradient helpers use it
only to build networks and read their analytic gradients.
"""
import math

import numpy as np


def loop_mean(rows):
    n, d = len(rows), len(rows[0])
    out = [0.0] * d
    for r in rows:
        for j in range(d):
            out[j] += r[j]
    return [v / n for v in out]


def loop_covariance(rows, mean):
    n, d = len(rows), len(mean)
    out = [[0.0] * d for _ in range(d)]
    for r in rows:
        diff = [r[j] - mean[j] for j in range(d)]
        for a in range(d):
            for b in range(d):
                out[a][b] += diff[a] * diff[b]
    return [[v / n for v in row] for row in out]


def loop_quadratic_form(x, mean, precision):
    d = len(x)
    diff = [x[i] - mean[i] for i in range(d)]
    total = 0.0
    for i in range(d):
        for j in range(d):
            total += diff[i] * precision[i][j] * diff[j]
    return total


def two_pass_stats(values):
    n = len(values)
    mu = math.fsum(values) / n
    var = math.fsum((v - mu) ** 2 for v in values) / n
    return mu, math.sqrt(var)


def ridge_inverse_oracle(m, ridge):
    """Inverse via numpy's general solver, a different route than the Cholesky path."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    a = m + ridge * np.trace(m) / d * np.eye(d)
    return np.linalg.solve(a, np.eye(d))


def _act(z, kind):
    if kind == "relu":
        return [max(v, 0.0) for v in z]
    if kind == "tanh":
        return [math.tanh(v) for v in z]
    if kind == "sigmoid":
        return [1.0 / (1.0 + math.exp(-v)) for v in z]
    if kind == "softmax":
        m = max(z)
        e = [math.exp(v - m) for v in z]
        s = sum(e)
        return [v / s for v in e]
    return list(z)


def loop_forward(specs, weights, biases, x, upto=None):
    """Scalar-loop forward pass; weights indexed ``w[i][j]`` for input i, output j."""
    a = list(x)
    n = len(specs) if upto is None else upto
    for spec, w, b in zip(specs[:n], weights[:n], biases[:n]):
        z = [b[j] + sum(a[i] * w[i][j] for i in range(len(a))) for j in range(len(b))]
        a = _act(z, spec.activation)
    return a


def numeric_gradients(loss_fn, params, step=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of every array."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = loss_fn()
            p[idx] = orig - step
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def rel_error(analytic, numeric, floor=1e-6):
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


def random_small_network(rng, loss=None):
    """A net of at most 3 layers and 32 units, plus a matching batch and targets."""
    from enforced_transfer.nn import LayerSpec, Network

    depth = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 33)) for _ in range(depth)]
    loss = loss or rng.choice(["cross_entropy", "binary_cross_entropy"])
    if loss == "binary_cross_entropy":
        dims.append(1)
        out_act = "sigmoid"
    else:
        dims.append(int(rng.integers(2, 11)))
        out_act = "softmax"
    hidden = [str(rng.choice(["relu", "tanh", "sigmoid", "linear"])) for _ in range(depth - 1)]
    specs = [LayerSpec(a, b, act) for a, b, act in zip(dims, dims[1:], hidden + [out_act])]
    net = Network.init(specs, rng)
    for b in net.biases:
        b[:] = rng.normal(0.0, 0.1, size=b.shape)
    n = int(rng.integers(1, 9))
    x = rng.standard_normal((n, dims[0]))
    if loss == "binary_cross_entropy":
        y = rng.integers(0, 2, size=n).astype(float)
    else:
        y = rng.integers(0, dims[-1], size=n)
    return net, x, y, str(loss)


def near_relu_kink(net, x, margin=1e-4):
    """True if any relu pre-activation sits close enough to 0 to spoil finite differences."""
    from enforced_transfer.nn import forward_cached

    _, cache = forward_cached(net, x)
    return any(s.activation == "relu" and np.any(np.abs(z) < margin)
               for s, (_, z, _) in zip(net.specs, cache))


def max_gradient_error(net, x, y, loss, step=1e-5):
    from enforced_transfer.nn import forward_cached, loss_and_gradients, output_loss

    _, grads = loss_and_gradients(net, x, y, loss)
    analytic = [g for pair in grads for g in pair]

    def f():
        out, cache = forward_cached(net, x)
        return output_loss(net, cache[-1][1], out, y, loss)[0]

    numeric = numeric_gradients(f, list(net.params()), step)
    return max(float(rel_error(a, n).max()) for a, n in zip(analytic, numeric))
