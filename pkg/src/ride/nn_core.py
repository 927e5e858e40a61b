"""Minimal dense feedforward network substrate with manual backprop.

Shared by the payload autoencoder, the pair-composition autoencoder and
the flow classifier. Everything runs in float64 so analytic gradients can
be checked against central finite differences.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity", "softmax")
LOSSES = ("mse", "cross_entropy")

PROB_FLOOR = 1e-12  # clamp applied to probabilities before log


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss turns NaN or Inf."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"loss diverged (NaN/Inf) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ValueError(f"inconsistent layer shapes w={self.w.shape} b={self.b.shape}")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("DenseNet needs at least one layer")
        for k in range(1, len(self.layers)):
            if self.layers[k].w.shape[1] != self.layers[k - 1].w.shape[0]:
                raise ValueError(
                    f"layer {k} input dim {self.layers[k].w.shape[1]} does not chain "
                    f"with layer {k - 1} output dim {self.layers[k - 1].w.shape[0]}"
                )
        for k, layer in enumerate(self.layers):
            if layer.activation == "softmax" and k != len(self.layers) - 1:
                raise ValueError("softmax is only allowed as the final activation")
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise ValueError(f"layer {k} has non-finite weights")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    weight_init_scale: float = 1.0
    optimizer: str = "adam"  # "sgd" or "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def init_dense_net(
    dims: list[int],
    activations: list[str],
    seed: int = 0,
    weight_init_scale: float = 1.0,
) -> DenseNet:
    """Build a net with uniform init in [-s, s], s = scale / sqrt(fan_in)."""
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise ValueError("need len(dims) >= 2 and one activation per layer")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        s = weight_init_scale / np.sqrt(fan_in)
        w = rng.uniform(-s, s, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(Layer(w, b, activations[k]))
    return DenseNet(layers)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    if name == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """dL/dz given dL/da, pre-activation z and activation a."""
    if name == "relu":
        return da * (z > 0)
    if name == "sigmoid":
        return da * a * (1.0 - a)
    if name == "tanh":
        return da * (1.0 - a * a)
    if name == "identity":
        return da
    if name == "softmax":
        # full Jacobian-vector product; exact for any loss on the probabilities
        inner = (da * a).sum(axis=-1, keepdims=True)
        return a * (da - inner)
    raise ValueError(f"unknown activation {name!r}")


def _forward_trace(net: DenseNet, x: np.ndarray):
    """Forward pass keeping pre-activations and activations per layer."""
    zs, acts = [], [x]
    a = x
    for k, layer in enumerate(net.layers):
        if a.shape[-1] != layer.w.shape[1]:
            raise ValueError(
                f"layer {k} expects input dim {layer.w.shape[1]}, got {a.shape[-1]}"
            )
        z = a @ layer.w.T + layer.b
        a = _apply_activation(layer.activation, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(net: DenseNet, x) -> np.ndarray:
    """Run the net on a single vector or a (n, input_dim) batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    _, acts = _forward_trace(net, x)
    out = acts[-1]
    return out[0] if single else out


def loss_mse(pred, target) -> float:
    """Mean over samples of the squared L2 distance."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    return float(((pred - target) ** 2).sum(axis=1).mean())


def loss_cross_entropy(pred_probs, labels) -> float:
    """Mean negative log-likelihood with probabilities clamped at 1e-12."""
    p = np.atleast_2d(np.asarray(pred_probs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if p.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != p.shape[0]:
        raise ValueError(f"{p.shape[0]} rows but {y.shape[0]} labels")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise ValueError(f"label out of range [0, {p.shape[1]})")
    picked = p[np.arange(p.shape[0]), y.astype(int)]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def _loss_value_and_grad(loss: str, pred: np.ndarray, target):
    n = pred.shape[0]
    if loss == "mse":
        target = np.atleast_2d(np.asarray(target, dtype=np.float64))
        value = loss_mse(pred, target)
        grad = 2.0 * (pred - target) / n
        return value, grad
    if loss == "cross_entropy":
        y = np.atleast_1d(np.asarray(target)).astype(int)
        value = loss_cross_entropy(pred, y)
        grad = np.zeros_like(pred)
        picked = pred[np.arange(n), y]
        live = picked >= PROB_FLOOR  # clamped entries have zero gradient
        rows = np.arange(n)[live]
        grad[rows, y[live]] = -1.0 / (n * picked[live])
        return value, grad
    raise ValueError(f"unknown loss {loss!r}")


def _backward(net: DenseNet, x: np.ndarray, target, loss: str):
    """Loss value plus gradients for every weight matrix and bias vector."""
    zs, acts = _forward_trace(net, x)
    value, da = _loss_value_and_grad(loss, acts[-1], target)
    grads_w, grads_b = [None] * len(net.layers), [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = _activation_grad(layer.activation, zs[k], acts[k + 1], da)
        grads_w[k] = dz.T @ acts[k]
        grads_b[k] = dz.sum(axis=0)
        da = dz @ layer.w
    return value, grads_w, grads_b


def train(net: DenseNet, x, targets, loss: str, cfg: TrainConfig):
    """Mini-batch training, deterministic per cfg.seed.

    Returns (trained copy of net, per-epoch loss history). History entry e
    is the full-dataset loss at the start of epoch e, so with zero learning
    rate the history holds the initial loss and weights stay unchanged.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if x.shape[1] != net.input_dim:
        raise ValueError(f"data dim {x.shape[1]} != net input dim {net.input_dim}")
    if loss == "mse":
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    else:
        targets = np.atleast_1d(np.asarray(targets)).astype(int)

    net = net.copy()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    use_adam = cfg.optimizer == "adam"
    if use_adam:
        m_w = [np.zeros_like(l.w) for l in net.layers]
        v_w = [np.zeros_like(l.w) for l in net.layers]
        m_b = [np.zeros_like(l.b) for l in net.layers]
        v_b = [np.zeros_like(l.b) for l in net.layers]
        t = 0

    history = []
    for epoch in range(cfg.epochs):
        epoch_pred = forward(net, x)
        if loss == "mse":
            history.append(loss_mse(epoch_pred, targets))
        else:
            history.append(loss_cross_entropy(epoch_pred, targets))

        order = rng.permutation(n)
        for bstart in range(0, n, cfg.batch_size):
            idx = order[bstart:bstart + cfg.batch_size]
            value, grads_w, grads_b = _backward(net, x[idx], targets[idx], loss)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, bstart // cfg.batch_size)
            if use_adam:
                t += 1
                b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
                corr1 = 1.0 - b1 ** t
                corr2 = 1.0 - b2 ** t
                for k, layer in enumerate(net.layers):
                    m_w[k] = b1 * m_w[k] + (1 - b1) * grads_w[k]
                    v_w[k] = b2 * v_w[k] + (1 - b2) * grads_w[k] ** 2
                    m_b[k] = b1 * m_b[k] + (1 - b1) * grads_b[k]
                    v_b[k] = b2 * v_b[k] + (1 - b2) * grads_b[k] ** 2
                    layer.w -= cfg.learning_rate * (m_w[k] / corr1) / (np.sqrt(v_w[k] / corr2) + eps)
                    layer.b -= cfg.learning_rate * (m_b[k] / corr1) / (np.sqrt(v_b[k] / corr2) + eps)
            else:
                for k, layer in enumerate(net.layers):
                    layer.w -= cfg.learning_rate * grads_w[k]
                    layer.b -= cfg.learning_rate * grads_b[k]
    return net, history


def gradient_check(net: DenseNet, loss: str, x, target, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, grads_w, grads_b = _backward(net, x, target, loss)
    probe = net.copy()

    def loss_at() -> float:
        pred = forward(probe, x)
        if loss == "mse":
            return loss_mse(pred, target)
        return loss_cross_entropy(pred, target)

    worst = 0.0
    for k, layer in enumerate(probe.layers):
        for arr, grads in ((layer.w, grads_w[k]), (layer.b, grads_b[k])):
            flat = arr.reshape(-1)
            gflat = grads.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                lp = loss_at()
                flat[i] = orig - eps
                lm = loss_at()
                flat[i] = orig
                numeric = (lp - lm) / (2 * eps)
                analytic = gflat[i]
                rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
                worst = max(worst, rel)
    return worst


def net_to_dict(net: DenseNet) -> dict:
    return {
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "layers": [
            {"activation": l.activation, "w": l.w.tolist(), "b": l.b.tolist()}
            for l in net.layers
        ],
    }


def net_from_dict(doc: dict) -> DenseNet:
    layers = [
        Layer(np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64), l["activation"])
        for l in doc["layers"]
    ]
    net = DenseNet(layers)
    if net.input_dim != doc["input_dim"] or net.output_dim != doc["output_dim"]:
        raise ValueError("model dims in header disagree with weight shapes")
    return net


def save_net(net: DenseNet, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(net_to_dict(net), fh)


def load_net(path: str) -> DenseNet:
    with open(path) as fh:
        return net_from_dict(json.load(fh))
