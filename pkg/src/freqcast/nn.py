"""From-scratch CNN/MLP on numpy: valid cross-correlation, non-overlapping
max pooling, dense layers, MSE loss, reverse-mode gradients and Adam.

Everything runs in float64 so finite-difference gradient checks are
meaningful. Layers operate on batches shaped (N, H, W, C) / (N, D); the
public helpers accept single tensors and add the batch axis themselves.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


class GridTooSmallForKernel(ValueError):
    pass


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "identity":
        return pre
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(pre)
    if name == "relu":
        return (pre > 0.0).astype(pre.dtype)
    if name == "tanh":
        return 1.0 - out * out
    raise ValueError(f"unknown activation {name!r}")


class Conv2D:
    """Valid (unpadded) cross-correlation with one kernel per output
    channel shared across positions. Kernel shape (kh, kw, cin, cout)."""

    def __init__(self, kernel_size: int, in_channels: int, out_channels: int,
                 stride: int = 1, activation: str = "relu"):
        if kernel_size < 1 or stride < 1:
            raise ShapeMismatch("kernel size and stride must be >= 1")
        self.kernel_size = kernel_size
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.activation = activation
        self.weight = np.zeros((kernel_size, kernel_size, in_channels, out_channels))
        self.bias = np.zeros(out_channels)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, rng: np.random.Generator) -> None:
        k = self.kernel_size
        fan_in = k * k * self.in_channels
        fan_out = k * k * self.out_channels
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = rng.uniform(-limit, limit, size=self.weight.shape)
        self.bias = np.zeros(self.out_channels)

    def output_shape(self, shape):
        h, w, c = shape
        k, s = self.kernel_size, self.stride
        if c != self.in_channels:
            raise ShapeMismatch(
                f"conv expects {self.in_channels} channels, got {c}"
            )
        if h < k or w < k:
            raise ShapeMismatch(f"{k}x{k} kernel does not fit {h}x{w} input")
        return ((h - k) // s + 1, (w - k) // s + 1, self.out_channels)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self.output_shape(x.shape[1:])
        s = self.stride
        win = sliding_window_view(x, (self.kernel_size, self.kernel_size),
                                  axis=(1, 2))[:, ::s, ::s]
        # win: (N, Ho, Wo, C, kh, kw); kernel: (kh, kw, C, Cout)
        pre = np.tensordot(win, self.weight, axes=([3, 4, 5], [2, 0, 1]))
        pre += self.bias
        out = _activate(self.activation, pre)
        if train:
            self._cache = (x, win, pre, out)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, win, pre, out = self._cache
        dpre = dout * _activation_grad(self.activation, pre, out)
        self.grads["bias"] = dpre.sum(axis=(0, 1, 2))
        dw = np.tensordot(win, dpre, axes=([0, 1, 2], [0, 1, 2]))
        # (C, kh, kw, Cout) -> (kh, kw, C, Cout)
        self.grads["weight"] = dw.transpose(1, 2, 0, 3)
        dx = np.zeros_like(x)
        s, k = self.stride, self.kernel_size
        ho, wo = dpre.shape[1], dpre.shape[2]
        for i in range(k):
            for j in range(k):
                dx[:, i:i + ho * s:s, j:j + wo * s:s, :] += np.tensordot(
                    dpre, self.weight[i, j], axes=([3], [1])
                )
        return dx

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def describe(self):
        return {
            "type": "conv",
            "kernel_size": self.kernel_size,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "stride": self.stride,
            "activation": self.activation,
        }


class MaxPool2D:
    """Non-overlapping max pooling (stride = window); a trailing remainder
    that does not fill a window is dropped. The optional affine scale/bias
    and activation default to the identity."""

    def __init__(self, window: int = 2, scale: float = 1.0, bias: float = 0.0,
                 activation: str = "identity"):
        if window < 1:
            raise ShapeMismatch("window must be >= 1")
        self.window = window
        self.stride = window
        self.scale = scale
        self.bias = bias
        self.activation = activation
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, rng) -> None:
        pass

    def output_shape(self, shape):
        h, w, c = shape
        if h < self.window or w < self.window:
            raise ShapeMismatch(
                f"{self.window}x{self.window} window does not fit {h}x{w}"
            )
        return (h // self.stride, w // self.stride, c)

    def _windowed(self, x):
        n, h, w, c = x.shape
        ww = self.window
        h2, w2 = h // ww, w // ww
        v = x[:, : h2 * ww, : w2 * ww, :]
        v = v.reshape(n, h2, ww, w2, ww, c).transpose(0, 1, 3, 2, 4, 5)
        return v.reshape(n, h2, w2, ww * ww, c)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self.output_shape(x.shape[1:])
        v = self._windowed(x)
        arg = v.argmax(axis=3)  # first max in row-major window order
        maxed = np.take_along_axis(v, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        pre = self.scale * maxed + self.bias
        out = _activate(self.activation, pre)
        if train:
            self._cache = (x.shape, arg, pre, out)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, arg, pre, out = self._cache
        n, h, w, c = x_shape
        ww = self.window
        h2, w2 = h // ww, w // ww
        dpre = dout * _activation_grad(self.activation, pre, out) * self.scale
        dv = np.zeros((n, h2, w2, ww * ww, c))
        np.put_along_axis(dv, arg[:, :, :, None, :], dpre[:, :, :, None, :], axis=3)
        dx = np.zeros(x_shape)
        block = dv.reshape(n, h2, w2, ww, ww, c).transpose(0, 1, 3, 2, 4, 5)
        dx[:, : h2 * ww, : w2 * ww, :] = block.reshape(n, h2 * ww, w2 * ww, c)
        return dx

    def params(self):
        return {}

    def describe(self):
        return {
            "type": "pool",
            "window": self.window,
            "scale": self.scale,
            "bias": self.bias,
            "activation": self.activation,
        }


class Flatten:
    def __init__(self):
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, rng) -> None:
        pass

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._cache)

    def params(self):
        return {}

    def describe(self):
        return {"type": "flatten"}


class Dense:
    """Affine map plus activation; weight shape (out_dim, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = np.zeros((out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, rng: np.random.Generator) -> None:
        limit = np.sqrt(6.0 / (self.in_dim + self.out_dim))
        self.weight = rng.uniform(-limit, limit, size=self.weight.shape)
        self.bias = np.zeros(self.out_dim)

    def output_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.in_dim:
            raise ShapeMismatch(
                f"dense expects vectors of length {self.in_dim}, got {shape}"
            )
        return (self.out_dim,)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[1] != self.in_dim:
            raise ShapeMismatch(
                f"dense expects length {self.in_dim}, got {x.shape[1]}"
            )
        pre = x @ self.weight.T + self.bias
        out = _activate(self.activation, pre)
        if train:
            self._cache = (x, pre, out)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, pre, out = self._cache
        dpre = dout * _activation_grad(self.activation, pre, out)
        self.grads["weight"] = dpre.T @ x
        self.grads["bias"] = dpre.sum(axis=0)
        return dpre @ self.weight

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def describe(self):
        return {
            "type": "dense",
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "activation": self.activation,
        }


_LAYER_TYPES = {"conv": Conv2D, "pool": MaxPool2D, "flatten": Flatten, "dense": Dense}


class Network:
    """An ordered layer stack with optional target scaling for Hz outputs."""

    def __init__(self, layers, seed: int = 0,
                 target_min: float | None = None,
                 target_max: float | None = None):
        self.layers = list(layers)
        self.seed = seed
        self.target_min = target_min
        self.target_max = target_max
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def iter_params(self):
        for li, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                yield li, name, arr

    def set_target_scale(self, t_min: float, t_max: float) -> None:
        self.target_min = float(t_min)
        self.target_max = float(t_max)


def conv_forward(tensor: np.ndarray, layer: Conv2D) -> np.ndarray:
    """Single-tensor convenience wrapper around :meth:`Conv2D.forward`."""
    return layer.forward(np.asarray(tensor, dtype=float)[None])[0]


def pool_forward(tensor: np.ndarray, layer: MaxPool2D) -> np.ndarray:
    return layer.forward(np.asarray(tensor, dtype=float)[None])[0]


def dense_forward(vec: np.ndarray, layer: Dense) -> np.ndarray:
    return layer.forward(np.asarray(vec, dtype=float)[None])[0]


def mse_loss(prediction: np.ndarray, target: np.ndarray):
    """Half squared error of one prediction vector:
    ``E = 0.5 * |h - y|^2`` with gradient ``h - y``."""
    p = np.atleast_1d(np.asarray(prediction, dtype=float))
    t = np.atleast_1d(np.asarray(target, dtype=float))
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {t.shape}")
    diff = p - t
    return 0.5 * float(diff @ diff), diff


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True


class AdamState:
    """Bias-corrected first/second moments per parameter array."""

    def __init__(self, network: Network, config: TrainConfig):
        self.config = config
        self.step = 0
        self.m = {}
        self.v = {}
        for li, name, arr in network.iter_params():
            self.m[(li, name)] = np.zeros_like(arr)
            self.v[(li, name)] = np.zeros_like(arr)

    def update(self, network: Network) -> None:
        c = self.config
        self.step += 1
        t = self.step
        for li, name, arr in network.iter_params():
            g = network.layers[li].grads[name]
            key = (li, name)
            self.m[key] = c.beta1 * self.m[key] + (1 - c.beta1) * g
            self.v[key] = c.beta2 * self.v[key] + (1 - c.beta2) * g * g
            m_hat = self.m[key] / (1 - c.beta1 ** t)
            v_hat = self.v[key] / (1 - c.beta2 ** t)
            arr -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def train(network: Network, X: np.ndarray, y: np.ndarray,
          config: TrainConfig) -> np.ndarray:
    """Mini-batch Adam on the mean of per-sample half squared errors.

    Mutates ``network`` in place and returns the per-epoch loss trace.
    Deterministic for a given config seed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{X.shape[0]} inputs vs {y.shape[0]} targets")
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    adam = AdamState(network, config)
    trace = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], y[idx]
            pred = network.forward(xb, train=True)[:, 0]
            diff = pred - yb
            loss = 0.5 * float(diff @ diff) / idx.size
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch offset {start} "
                    f"(lr={config.learning_rate})"
                )
            total += loss * idx.size
            network.backward((diff / idx.size)[:, None])
            adam.update(network)
        trace[epoch] = total / n
    return trace


def predict(network: Network, tensor: np.ndarray) -> float:
    """Scalar prediction for one input tensor, mapped back to Hz when the
    network carries a target scale."""
    x = np.asarray(tensor, dtype=float)[None]
    raw = float(network.forward(x)[0, 0])
    if network.target_min is not None and network.target_max is not None:
        return network.target_min + raw * (network.target_max - network.target_min)
    return raw


def gradient_check(network: Network, x: np.ndarray, target: float,
                   epsilon: float = 1e-5,
                   max_params_per_array: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    Uses the single-sample half-squared-error loss. Keep inputs away from
    ReLU kinks and pooling ties, or the subgradient mismatch dominates.
    """
    x = np.asarray(x, dtype=float)[None]
    t = float(target)

    def loss_value() -> float:
        pred = network.forward(x)[0, 0]
        return 0.5 * (pred - t) ** 2

    pred = network.forward(x, train=True)[0, 0]
    network.backward(np.array([[pred - t]]))
    worst = 0.0
    for li, name, arr in network.iter_params():
        analytic = network.layers[li].grads[name]
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_params_per_array is not None and flat.size > max_params_per_array:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = gen.choice(flat.size, size=max_params_per_array, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + epsilon
            up = loss_value()
            flat[i] = keep - epsilon
            down = loss_value()
            flat[i] = keep
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-10)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def _shape_through(layers, shape):
    for layer in layers:
        shape = layer.output_shape(shape)
    return shape


def build_nadir_cnn(h: int, k: int, seed: int = 0) -> Network:
    """conv -> pool -> conv -> pool -> dense(256, tanh) -> dense(1).

    10x10 kernels on large grids, 5x5 once h <= 64; raises
    :class:`GridTooSmallForKernel` when the shape chain collapses.
    """
    kernel = 10 if h > 64 else 5
    layers = [
        Conv2D(kernel, k, 32, activation="relu"),
        MaxPool2D(2),
        Conv2D(kernel, 32, 64, activation="relu"),
        MaxPool2D(2),
        Flatten(),
    ]
    try:
        shape = _shape_through(layers[:-1], (h, h, k))
    except ShapeMismatch as exc:
        raise GridTooSmallForKernel(
            f"h={h} cannot pass two {kernel}x{kernel} conv + pool stages"
        ) from exc
    flat = int(np.prod(shape))
    layers.append(Dense(flat, 256, activation="tanh"))
    layers.append(Dense(256, 1, activation="identity"))
    return Network(layers, seed=seed)


def build_mlp(h: int, k: int, seed: int = 0) -> Network:
    """Five tanh hidden layers 32-32-64-64-256 on the flattened tensor."""
    dims = [h * h * k, 32, 32, 64, 64, 256]
    layers: list = [Flatten()]
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        layers.append(Dense(d_in, d_out, activation="tanh"))
    layers.append(Dense(256, 1, activation="identity"))
    return Network(layers, seed=seed)


_MAGIC = b"FQNET\x00"


def save_checkpoint(network: Network, path) -> None:
    """Versioned header, layer descriptors, then little-endian float64
    parameter blocks in layer order."""
    header = {
        "format": "freqcast-network",
        "version": 1,
        "seed": network.seed,
        "target_min": network.target_min,
        "target_max": network.target_max,
        "layers": [layer.describe() for layer in network.layers],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, _, arr in network.iter_params():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        layers = []
        for desc in header["layers"]:
            kind = desc["type"]
            if kind == "conv":
                layers.append(Conv2D(desc["kernel_size"], desc["in_channels"],
                                     desc["out_channels"], desc["stride"],
                                     desc["activation"]))
            elif kind == "pool":
                layers.append(MaxPool2D(desc["window"], desc["scale"],
                                        desc["bias"], desc["activation"]))
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "dense":
                layers.append(Dense(desc["in_dim"], desc["out_dim"],
                                    desc["activation"]))
            else:
                raise ValueError(f"unknown layer type {kind!r}")
        net = Network.__new__(Network)
        net.layers = layers
        net.seed = header["seed"]
        net.target_min = header["target_min"]
        net.target_max = header["target_max"]
        for _, _, arr in net.iter_params():
            raw = fh.read(arr.size * 8)
            if len(raw) != arr.size * 8:
                raise ValueError("checkpoint truncated")
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
        return net
