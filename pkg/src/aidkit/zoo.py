"""Classifier handles: trained conv nets plus analytic toy models.

The toy models exist for oracle tests (closed-form gradients, controllable
logits); the conv-net structures are the desk-scale workhorses.
"""

from __future__ import annotations

import numpy as np

from .core import ClassifierHandle, UnknownLayerError, softmax, cross_entropy
from .net import Conv2D, Dense, MaxPool2, ReLU, Sequential, Tanh

__all__ = [
    "NetHandle",
    "LinearSoftmaxModel",
    "ConstantLogitModel",
    "UniformLogitModel",
    "ChannelMeanModel",
    "build_structure",
    "smooth_mlp_handle",
    "STRUCTURES",
]


class NetHandle(ClassifierHandle):
    """ClassifierHandle over a Sequential net (read-only after construction)."""

    def __init__(self, net, class_count, input_shape, model_id="net",
                 feature_layers=None, meta=None):
        self.net = net
        self.class_count = int(class_count)
        self.input_shape = tuple(input_shape)
        self.model_id = model_id
        self.feature_layers = tuple(feature_layers) if feature_layers else net.layer_names()
        self.meta = dict(meta) if meta else {}

    def logits(self, xs):
        xs = self._check_batch(xs)
        out, _ = self.net.forward(xs)
        return np.asarray(out, dtype=np.float64)

    def input_grad_from_dlogits(self, xs, dlogits):
        xs = self._check_batch(xs)
        _, caches = self.net.forward(xs)
        dx = self.net.backward_input(np.asarray(dlogits, dtype=np.float64), caches)
        return np.asarray(dx, dtype=np.float64)

    def loss_and_input_grad(self, xs, ys):
        # one forward pass shared between loss and gradient
        xs = self._check_batch(xs)
        ys = np.asarray(ys, dtype=np.int64)
        out, caches = self.net.forward(xs)
        logit = np.asarray(out, dtype=np.float64)
        p = softmax(logit)
        losses = cross_entropy(logit, ys)
        dlogits = p.copy()
        dlogits[np.arange(len(ys)), ys] -= 1.0
        dx = self.net.backward_input(dlogits, caches)
        return losses, np.asarray(dx, dtype=np.float64)

    def feature_with_score_grad(self, xs, classes, layer):
        if layer not in self.feature_layers:
            raise UnknownLayerError(
                f"model {self.model_id!r} has feature layers {self.feature_layers}, "
                f"not {layer!r}")
        xs = self._check_batch(xs)
        classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
        out, caches = self.net.forward(xs)
        dlogits = np.zeros_like(out)
        dlogits[np.arange(len(classes)), classes] = 1.0
        da = self.net.backward_to_layer(dlogits, caches, layer)
        a = self.net.layer_output(caches, layer, xs)
        return np.asarray(a, dtype=np.float64), np.asarray(da, dtype=np.float64)


class LinearSoftmaxModel(ClassifierHandle):
    """logits = flatten(x) @ W + b; closed-form gradients for oracle tests."""

    def __init__(self, W, b=None, input_shape=None, model_id="linear"):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = (np.asarray(b, dtype=np.float64) if b is not None
                  else np.zeros(self.W.shape[1]))
        self.class_count = self.W.shape[1]
        self.input_shape = tuple(input_shape) if input_shape else (self.W.shape[0], 1, 1)
        self.model_id = model_id

    def logits(self, xs):
        xs = self._check_batch(xs)
        return xs.reshape(xs.shape[0], -1) @ self.W + self.b

    def input_grad_from_dlogits(self, xs, dlogits):
        xs = np.asarray(xs)
        return (np.asarray(dlogits) @ self.W.T).reshape(xs.shape)


class ConstantLogitModel(ClassifierHandle):
    """Fixed logits for every input; input gradient is identically zero."""

    def __init__(self, logits_vector, input_shape, model_id="constant"):
        self.vector = np.asarray(logits_vector, dtype=np.float64)
        self.class_count = self.vector.size
        self.input_shape = tuple(input_shape)
        self.model_id = model_id

    def logits(self, xs):
        xs = self._check_batch(xs)
        return np.tile(self.vector, (xs.shape[0], 1))

    def input_grad_from_dlogits(self, xs, dlogits):
        return np.zeros_like(np.asarray(xs, dtype=np.float64))


def UniformLogitModel(class_count, input_shape, model_id="uniform"):
    """All-equal logits: probabilities are 1/K everywhere."""
    return ConstantLogitModel(np.zeros(class_count), input_shape, model_id=model_id)


class ChannelMeanModel(ClassifierHandle):
    """Class k's logit is the spatial mean of input channel k (mod C).

    Exposes the raw input as feature layer "input", which makes the
    attention-map computation analytically checkable.
    """

    feature_layers = ("input",)

    def __init__(self, input_shape, class_count, model_id="channel_mean"):
        self.input_shape = tuple(input_shape)
        self.class_count = int(class_count)
        self.model_id = model_id

    def _channel(self, k):
        return int(k) % self.input_shape[2]

    def logits(self, xs):
        xs = self._check_batch(xs)
        means = xs.mean(axis=(1, 2))  # (B, C)
        cols = [self._channel(k) for k in range(self.class_count)]
        return np.asarray(means[:, cols], dtype=np.float64)

    def input_grad_from_dlogits(self, xs, dlogits):
        xs = np.asarray(xs, dtype=np.float64)
        B, H, W, C = xs.shape
        dx = np.zeros_like(xs)
        dlogits = np.asarray(dlogits, dtype=np.float64)
        for k in range(self.class_count):
            dx[..., self._channel(k)] += (dlogits[:, k] / (H * W))[:, None, None]
        return dx

    def feature_with_score_grad(self, xs, classes, layer):
        if layer != "input":
            raise UnknownLayerError(f"unknown layer {layer!r}")
        xs = self._check_batch(xs).astype(np.float64)
        B, H, W, C = xs.shape
        classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
        da = np.zeros_like(xs)
        for i, k in enumerate(classes):
            da[i, :, :, self._channel(k)] = 1.0 / (H * W)
        return xs, da


# ---------------------------------------------------------------------------
# trainable structures
# ---------------------------------------------------------------------------

def _smallcnn(input_shape, class_count, seed, dtype):
    H, W, C = input_shape
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D(C, 32, rng=rng, dtype=dtype), ReLU(name="conv1"), MaxPool2(),
        Conv2D(32, 64, rng=rng, dtype=dtype), ReLU(name="conv2"),
        Conv2D(64, 64, rng=rng, dtype=dtype), ReLU(name="conv3"), MaxPool2(),
        Dense((H // 4) * (W // 4) * 64, class_count, rng=rng, dtype=dtype),
    ]
    return Sequential(layers, dtype=dtype), ("conv1", "conv2", "conv3")


def _tinycnn(input_shape, class_count, seed, dtype):
    H, W, C = input_shape
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D(C, 24, rng=rng, dtype=dtype), ReLU(name="conv1"), MaxPool2(),
        Conv2D(24, 48, rng=rng, dtype=dtype), ReLU(name="conv2"), MaxPool2(),
        Dense((H // 4) * (W // 4) * 48, class_count, rng=rng, dtype=dtype),
    ]
    return Sequential(layers, dtype=dtype), ("conv1", "conv2")


def _deepcnn(input_shape, class_count, seed, dtype):
    H, W, C = input_shape
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D(C, 32, rng=rng, dtype=dtype), ReLU(name="conv1"),
        Conv2D(32, 32, rng=rng, dtype=dtype), ReLU(name="conv2"), MaxPool2(),
        Conv2D(32, 64, rng=rng, dtype=dtype), ReLU(name="conv3"),
        Conv2D(64, 64, rng=rng, dtype=dtype), ReLU(name="conv4"), MaxPool2(),
        Conv2D(64, 64, rng=rng, dtype=dtype), ReLU(name="conv5"),
        Dense((H // 4) * (W // 4) * 64, class_count, rng=rng, dtype=dtype),
    ]
    return Sequential(layers, dtype=dtype), ("conv1", "conv2", "conv3", "conv4", "conv5")


def _mlp_tanh(input_shape, class_count, seed, dtype):
    H, W, C = input_shape
    rng = np.random.default_rng(seed)
    layers = [
        Dense(H * W * C, 64, rng=rng, dtype=dtype), Tanh(name="hidden"),
        Dense(64, class_count, rng=rng, dtype=dtype),
    ]
    return Sequential(layers, dtype=dtype), ()


STRUCTURES = {
    "smallcnn": _smallcnn,
    "deepcnn": _deepcnn,
    "tinycnn": _tinycnn,
    "mlp_tanh": _mlp_tanh,
}


def build_structure(structure, input_shape, class_count, seed=0, dtype=np.float32):
    """Instantiate a registered structure; returns (net, feature_layers)."""
    if structure not in STRUCTURES:
        raise KeyError(f"unknown structure {structure!r}; have {sorted(STRUCTURES)}")
    return STRUCTURES[structure](tuple(input_shape), int(class_count), seed, dtype)


def smooth_mlp_handle(input_shape, class_count, hidden=32, seed=0, model_id="smooth_mlp"):
    """Small float64 tanh MLP; smooth everywhere, for finite-difference checks."""
    H, W, C = input_shape
    rng = np.random.default_rng(seed)
    layers = [
        Dense(H * W * C, hidden, rng=rng, dtype=np.float64), Tanh(),
        Dense(hidden, class_count, rng=rng, dtype=np.float64),
    ]
    net = Sequential(layers, dtype=np.float64)
    return NetHandle(net, class_count, input_shape, model_id=model_id, feature_layers=())
