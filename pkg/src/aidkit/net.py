"""Minimal feed-forward conv/dense network with explicit backprop.

Just enough machinery to train small image classifiers on the CPU and to
expose exact input gradients and per-layer feature-map gradients.  NHWC
layout throughout; convolutions are stride-1 "same" via im2col so each
layer is one large GEMM.  float32 by default (training speed), float64 on
request (gradient oracles).
"""

from __future__ import annotations

import numpy as np

__all__ = ["Conv2D", "ReLU", "Tanh", "MaxPool2", "Dense", "Sequential", "SgdMomentum"]


class Conv2D:
    """Stride-1 'same' convolution, NHWC, weights (kh, kw, Cin, Cout)."""

    def __init__(self, in_ch, out_ch, ksize=3, name=None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (ksize * ksize * in_ch))
        self.W = (rng.standard_normal((ksize, ksize, in_ch, out_ch)) * std).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.ksize = ksize
        self.name = name

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        B, H, W, C = x.shape
        k = self.ksize
        p = k // 2
        xpad = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=x.dtype)
        xpad[:, p:p + H, p:p + W, :] = x
        cols = np.empty((B, H, W, k, k, C), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                cols[:, :, :, di, dj, :] = xpad[:, di:di + H, dj:dj + W, :]
        flat = cols.reshape(B * H * W, k * k * C)
        out = flat @ self.W.reshape(k * k * C, -1) + self.b
        return out.reshape(B, H, W, -1), (cols, x.shape)

    def backward(self, dy, cache, need_param_grads=False):
        cols, xshape = cache
        B, H, W, C = xshape
        k = self.ksize
        p = k // 2
        dyf = dy.reshape(B * H * W, -1)
        dcols = (dyf @ self.W.reshape(k * k * C, -1).T).reshape(B, H, W, k, k, C)
        dxpad = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=dy.dtype)
        for di in range(k):
            for dj in range(k):
                dxpad[:, di:di + H, dj:dj + W, :] += dcols[:, :, :, di, dj, :]
        dx = dxpad[:, p:p + H, p:p + W, :]
        grads = None
        if need_param_grads:
            dW = cols.reshape(B * H * W, k * k * C).T @ dyf
            grads = {"W": dW.reshape(self.W.shape), "b": dyf.sum(axis=0)}
        return dx, grads


class ReLU:
    params = {}

    def __init__(self, name=None):
        self.name = name

    def forward(self, x):
        y = np.maximum(x, 0)
        return y, y

    def backward(self, dy, cache, need_param_grads=False):
        return dy * (cache > 0), None


class Tanh:
    """Smooth activation for gradient-oracle toy models."""

    params = {}

    def __init__(self, name=None):
        self.name = name

    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, dy, cache, need_param_grads=False):
        return dy * (1.0 - cache * cache), None


class MaxPool2:
    """2x2/stride-2 max pooling; gradient routed to the first max per window."""

    params = {}

    def __init__(self, name=None):
        self.name = name

    def forward(self, x):
        B, H, W, C = x.shape
        if H % 2 or W % 2:
            raise ValueError(f"MaxPool2 needs even spatial dims, got {(H, W)}")
        win = (x.reshape(B, H // 2, 2, W // 2, 2, C)
                .transpose(0, 1, 3, 5, 2, 4)
                .reshape(B, H // 2, W // 2, C, 4))
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dy, cache, need_param_grads=False):
        idx, xshape = cache
        B, H, W, C = xshape
        dwin = np.zeros((B, H // 2, W // 2, C, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = (dwin.reshape(B, H // 2, W // 2, C, 2, 2)
                  .transpose(0, 1, 4, 2, 5, 3)
                  .reshape(B, H, W, C))
        return dx, None


class Dense:
    """Fully connected layer; flattens any trailing input dims."""

    def __init__(self, in_features, out_features, name=None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / in_features)
        self.W = (rng.standard_normal((in_features, out_features)) * std).astype(dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.name = name

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        xf = x.reshape(x.shape[0], -1)
        return xf @ self.W + self.b, (xf, x.shape)

    def backward(self, dy, cache, need_param_grads=False):
        xf, xshape = cache
        dx = (dy @ self.W.T).reshape(xshape)
        grads = None
        if need_param_grads:
            grads = {"W": xf.T @ dy, "b": dy.sum(axis=0)}
        return dx, grads


class Sequential:
    """A layer stack with forward caching and backprop to the input or to any
    named layer's output."""

    def __init__(self, layers, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = dtype

    def layer_names(self):
        return tuple(l.name for l in self.layers if l.name)

    def _layer_index(self, name):
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(name)

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward_input(self, dlogits, caches):
        """Gradient w.r.t. the network input.

        Runs at the cotangent's dtype (float64 upstream values survive even
        when the softmax is saturated far past float32 underflow).
        """
        dy = np.asarray(dlogits)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, _ = layer.backward(dy, cache)
        return dy

    def backward_params(self, dlogits, caches):
        """(input gradient, per-layer parameter gradients) for training."""
        dy = np.asarray(dlogits, dtype=self.dtype)
        all_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, grads = self.layers[i].backward(dy, caches[i], need_param_grads=True)
            all_grads[i] = grads
        return dy, all_grads

    def backward_to_layer(self, dlogits, caches, layer_name):
        """Gradient of the upstream scalar w.r.t. the named layer's output."""
        i = self._layer_index(layer_name)
        dy = np.asarray(dlogits)
        for j in range(len(self.layers) - 1, i, -1):
            dy, _ = self.layers[j].backward(dy, caches[j])
        return dy

    def layer_output(self, caches, layer_name, x=None):
        """Recover the named layer's forward output.

        ReLU/Tanh cache their own outputs; for other layers we re-run the
        forward pass up to the layer (cheap for the small nets used here).
        """
        i = self._layer_index(layer_name)
        layer = self.layers[i]
        if isinstance(layer, (ReLU, Tanh)):
            return caches[i]
        if x is None:
            raise ValueError("need the input to recover a non-activation layer output")
        out = np.asarray(x, dtype=self.dtype)
        for l in self.layers[: i + 1]:
            out, _ = l.forward(out)
        return out

    def parameters(self):
        """Flat {layer_index.param_name: array} view for optimizers and i/o."""
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out[f"{i}.{k}"] = v
        return out

    def set_parameters(self, flat):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                setattr(layer, k, np.asarray(flat[f"{i}.{k}"], dtype=self.dtype))


class SgdMomentum:
    """SGD with classical momentum and decoupled-from-nothing weight decay
    (decay folded into the gradient, as in standard image-classifier recipes)."""

    def __init__(self, net, lr, momentum=0.9, weight_decay=0.0):
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in net.parameters().items()}

    def step(self, layer_grads):
        for i, layer in enumerate(self.net.layers):
            grads = layer_grads[i]
            if not grads:
                continue
            for k, g in grads.items():
                key = f"{i}.{k}"
                p = getattr(layer, k)
                if self.weight_decay and k == "W":
                    g = g + self.weight_decay * p
                v = self.velocity[key]
                v *= self.momentum
                v -= self.lr * g
                p += v
