"""Minimal layer library with hand-written backward passes.

Tensors are plain numpy arrays in NCHW layout.  Convolutions lower to
im2col/col2im (``forgebench._kernels``) around a single GEMM, so the work is
deterministic for a fixed backend and BLAS thread count.
"""
import numpy as np

from . import _kernels


class Layer:
    def __init__(self):
        self.params = []
        self.grads = []

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def zero_grads(self):
        for g in self.grads:
            g[...] = 0


def kaiming_uniform(rng, shape, fan_in, dtype, gain=np.sqrt(2.0)):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2D(Layer):
    """k x k convolution; weights (out, in, k, k)."""

    def __init__(self, in_ch, out_ch, k=3, stride=1, pad=None, rng=None, dtype=np.float64, gain=np.sqrt(2.0)):
        super().__init__()
        self.k, self.stride = k, stride
        self.pad = k // 2 if pad is None else pad
        fan_in = in_ch * k * k
        self.W = kaiming_uniform(rng, (out_ch, in_ch, k, k), fan_in, dtype, gain) if rng is not None else np.zeros((out_ch, in_ch, k, k), dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def forward(self, x, train=False):
        n = x.shape[0]
        f = self.W.shape[0]
        oh = _kernels.conv_out_size(x.shape[2], self.k, self.stride, self.pad)
        ow = _kernels.conv_out_size(x.shape[3], self.k, self.stride, self.pad)
        cols = _kernels.im2col(x, self.k, self.k, self.stride, self.pad)
        y = self.W.reshape(f, -1) @ cols + self.b[:, None]
        self._cache = (x.shape, cols)
        return np.ascontiguousarray(y.reshape(f, n, oh, ow).transpose(1, 0, 2, 3))

    def backward(self, dy):
        shape, cols = self._cache
        f = self.W.shape[0]
        dy2 = dy.transpose(1, 0, 2, 3).reshape(f, -1)
        self.grads[0] += (dy2 @ cols.T).reshape(self.W.shape)
        self.grads[1] += dy2.sum(axis=1)
        dcols = self.W.reshape(f, -1).T @ dy2
        return _kernels.col2im(dcols, shape, self.k, self.k, self.stride, self.pad)


class ConvTranspose2D(Layer):
    """Transposed convolution (the adjoint of Conv2D); weights (in, out, k, k).

    With k=4, stride=2, pad=1 the spatial size doubles.
    """

    def __init__(self, in_ch, out_ch, k=4, stride=2, pad=1, rng=None, dtype=np.float64, gain=np.sqrt(2.0)):
        super().__init__()
        self.k, self.stride, self.pad = k, stride, pad
        # each output pixel sees in_ch * (k/stride)^2 inputs
        fan_in = max(1, in_ch * (k // stride) ** 2)
        self.W = kaiming_uniform(rng, (in_ch, out_ch, k, k), fan_in, dtype, gain) if rng is not None else np.zeros((in_ch, out_ch, k, k), dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def out_size(self, size):
        return (size - 1) * self.stride - 2 * self.pad + self.k

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        out_ch = self.W.shape[1]
        oh, ow = self.out_size(h), self.out_size(w)
        x2 = x.transpose(1, 0, 2, 3).reshape(c, -1)
        cols = self.W.reshape(c, -1).T @ x2
        y = _kernels.col2im(cols, (n, out_ch, oh, ow), self.k, self.k, self.stride, self.pad)
        y += self.b[None, :, None, None]
        self._cache = (x.shape, x2)
        return y

    def backward(self, dy):
        shape, x2 = self._cache
        n, c, h, w = shape
        dcols = _kernels.im2col(np.ascontiguousarray(dy), self.k, self.k, self.stride, self.pad)
        self.grads[0] += (x2 @ dcols.T).reshape(self.W.shape)
        self.grads[1] += dy.sum(axis=(0, 2, 3))
        dx2 = self.W.reshape(c, -1) @ dcols
        return np.ascontiguousarray(dx2.reshape(c, n, h, w).transpose(1, 0, 2, 3))


class Dense(Layer):
    """Fully connected; weights (out, in)."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float64, gain=np.sqrt(2.0)):
        super().__init__()
        self.W = kaiming_uniform(rng, (n_out, n_in), n_in, dtype, gain) if rng is not None else np.zeros((n_out, n_in), dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def forward(self, x, train=False):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        self.grads[0] += dy.T @ self._x
        self.grads[1] += dy.sum(axis=0)
        return dy @ self.W


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._mask, dy, 0).astype(dy.dtype, copy=False)


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, x * self.slope).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._mask, dy, dy * self.slope).astype(dy.dtype, copy=False)


class MaxPool2(Layer):
    def forward(self, x, train=False):
        y, idx = _kernels.maxpool2(x)
        self._cache = (x.shape, idx)
        return y

    def backward(self, dy):
        shape, idx = self._cache
        return _kernels.maxpool2_backward(np.ascontiguousarray(dy), idx, shape)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1 - self._y)


class LabelPlanes(Layer):
    """Appends one-hot class planes to the channel axis; set ``labels`` before forward."""

    def __init__(self, num_classes):
        super().__init__()
        self.num_classes = num_classes
        self.labels = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        planes = np.zeros((n, self.num_classes, h, w), dtype=x.dtype)
        planes[np.arange(n), np.asarray(self.labels)] = 1
        self._c = c
        return np.concatenate([x, planes], axis=1)

    def backward(self, dy):
        return np.ascontiguousarray(dy[:, : self._c])


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout; active only when ``train`` is True."""

    def __init__(self, rate, rng):
        super().__init__()
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def set_params(self, arrays):
        params = self.params()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise ValueError(f"shape {a.shape} does not match parameter {p.shape}")
            p[...] = a


def sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(z, y):
    """Mean binary cross-entropy of logistic(z) against targets y, and d loss / d z."""
    y = y.astype(z.dtype).reshape(z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.shape[0]
    return float(loss.sum() / n), (sigmoid(z) - y) / n


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def relative_error(analytic, numeric, floor=1e-5):
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose gradient sits at the finite-difference
    roundoff level (~eps * |loss| / step) from dominating the statistic.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradients(layers, x, loss_fn, step=1e-6):
    """Central differences of ``loss_fn(output)`` for every parameter of ``layers``.

    Activations before each layer are computed once; perturbing a parameter
    only reruns that layer and the ones after it.  Dropout layers must be
    inactive (the forward runs with ``train=False``).
    """
    layers = list(layers)
    grads = []
    inputs = []
    h = x
    for layer in layers:
        inputs.append(h)
        h = layer.forward(h, False)
    for li, layer in enumerate(layers):
        for p in layer.params:
            g = np.zeros(p.shape, dtype=np.float64)
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                vals = []
                for delta in (step, -step):
                    flat[i] = orig + delta
                    out = inputs[li]
                    for later in layers[li:]:
                        out = later.forward(out, False)
                    vals.append(loss_fn(out))
                flat[i] = orig
                gflat[i] = (vals[0] - vals[1]) / (2 * step)
            grads.append(g)
    return grads
