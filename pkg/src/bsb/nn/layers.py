"""Layers with explicit forward/backward passes on float64 numpy arrays.

Forward passes return an (output, cache) pair; caches are threaded back
through ``backward`` so layer objects stay read-only during inference and
can be shared across concurrent callers.
"""

import numpy as np


class ShapeError(ValueError):
    """Input/parameter shape inconsistent with the layer that raised it."""


def _check_finite(a, where):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values produced by {where}")


def he_uniform(rng, shape, fan_in):
    """He-uniform draw, the init used for all ReLU-activated weight layers."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer. Subclasses define forward/backward and shape propagation."""

    def params(self):
        """Parameter arrays in a fixed order (possibly empty)."""
        return []

    def set_params(self, arrays):
        own = self.params()
        if len(arrays) != len(own):
            raise ShapeError(f"{self.name}: expected {len(own)} parameter arrays")
        for dst, src in zip(own, arrays):
            if dst.shape != src.shape:
                raise ShapeError(f"{self.name}: parameter shape {src.shape} != {dst.shape}")
            dst[...] = src

    @property
    def name(self):
        return type(self).__name__

    def output_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        """Returns (grad_in, [param_grads...]) matching ``params()`` order."""
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if self.in_features <= 0 or self.out_features <= 0:
            raise ShapeError("Dense: features must be positive")
        if rng is None:
            self.weight = np.zeros((self.in_features, self.out_features))
        else:
            self.weight = he_uniform(rng, (self.in_features, self.out_features), self.in_features)
        self.bias = np.zeros(self.out_features)

    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ShapeError(f"Dense: expected input shape ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train=False, rng=None):
        return x @ self.weight + self.bias, x

    def backward(self, cache, grad_out):
        x = cache
        grad_w = x.T @ grad_out
        grad_b = grad_out.sum(axis=0)
        return grad_out @ self.weight.T, [grad_w, grad_b]


def _conv_windows(x, k, stride, out_h, out_w):
    # Read-only strided view [n, c, oh, ow, k, k] over the padded input.
    n, c, _, _ = x.shape
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (n, c, out_h, out_w, k, k), (sn, sc, stride * sh, stride * sw, sh, sw)
    )


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.pad = int(pad)
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) <= 0 or self.pad < 0:
            raise ShapeError("Conv2d: invalid geometry")
        shape = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        fan_in = self.in_channels * self.kernel * self.kernel
        self.weight = np.zeros(shape) if rng is None else he_uniform(rng, shape, fan_in)
        self.bias = np.zeros(self.out_channels)

    def params(self):
        return [self.weight, self.bias]

    def _out_hw(self, h, w):
        oh = (h + 2 * self.pad - self.kernel) // self.stride + 1
        ow = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if oh <= 0 or ow <= 0 or h + 2 * self.pad < self.kernel or w + 2 * self.pad < self.kernel:
            raise ShapeError(f"Conv2d: kernel {self.kernel} does not fit input {h}x{w} with pad {self.pad}")
        return oh, ow

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"Conv2d: expected ({self.in_channels}, h, w), got {tuple(in_shape)}")
        oh, ow = self._out_hw(in_shape[1], in_shape[2])
        return (self.out_channels, oh, ow)

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(f"Conv2d: got {c} channels, expected {self.in_channels}")
        oh, ow = self._out_hw(h, w)
        if self.pad:
            p = self.pad
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = _conv_windows(x, self.kernel, self.stride, oh, ow)
        # [n*oh*ow, c*k*k] copy; kept in the cache so backward reuses it.
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, -1)
        w_mat = self.weight.reshape(self.out_channels, -1)
        out = cols @ w_mat.T + self.bias
        out = out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)
        return out, (cols, x.shape, (n, oh, ow))

    def backward(self, cache, grad_out):
        cols, padded_shape, (n, oh, ow) = cache
        k, s, p = self.kernel, self.stride, self.pad
        g_mat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, self.out_channels)
        grad_w = (g_mat.T @ cols).reshape(self.weight.shape)
        grad_b = g_mat.sum(axis=0)
        grad_cols = g_mat @ self.weight.reshape(self.out_channels, -1)
        grad_cols = grad_cols.reshape(n, oh, ow, self.in_channels, k, k).transpose(0, 3, 1, 2, 4, 5)
        grad_xp = np.zeros(padded_shape)
        for ki in range(k):
            for kj in range(k):
                grad_xp[:, :, ki : ki + s * oh : s, kj : kj + s * ow : s] += grad_cols[:, :, :, :, ki, kj]
        if p:
            grad_xp = grad_xp[:, :, p:-p, p:-p]
        return grad_xp, [grad_w, grad_b]


class MaxPool(Layer):
    """Non-overlapping k-by-k max pooling; spatial dims must divide by k."""

    def __init__(self, k):
        self.k = int(k)
        if self.k <= 0:
            raise ShapeError("MaxPool: k must be positive")

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool: expected (c, h, w), got {tuple(in_shape)}")
        c, h, w = in_shape
        if h % self.k or w % self.k:
            raise ShapeError(f"MaxPool: {h}x{w} not divisible by {self.k}")
        return (c, h // self.k, w // self.k)

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        k = self.k
        if h % k or w % k:
            raise ShapeError(f"MaxPool: {h}x{w} not divisible by {k}")
        oh, ow = h // k, w // k
        win = x.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        idx = win.argmax(axis=-1)  # first max wins on ties, deterministically
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return out, (idx, (n, c, h, w))

    def backward(self, cache, grad_out):
        idx, (n, c, h, w) = cache
        k = self.k
        oh, ow = h // k, w // k
        grad_win = np.zeros((n, c, oh, ow, k * k))
        np.put_along_axis(grad_win, idx[..., None], grad_out[..., None], axis=-1)
        grad_x = grad_win.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return grad_x, []


class ReLU(Layer):
    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, grad_out):
        return grad_out * cache, []


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), []


class Dropout(Layer):
    """Inverted dropout: surviving activations are scaled by 1/(1-rate)."""

    def __init__(self, rate):
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"Dropout: rate must be in [0, 1), got {rate}")
        self.rate = rate

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("Dropout: train-mode forward needs a random generator")
        keep = rng.random(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        return x * keep * scale, (keep, scale)

    def backward(self, cache, grad_out):
        if cache is None:
            return grad_out, []
        keep, scale = cache
        return grad_out * keep * scale, []


class ResidualBlock(Layer):
    """Identity skip around a stack of inner layers: out = x + inner(x)."""

    def __init__(self, inner):
        self.inner = list(inner)
        if not self.inner:
            raise ShapeError("ResidualBlock: inner layer list is empty")

    def params(self):
        out = []
        for layer in self.inner:
            out.extend(layer.params())
        return out

    def output_shape(self, in_shape):
        shape = tuple(in_shape)
        for layer in self.inner:
            shape = layer.output_shape(shape)
        if shape != tuple(in_shape):
            raise ShapeError(
                f"ResidualBlock: inner stack maps {tuple(in_shape)} to {shape}, identity add impossible"
            )
        return tuple(in_shape)

    def forward(self, x, train=False, rng=None):
        out = x
        caches = []
        for layer in self.inner:
            out, cache = layer.forward(out, train=train, rng=rng)
            caches.append(cache)
        return x + out, caches

    def backward(self, cache, grad_out):
        grads = []
        g = grad_out
        for layer, layer_cache in zip(reversed(self.inner), reversed(cache)):
            g, pg = layer.backward(layer_cache, g)
            grads = pg + grads
        return g + grad_out, grads


class Network:
    """Ordered layer stack mapping [n, *input_shape] batches to class logits."""

    def __init__(self, layers, input_shape, num_classes):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.name}): {e}") from e
        if shape != (self.num_classes,):
            raise ShapeError(f"final layer produces shape {shape}, expected ({self.num_classes},)")

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def has_dropout(self):
        def walk(layers):
            for layer in layers:
                if isinstance(layer, Dropout) and layer.rate > 0:
                    return True
                if isinstance(layer, ResidualBlock) and walk(layer.inner):
                    return True
            return False

        return walk(self.layers)

    def _check_batch(self, x):
        if x.ndim != 1 + len(self.input_shape) or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"batch shape {tuple(x.shape)} incompatible with input shape {self.input_shape}")

    def forward(self, x, train=False, rng=None):
        """Logits [n, num_classes]; eval mode is deterministic."""
        logits, _ = self.forward_tape(x, train=train, rng=rng)
        return logits

    def forward_tape(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        self._check_batch(x)
        tape = []
        out = x
        for i, layer in enumerate(self.layers):
            try:
                out, cache = layer.forward(out, train=train, rng=rng)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.name}): {e}") from e
            tape.append(cache)
        _check_finite(out, "forward pass")
        return out, tape

    def backward(self, tape, grad_logits):
        """Gradients for every parameter, given d(loss)/d(logits)."""
        g = grad_logits
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(tape)):
            g, pg = layer.backward(cache, g)
            grads = pg + grads
        return grads

    def get_weights(self):
        return [p.copy() for p in self.params()]

    def set_weights(self, arrays):
        own = self.params()
        if len(arrays) != len(own):
            raise ShapeError(f"expected {len(own)} parameter arrays, got {len(arrays)}")
        for dst, src in zip(own, arrays):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src
