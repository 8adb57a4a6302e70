"""Minimal CNN stack: layers, loss head, optimizer and the network container.

Layers operate on channels-last batches (n, h, w, c) or flat batches (n, d),
all float64. Each layer caches what its own backward pass needs; gradients
land in per-layer ``grads()`` arrays that parallel ``params()``. Nothing
here is GPU-aware or threaded; determinism for a fixed seed is part of the
contract.

Dropout masks come from a counter-based random stream keyed by
(seed, layer id) with the training step as counter, so mask sequences do
not depend on evaluation order or on other layers' randomness.
"""

import numpy as np

from .layer import TensorProjectionLayer

__all__ = [
    "Conv2D",
    "conv2d_reference",
    "AvgPool2D",
    "Dense",
    "ReLU",
    "Flatten",
    "Dropout",
    "TensorProjection",
    "SoftmaxCrossEntropy",
    "softmax_cross_entropy",
    "rmsprop_step",
    "RMSProp",
    "Network",
    "count_params",
]

_DROPOUT_STREAM = 0xD0


class _Layer:
    """Shared no-parameter defaults for layer objects."""

    kind = "?"

    def params(self):
        return []

    def grads(self):
        return []

    def num_params(self):
        return sum(p.size for p in self.params())

    def forward(self, x, train=False, step=0):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def _same_padding(size, kernel, stride):
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


class Conv2D(_Layer):
    """2-d cross-correlation with bias, channels last.

    ``padding`` is "same" (zero-pad so out = ceil(in / stride)) or "valid".
    The forward/backward passes loop only over the kernel footprint and use
    batched matrix products per offset (an implicit im2col);
    :func:`conv2d_reference` is the plain-loop equivalent used to validate
    this fast path.
    """

    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel=(3, 3), stride=(1, 1),
                 padding="same", seed=0):
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.stride = (int(stride[0]), int(stride[1]))
        self.padding = padding
        kh, kw = self.kernel
        fan_in = kh * kw * self.in_channels
        fan_out = kh * kw * self.filters
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        rng = np.random.default_rng(seed)
        self.w = rng.uniform(-limit, limit, size=(kh, kw, self.in_channels, self.filters))
        self.b = np.zeros(self.filters)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def _geometry(self, h, w):
        kh, kw = self.kernel
        sh, sw = self.stride
        if self.padding == "same":
            oh, pt, pb = _same_padding(h, kh, sh)
            ow, pl, pr = _same_padding(w, kw, sw)
        else:
            if h < kh or w < kw:
                raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
            oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
            pt = pb = pl = pr = 0
        return oh, ow, (pt, pb), (pl, pr)

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_channels:
            raise ValueError(f"conv2d expects {self.in_channels} input channels, got {c}")
        oh, ow, _, _ = self._geometry(h, w)
        return (oh, ow, self.filters)

    def forward(self, x, train=False, step=0):
        x = np.asarray(x, dtype=float)
        n, h, w, c = x.shape
        oh, ow, (pt, pb), (pl, pr) = self._geometry(h, w)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        sh, sw = self.stride
        out = np.broadcast_to(self.b, (n, oh, ow, self.filters)).copy()
        for dy in range(self.kernel[0]):
            for dx in range(self.kernel[1]):
                sl = xp[:, dy:dy + (oh - 1) * sh + 1:sh, dx:dx + (ow - 1) * sw + 1:sw, :]
                out += sl @ self.w[dy, dx]
        self._cache = (xp, (h, w), (oh, ow), (pt, pl))
        return out

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xp, (h, w), (oh, ow), (pt, pl) = self._cache
        dy = np.asarray(dy, dtype=float)
        sh, sw = self.stride
        self.db[...] = dy.sum(axis=(0, 1, 2))
        dxp = np.zeros_like(xp)
        for ky in range(self.kernel[0]):
            for kx in range(self.kernel[1]):
                rows = slice(ky, ky + (oh - 1) * sh + 1, sh)
                cols = slice(kx, kx + (ow - 1) * sw + 1, sw)
                sl = xp[:, rows, cols, :]
                self.dw[ky, kx] = np.tensordot(sl, dy, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, rows, cols, :] += dy @ self.w[ky, kx].T
        return dxp[:, pt:pt + h, pl:pl + w, :]


def conv2d_reference(x, w, b, stride=(1, 1), padding="same"):
    """Plain-loop 2-d cross-correlation, the oracle for :class:`Conv2D`.

    Slow by design; only meant for small shapes in tests.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    n, h, wid, _ = x.shape
    kh, kw, _, cout = w.shape
    sh, sw = stride
    if padding == "same":
        oh, pt, _ = _same_padding(h, kh, sh)
        ow, pl, _ = _same_padding(wid, kw, sw)
    else:
        oh, ow = (h - kh) // sh + 1, (wid - kw) // sw + 1
        pt = pl = 0
    out = np.zeros((n, oh, ow, cout))
    for i in range(n):
        for oy in range(oh):
            for ox in range(ow):
                acc = b.astype(float).copy()
                for dy in range(kh):
                    for dx in range(kw):
                        iy = oy * sh + dy - pt
                        ix = ox * sw + dx - pl
                        if 0 <= iy < h and 0 <= ix < wid:
                            acc += x[i, iy, ix, :] @ w[dy, dx]
                out[i, oy, ox] = acc
    return out


class AvgPool2D(_Layer):
    """Non-overlapping mean pooling (kernel == stride).

    Spatial dimensions must be divisible by the pool size; there is no
    implicit truncation policy.
    """

    kind = "avgpool"

    def __init__(self, pool=(2, 2)):
        self.pool = (int(pool[0]), int(pool[1]))
        if self.pool[0] < 1 or self.pool[1] < 1:
            raise ValueError(f"pool sizes must be positive, got {self.pool}")
        self._in_shape = None

    def output_shape(self, in_shape):
        h, w, c = in_shape
        ph, pw = self.pool
        if h % ph or w % pw:
            raise ValueError(
                f"avgpool {ph}x{pw} needs divisible spatial dims, got {h}x{w}"
            )
        return (h // ph, w // pw, c)

    def forward(self, x, train=False, step=0):
        x = np.asarray(x, dtype=float)
        n, h, w, c = x.shape
        ph, pw = self.pool
        if h % ph or w % pw:
            raise ValueError(
                f"avgpool {ph}x{pw} needs divisible spatial dims, got {h}x{w}"
            )
        self._in_shape = x.shape
        return x.reshape(n, h // ph, ph, w // pw, pw, c).mean(axis=(2, 4))

    def backward(self, dy):
        if self._in_shape is None:
            raise RuntimeError("backward called before forward")
        ph, pw = self.pool
        dy = np.asarray(dy, dtype=float)
        dx = np.repeat(np.repeat(dy, ph, axis=1), pw, axis=2) / (ph * pw)
        return dx


class Dense(_Layer):
    """Affine map y = x @ W + b on flat batches (n, d)."""

    kind = "dense"

    def __init__(self, in_dim, units, seed=0):
        self.in_dim = int(in_dim)
        self.units = int(units)
        limit = np.sqrt(6.0 / (self.in_dim + self.units))
        rng = np.random.default_rng(seed)
        self.w = rng.uniform(-limit, limit, size=(self.in_dim, self.units))
        self.b = np.zeros(self.units)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def output_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ValueError(f"dense expects input shape ({self.in_dim},), got {in_shape}")
        return (self.units,)

    def forward(self, x, train=False, step=0):
        self._x = np.asarray(x, dtype=float)
        return self._x @ self.w + self.b

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        dy = np.asarray(dy, dtype=float)
        self.dw[...] = self._x.T @ dy
        self.db[...] = dy.sum(axis=0)
        return dy @ self.w.T


class ReLU(_Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, step=0):
        x = np.asarray(x, dtype=float)
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return np.where(self._mask, dy, 0.0)


class Flatten(_Layer):
    """Per-sample column-major flattening (first index fastest), matching
    the vec convention used by the projection layer."""

    kind = "flatten"

    def __init__(self):
        self._shape = None

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    @staticmethod
    def _reversed_axes(ndim):
        return (0,) + tuple(range(ndim - 1, 0, -1))

    def forward(self, x, train=False, step=0):
        x = np.asarray(x, dtype=float)
        self._shape = x.shape
        return x.transpose(self._reversed_axes(x.ndim)).reshape(x.shape[0], -1)

    def backward(self, dy):
        if self._shape is None:
            raise RuntimeError("backward called before forward")
        n = self._shape[0]
        rev = (n,) + tuple(reversed(self._shape[1:]))
        return np.asarray(dy, dtype=float).reshape(rev).transpose(self._reversed_axes(len(rev)))


class Dropout(_Layer):
    """Inverted dropout: units are zeroed with probability p at train time
    and survivors scaled by 1/(1-p); evaluation is the identity.

    The mask for training step t is a pure function of (seed, layer_id, t).
    """

    kind = "dropout"

    def __init__(self, p=0.5, seed=0, layer_id=0):
        p = float(p)
        if not 0.0 <= p < 1.0:
            raise ValueError(f"drop probability must be in [0, 1), got {p}")
        self.p = p
        self.seed = int(seed)
        self.layer_id = int(layer_id)
        self._mask = None

    def output_shape(self, in_shape):
        return in_shape

    def _rng(self, step):
        key = [self.seed, (_DROPOUT_STREAM << 32) | self.layer_id]
        return np.random.Generator(np.random.Philox(counter=[step, 0, 0, 0], key=key))

    def forward(self, x, train=False, step=0):
        x = np.asarray(x, dtype=float)
        if not train or self.p == 0.0:
            self._mask = None
            return x
        keep = self._rng(step).random(x.shape) >= self.p
        self._mask = keep / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return np.asarray(dy, dtype=float)
        return np.asarray(dy, dtype=float) * self._mask


class TensorProjection(_Layer):
    """Network adapter around :class:`tenproj.layer.TensorProjectionLayer`.

    Treats the (h, w, c) sample shape as a 3-order tensor and projects it to
    ``output_dims``; gradients for the enabled modes' W matrices are exposed
    through the standard params/grads interface.
    """

    kind = "tensor_projection"

    def __init__(self, input_dims, output_dims, eps=0.01, enabled=None,
                 jacobian_mode="exact", seed=0):
        self.core = TensorProjectionLayer(
            input_dims, output_dims, eps=eps, enabled=enabled,
            jacobian_mode=jacobian_mode, seed=seed,
        )
        self._dw = {k: np.zeros_like(self.core.w[k]) for k in self.core.enabled_modes}

    def params(self):
        return [self.core.w[k] for k in self.core.enabled_modes]

    def grads(self):
        return [self._dw[k] for k in self.core.enabled_modes]

    def output_shape(self, in_shape):
        if tuple(in_shape) != self.core.input_dims:
            raise ValueError(
                f"tensor projection expects input {self.core.input_dims}, got {tuple(in_shape)}"
            )
        return self.core.output_dims

    def forward(self, x, train=False, step=0):
        return self.core.forward(x)

    def backward(self, dy):
        out = self.core.backward(dy)
        for k in self.core.enabled_modes:
            self._dw[k][...] = out.dw[k]
        return out.dx


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, dL/dlogits); the gradient is (softmax - onehot) / n.
    Stabilized with the log-sum-exp shift.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -float(log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


class SoftmaxCrossEntropy:
    """Classification head pairing softmax with mean cross-entropy."""

    kind = "softmax_ce_head"

    def loss_and_gradient(self, logits, labels):
        return softmax_cross_entropy(logits, labels)

    def num_params(self):
        return 0


def rmsprop_step(param, grad, acc, lr=1e-3, rho=0.9, delta=1e-7):
    """One RMSProp update on a single parameter array, in place:

        acc <- rho * acc + (1 - rho) * grad**2
        param <- param - lr * grad / (sqrt(acc) + delta)
    """
    if param.shape != grad.shape or param.shape != acc.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, acc {acc.shape}"
        )
    acc *= rho
    acc += (1.0 - rho) * grad * grad
    param -= lr * grad / (np.sqrt(acc) + delta)


class RMSProp:
    """RMSProp over a fixed parameter list; accumulators are created on the
    first step and keyed by position."""

    def __init__(self, lr=1e-3, rho=0.9, delta=1e-7):
        self.lr = float(lr)
        self.rho = float(rho)
        self.delta = float(delta)
        self.acc = None

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("params and grads must have equal length")
        if self.acc is None:
            self.acc = [np.zeros_like(p) for p in params]
        if len(self.acc) != len(params):
            raise ValueError("parameter list changed size under the optimizer")
        for p, g, a in zip(params, grads, self.acc):
            rmsprop_step(p, g, a, lr=self.lr, rho=self.rho, delta=self.delta)


class Network:
    """Ordered layer stack with a softmax cross-entropy head.

    ``input_shape`` is the per-sample shape; layer shapes are chained and
    validated at construction. ``layer_shapes[i]`` is the output shape of
    layer i.
    """

    def __init__(self, input_shape, layers, head=None):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        self.head = head if head is not None else SoftmaxCrossEntropy()
        shape = self.input_shape
        self.layer_shapes = []
        for layer in self.layers:
            shape = tuple(layer.output_shape(shape))
            self.layer_shapes.append(shape)
        self.output_shape = shape

    def forward(self, x, train=False, step=0):
        out = np.asarray(x, dtype=float)
        if out.shape[1:] != self.input_shape:
            raise ValueError(
                f"network expects per-sample shape {self.input_shape}, got {out.shape[1:]}"
            )
        for layer in self.layers:
            out = layer.forward(out, train=train, step=step)
        return out

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def loss_and_gradients(self, x, labels, train=False, step=0):
        """Forward + backward; afterwards every layer's grads() is current.
        Returns the scalar loss."""
        logits = self.forward(x, train=train, step=step)
        loss, dlogits = self.head.loss_and_gradient(logits, labels)
        self.backward(dlogits)
        return loss

    def train_step(self, x, labels, optimizer, step):
        loss = self.loss_and_gradients(x, labels, train=True, step=step)
        optimizer.step(self.params(), self.grads())
        return loss

    def evaluate(self, x, labels, batch_size=256):
        """Eval-mode mean loss and accuracy over a dataset, in chunks."""
        x = np.asarray(x, dtype=float)
        labels = np.asarray(labels)
        n = x.shape[0]
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, batch_size):
            xb = x[start:start + batch_size]
            yb = labels[start:start + batch_size]
            logits = self.forward(xb, train=False)
            loss, _ = softmax_cross_entropy(logits, yb)
            loss_sum += loss * len(yb)
            correct += int((np.argmax(logits, axis=1) == yb).sum())
        return loss_sum / n, correct / n

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grads(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def layer_param_counts(self):
        return [layer.num_params() for layer in self.layers]


def count_params(model):
    """Total number of trainable scalars in a network."""
    return int(sum(model.layer_param_counts()))
