"""Small float64 tensor kernel: convolution, transposed convolution, ReLU,
dropout, global average pooling and the two base losses.

Activations are plain ``numpy`` arrays in NCHW layout. Learnable parameters
live in :class:`Tensor` objects so optimizers can find their gradients.
Every layer class caches what it needs during ``forward`` and consumes the
cache in ``backward``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    pass


@dataclass(eq=False)
class Tensor:
    """Dense float64 array with a lazily allocated gradient buffer."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, pad: int, output_pad: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + kernel + output_pad


@dataclass(eq=False)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    weight: Tensor | None = None
    bias: Tensor | None = None

    def __post_init__(self):
        self.kernel, self.stride, self.padding = _pair(self.kernel), _pair(self.stride), _pair(self.padding)
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        wshape = (self.out_channels, self.in_channels) + self.kernel
        if self.weight is None:
            self.weight = Tensor(np.zeros(wshape))
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_channels))
        if self.weight.shape != wshape:
            raise ShapeError(f"weight shape {self.weight.shape} != expected {wshape}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.out_channels},)")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        return conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)

    def mirror(self, output_padding=None) -> "DeconvLayer":
        """Transposed layer mapping this layer's output shape back to its input shape.

        ``output_padding`` defaults to ``stride - 1``, which is exact for inputs
        whose size is a multiple of the stride.
        """
        if output_padding is None:
            output_padding = tuple(s - 1 for s in self.stride)
        return DeconvLayer(self.out_channels, self.in_channels, self.kernel, self.stride,
                           self.padding, output_padding)


@dataclass(eq=False)
class DeconvLayer:
    """Transposed convolution. ``weight`` has shape (in, out, kh, kw)."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    output_padding: tuple[int, int] = (0, 0)
    weight: Tensor | None = None
    bias: Tensor | None = None

    def __post_init__(self):
        self.kernel, self.stride = _pair(self.kernel), _pair(self.stride)
        self.padding, self.output_padding = _pair(self.padding), _pair(self.output_padding)
        if any(op >= s for op, s in zip(self.output_padding, self.stride)):
            raise ValueError("output_padding must be smaller than stride")
        wshape = (self.in_channels, self.out_channels) + self.kernel
        if self.weight is None:
            self.weight = Tensor(np.zeros(wshape))
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_channels))
        if self.weight.shape != wshape:
            raise ShapeError(f"weight shape {self.weight.shape} != expected {wshape}")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw) = self.kernel, self.stride
        (ph, pw), (oh, ow) = self.padding, self.output_padding
        return deconv_output_size(h, kh, sh, ph, oh), deconv_output_size(w, kw, sw, pw, ow)


def _check_input(x: np.ndarray, channels: int, what: str):
    if x.ndim != 4:
        raise ShapeError(f"{what}: expected 4-D (n, c, h, w) input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"{what}: input shape {x.shape} has {x.shape[1]} channels, "
                         f"layer expects {channels}")


def _windows(xp: np.ndarray, kernel, stride, out_hw) -> np.ndarray:
    """Strided view (n, c, ho, wo, kh, kw) over an already padded input."""
    (kh, kw), (sh, sw), (ho, wo) = kernel, stride, out_hw
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _scatter(cols: np.ndarray, kernel, stride, buf_shape) -> np.ndarray:
    """Adjoint of ``_windows``: cols (n, ho, wo, c, kh, kw) summed into a buffer."""
    (kh, kw), (sh, sw) = kernel, stride
    n, ho, wo, c = cols.shape[:4]
    buf = np.zeros(buf_shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    return buf


def _pad(x: np.ndarray, padding) -> np.ndarray:
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlation plus bias: (n, in, h, w) -> (n, out, h', w')."""
    _check_input(x, layer.in_channels, "conv_forward")
    ho, wo = layer.output_hw(x.shape[2], x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_forward: input shape {x.shape} too small for kernel "
                         f"{layer.kernel} (weight shape {layer.weight.shape})")
    win = _windows(_pad(x, layer.padding), layer.kernel, layer.stride, (ho, wo))
    out = np.tensordot(win, layer.weight.data, axes=([1, 4, 5], [1, 2, 3]))  # n, ho, wo, out
    out += layer.bias.data
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray, input_grad=True):
    """Return (grad_x, grad_w, grad_b) for ``conv_forward(x, layer)``.

    With ``input_grad=False`` the first element is None.
    """
    _check_input(x, layer.in_channels, "conv_backward")
    ho, wo = layer.output_hw(x.shape[2], x.shape[3])
    expected = (x.shape[0], layer.out_channels, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"conv_backward: grad_out shape {grad_out.shape} != output shape {expected}")
    xp = _pad(x, layer.padding)
    win = _windows(xp, layer.kernel, layer.stride, (ho, wo))
    grad_w = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    if not input_grad:
        return None, grad_w, grad_b
    cols = np.tensordot(grad_out.transpose(0, 2, 3, 1), layer.weight.data, axes=([3], [0]))
    gxp = _scatter(cols, layer.kernel, layer.stride, xp.shape)
    ph, pw = layer.padding
    grad_x = gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def _deconv_geometry(x: np.ndarray, layer: DeconvLayer):
    h, w = x.shape[2:]
    ho, wo = layer.output_hw(h, w)
    (kh, kw), (sh, sw), (oh, ow) = layer.kernel, layer.stride, layer.output_padding
    buf_hw = ((h - 1) * sh + kh + oh, (w - 1) * sw + kw + ow)
    return (ho, wo), buf_hw


def deconv_forward(x: np.ndarray, layer: DeconvLayer) -> np.ndarray:
    """Transposed convolution (the adjoint of the mirrored ``conv_forward``)."""
    _check_input(x, layer.in_channels, "deconv_forward")
    (ho, wo), (bh, bw) = _deconv_geometry(x, layer)
    if ho < 1 or wo < 1:
        raise ShapeError(f"deconv_forward: input shape {x.shape} gives empty output")
    cols = np.tensordot(x.transpose(0, 2, 3, 1), layer.weight.data, axes=([3], [0]))
    buf = _scatter(cols, layer.kernel, layer.stride, (x.shape[0], layer.out_channels, bh, bw))
    ph, pw = layer.padding
    out = buf[:, :, ph : ph + ho, pw : pw + wo]
    out += layer.bias.data[None, :, None, None]
    return np.ascontiguousarray(out)


def deconv_backward(x: np.ndarray, layer: DeconvLayer, grad_out: np.ndarray):
    """Return (grad_x, grad_w, grad_b) for ``deconv_forward(x, layer)``."""
    _check_input(x, layer.in_channels, "deconv_backward")
    (ho, wo), (bh, bw) = _deconv_geometry(x, layer)
    expected = (x.shape[0], layer.out_channels, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"deconv_backward: grad_out shape {grad_out.shape} != output shape {expected}")
    ph, pw = layer.padding
    gbuf = np.zeros((x.shape[0], layer.out_channels, bh, bw), dtype=DTYPE)
    gbuf[:, :, ph : ph + ho, pw : pw + wo] = grad_out
    win = _windows(gbuf, layer.kernel, layer.stride, x.shape[2:])
    grad_x = np.tensordot(win, layer.weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    grad_w = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def dropout_forward(x: np.ndarray, rate: float, rng=None, training: bool = True):
    """Inverted dropout. Returns (output, mask); the mask already carries the 1/(1-rate) scale.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * mask


def gap_forward(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3), keepdims=True)


def gap_backward(x_shape, grad_out: np.ndarray) -> np.ndarray:
    h, w = x_shape[2:]
    return np.broadcast_to(grad_out / (h * w), x_shape).copy()


def log_softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis))


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of (n, k, 1, 1) logits against integer labels."""
    labels = np.asarray(labels, dtype=int)
    n, k = logits.shape[:2]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.reshape(n, k)
    logp = log_softmax(z)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).reshape(logits.shape)


def mse_loss(x: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if x.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {x.shape} and {target.shape} differ")
    diff = x - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- layer modules -----------------------------------------------------------

class Conv:
    def __init__(self, layer: ConvLayer):
        self.layer = layer
        self._x = None

    def forward(self, x, training=False, rng=None):
        self._x = x
        return conv_forward(x, self.layer)

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = conv_backward(self._x, self.layer, grad_out, need_input_grad)
        self.layer.weight.ensure_grad()[...] += gw
        self.layer.bias.ensure_grad()[...] += gb
        return gx

    def params(self):
        yield "weight", self.layer.weight
        yield "bias", self.layer.bias

    def output_hw(self, h, w):
        return self.layer.output_hw(h, w)


class Deconv(Conv):
    def forward(self, x, training=False, rng=None):
        self._x = x
        return deconv_forward(x, self.layer)

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = deconv_backward(self._x, self.layer, grad_out)
        self.layer.weight.ensure_grad()[...] += gw
        self.layer.bias.ensure_grad()[...] += gb
        return gx


class ReLU:
    def forward(self, x, training=False, rng=None):
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out, need_input_grad=True):
        return relu_backward(self._x, grad_out)

    def params(self):
        return iter(())

    def output_hw(self, h, w):
        return h, w


class Dropout:
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        out, self._mask = dropout_forward(x, self.rate, rng, training)
        return out

    def backward(self, grad_out, need_input_grad=True):
        return dropout_backward(self._mask, grad_out)

    def params(self):
        return iter(())

    def output_hw(self, h, w):
        return h, w


class GlobalAvgPool:
    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return gap_forward(x)

    def backward(self, grad_out, need_input_grad=True):
        return gap_backward(self._shape, grad_out)

    def params(self):
        return iter(())

    def output_hw(self, h, w):
        return 1, 1


@dataclass(eq=False)
class Sequential:
    """Ordered, named stack of layer modules."""

    layers: list = field(default_factory=list)  # list of (name, module)

    def __post_init__(self):
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")

    def __getitem__(self, name):
        for n, m in self.layers:
            if n == name:
                return m
        raise KeyError(name)

    def names(self) -> list[str]:
        return [n for n, _ in self.layers]

    def forward(self, x, training=False, rng=None):
        if training:
            rng = np.random.default_rng(rng)
        for _, m in self.layers:
            x = m.forward(x, training, rng)
        return x

    def backward(self, grad, need_input_grad=True):
        last = len(self.layers) - 1
        for i, (_, m) in enumerate(reversed(self.layers)):
            grad = m.backward(grad, need_input_grad or i < last)
        return grad

    def named_params(self) -> Iterator[tuple[str, Tensor]]:
        for n, m in self.layers:
            for pn, p in m.params():
                yield f"{n}.{pn}", p

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def output_hw(self, h, w):
        for _, m in self.layers:
            h, w = m.output_hw(h, w)
        return h, w

    def truncated(self, upto: str) -> "Sequential":
        """Layers up to and including ``upto``; parameters are shared, not copied."""
        names = self.names()
        return Sequential(self.layers[: names.index(upto) + 1])
