"""N-dimensional float64 tensors with reverse-mode automatic differentiation.

Every model, loss, and regularizer in this package is composed from the
operations defined here, so a single finite-difference checker
(:func:`grad_check`) can exercise the whole system end to end.  Values are
immutable after creation except for the gradient accumulator; the graph is
dynamic, built afresh on every forward pass.

All arithmetic is 64-bit.  ``LOG_ZERO`` is used as the additive identity for
log-space masking instead of a true -inf: it behaves like "impossible" under
logsumexp while keeping every intermediate finite, which keeps backward
passes NaN-free.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .rng import RngStream

LOG_ZERO = -1.0e30

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` over the axes numpy broadcasting added, back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """A float64 array that records the operation which produced it.

    `requires_grad` marks leaves whose gradient is wanted (parameters) and
    is inherited by every value computed from them while grad mode is on.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward: Callable):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        return out

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __float__(self):
        return self.item()

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- backward traversal -------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every tracked ancestor's `.grad`.

        The root must be a scalar.  Repeated calls without zeroing gradients
        accumulate.  Traversal is iterative topological order, so each node's
        local backward runs exactly once per call even on diamond graphs.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = self.data + other.data
        if not _tracking(self, other):
            return Tensor(out)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return Tensor._from_op(out, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out = self.data * other.data
        if not _tracking(self, other):
            return Tensor(out)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._from_op(out, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = as_tensor(other)
        out = self.data - other.data
        if not _tracking(self, other):
            return Tensor(out)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.data.shape))

        return Tensor._from_op(out, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __truediv__(self, other):
        other = as_tensor(other)
        out = self.data / other.data
        if not _tracking(self, other):
            return Tensor(out)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / (other.data * other.data),
                                          other.data.shape))

        return Tensor._from_op(out, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported; use exp/log")
        out = self.data ** exponent
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            self._accum(g * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(out, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
        try:
            out = a @ b
        except ValueError as exc:
            raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}") from exc
        if not _tracking(self, other):
            return Tensor(out)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))

        return Tensor._from_op(out, (self, other), backward)

    # -- elementwise nonlinearities ------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            self._accum(g * out)

        return Tensor._from_op(out, (self,), backward)

    def log(self):
        out = np.log(self.data)
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            self._accum(g / self.data)

        return Tensor._from_op(out, (self,), backward)

    def sigmoid(self):
        x = self.data
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.maximum(x, 0))),
                       np.exp(np.minimum(x, 0)) / (1.0 + np.exp(np.minimum(x, 0))))
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            self._accum(g * out * (1.0 - out))

        return Tensor._from_op(out, (self,), backward)

    def relu(self):
        out = np.maximum(self.data, 0.0)
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            self._accum(g * (self.data > 0))

        return Tensor._from_op(out, (self,), backward)

    def swish(self):
        """x * sigmoid(x)."""
        return self * self.sigmoid()

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)
        if not _tracking(self):
            return Tensor(out)
        shape = self.data.shape

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, shape).copy())

        return Tensor._from_op(out, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        elif isinstance(axis, tuple):
            count = math.prod(self.data.shape[a] for a in axis)
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def logsumexp(self, axis: int, keepdims: bool = False):
        """log(sum(exp(x))) along `axis`, computed with max-subtraction."""
        x = self.data
        m = x.max(axis=axis, keepdims=True)
        out_kd = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
        out = out_kd if keepdims else np.squeeze(out_kd, axis=axis)
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            self._accum(gg * np.exp(x - out_kd))

        return Tensor._from_op(out, (self,), backward)

    # -- normalized outputs ----------------------------------------------------

    def softmax(self, axis: int = -1):
        x = self.data
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        out = e / e.sum(axis=axis, keepdims=True)
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            inner = (g * out).sum(axis=axis, keepdims=True)
            self._accum((g - inner) * out)

        return Tensor._from_op(out, (self,), backward)

    def log_softmax(self, axis: int = -1):
        x = self.data
        m = x.max(axis=axis, keepdims=True)
        shifted = x - m
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - lse
        if not _tracking(self):
            return Tensor(out)

        def backward(g):
            self._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

        return Tensor._from_op(out, (self,), backward)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)
        if not _tracking(self):
            return Tensor(out)
        orig = self.data.shape

        def backward(g):
            self._accum(g.reshape(orig))

        return Tensor._from_op(out, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.data.ndim - 1, -1, -1))
        out = self.data.transpose(axes)
        if not _tracking(self):
            return Tensor(out)
        inverse = tuple(np.argsort(axes))

        def backward(g):
            self._accum(g.transpose(inverse))

        return Tensor._from_op(out, (self,), backward)

    def __getitem__(self, idx):
        out = self.data[idx]
        if not _tracking(self):
            return Tensor(out)
        shape = self.data.shape

        def backward(g):
            full = np.zeros(shape, dtype=np.float64)
            _scatter_add(full, idx, g)
            self._accum(full)

        return Tensor._from_op(out, (self,), backward)


def _tracking(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _scatter_add(target: np.ndarray, idx, g: np.ndarray):
    """target[idx] += g, correct for repeated indices."""
    parts = idx if isinstance(idx, tuple) else (idx,)
    if any(isinstance(p, (np.ndarray, list)) for p in parts):
        np.add.at(target, idx, g)
    else:
        target[idx] += g


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


def full(shape, fill: float) -> Tensor:
    return Tensor(np.full(shape, fill, dtype=np.float64))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    if not _tracking(*tensors):
        return Tensor(out)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor._from_op(out, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    if not _tracking(*tensors):
        return Tensor(out)

    def backward(g):
        slices = np.moveaxis(g, axis, 0)
        for t, gi in zip(tensors, slices):
            if t.requires_grad:
                t._accum(gi)

    return Tensor._from_op(out, tuple(tensors), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Constant rows come out as approximately `bias`: the eps in the variance
    keeps the division finite.
    """
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    gain, bias = as_tensor(gain), as_tensor(bias)
    dim = x.data.shape[-1]
    if gain.data.shape != (dim,) or bias.data.shape != (dim,):
        raise ValueError(
            f"layer_norm gain/bias must have shape ({dim},), got {gain.data.shape} and {bias.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gain.data * xhat + bias.data
    if not _tracking(x, gain, bias):
        return Tensor(out)

    def backward(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, dim).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, dim).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x._accum(term * inv)

    return Tensor._from_op(out, (x, gain, bias), backward)


def _lift_to_batch(x: Tensor):
    if x.data.ndim == 2:
        return x.reshape(1, *x.data.shape), True
    if x.data.ndim == 3:
        return x, False
    raise ValueError(f"conv1d expects a (T, C) or (B, T, C) input, got shape {x.data.shape}")


def conv1d(x: Tensor, weight: Tensor, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over the time axis.

    x: (B, T, C_in) or (T, C_in); weight: (K, C_in, C_out); bias: (C_out,).
    Output length is floor((T + 2*padding - K) / stride) + 1.
    """
    if stride < 1 or weight.data.shape[0] < 1:
        raise ValueError("conv1d needs kernel >= 1 and stride >= 1")
    x3, squeeze = _lift_to_batch(x)
    k, c_in, c_out = weight.data.shape
    b, t, c = x3.data.shape
    if c != c_in:
        raise ValueError(f"conv1d channel mismatch: input has {c}, weight expects {c_in}")
    t_out = (t + 2 * padding - k) // stride + 1
    if t_out <= 0:
        raise ValueError(
            f"conv1d input too short: length {t} with kernel {k}, stride {stride}, padding {padding}")
    xp = np.pad(x3.data, ((0, 0), (padding, padding), (0, 0))) if padding else x3.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]
    # windows: (B, T_out, C_in, K) -> out[b,t,o] = sum_{c,k} win * w[k,c,o]
    out = np.tensordot(windows, weight.data, axes=([3, 2], [0, 1]))
    if bias is not None:
        out = out + bias.data
    parents = [x, weight] + ([bias] if bias is not None else [])
    if not _tracking(*parents):
        res = Tensor(out)
        return res.reshape(t_out, c_out) if squeeze else res

    def backward(g):
        g3 = g.reshape(b, t_out, c_out)
        if bias is not None and bias.requires_grad:
            bias._accum(g3.sum(axis=(0, 1)))
        if weight.requires_grad:
            # dW[k,c,o] = sum_{b,t} windows[b,t,c,k] * g[b,t,o]
            dw = np.tensordot(windows, g3, axes=([0, 1], [0, 1]))  # (C_in, K, C_out)
            weight._accum(dw.transpose(1, 0, 2))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for kk in range(k):
                contrib = g3 @ weight.data[kk].T  # (B, T_out, C_in)
                dxp[:, kk:kk + t_out * stride:stride] += contrib
            dx = dxp[:, padding:padding + t] if padding else dxp
            x._accum(dx.reshape(x.data.shape))

    res = Tensor._from_op(out, tuple(parents), backward)
    return res.reshape(t_out, c_out) if squeeze else res


def depthwise_conv1d(x: Tensor, weight: Tensor, bias=None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Per-channel 1-D convolution: each channel is filtered independently.

    x: (B, T, C) or (T, C); weight: (K, C); bias: (C,).
    """
    if stride < 1 or weight.data.shape[0] < 1:
        raise ValueError("conv1d needs kernel >= 1 and stride >= 1")
    x3, squeeze = _lift_to_batch(x)
    k, c_w = weight.data.shape
    b, t, c = x3.data.shape
    if c != c_w:
        raise ValueError(f"depthwise conv channel mismatch: input has {c}, weight expects {c_w}")
    t_out = (t + 2 * padding - k) // stride + 1
    if t_out <= 0:
        raise ValueError(
            f"conv1d input too short: length {t} with kernel {k}, stride {stride}, padding {padding}")
    xp = np.pad(x3.data, ((0, 0), (padding, padding), (0, 0))) if padding else x3.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]
    # windows: (B, T_out, C, K); out[b,t,c] = sum_k win[b,t,c,k] * w[k,c]
    out = np.einsum("btck,kc->btc", windows, weight.data)
    if bias is not None:
        out = out + bias.data
    parents = [x, weight] + ([bias] if bias is not None else [])
    if not _tracking(*parents):
        res = Tensor(out)
        return res.reshape(t_out, c) if squeeze else res

    def backward(g):
        g3 = g.reshape(b, t_out, c)
        if bias is not None and bias.requires_grad:
            bias._accum(g3.sum(axis=(0, 1)))
        if weight.requires_grad:
            weight._accum(np.einsum("btck,btc->kc", windows, g3))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for kk in range(k):
                dxp[:, kk:kk + t_out * stride:stride] += g3 * weight.data[kk]
            dx = dxp[:, padding:padding + t] if padding else dxp
            x._accum(dx.reshape(x.data.shape))

    res = Tensor._from_op(out, tuple(parents), backward)
    return res.reshape(t_out, c) if squeeze else res


def dropout(x: Tensor, p: float, rng: RngStream, training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) so inference is a no-op."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.uniform(size=x.data.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)


def glu(x: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: split `axis` in half, gate the first half by the second."""
    dim = x.data.shape[axis]
    if dim % 2 != 0:
        raise ValueError(f"glu needs an even dimension, got {dim}")
    half = dim // 2
    sl_a = [slice(None)] * x.data.ndim
    sl_b = [slice(None)] * x.data.ndim
    sl_a[axis] = slice(0, half)
    sl_b[axis] = slice(half, dim)
    return x[tuple(sl_a)] * x[tuple(sl_b)].sigmoid()


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare analytic gradients of `f()` against central differences.

    `f` must be deterministic and return a scalar Tensor.  Returns the max
    over all coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.grad = None
    f().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():  # numeric probes need values, not graphs
                flat[i] = orig + eps
                hi = float(f().data)
                flat[i] = orig - eps
                lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(ana_flat[i] - numeric) / max(1.0, abs(ana_flat[i]), abs(numeric))
            worst = max(worst, err)
    return worst
