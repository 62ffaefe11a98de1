"""Minimal reverse-mode automatic differentiation on numpy arrays.

Just enough surface for the sequence denoiser: broadcasting arithmetic,
batched matmul, fused linear/layer-norm/gelu primitives, reshape/transpose,
reductions, softmax and basic slicing. Arrays keep their floating dtype
(float32 for fast desk-scale training, float64 for gradient checks);
evaluation is deterministic, so identical inputs give bit-identical
outputs.
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _as_float_array(data) -> np.ndarray:
    a = np.asarray(data)
    if a.dtype == np.float32:
        return a
    return a.astype(np.float64) if a.dtype != np.float64 else a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to the given shape, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _as_float_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            c = float(other)

            def bwd_s(g, out):
                if self.requires_grad:
                    self._accum(g)

            return _make(self.data + c, (self,), bwd_s)
        other = as_tensor(other)

        def bwd(g, out):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return _make(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, out):
            if self.requires_grad:
                self._accum(-g)

        return _make(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            c = float(other)

            def bwd_s(g, out):
                if self.requires_grad:
                    self._accum(g * c)

            return _make(self.data * c, (self,), bwd_s)
        other = as_tensor(other)

        def bwd(g, out):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return _make(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / float(other))
        other = as_tensor(other)

        def bwd(g, out):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / other.data ** 2,
                                          other.data.shape))

        return _make(self.data / other.data, (self, other), bwd)

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            c = float(other)

            def bwd_s(g, out):
                if self.requires_grad:
                    self._accum(-g * c / self.data ** 2)

            return _make(c / self.data, (self,), bwd_s)
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")

        def bwd(g, out):
            if self.requires_grad:
                self._accum(g * exponent * self.data ** (exponent - 1))

        return _make(self.data ** exponent, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)

        def bwd(g, out):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accum(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accum(_unbroadcast(gb, other.data.shape))

        return _make(self.data @ other.data, (self, other), bwd)

    # ---- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def bwd(g, out):
            if self.requires_grad:
                self._accum(g.reshape(old))

        return _make(self.data.reshape(shape), (self,), bwd)

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))

        def bwd(g, out):
            if self.requires_grad:
                self._accum(g.transpose(inv))

        return _make(self.data.transpose(axes), (self,), bwd)

    def swapaxes(self, a, b):
        axes = list(range(self.data.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    def __getitem__(self, key):
        def bwd(g, out):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[key] = g
                self._accum(full)

        return _make(self.data[key], (self,), bwd)

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bwd(g, out):
            if self.requires_grad:
                gg = g
                if not keepdims and axis is not None:
                    gg = np.expand_dims(gg, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).copy()
                            if np.ndim(gg) else np.full_like(self.data, gg))

        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---- elementwise nonlinearities ---------------------------------------

    def exp(self):
        def bwd(g, out):
            if self.requires_grad:
                self._accum(g * out.data)

        return _make(np.exp(self.data), (self,), bwd)

    def log(self):
        def bwd(g, out):
            if self.requires_grad:
                self._accum(g / self.data)

        return _make(np.log(self.data), (self,), bwd)

    def sqrt(self):
        def bwd(g, out):
            if self.requires_grad:
                self._accum(g * 0.5 / out.data)

        return _make(np.sqrt(self.data), (self,), bwd)

    def tanh(self):
        def bwd(g, out):
            if self.requires_grad:
                self._accum(g * (1.0 - out.data ** 2))

        return _make(np.tanh(self.data), (self,), bwd)

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted, out=shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bwd(g, out):
            if self.requires_grad:
                y = out.data
                inner = (g * y).sum(axis=axis, keepdims=True)
                self._accum(y * (g - inner))

        return _make(out_data, (self,), bwd)

    # ---- backward pass -----------------------------------------------------

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                if node.grad is not None:
                    node._backward(node.grad, node)
                node.grad = None  # free intermediate; leaves keep theirs


def _make(data, parents, backward):
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs,
                  _parents=parents if needs else (),
                  _backward=backward if needs else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g, out):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(piece)

    return _make(out_data, tuple(tensors), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b over the last axis, as one big GEMM."""
    x = as_tensor(x)
    d_in, d_out = w.data.shape
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    out_data = x2 @ w.data + b.data

    def bwd(g, out):
        g2 = g.reshape(-1, d_out)
        if x.requires_grad:
            x._accum((g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            w._accum(x2.T @ g2)
        if b.requires_grad:
            b._accum(g2.sum(axis=0))

    return _make(out_data.reshape(lead + (d_out,)), (x, w, b), bwd)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU as a single fused node."""
    x = as_tensor(x)
    xd = x.data
    th = np.tanh(_GELU_C * (xd + _GELU_A * xd * xd * xd))
    out_data = 0.5 * xd * (1.0 + th)

    def bwd(g, out):
        if x.requires_grad:
            sech2 = 1.0 - th * th
            inner_d = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
            x._accum(g * (0.5 * (1.0 + th) + 0.5 * xd * sech2 * inner_d))

    return _make(out_data, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = as_tensor(x)
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out_data = xn * gain.data + bias.data

    def bwd(g, out):
        if bias.requires_grad:
            bias._accum(g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad:
            gain._accum((g * xn).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gxn = g * gain.data
            term = gxn - gxn.mean(axis=-1, keepdims=True) \
                - xn * (gxn * xn).mean(axis=-1, keepdims=True)
            x._accum(term * inv)

    return _make(out_data, (x, gain, bias), bwd)
