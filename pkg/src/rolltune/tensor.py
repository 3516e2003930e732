"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable op records its inputs and a backward closure on the
output tensor; ``backward(loss)`` walks that tape once in reverse
topological order and returns a gradient map keyed by parameter tensor.
Gradients are never accumulated into hidden per-tensor state, so two
independent tapes over the same parameters cannot interfere.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError, ValidationError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional real array, optionally tracked on the autodiff tape.

    ``data`` is float32 or float64; float inputs keep their precision,
    everything else is cast to float32.
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise / linear ops -----------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _from_op(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _from_op(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape))

    return _from_op(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul expects (m,k) @ (k,n); got {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data
    data = a_data @ b_data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return _from_op(data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(orig),)

    return _from_op(data, (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements, returned as a scalar tensor."""
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)
    shape = a.data.shape

    def backward(g):
        return (np.broadcast_to(g, shape).astype(a.data.dtype, copy=False),)

    return _from_op(data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    """Elementwise max(x, slope*x); the subgradient at 0 is 1."""
    if not 0.0 <= slope < 1.0:
        raise ValidationError(f"leaky_relu slope must be in [0, 1), got {slope}")
    dt = a.data.dtype
    # factor is 1 on the non-negative side, slope elsewhere; reused in backward
    factor = (a.data >= 0).astype(dt)
    factor *= dt.type(1.0 - slope)
    factor += dt.type(slope)
    data = a.data * factor

    def backward(g):
        return (g * factor,)

    return _from_op(data, (a,), backward)


# -- structured network ops -------------------------------------------


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW batch with an FCkk kernel stack."""
    if stride < 1:
        raise ValidationError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValidationError(f"conv2d padding must be >= 0, got {padding}")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel; got {x.shape}, {w.shape}")
    n, c, h, wid = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    hp, wp = h + 2 * padding, wid + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    dt = x.data.dtype
    if padding:
        xp = np.zeros((n, c, hp, wp), dtype=dt)
        xp[:, :, padding:padding + h, padding:padding + wid] = x.data
    else:
        xp = x.data
    # (n, c*kh*kw, oh*ow) patch matrix; reused by the backward pass
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=dt)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride,
                                  j:j + stride * ow:stride]
    cols = cols.reshape(n, c * kh * kw, oh * ow)
    wmat = w.data.reshape(f, -1)
    out = np.matmul(wmat, cols).reshape(n, f, oh, ow)

    needs_x_grad = x.requires_grad

    def backward(g):
        gmat = np.ascontiguousarray(g).reshape(n, f, oh * ow)
        if oh * ow >= 64:  # large spatial: batched GEMM beats the tensordot copies
            grad_w = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        else:
            grad_w = np.tensordot(gmat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if not needs_x_grad:
            return None, grad_w
        grad_cols = np.matmul(wmat.T, gmat).reshape(n, c, kh, kw, oh, ow)
        gxp = np.zeros((n, c, hp, wp), dtype=dt)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                    grad_cols[:, :, i, j]
        if padding:
            gxp = gxp[:, :, padding:padding + h, padding:padding + wid]
        return gxp, grad_w

    return _from_op(out, (x, w), backward)


def _bn_axes(x: Tensor) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if x.ndim == 2:
        return (0,), (1, x.shape[1])
    if x.ndim == 4:
        return (0, 2, 3), (1, x.shape[1], 1, 1)
    raise ShapeError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               mode: str = "train", momentum: float = 0.1,
               epsilon: float = 1e-5) -> Tensor:
    """Batch normalization over the channel axis.

    Train mode normalizes by batch statistics and updates the running
    arrays in place (biased variance throughout); eval mode normalizes by
    the running statistics and leaves them untouched.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    axes, bshape = _bn_axes(x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batch_norm gamma/beta must be ({channels},); got {gamma.shape}, {beta.shape}")
    dt = x.data.dtype

    if mode == "train":
        if x.shape[0] < 2:
            raise ValidationError(
                f"batch_norm train mode needs a batch of >= 2, got {x.shape[0]}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= dt.type(1 - momentum)
        running_mean += dt.type(momentum) * mean.astype(running_mean.dtype)
        running_var *= dt.type(1 - momentum)
        running_var += dt.type(momentum) * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(dt, copy=False)
        var = running_var.astype(dt, copy=False)

    inv = 1.0 / np.sqrt(var + dt.type(epsilon))
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    count = x.data.size // channels
    gamma_b = gamma.data.reshape(bshape)
    inv_b = inv.reshape(bshape)
    train = mode == "train"

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma_b
        if train:
            sum_dxhat = dxhat.sum(axis=axes).reshape(bshape)
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            dx = inv_b / dt.type(count) * (
                dt.type(count) * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        else:
            dx = dxhat * inv_b
        return dx, dgamma, dbeta

    return _from_op(out.astype(dt, copy=False), (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of an NCHW batch, producing an (N, C) matrix."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))
    scale = x.data.dtype.type(1.0 / (h * w))

    def backward(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], (n, c, h, w)).astype(
            x.data.dtype, copy=False),)

    return _from_op(data, (x,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a plain array (helper, not on the tape)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy between row-wise softmax of ``logits`` and one-hot targets."""
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if y.shape != logits.shape:
        raise ShapeError(
            f"targets shape {y.shape} does not match logits {logits.shape}")
    n, l = logits.shape
    if l < 2:
        raise ValidationError(f"softmax_cross_entropy needs >= 2 classes, got {l}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ValidationError("each target row must be one-hot")
    dt = logits.data.dtype
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = np.asarray(-(y * logp).sum() / dt.type(n), dtype=dt)
    probs = np.exp(logp)
    y = y.astype(dt, copy=False)

    def backward(g):
        return ((probs - y) * (g / dt.type(n)),)

    return _from_op(loss, (logits,), backward)


# -- reverse pass ------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = {id(root)}
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None
             ) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of a scalar loss.

    Returns a map keyed by tensor identity for every ``requires_grad``
    leaf reached from ``loss``. Tensors listed in ``params`` but absent
    from the tape get a zero gradient.
    """
    if loss.data.shape != ():
        raise ContractError(
            f"backward expects a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {}
    result: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones((), dtype=loss.data.dtype)
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                result[node] = g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
    if params is not None:
        for t in params:
            if t not in result:
                result[t] = np.zeros_like(t.data)
    return result
