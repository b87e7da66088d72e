"""Dense-tensor engine with reverse-mode differentiation.

A deliberately small op vocabulary: 2-D matmul, elementwise arithmetic with a
single broadcast rule (a trailing 1-D bias against the last axis), reductions,
row gather/slice/concat, and the handful of nonlinearities the encoder stack
needs. Each op records a backward closure; ``backward`` walks the graph once
in reverse construction order. Graphs are single-use.

Float width is whatever the leaf arrays carry (float64 in correctness tests,
float32 in training runs); ops never change dtype.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import GraphError, NumericError, ShapeError

_grad_enabled = True
_check_finite = os.environ.get("HQREC_DEBUG_FINITE", "0").strip().lower() in (
    "1", "true", "yes", "on",
)


def set_finite_checks(on):
    """Enable/disable NaN/Inf detection at op boundaries (debug aid)."""
    global _check_finite
    _check_finite = bool(on)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False
        if _check_finite and not np.all(np.isfinite(self.data)):
            raise NumericError("non-finite values in tensor constructor")

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- gradient plumbing ----------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite_or_raise(arr, opname):
    if _check_finite and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{opname}'")


def _make(data, parents, backward, opname):
    """Wrap an op result; records the closure only when grads are live."""
    _finite_or_raise(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data if data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(data)
    out.grad = None
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product. Gradients: dA = g @ B^T, dB = A^T @ g."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), bwd, "matmul")


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.ascontiguousarray(g.T))

    return _make(np.ascontiguousarray(a.data.T), (a,), bwd, "transpose")


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _make(np.ascontiguousarray(a.data.reshape(shape)), (a,), bwd, "reshape")


# ---------------------------------------------------------------------------
# Elementwise arithmetic (matching shapes; 1-D bias broadcast on last axis)
# ---------------------------------------------------------------------------

def _bias_broadcastable(a, b):
    return b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        return _make(a.data + b.data, (a, b), bwd, "add")
    if _bias_broadcastable(a, b):
        lead = tuple(range(a.ndim - 1))

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=lead) if lead else g)
        return _make(a.data + b.data, (a, b), bwd, "add")
    raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)
        return _make(a.data - b.data, (a, b), bwd, "sub")
    if _bias_broadcastable(a, b):
        lead = tuple(range(a.ndim - 1))

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-(g.sum(axis=lead) if lead else g))
        return _make(a.data - b.data, (a, b), bwd, "sub")
    raise ShapeError(f"sub shapes incompatible: {a.shape} - {b.shape}")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes incompatible: {a.shape} * {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), bwd, "mul")


def mul_scalar(a, s):
    a = _as_tensor(a)
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(a.data * s, (a,), bwd, "mul_scalar")


def add_scalar(a, s):
    a = _as_tensor(a)
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)

    return _make(a.data + s, (a,), bwd, "add_scalar")


# ---------------------------------------------------------------------------
# Shape surgery
# ---------------------------------------------------------------------------

def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of empty list")
    nd = ts[0].ndim
    for t in ts[1:]:
        if t.ndim != nd:
            raise ShapeError(
                f"concat rank mismatch: {ts[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bwd, "concat")


def narrow(a, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    a = _as_tensor(a)
    if not (0 <= axis < a.ndim):
        raise ShapeError(f"narrow axis {axis} out of range for {a.shape}")
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(
            f"narrow range [{start}:{stop}) invalid for axis {axis} of {a.shape}"
        )
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx] += g

    return _make(np.ascontiguousarray(a.data[idx]), (a,), bwd, "narrow")


def take_rows(a, indices):
    """Gather rows by index; backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim < 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ShapeError(f"take_rows indices out of range for {a.shape}")

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

    return _make(np.ascontiguousarray(a.data[idx]), (a,), bwd, "take_rows")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.shape

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, shape).copy())

    return _make(
        np.ascontiguousarray(a.data.sum(axis=axis, keepdims=keepdims)),
        (a,), bwd, "sum",
    )


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]
    if n == 0:
        raise ShapeError("mean over empty axis")
    inv = 1.0 / n

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g * inv, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg * inv, shape).copy())

    return _make(
        np.ascontiguousarray(a.data.mean(axis=axis, keepdims=keepdims)),
        (a,), bwd, "mean",
    )


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

def texp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), bwd, "exp")


def tlog(a):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bwd, "log")


def tsqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), bwd, "sqrt")


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bwd, "relu")


def gelu(a):
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(kernels.gelu_bwd(x, g))

    return _make(kernels.gelu(x), (a,), bwd, "gelu")


def softmax(a, axis=-1):
    """Row-stabilized softmax along the last axis (axis=-1 only)."""
    a = _as_tensor(a)
    if axis not in (-1, a.ndim - 1):
        raise ShapeError("softmax supports the last axis only")
    flat = a.data.reshape(-1, a.shape[-1])
    y = kernels.softmax_rows(flat)

    def bwd(g):
        if a.requires_grad:
            gflat = g.reshape(-1, a.shape[-1])
            a._accumulate(kernels.softmax_rows_bwd(y, gflat).reshape(a.shape))

    return _make(y.reshape(a.shape), (a,), bwd, "softmax")


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match "
            f"feature width {d}"
        )
    flat = a.data.reshape(-1, d)
    xhat, inv_std = kernels.layer_norm_rows(flat, eps)
    out_data = (xhat * gain.data + bias.data).reshape(a.shape)

    def bwd(g):
        gflat = g.reshape(-1, d)
        gx, ggain, gbias = kernels.layer_norm_rows_bwd(gflat, xhat, inv_std, gain.data)
        if a.requires_grad:
            a._accumulate(gx.reshape(a.shape))
        if gain.requires_grad:
            gain._accumulate(ggain)
        if bias.requires_grad:
            bias._accumulate(gbias)

    return _make(np.ascontiguousarray(out_data), (a, gain, bias), bwd, "layer_norm")


def l2_normalize(a, eps=1e-12):
    """Scale rows (last axis) to unit Euclidean norm."""
    a = _as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    safe = np.maximum(norm, eps)
    y = a.data / safe

    def bwd(g):
        if a.requires_grad:
            dot = np.sum(g * y, axis=-1, keepdims=True)
            a._accumulate((g - y * dot) / safe)

    return _make(y, (a,), bwd, "l2_normalize")


# ---------------------------------------------------------------------------
# Backward driver
# ---------------------------------------------------------------------------

def backward(loss):
    """Reverse-sweep from a scalar loss, accumulating into leaf ``.grad``.

    The graph is consumed: closures are dropped as they run and a second
    call on the same loss raises ``GraphError``.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if loss.data.size != 1:
        raise GraphError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward call")
    if loss._backward is None:
        if not loss.requires_grad:
            raise GraphError("loss is detached from any computation graph")
        # a bare leaf: gradient of itself is 1
        loss._accumulate(np.ones_like(loss.data))
        loss._consumed = True
        return

    # iterative topological order over the op nodes
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and id(p) not in visited:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        fn = node._backward
        if fn is not None:
            fn(node.grad if node.grad is not None else np.zeros_like(node.data))
            node._backward = None
            node._parents = ()
            if node is not loss:
                node.grad = None  # free intermediate buffers
    loss._consumed = True
