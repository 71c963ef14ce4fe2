"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 for training, float64 for gradient-check
work) and record a tape of vector-Jacobian closures as ops are applied.
``backward`` on a scalar loss walks the tape in reverse topological order and
*accumulates* gradients into every requires_grad ancestor, so shared
parameters referenced from several call sites receive the sum of their
per-site gradients. Gradients are never cleared implicitly; call
``zero_grads`` (or clear ``.grad``) between steps.

Masks are additive: blocked attention cells receive -1e9 before softmax,
which underflows to exactly zero weight after max-subtraction.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

MASK_FILL = -1e9


def _as_float_array(data):
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """N-dimensional real array, optionally participating in the grad tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = _as_float_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; heavy lifting lives in the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def backward(self):
        backward(self)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data, parents, vjp):
    """Build the op result, taping it only when some input needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t, g):
    if g is None:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    # aliasing is safe: gradients are only ever replaced, never mutated in place
    t.grad = g if t.grad is None else t.grad + g


def backward(loss):
    """Reverse-mode pass from a scalar loss; grads accumulate on leaves."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
            if parent.requires_grad:
                _accumulate(parent, pgrad)


def _toposort(root):
    """Iterative post-order over the tape (graphs get deep in training)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b):
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def sub(a, b):
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def mul(a, b):
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), vjp)


def scale(a, c):
    data = a.data * c

    def vjp(g):
        return (g * c,)

    return _make(data, (a,), vjp)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), vjp)


def transpose(a, axes):
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _make(data, (a,), vjp)


def concat(tensors, axis=-1):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def relu(a):
    data = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _make(data, (a,), vjp)


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), vjp)


def tsum(a):
    data = a.data.sum()

    def vjp(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _make(data, (a,), vjp)


def tmean(a):
    n = a.size
    data = a.data.mean()

    def vjp(g):
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype),)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.ndim == 2 and a.ndim > 2:
            # dense-layer case: one flattened GEMM beats batched GEMMs + sum
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), vjp)


def dense(x, w, b=None):
    """Affine map over the last axis: x @ w (+ b)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(a):
    """Numerically stabilized softmax over the last axis."""
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last dimension, got shape {a.shape}")
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), vjp)


def log_softmax_data(logits):
    """Plain-numpy log softmax over the last axis (no tape; decoding helper)."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets, ignore_id):
    """Mean negative log-likelihood over positions whose target != ignore_id."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1)
    valid = tflat != ignore_id
    if np.any((tflat[valid] < 0) | (tflat[valid] >= vocab)):
        raise ShapeError(f"target ids out of range for vocab size {vocab}")
    count = int(valid.sum())
    if count == 0:
        raise ContractError("cross_entropy: every target is ignored")
    m = flat.max(axis=-1, keepdims=True)
    lse = (m + np.log(np.exp(flat - m).sum(axis=-1, keepdims=True))).reshape(-1)
    picked = flat[np.arange(flat.shape[0]), np.where(valid, tflat, 0)]
    data = np.asarray(((lse - picked) * valid).sum() / count, dtype=logits.dtype)

    def vjp(g):
        p = np.exp(flat - m)
        p /= p.sum(axis=-1, keepdims=True)
        rows = np.arange(flat.shape[0])
        p[rows, np.where(valid, tflat, 0)] -= 1.0
        p[~valid] = 0.0
        return ((g * p / count).reshape(logits.shape),)

    return _make(data, (logits,), vjp)


# ---------------------------------------------------------------------------
# layer norm, embeddings, convolution support


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def vjp(g):
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        gl = g * gamma.data
        gx = inv * (
            gl
            - gl.mean(axis=-1, keepdims=True)
            - xhat * (gl * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return _make(data, (x, gamma, beta), vjp)


def embedding(table, ids):
    """Row lookup into a (vocab, channels) table; gradient scatter-adds."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"ids out of range for table with {table.shape[0]} rows")
    data = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(data, (table,), vjp)


def im2col(x, ksize, stride, pad):
    """Unfold (N,C,H,W) into (N, OH*OW, C*ksize*ksize) patch rows."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - ksize) // stride + 1
    ow = (w + 2 * pad - ksize) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, ksize, ksize, oh, ow), dtype=x.dtype)
    for i in range(ksize):
        for j in range(ksize):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    data = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n, oh * ow, c * ksize * ksize)

    def vjp(g):
        gc = g.reshape(n, oh, ow, c, ksize, ksize).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros_like(xp)
        for i in range(ksize):
            for j in range(ksize):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gc[:, :, i, j]
        if pad:
            gxp = gxp[:, :, pad:-pad, pad:-pad]
        return (gxp,)

    return _make(data, (x,), vjp), oh, ow


# ---------------------------------------------------------------------------
# attention


class CausalMask:
    """Boolean attention mask, True = blocked; causal form blocks j > i."""

    def __init__(self, blocked):
        blocked = np.asarray(blocked, dtype=bool)
        if blocked.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {blocked.shape}")
        self.blocked = blocked
        self.bias = np.where(blocked, MASK_FILL, 0.0).astype(np.float32)
        # rows with no visible key get their output forced to zero
        self.row_keep = (~blocked.all(axis=-1, keepdims=True)).astype(np.float32)

    @classmethod
    def causal(cls, lq, lk=None):
        lk = lq if lk is None else lk
        i = np.arange(lq)[:, None]
        j = np.arange(lk)[None, :]
        return cls(j > i)

    @property
    def shape(self):
        return self.blocked.shape


def scaled_dot_attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d) + mask) v.

    Returns (output, weights); `weights` is a plain array kept for heatmap
    export. Fully masked query rows yield a zero output row rather than NaN.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key channels disagree: {q.shape} vs {k.shape}")
    lq, lk = q.shape[-2], k.shape[-2]
    scores = scale(matmul(q, transpose(k, _swap_axes(k.ndim))), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        if mask.shape != (lq, lk):
            raise ShapeError(f"mask shape {mask.shape} does not fit scores ({lq},{lk})")
        scores = add(scores, Tensor(mask.bias))
    weights = softmax(scores)
    if mask is not None and not mask.row_keep.all():
        weights = mul(weights, Tensor(mask.row_keep))
    out = matmul(weights, v)
    return out, weights.data


def _swap_axes(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
