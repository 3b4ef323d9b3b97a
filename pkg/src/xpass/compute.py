"""Dense tensors with a reverse-mode gradient tape, plus the Adam optimizer.

Every differentiable operation used by the model is defined here with a
hand-written backward rule.  Tensors wrap numpy arrays; leading axes are
treated as batch axes wherever an operation is defined on matrices.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float32

# set to False to skip the post-op finiteness scan (benchmarks only)
CHECK_FINITE = True
_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """backward() called on a tensor that is not part of a recorded graph."""


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. np.float64)."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Forward passes inside this block record no tape."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = ""

    # ---- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward, op):
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        live = tuple(p for p in parents if p.requires_grad) if _GRAD_ENABLED else ()
        out.requires_grad = bool(live)
        if live:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # ---- backward ----------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if not self.requires_grad:
            raise TapeError("tensor has no recorded graph (requires_grad is False)")
        if grad is None:
            if self.data.size != 1:
                raise TapeError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ---- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_lift(other, self))

    def __rsub__(self, other):
        return add(_lift(other, self), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


# ---- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _lift(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = np.asarray(b, dtype=a.dtype)
        return Tensor._make(a.data * s, (a,), lambda g: (_unbroadcast(g * s, a.shape),), "scale")
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(out, (a, b), backward, "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return Tensor._make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor._make(out, (a,), lambda g: (g / a.data,), "log")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    """x for x >= 0, alpha*(exp(x)-1) below zero."""
    x = as_tensor(x)
    neg = x.data < 0
    em1 = alpha * np.expm1(np.minimum(x.data, 0))
    out = np.where(neg, em1, x.data)

    def backward(g):
        return (np.where(neg, g * (em1 + alpha), g),)

    return Tensor._make(out, (x,), backward, "elu")


# ---- reductions and shape ops -----------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    out = np.swapaxes(a.data, i, j)
    return Tensor._make(out, (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(out), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(out, tuple(tensors), backward, "concat")


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis -2; ``index`` has shape x.shape[:-2] + (u,)."""
    idx = np.asarray(index)[..., None]
    out = np.take_along_axis(x.data, idx, axis=-2)

    def backward(g):
        full = np.zeros_like(x.data)
        # indices along the row axis are unique per slice, so plain assignment suffices
        np.put_along_axis(full, idx, g, axis=-2)
        return (full,)

    return Tensor._make(out, (x,), backward, "take_rows")


def scatter_rows(base: Tensor, rows: Tensor, index: np.ndarray) -> Tensor:
    """Copy of ``base`` with rows ``index`` (axis -2, unique per slice) replaced."""
    idx = np.asarray(index)[..., None]
    out = base.data.copy()
    np.put_along_axis(out, idx, rows.data, axis=-2)

    def backward(g):
        g_rows = np.take_along_axis(g, idx, axis=-2)
        g_base = g.copy()
        np.put_along_axis(g_base, idx, 0.0, axis=-2)
        return g_base, g_rows

    return Tensor._make(out, (base, rows), backward, "scatter_rows")


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a [..., 1, D] tensor to [..., n, D]."""
    out = np.repeat(x.data, n, axis=-2)
    return Tensor._make(out, (x,), lambda g: (g.sum(axis=-2, keepdims=True),), "broadcast_rows")


# ---- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(Batched) matrix product; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias) with x flattened to 2-D so BLAS sees one large GEMM."""
    lead = x.shape[:-1]
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(out, parents, backward, "linear")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._make(s, (x,), backward, "softmax")


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x) - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit (biased) variance, then affine."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        return gx, ggamma.reshape(gamma.shape), gbeta.reshape(beta.shape)

    return Tensor._make(out, (x, gamma, beta), backward, "layer_norm")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Width-3 cross-correlation over axis -2 with one zero of padding per side.

    x: [..., L, C_in]; kernel: [3, C_in, C_out] -> [..., L, C_out].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or kernel.shape[0] != 3:
        raise DimensionError(f"conv1d: kernel must be [3, C_in, C_out], got {kernel.shape}")
    if x.shape[-1] != kernel.shape[1]:
        raise DimensionError(f"conv1d: input channels {x.shape} do not match kernel {kernel.shape}")
    L = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (0, 0)]
    xp = np.pad(x.data, pad)
    w = kernel.data
    out = xp[..., 0:L, :] @ w[0] + xp[..., 1:L + 1, :] @ w[1] + xp[..., 2:L + 2, :] @ w[2]
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        g2 = g.reshape(-1, g.shape[-1])
        for k in range(3):
            gxp[..., k:k + L, :] += g @ w[k].T
            gw[k] = xp[..., k:k + L, :].reshape(-1, w.shape[1]).T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gxp[..., 1:L + 1, :], gw, gb

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return Tensor._make(out, parents, backward, "conv1d")


def pooled_length(n: int) -> int:
    return (n + 1) // 2


def maxpool1d(x: Tensor) -> Tensor:
    """Max over windows of 3, stride 2, one zero of padding per side, along axis -2.

    Output length is ceil(L/2).  The gradient goes to the first maximal
    position of each window; when a padding cell wins, it is dropped.
    """
    x = as_tensor(x)
    L = x.shape[-2]
    if L < 1:
        raise DimensionError("maxpool1d: empty sequence")
    n_out = pooled_length(L)
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (0, 0)]
    xp = np.pad(x.data, pad)
    # window i spans padded positions 2i, 2i+1, 2i+2
    wins = np.stack([xp[..., k:k + 2 * n_out:2, :] for k in range(3)], axis=0)
    arg = wins.argmax(axis=0)  # first maximal index on ties
    out = np.take_along_axis(wins, arg[None], axis=0)[0]

    def backward(g):
        gxp = np.zeros_like(xp)
        for k in range(3):
            gxp[..., k:k + 2 * n_out:2, :] += np.where(arg == k, g, 0.0)
        return (gxp[..., 1:L + 1, :],)

    return Tensor._make(out, (x,), backward, "maxpool1d")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits).

    logits: [B, K]; labels: [B] integers in [0, K).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    K = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise IndexError(f"cross_entropy: label out of range [0, {K})")
    B = labels.shape[0]
    lsm = log_softmax_np(logits.data)
    rows = np.arange(B)
    loss = -lsm[rows, labels].mean()

    def backward(g):
        p = np.exp(lsm)
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


# ---- optimizer -------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Iterable, **hyper) -> "AdamState":
        params = [p.data if isinstance(p, Tensor) else np.asarray(p) for p in params]
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(params: Sequence, grads: Sequence, state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if not (len(params) == len(grads) == len(state.m)):
        raise DimensionError("adam_step: params, grads and state differ in length")
    for p, g, m in zip(params, grads, state.m):
        pd = p.data if isinstance(p, Tensor) else p
        if pd.shape != np.shape(g) or pd.shape != m.shape:
            raise DimensionError(f"adam_step: shape mismatch {pd.shape} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step: non-finite gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        pd = p.data if isinstance(p, Tensor) else p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        pd -= upd.astype(pd.dtype, copy=False)


class Adam:
    """Adam over a list of leaf tensors; gradients are read from ``.grad``."""

    def __init__(self, params: Sequence[Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.zeros_like(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---- numeric gradient checking ---------------------------------------------------


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - n| scaled by the largest gradient magnitude of the tensor.

    ``floor`` bounds the scale from below so that gradients which are zero
    in exact arithmetic are not judged on their round-off.
    """
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)
