"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op computes its forward value with numpy and, when any input requires a
gradient, records its parents together with a vector-Jacobian rule.  A single
call to :func:`backward` walks the recorded graph in reverse topological order
and accumulates gradients by addition.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> grads = backward(dot(w, w))
    >>> grads[w]
    array([2., 4.])
"""

from __future__ import annotations

import contextlib
import string
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    A tensor doubles as a graph node: ``parents`` holds the inputs it was
    computed from and ``vjp`` maps an upstream gradient to one gradient per
    parent.  Leaves have no parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op; records the graph edge if needed.

    ``vjp(g)`` must return one entry per parent (``None`` for "no gradient").
    Custom differentiable ops elsewhere in the package are built on this.
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor, params: Iterable[Tensor] | None = None):
    """Reverse pass from a scalar ``loss``.

    Gradients are accumulated (by addition) into ``.grad`` of every reachable
    node.  Returns a dict ``{leaf: grad}``; when ``params`` is given, the dict
    covers exactly those tensors and unreachable ones get zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.vjp is None:
            leaves[node] = leaves[node] + g if node in leaves else g
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            pending[key] = pending[key] + gp if key in pending else gp

    if params is None:
        return leaves
    return {p: leaves.get(p, np.zeros_like(p.data)) for p in params}


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_node(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = special.expit(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = special.expit(x)
    return s * (1.0 + x * (1.0 - s))


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    return make_node(x * special.expit(x), (a,), lambda g: (g * silu_grad(x),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make_node(np.logaddexp(0.0, x), (a,), lambda g: (g * special.expit(x),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    return make_node(
        x * cdf, (a,),
        lambda g: (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),),
    )


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` (a constant boolean array) holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        np.where(cond, a.data, b.data), (a, b),
        lambda g: (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        ),
    )


# ----------------------------------------------------------------- reductions


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) / float(n)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return make_node(np.cumsum(a.data, axis=axis), (a,), vjp)


def dot(a, b) -> Tensor:
    return sum_(mul(a, b))


# ------------------------------------------------------------------- shaping


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, slice, np.integer)) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_node(a.data[idx], (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return make_node(
        np.concatenate([t.data for t in ts], axis=axis), ts,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_node(np.stack([t.data for t in ts], axis=axis), ts, vjp)


def pad_end(a, axis: int, n: int, value: float = 0.0) -> Tensor:
    """Append ``n`` constant entries along ``axis``."""
    a = as_tensor(a)
    if n == 0:
        return a
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, n)
    size = a.shape[axis]
    return make_node(
        np.pad(a.data, widths, constant_values=value), (a,),
        lambda g: (np.take(g, np.arange(size), axis=axis),),
    )


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    """``a @ b``; ``a`` may carry leading batch axes when ``b`` is a matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), vjp)


def _expand_ellipsis(specs: list[str], ndims: list[int], out: str) -> tuple[list[str], str]:
    used = set("".join(specs) + out)
    pool = [c for c in string.ascii_letters if c not in used]
    n_ell = max((nd - len(s.replace("...", "")) for s, nd in zip(specs, ndims) if "..." in s), default=0)
    ell = "".join(pool[:n_ell])
    new = []
    for s, nd in zip(specs, ndims):
        if "..." in s:
            k = nd - len(s.replace("...", ""))
            s = s.replace("...", ell[n_ell - k:] if k else "")
        new.append(s)
    return new, out.replace("...", ell)


def einsum(subscripts: str, *operands) -> Tensor:
    """Differentiable ``np.einsum``; needs an explicit ``->`` and no repeated letters."""
    ops = [as_tensor(o) for o in operands]
    lhs, out_spec = subscripts.replace(" ", "").split("->")
    specs = lhs.split(",")
    if "..." in subscripts:
        specs, out_spec = _expand_ellipsis(specs, [o.ndim for o in ops], out_spec)
    for s in specs:
        if len(set(s)) != len(s):
            raise NotImplementedError(f"repeated index in einsum operand {s!r}")
    datas = [o.data for o in ops]
    spec = ",".join(specs) + "->" + out_spec
    out = np.einsum(spec, *datas, optimize=True)

    def vjp(g):
        grads = []
        for k, (sk, ok) in enumerate(zip(specs, ops)):
            if not ok.requires_grad:
                grads.append(None)
                continue
            others = [specs[j] for j in range(len(ops)) if j != k]
            odata = [datas[j] for j in range(len(ops)) if j != k]
            present = set(out_spec).union(*others) if others else set(out_spec)
            keep = "".join(c for c in sk if c in present)
            gk = np.einsum(",".join([out_spec, *others]) + "->" + keep, g, *odata, optimize=True)
            if keep != sk:
                for ax, c in enumerate(sk):
                    if c not in present:
                        gk = np.expand_dims(gk, ax)
                gk = np.broadcast_to(gk, ok.shape)
            grads.append(gk)
        return tuple(grads)

    return make_node(out, ops, vjp)


# ---------------------------------------------------------- fused layer ops


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5, mask=None) -> Tensor:
    """Normalize over the last axis, then apply ``gain``/``bias``.

    With ``mask`` (same shape as ``x``, 0/1), statistics use only the masked
    entries and unmasked outputs are exactly zero; a row with no masked
    entries maps to zeros.
    """
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ShapeError("layer_norm over an empty axis")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    xd = x.data
    if mask is None:
        m = None
        n = xd.shape[-1]
        mu = xd.mean(axis=-1, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
    else:
        m = np.asarray(mask, dtype=np.float64)
        n = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
        mu = (xd * m).sum(axis=-1, keepdims=True) / n
        xc = (xd - mu) * m
        var = (xc * xc).sum(axis=-1, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def normalize_vjp(g):
        if m is None:
            return inv * (g - g.mean(axis=-1, keepdims=True)
                          - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        g = g * m
        return m * inv * (g - g.sum(axis=-1, keepdims=True) / n
                          - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n)

    y = make_node(xhat, (x,), lambda g: (normalize_vjp(g),))
    if gain is not None:
        y = mul(y, gain)
    if bias is not None:
        y = add(y, bias)
    if m is not None and (gain is not None or bias is not None):
        y = mul(y, m)
    return y


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = special.log_softmax(x.data, axis=axis)

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), vjp)


def cross_entropy(logits, targets) -> Tensor:
    """Mean over rows of ``-log_softmax(logits)[row, target]``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    lp = log_softmax(logits, axis=-1)
    rows = np.arange(len(targets))
    return mean(neg(getitem(lp, (rows, targets))))


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; ids must be in range."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (out,)

    return make_node(table.data[ids], (table,), vjp)


def causal_conv1d(x, kernel, bias=None, start=None) -> Tensor:
    """Depthwise causal convolution with index clamping at the sequence start.

    ``out[t] = bias + sum_m x[max(t - m, s)] * kernel[m]`` for ``x`` of shape
    ``(..., T, C)`` and ``kernel`` of shape ``(K, C)``.  ``s`` is 0, or the
    per-row ``start`` index (first valid position of a left-padded row).
    Rows are read only at positions >= ``s``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim < 2 or kernel.ndim != 2:
        raise ShapeError("causal_conv1d expects x (..., T, C) and kernel (K, C)")
    K, C = kernel.shape
    if K < 1 or x.shape[-1] != C:
        raise ShapeError(f"channel mismatch: x {x.shape}, kernel {kernel.shape}")
    lead = x.shape[:-2]
    T = x.shape[-2]
    xd = x.data.reshape(-1, T, C)
    nb = xd.shape[0]
    s = np.zeros(nb, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64).reshape(-1)
    tpos = np.arange(T)
    src = np.maximum(tpos[None, :], s[:, None])
    xe = xd[np.arange(nb)[:, None], src]
    xp = np.concatenate([np.repeat(xe[:, :1], K - 1, axis=1), xe], axis=1)
    w = kernel.data
    out = np.zeros_like(xd)
    for m in range(K):
        out += xp[:, K - 1 - m:K - 1 - m + T] * w[m]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def vjp(g):
        g = g.reshape(nb, T, C)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for m in range(K):
            sl = slice(K - 1 - m, K - 1 - m + T)
            gxp[:, sl] += g * w[m]
            gw[m] = (g * xp[:, sl]).sum(axis=(0, 1))
        gxe = gxp[:, K - 1:].copy()
        gxe[:, 0] += gxp[:, :K - 1].sum(axis=1)
        acc = np.cumsum(gxe, axis=1)
        gx = np.where((tpos[None, :] > s[:, None])[..., None], gxe, 0.0)
        gx[np.arange(nb), s] = acc[np.arange(nb), s]
        grads = [gx.reshape(lead + (T, C)), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out.reshape(lead + (T, C)), parents, vjp)


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors scaled by ``1 / (1 - rate)``; identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator used for every stochastic op."""
    return np.random.Generator(np.random.Philox(key=seed))
