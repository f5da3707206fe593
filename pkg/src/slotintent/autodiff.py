"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The operator set is deliberately small: matmul, add/mul (with numpy
broadcasting), tanh, sigmoid, softmax, logsumexp/sum reductions, concat,
slicing/reshape plumbing, embedding lookup, and a fused cross-entropy.
Everything else in the model is composed from these.  Graphs are built
define-by-run and discarded after ``backward``; a ``grad_check`` utility
compares analytic gradients against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (forward only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff.

    ``grad`` is populated by ``backward`` and has the same shape as
    ``values``.  Gradients on leaves accumulate across repeated backward
    calls; use ``zero_grad`` to reset.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False,
                 parents: tuple = (), backward_fn=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient control ----------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from this scalar.

        Leaf gradients accumulate across calls; intermediate gradients are
        recomputed per call.
        """
        if self.values.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        # Reset non-leaf grads so the sweep starts clean; leaves keep theirs
        # (documented accumulation contract).
        for node in order:
            if node._parents:
                node.grad = None
        self._scatter(np.ones_like(self.values))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def _scatter(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    # -- operator sugar --------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    """Wrap a scalar/array as a constant Tensor; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def _toposort(root: Tensor) -> list:
    """Iterative post-order over parents, leaves first."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _make(values: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(values)
    return Tensor(values, requires_grad=True, parents=parents,
                  backward_fn=backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError:
        raise DimensionError(
            f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        a._scatter(_unbroadcast(g, a.shape))
        b._scatter(_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError:
        raise DimensionError(
            f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        a._scatter(_unbroadcast(g * b.values, a.shape))
        b._scatter(_unbroadcast(g * a.values, b.shape))

    return _make(out, (a, b), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.values)

    def backward(g, out=out):
        x._scatter(g * (1.0 - out * out))

    return _make(out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid_np(x.values)

    def backward(g, out=out):
        x._scatter(g * out * (1.0 - out))

    return _make(out, (x,), backward)


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


# -- matmul ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """np.matmul semantics for operands of ndim >= 2 (batch dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise DimensionError(
            f"matmul requires ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError:
        raise DimensionError(
            f"matmul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        a._scatter(_unbroadcast(np.matmul(g, np.swapaxes(b.values, -1, -2)),
                                a.shape))
        b._scatter(_unbroadcast(np.matmul(np.swapaxes(a.values, -1, -2), g),
                                b.shape))

    return _make(out, (a, b), backward)


# -- reductions ------------------------------------------------------------


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        x._scatter(np.broadcast_to(gg, x.shape))

    return _make(np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        n = x.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(x, axis: int, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) along `axis`, max-shifted for overflow safety."""
    x = as_tensor(x)
    _check_axis(x, axis, "logsumexp")
    m = np.max(x.values, axis=axis, keepdims=True)
    out_k = m + np.log(np.sum(np.exp(x.values - m), axis=axis, keepdims=True))
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def backward(g, out_k=out_k):
        gg = g if keepdims else np.expand_dims(g, axis)
        x._scatter(gg * np.exp(x.values - out_k))

    return _make(out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along `axis`; computed with max subtraction."""
    x = as_tensor(x)
    _check_axis(x, axis, "softmax")
    z = x.values - np.max(x.values, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g, out=out):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        x._scatter(out * (g - dot))

    return _make(out, (x,), backward)


def _check_axis(x: Tensor, axis: int, opname: str) -> None:
    ndim = x.values.ndim
    if ndim == 0 or not (-ndim <= axis < ndim):
        raise DimensionError(f"{opname}: invalid axis {axis} for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DimensionError(f"{opname}: empty axis {axis} for shape {x.shape}")


# -- shape plumbing --------------------------------------------------------


def concat(parts, axis: int = 0) -> Tensor:
    """Concatenate tensors along `axis`; gradient splits back per part."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of an empty list")
    try:
        out = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise DimensionError(f"concat: incompatible shapes {shapes}") from None
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        sl = [slice(None)] * g.ndim
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl[axis] = slice(lo, hi)
            p._scatter(g[tuple(sl)])

    return _make(out, tuple(parts), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.values.reshape(shape)

    def backward(g):
        x._scatter(g.reshape(x.shape))

    return _make(out, (x,), backward)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """x[..., start:stop, ...] along `axis`; gradient zero-pads the rest."""
    x = as_tensor(x)
    sl = [slice(None)] * x.values.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = x.values[sl]

    def backward(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.values)
        x.grad[sl] += g

    return _make(out, (x,), backward)


# -- lookups and losses ------------------------------------------------------


def embedding(table, ids) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...]]; scatter-add gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}")
    out = table.values[ids]

    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.values)
        np.add.at(table.grad, ids.reshape(-1),
                  g.reshape(-1, table.shape[1]))

    return _make(out, (table,), backward)


def cross_entropy(logits, targets) -> Tensor:
    """Per-element negative log-softmax at integer `targets`.

    logits: (..., C); targets: (...) ints.  Returns shape (...).
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(
            f"cross_entropy: targets shape {targets.shape} does not match "
            f"logits shape {logits.shape}")
    z = logits.values - np.max(logits.values, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    probs = np.exp(z - lse)
    picked = np.take_along_axis(z, targets[..., None], axis=-1)
    out = (lse - picked)[..., 0]

    def backward(g, probs=probs):
        gl = probs.copy()
        np.add.at(gl.reshape(-1, gl.shape[-1]),
                  (np.arange(targets.size), targets.reshape(-1)), -1.0)
        logits._scatter(gl * g[..., None])

    return _make(out, (logits,), backward)


# -- finite-difference checking ----------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of an analytic-vs-numeric gradient comparison.

    Relative error per entry is |analytic - numeric| / max(1, |analytic|,
    |numeric|); entries above `tol` land in `failures`.
    """

    max_rel_error: float
    tol: float
    n_checked: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def grad_check(f, x: Tensor, eps: float = 1e-4, tol: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued `f` at `x` with central
    finite differences of step `eps`."""
    probe = Tensor(x.values.copy(), requires_grad=True)
    out = f(probe)
    if out.values.size != 1:
        raise DimensionError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = probe.grad.reshape(-1).copy()

    numeric = np.zeros_like(analytic)
    flat = probe.values.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(probe).values)
            flat[i] = orig - eps
            lo = float(f(probe).values)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    failures = [(int(i), float(analytic[i]), float(numeric[i]), float(rel[i]))
                for i in np.nonzero(rel > tol)[0]]
    max_err = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel_error=max_err, tol=tol,
                           n_checked=int(flat.size), failures=failures)
