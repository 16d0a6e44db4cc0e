"""Dense float64 tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array and remembers the operation that made it.
Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates ``grad`` on every tensor that requires it.

Only the handful of operations the model needs are provided. Fused kernels
(softmax, layer norm, cross entropy) carry hand-written backward rules.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12
DTYPE = np.float64

_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops graph recording (inference only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad or (
            _GRAD_ENABLED and any(p.requires_grad for p in _parents))
        self.grad: np.ndarray | None = None
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor; scalar tensors default to a unit seed."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swap_last(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=backward)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return Tensor(out, _parents=(a,),
                  _backward=lambda g: a._accumulate(g * p * a.data ** (p - 1)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accumulate(g * out))


def log(a: Tensor, eps: float = EPS) -> Tensor:
    """Natural log with the input clamped below at ``eps``; no gradient through the clamp."""
    clipped = np.maximum(a.data, eps)
    live = a.data >= eps

    def backward(g):
        a._accumulate(np.where(live, g / clipped, 0.0))

    return Tensor(np.log(clipped), _parents=(a,), _backward=backward)


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return Tensor(np.where(on, a.data, 0.0), _parents=(a,),
                  _backward=lambda g: a._accumulate(g * on))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU (smooth, so finite differences behave)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        a._accumulate(g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner))

    return Tensor(out, _parents=(a,), _backward=backward)


# -- shape ---------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _backward=lambda g: a._accumulate(g.reshape(old)))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), _parents=(a,),
                  _backward=lambda g: a._accumulate(g.transpose(inverse)))


def swap_last(a: Tensor) -> Tensor:
    return Tensor(np.swapaxes(a.data, -1, -2), _parents=(a,),
                  _backward=lambda g: a._accumulate(np.swapaxes(g, -1, -2)))


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradients scatter back with ``np.add.at``."""

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return Tensor(a.data[index], _parents=(a,), _backward=backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)

    return Tensor(table.data[ids], _parents=(table,), _backward=backward)


# -- reductions ----------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, shape))

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes like ``np.matmul``."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward)


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    ``mask`` (broadcastable, True = keep) removes entries before normalizing;
    removed entries come out exactly zero (a fully masked row is uniform).
    """
    a = _lift(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -1e300)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, _parents=(a,), _backward=backward)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax of a matrix (each row sums to one)."""
    return softmax(a, axis=-1)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            x._accumulate(dx)

    return Tensor(out, _parents=(x, gain, bias), _backward=backward)


# -- losses --------------------------------------------------------------------


def cross_entropy(pred_probs, target_ids, weights: np.ndarray | None = None,
                  eps: float = EPS, smoothing: float = 0.0) -> Tensor:
    """Mean negative log-likelihood of ``target_ids`` under row distributions.

    ``pred_probs`` has shape (..., N, V); ``target_ids`` has shape (..., N).
    Without ``weights`` this is -(1/N) sum_i ln p_i[target_i] over all rows.
    With ``weights`` (same shape as ``target_ids``) the per-row terms are
    combined as sum(w * -ln p) -- callers pass normalized weights.
    ``smoothing`` > 0 scores against (1 - s) one-hot + s uniform instead.
    """
    probs = _lift(pred_probs)
    targets = np.asarray(target_ids, dtype=np.int64)
    if probs.shape[:-1] != targets.shape:
        raise DimensionError(f"{targets.shape} targets for distributions of shape {probs.shape}")
    if np.any(targets < 0) or np.any(targets >= probs.shape[-1]):
        raise DimensionError("target id outside the vocabulary")
    picked = np.take_along_axis(probs.data, targets[..., None], axis=-1)[..., 0]
    clipped = np.maximum(picked, eps)
    if weights is None:
        w = np.full(targets.shape, 1.0 / max(targets.size, 1))
    else:
        w = np.asarray(weights, dtype=DTYPE)
    if smoothing:
        q = np.full(probs.shape, smoothing / probs.shape[-1])
        np.put_along_axis(q, targets[..., None],
                          np.take_along_axis(q, targets[..., None], axis=-1) + 1.0 - smoothing,
                          axis=-1)
        safe = np.maximum(probs.data, eps)
        loss = float(-(w[..., None] * q * np.log(safe)).sum())

        def smoothed_backward(g):
            probs._accumulate(np.where(probs.data >= eps, -w[..., None] * q / safe, 0.0) * g)

        return Tensor(loss, _parents=(probs,), _backward=smoothed_backward)
    loss = float(-(w * np.log(clipped)).sum())

    def backward(g):
        gp = np.zeros_like(probs.data)
        local = np.where(picked >= eps, -w / clipped, 0.0) * g
        np.put_along_axis(gp, targets[..., None], local[..., None], axis=-1)
        probs._accumulate(gp)

    return Tensor(loss, _parents=(probs,), _backward=backward)


def kl_divergence(t, x, eps: float = EPS) -> Tensor:
    """sum_i t_i ln(t_i / x_i) along the last axis, summed over any leading axes.

    Zero entries of ``t`` contribute nothing; ``x`` is clamped at ``eps``.
    """
    t, x = _lift(t), _lift(x)
    if t.shape != x.shape:
        raise DimensionError(f"kl_divergence length mismatch: {t.shape} vs {x.shape}")
    return sum_(t * (log(t, eps) - log(x, eps)))


# -- optimisation --------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Entries of ``grads`` may be missing or None (treated as zero gradient).
    ``weight_decay`` shrinks weights directly (decoupled, as in AdamW).
    Returns ``(params, state)``.
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def finite_diff_grad(loss_fn: Callable[[], float], params, step: float = 1e-5):
    """Central-difference gradient of ``loss_fn`` w.r.t. arrays it reads.

    ``params`` is a single array or a mapping of name -> array. Each entry is
    nudged in place by +-``step`` and restored afterwards; ``loss_fn`` takes no
    arguments and must read the arrays directly.
    """
    if isinstance(params, Mapping):
        return {name: finite_diff_grad(loss_fn, arr, step) for name, arr in params.items()}
    arr = params.data if isinstance(params, Tensor) else params
    grad = np.zeros_like(arr, dtype=DTYPE)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():  # probes need values only
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = float(loss_fn())
            flat[i] = keep - step
            down = float(loss_fn())
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * step)
    return grad
