"""Dense float64 arithmetic, a parameter registry and a reverse-mode tape.

Every op in this module accepts plain ``numpy`` arrays or :class:`Var`
objects.  With array inputs the op is evaluated eagerly and an array is
returned; as soon as one input is a ``Var`` the result is recorded on that
variable's :class:`Tape` so that :meth:`Tape.backward` can propagate
gradients back into the :class:`ParamStore` the tape was opened on.

    >>> store = ParamStore()
    >>> _ = store.add("w", np.array([[1.0, 2.0]]))
    >>> tape = Tape(store)
    >>> loss = sum(tape.param("w") * tape.param("w")) * 0.5
    >>> tape.backward(loss)
    >>> store["w"].grad
    array([[1., 2.]])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import DeterminismError, DimensionError, DomainError, NumericError, StateError

DTYPE = np.float64


# ---------------------------------------------------------------------------
# parameter registry
# ---------------------------------------------------------------------------

@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Ordered name -> (value, gradient accumulator, Adam moments) mapping."""

    def __init__(self):
        self._entries: dict[str, Param] = {}
        self.step = 0

    def add(self, name: str, value) -> Param:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        if any(c.isspace() for c in name) or not name:
            raise ValueError(f"parameter names must be non-empty without whitespace: {name!r}")
        value = np.array(value, dtype=DTYPE)
        if value.ndim != 2:
            raise DimensionError(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        _check_finite(value, f"initial value of {name!r}")
        p = Param(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        self._entries[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    def items(self):
        return self._entries.items()

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def n_scalars(self) -> int:
        return int(np.sum([p.value.size for p in self._entries.values()]))

    def zero_grad(self):
        for p in self._entries.values():
            p.grad[...] = 0.0

    def values(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self._entries.items()}

    def load_values(self, arrays: dict[str, np.ndarray], strict: bool = True):
        from .errors import CompatibilityError

        if strict and set(arrays) != set(self._entries):
            missing = sorted(set(self._entries) - set(arrays))
            extra = sorted(set(arrays) - set(self._entries))
            raise CompatibilityError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, arr in arrays.items():
            if name not in self._entries:
                continue
            p = self._entries[name]
            if p.value.shape != arr.shape:
                raise CompatibilityError(
                    f"shape mismatch for {name!r}: model {p.value.shape}, checkpoint {arr.shape}")
            p.value[...] = arr

    def copy(self, prefix: str = "") -> "ParamStore":
        out = ParamStore()
        out.step = self.step
        for name, p in self._entries.items():
            if name.startswith(prefix):
                q = out.add(name, p.value)
                q.grad[...] = p.grad
                q.m[...] = p.m
                q.v[...] = p.v
        return out


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "tape")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var's reflected ops

    def __init__(self, value, parents=(), backward_fn=None, tape=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: getitem(self, idx)


class Tape:
    """Records ops in creation order (a valid topological order)."""

    def __init__(self, store: Optional[ParamStore] = None, check_finite: bool = True):
        self.store = store
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}
        self._targets: dict[str, Param] = {}
        self.check_finite = check_finite

    def param(self, name: str, store: Optional[ParamStore] = None) -> Var:
        store = store if store is not None else self.store
        if store is None:
            raise StateError("tape has no parameter store")
        key = f"{id(store)}:{name}"
        leaf = self.leaves.get(key)
        if leaf is None:
            leaf = Var(store[name].value, (), None, self)
            self.leaves[key] = leaf
            self._targets[key] = store[name]
        return leaf

    def record(self, value, parents, backward_fn) -> Var:
        if self.check_finite:
            _check_finite(value, "op output")
        v = Var(value, parents, backward_fn, self)
        self.nodes.append(v)
        return v

    def backward(self, loss: Var):
        """Accumulate d(loss)/d(param) into the store's gradient buffers."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise StateError("backprop called without a recorded forward pass for this loss")
        if loss.value.size != 1:
            raise DimensionError(f"loss must be a scalar, got shape {loss.value.shape}")
        for n in self.nodes:
            n.grad = None
        for leaf in self.leaves.values():
            leaf.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            node.grad = None  # intermediate gradients are not kept
            for parent, g in zip(node.parents, grads):
                if g is None or not isinstance(parent, Var):
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        for key, leaf in self.leaves.items():
            if leaf.grad is not None:
                if self.check_finite:
                    _check_finite(leaf.grad, "gradient")
                self._targets[key].grad += leaf.grad

    def release(self):
        """Drop recorded nodes so their arrays are freed without waiting for the cycle collector."""
        self.nodes.clear()
        self.leaves.clear()
        self._targets.clear()


def backprop(loss: Var):
    if not isinstance(loss, Var) or loss.tape is None:
        raise StateError("backprop called before any forward pass was recorded")
    loss.tape.backward(loss)


# ---------------------------------------------------------------------------
# op helpers
# ---------------------------------------------------------------------------

def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def _val(x):
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=DTYPE)


def _tape_of(inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise StateError("cannot mix variables from different tapes")
    return tape


def _finish(out, inputs, backward_fn):
    tape = _tape_of(inputs)
    if tape is None:
        _check_finite(out, "op output")
        return out
    return tape.record(out, tuple(inputs), backward_fn)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    return _finish(out, (a, b), lambda g: (unbroadcast(g, av.shape), unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    return _finish(out, (a, b), lambda g: (unbroadcast(g, av.shape), unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    return _finish(out, (a, b),
                   lambda g: (unbroadcast(g * bv, av.shape), unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = _val(a), _val(b)
    if np.any(bv == 0):
        raise NumericError("division by zero")
    out = av / bv
    return _finish(out, (a, b),
                   lambda g: (unbroadcast(g / bv, av.shape), unbroadcast(-g * av / (bv * bv), bv.shape)))


def neg(a):
    return _finish(-_val(a), (a,), lambda g: (-g,))


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    """Matrix product with numpy batch broadcasting over leading axes."""
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out = np.matmul(av, bv)

    def backward(g):
        return (unbroadcast(np.matmul(g, _swap(bv)), av.shape),
                unbroadcast(np.matmul(_swap(av), g), bv.shape))

    return _finish(out, (a, b), backward)


def transpose(a):
    av = _val(a)
    return _finish(_swap(av), (a,), lambda g: (_swap(g),))


def reshape(a, shape):
    av = _val(a)
    return _finish(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    av = _val(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape),)

    return _finish(np.asarray(out, dtype=DTYPE), (a,), backward)


def mean(a, axis=None, keepdims=False):
    av = _val(a)
    if axis is None:
        count = av.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([av.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(a):
    av = _val(a)
    mask = av > 0
    return _finish(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    av = _val(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _finish(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    out = np.exp(_val(a))
    return _finish(out, (a,), lambda g: (g * out,))


def log(a):
    av = _val(a)
    if np.any(av <= 0):
        raise NumericError("log of non-positive value")
    return _finish(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    av = _val(a)
    if np.any(av < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(av)
    return _finish(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a):
    av = _val(a)
    return _finish(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def power(a, exponent: float):
    av = _val(a)
    out = av ** exponent
    return _finish(out, (a,), lambda g: (g * exponent * av ** (exponent - 1.0),))


def maximum(a, floor: float):
    """Elementwise ``max(a, floor)`` against a constant floor."""
    av = _val(a)
    mask = av > floor
    return _finish(np.where(mask, av, floor), (a,), lambda g: (g * mask,))


def huber(a, delta: float = 1.0):
    av = _val(a)
    absv = np.abs(av)
    out = np.where(absv <= delta, 0.5 * av * av, delta * (absv - 0.5 * delta))
    return _finish(out, (a,), lambda g: (g * np.clip(av, -delta, delta),))


def row_softmax(m):
    """Softmax along the last axis, stabilised by per-row max subtraction."""
    mv = _val(m)
    shifted = mv - np.max(mv, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _finish(out, (m,), backward)


def concat(parts, axis=-1):
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish(out, tuple(parts), backward)


def stack(parts, axis=0):
    vals = [_val(p) for p in parts]
    out = np.stack(vals, axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _finish(out, tuple(parts), backward)


def getitem(a, idx):
    av = _val(a)

    def backward(g):
        z = np.zeros_like(av)
        np.add.at(z, idx, g)
        return (z,)

    return _finish(np.array(av[idx], dtype=DTYPE), (a,), backward)


def take_along(a, indices, axis=-1):
    """``np.take_along_axis`` with gradient; indices must be unique per slice."""
    av = _val(a)
    indices = np.asarray(indices)
    out = np.take_along_axis(av, indices, axis=axis)

    def backward(g):
        z = np.zeros_like(av)
        np.put_along_axis(z, indices, g, axis=axis)
        return (z,)

    return _finish(out, (a,), backward)


def value(x) -> np.ndarray:
    return _val(x)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradReport:
    rel_errors: dict[str, float]
    abs_errors: dict[str, float]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e <= self.tolerance for e in self.rel_errors.values())

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors.values(), default=0.0)

    def summary(self) -> str:
        lines = [f"{'parameter':<32} {'max rel err':>12} {'max abs err':>12}"]
        for name, rel in self.rel_errors.items():
            lines.append(f"{name:<32} {rel:12.3e} {self.abs_errors[name]:12.3e}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} at tolerance {self.tolerance:g}")
        return "\n".join(lines)


def grad_check(forward_fn: Callable[[Tape], Var], params: ParamStore, epsilon: float = 1e-5,
               tolerance: float = 1e-4, names: Optional[Iterable[str]] = None) -> GradReport:
    """Compare tape gradients with central differences, scalar by scalar.

    ``forward_fn`` receives a fresh :class:`Tape` bound to ``params`` and must
    return the scalar loss.  Gradient accumulators are restored afterwards.
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    names = list(params) if names is None else list(names)

    def evaluate() -> float:
        t = Tape(params)
        out = float(np.asarray(_val(forward_fn(t))).reshape(-1)[0])
        t.release()
        return out

    saved = {n: params[n].grad.copy() for n in params}
    tape = Tape(params)
    loss = forward_fn(tape)
    base = float(_val(loss).reshape(-1)[0])
    if evaluate() != base:
        raise DeterminismError("forward_fn gave different values on two identical evaluations")
    params.zero_grad()
    tape.backward(loss)
    tape.release()
    analytic = {n: params[n].grad.copy() for n in names}
    for n in params:
        params[n].grad[...] = saved[n]

    rel_errors, abs_errors = {}, {}
    for name in names:
        val = params[name].value
        worst_rel = worst_abs = 0.0
        for idx in np.ndindex(val.shape):
            orig = val[idx]
            val[idx] = orig + epsilon
            f_plus = evaluate()
            val[idx] = orig - epsilon
            f_minus = evaluate()
            val[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[name][idx]
            err = abs(a - numeric)
            worst_abs = max(worst_abs, err)
            worst_rel = max(worst_rel, err / max(abs(a), abs(numeric), 1e-8))
        rel_errors[name] = worst_rel
        abs_errors[name] = worst_abs
    return GradReport(rel_errors, abs_errors, tolerance)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

def adam_step(params: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              weight_decay: float = 5e-4, step: Optional[int] = None, eps: float = 1e-8,
              names: Optional[Iterable[str]] = None) -> ParamStore:
    """One Adam update with decoupled weight decay, in place.

    ``step`` is the 1-based bias-correction step; when omitted the store's own
    counter is advanced.
    """
    if lr <= 0:
        raise DomainError("learning rate must be positive")
    if step is None:
        params.step += 1
        step = params.step
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for name in (params if names is None else names):
        p = params[name]
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad * p.grad
        update = (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * p.value
        p.value -= lr * update
    return params


def cosine_lr(base_lr: float, epoch: int, total_epochs: int, floor: float = 1e-6) -> float:
    """Cosine-annealed rate for ``epoch`` in ``[0, total_epochs)``."""
    if total_epochs <= 1:
        return base_lr
    frac = min(max(epoch / (total_epochs - 1), 0.0), 1.0)
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * frac))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
