"""Dense reverse-mode differentiation over numpy arrays.

Every operation that touches a tensor requiring gradients appends a node to
an implicit computation record (parent links).  ``backward`` walks the record
in reverse topological order and accumulates gradients into every ancestor.

Shapes broadcast like numpy; matrix products batch over leading axes.  That
lets a padded stack of independent posts flow through the same operators as
a single post.
"""

from __future__ import annotations

import contextlib
import json
import logging
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "PREFFEND-CKPT-1"
DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes do not conform for an operator."""


class DomainError(ValueError):
    """An operator was evaluated outside its domain (e.g. log of <= 0)."""


class GradCheckError(RuntimeError):
    """Non-finite value met while checking gradients."""


_grad_enabled = True
_kink_log: list | None = None


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording operations."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _record_kinks(store: list):
    global _kink_log
    prev = _kink_log
    _kink_log = store
    try:
        yield store
    finally:
        _kink_log = prev


class Tensor:
    __slots__ = ("values", "grad", "trainable", "name", "_parents", "_backward", "op")

    def __init__(self, values, trainable: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def requires_grad(self) -> bool:
        return self.trainable or self._backward is not None

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.values.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = self.name or self.op or "leaf"
        return f"Tensor({tag}, shape={self.shape})"

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.trainable = False
    out.name = None
    out._parents = ()
    out._backward = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise binary -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    av, bv = a.values, b.values
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    av, bv = a.values, b.values
    if np.any(bv == 0):
        raise DomainError("div: zero divisor")
    out = av / bv

    def back(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _make(out, (a, b), back, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.values * c, (a,), lambda g: (g * c,), "scale")


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent``; non-integer exponents need a > 0."""
    a = as_tensor(a)
    av = a.values
    if exponent != int(exponent) and np.any(av <= 0):
        raise DomainError(f"power: non-positive base with exponent {exponent}")
    out = av ** exponent
    return _make(out, (a,), lambda g: (g * exponent * av ** (exponent - 1),), "power")


# elementwise unary --------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.values > 0
    if _kink_log is not None:
        _kink_log.append(on)
    return _make(np.where(on, a.values, 0.0), (a,), lambda g: (g * on,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    if np.any(av <= 0):
        raise DomainError(f"log: non-positive input (min {av.min():.3g})")
    return _make(np.log(av), (a,), lambda g: (g / av,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.values >= lo) & (a.values <= hi)
    if _kink_log is not None:
        _kink_log.append(inside)
    return _make(np.clip(a.values, lo, hi), (a,), lambda g: (g * inside,), "clip")


# matrix ------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}") from None
    av, bv = a.values, b.values

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.values.ndim < 2:
        raise ShapeError(f"transpose: need at least 2-D, got {a.shape}")
    return _make(np.swapaxes(a.values, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back, "softmax")


def sum(a, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), (a,), back, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: shapes " + ", ".join(str(t.shape) for t in ts) + " do not align") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(ts), back, "concat")


def cosine(a, b, axis: int = -1) -> Tensor:
    """Cosine similarity along ``axis`` with broadcasting.

    A zero-norm operand yields similarity 0 and zero gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "cosine")
    av, bv = a.values, b.values
    na = np.sqrt((av * av).sum(axis=axis, keepdims=True))
    nb = np.sqrt((bv * bv).sum(axis=axis, keepdims=True))
    denom = na * nb
    ok = denom > 0
    safe = np.where(ok, denom, 1.0)
    dot = (av * bv).sum(axis=axis, keepdims=True)
    c = np.where(ok, dot / safe, 0.0)

    def back(g):
        g = np.expand_dims(g, axis) * ok
        sa = np.where(na > 0, na, 1.0)
        sb = np.where(nb > 0, nb, 1.0)
        ga = g * (bv / safe - c * av / (sa * sa))
        gb = g * (av / safe - c * bv / (sb * sb))
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make(np.squeeze(c, axis=axis), (a, b), back, "cosine")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def take(a, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    shape = a.shape
    out = a.values[index]

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _make(np.array(out, dtype=DTYPE), (a,), back, "take")


# backward ----------------------------------------------------------------


def computation_record(root: Tensor) -> list[Tensor]:
    """Recorded operations reachable from ``root`` in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or node._backward is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every ancestor."""
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any trainable tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(computation_record(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if loss._backward is None and loss.trainable:
        loss.grad = np.ones_like(loss.values)


# verification ------------------------------------------------------------


def grad_check(fn: Callable[[Tensor], Tensor], point, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    Coordinates whose +/-epsilon perturbation changes which side of a ReLU or
    clip boundary any intermediate falls on are skipped: the one-sided
    derivatives disagree there.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x0 = np.array(as_tensor(point).values, dtype=DTYPE)
    x = Tensor(x0.copy(), trainable=True)
    center_kinks: list = []
    with _record_kinks(center_kinks):
        out = fn(x)
    if not np.all(np.isfinite(out.values)):
        raise GradCheckError("non-finite function value at the base point")
    backward(out)
    analytic = np.zeros_like(x0) if x.grad is None else x.grad
    if not np.all(np.isfinite(analytic)):
        bad = tuple(int(j) for j in np.unravel_index(np.flatnonzero(~np.isfinite(analytic))[0], x0.shape))
        raise GradCheckError(f"non-finite analytic gradient at coordinate {bad}")

    worst = 0.0
    skipped = 0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        idx = tuple(int(j) for j in np.unravel_index(i, x0.shape))
        vals = []
        kinked = False
        for sign in (1.0, -1.0):
            xp = flat.copy()
            xp[i] += sign * epsilon
            kinks: list = []
            with no_grad(), _record_kinks(kinks):
                v = fn(Tensor(xp.reshape(x0.shape))).values
            if not np.all(np.isfinite(v)):
                raise GradCheckError(f"non-finite function value at coordinate {idx}")
            vals.append(float(v.reshape(-1)[0]))
            if len(kinks) != len(center_kinks) or any(
                not np.array_equal(k, c) for k, c in zip(kinks, center_kinks)
            ):
                kinked = True
        if kinked:
            skipped += 1
            continue
        numeric = (vals[0] - vals[1]) / (2 * epsilon)
        a = float(analytic[idx])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    if skipped:
        logger.debug("grad_check skipped %d kink coordinate(s)", skipped)
    return worst


# checkpoints -------------------------------------------------------------


def save_checkpoint(path, params: dict[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    """Write a text checkpoint: magic line, JSON meta line, one JSON line per parameter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(json.dumps(meta or {}, sort_keys=True) + "\n")
        for name in sorted(params):
            arr = params[name]
            arr = arr.values if isinstance(arr, Tensor) else np.asarray(arr, dtype=DTYPE)
            rec = {"name": name, "shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        meta = json.loads(fh.readline())
        params = {}
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            params[rec["name"]] = np.array(rec["values"], dtype=DTYPE).reshape(rec["shape"])
    return params, meta


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.trainable]
