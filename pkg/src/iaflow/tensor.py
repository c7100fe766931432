"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every operation records one node on the tape owned by its inputs. A fresh
:class:`Tape` is built for each forward pass; :func:`backward` sweeps it in
reverse and writes parameter gradients into the owning :class:`ParamStore`.

Example::

    store = ParamStore()
    store.add("theta", np.array([1.0, -2.0]))
    tape = Tape()
    theta = tape.param(store, "theta")
    loss = reduce_sum(square(theta))
    backward(tape, loss)
    store.grad("theta")   # array([ 2., -4.])
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

UNARY_KINDS = ("sigmoid", "tanh", "elu", "softplus", "exp", "log", "square", "negate", "sqrt")


class Tensor:
    """A value recorded on a tape.

    ``value`` is a float64 ndarray and must not be mutated after creation.
    """

    __slots__ = ("value", "tape", "index", "parents", "backward_fn", "requires_grad")
    # make ``ndarray <op> Tensor`` defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, value, tape: Tape, parents=(), backward_fn=None, requires_grad=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.index = tape._push(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def grad(self):
        """Gradient from the most recent :func:`backward` on this tape, or ``None``."""
        grads = self.tape.grads
        if grads is None or self.index >= len(grads):
            return None
        return grads[self.index]

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, value={self.value!r})"

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
        return negate(self)

    def __getitem__(self, key):
        return index(self, key)


class Tape:
    """Append-only record of the operations of one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.grads: list | None = None
        self._params: dict[tuple[int, str], tuple[ParamStore, Tensor]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, node: Tensor) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def constant(self, value) -> Tensor:
        return Tensor(_as_array(value), self)

    def variable(self, value) -> Tensor:
        """Leaf that receives a gradient but is not bound to a store."""
        return Tensor(_as_array(value), self, requires_grad=True)

    def param(self, store: ParamStore, name: str) -> Tensor:
        """Leaf bound to ``store[name]``; repeated lookups return the same node."""
        key = (id(store), name)
        hit = self._params.get(key)
        if hit is not None:
            return hit[1]
        leaf = Tensor(store[name], self, requires_grad=True)
        self._params[key] = (store, leaf)
        return leaf


class ParamStore:
    """Named parameter values with gradient slots of matching shape."""

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self._values:
            raise ContractError(f"duplicate parameter name {name!r}")
        value = _as_array(value).copy()
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        value = _as_array(value)
        old = self._values[name]
        if value.shape != old.shape:
            raise ShapeError(f"parameter {name!r}: new shape {value.shape} != stored shape {old.shape}")
        self._values[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_grad(self, name: str, value: np.ndarray) -> None:
        self._grads[name] = np.asarray(value, dtype=np.float64).reshape(self._values[name].shape)

    def zero_grad(self) -> None:
        for name, value in self._values.items():
            self._grads[name] = np.zeros_like(value)

    def size(self) -> int:
        return sum(v.size for v in self._values.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._values.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            self[name] = value


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise ContractError("operation needs at least one Tensor input")


def lift(x, tape: Tape) -> Tensor:
    """Return ``x`` as a tensor on ``tape``, wrapping plain values as constants."""
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ContractError("tensors from different tapes cannot be combined")
        return x
    return tape.constant(x)


def _record(value, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = parents[0].tape
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, tape, tuple(parents), backward_fn if needs else None, needs)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- binary elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = lift(a, tape), lift(b, tape)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = lift(a, tape), lift(b, tape)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = lift(a, tape), lift(b, tape)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record(av * bv, (a, b), back)


def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = lift(a, tape), lift(b, tape)
    _broadcast_shape(a, b, "div")
    av, bv = a.value, b.value
    out = av / bv

    def back(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _record(out, (a, b), back)


# --- unary elementwise --------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def ew_unary(kind: str, x) -> Tensor:
    """Apply an elementwise function with its analytic derivative.

    ``elu`` uses alpha = 1 and takes the right derivative (1) at exactly 0.
    """
    if not isinstance(x, Tensor):
        raise ContractError(f"{kind}: expected a Tensor input")
    v = x.value
    if kind == "sigmoid":
        y = _sigmoid(v)
        d = y * (1.0 - y)
    elif kind == "tanh":
        y = np.tanh(v)
        d = 1.0 - y * y
    elif kind == "elu":
        neg = np.expm1(np.minimum(v, 0.0))
        y = np.where(v >= 0, v, neg)
        d = np.where(v >= 0, 1.0, neg + 1.0)
    elif kind == "softplus":
        y = _softplus(v)
        d = _sigmoid(v)
    elif kind == "exp":
        y = np.exp(v)
        d = y
    elif kind == "log":
        if np.any(v <= 0):
            raise DomainError(f"log: non-positive input (min {v.min():.6g})")
        y = np.log(v)
        d = 1.0 / v
    elif kind == "square":
        y = v * v
        d = 2.0 * v
    elif kind == "negate":
        y = -v
        d = None
    elif kind == "sqrt":
        if np.any(v < 0):
            raise DomainError(f"sqrt: negative input (min {v.min():.6g})")
        y = np.sqrt(v)
        d = 0.5 / y
    else:
        raise ContractError(f"unknown unary kind {kind!r}; expected one of {UNARY_KINDS}")
    if d is None:
        return _record(y, (x,), lambda g: (-g,))
    return _record(y, (x,), lambda g: (g * d,))


def sigmoid(x) -> Tensor:
    return ew_unary("sigmoid", x)


def tanh(x) -> Tensor:
    return ew_unary("tanh", x)


def elu(x) -> Tensor:
    return ew_unary("elu", x)


def softplus(x) -> Tensor:
    return ew_unary("softplus", x)


def exp(x) -> Tensor:
    return ew_unary("exp", x)


def log(x) -> Tensor:
    return ew_unary("log", x)


def square(x) -> Tensor:
    return ew_unary("square", x)


def negate(x) -> Tensor:
    return ew_unary("negate", x)


def sqrt(x) -> Tensor:
    return ew_unary("sqrt", x)


def maximum(x: Tensor, floor: float) -> Tensor:
    """``max(x, floor)`` against a constant; gradient passes only where x > floor."""
    keep = x.value > floor
    return _record(np.where(keep, x.value, floor), (x,), lambda g: (g * keep,))


# --- linear algebra -----------------------------------------------------------


def affine(x, W, b, mask=None) -> Tensor:
    """``x @ (W * mask) + b`` for ``x`` of shape (batch, in)."""
    tape = _tape_of(x, W, b)
    x, W, b = lift(x, tape), lift(W, tape), lift(b, tape)
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[0] or b.shape[0] != W.shape[1]:
        raise ShapeError(f"affine: x {x.shape}, W {W.shape}, b {b.shape} do not conform")
    xv = x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != W.shape:
            raise ShapeError(f"affine: mask {mask.shape} does not match W {W.shape}")
        Wv = W.value * mask
    else:
        Wv = W.value

    def back(g):
        gW = xv.T @ g
        if mask is not None:
            gW = gW * mask
        return g @ Wv.T, gW, g.sum(axis=0)

    return _record(xv @ Wv + b.value, (x, W, b), back)


def matvec(A, y) -> Tensor:
    """Row-wise ``A @ y``: A is (D, D) shared or (batch, D, D); y is (batch, D)."""
    tape = _tape_of(A, y)
    A, y = lift(A, tape), lift(y, tape)
    Av, yv = A.value, y.value
    if yv.ndim != 2 or Av.shape[-2:] != (yv.shape[1], yv.shape[1]) or Av.ndim not in (2, 3):
        raise ShapeError(f"matvec: A {Av.shape} and y {yv.shape} do not conform")
    if Av.ndim == 3 and Av.shape[0] != yv.shape[0]:
        raise ShapeError(f"matvec: batch of A {Av.shape} differs from y {yv.shape}")
    if Av.ndim == 2:
        out = yv @ Av.T

        def back(g):
            return g.T @ yv, g @ Av
    else:
        out = np.einsum("bij,bj->bi", Av, yv)

        def back(g):
            return g[:, :, None] * yv[:, None, :], np.einsum("bij,bi->bj", Av, g)

    return _record(out, (A, y), back)


# --- reductions and reshaping -------------------------------------------------


def _check_axis(x: Tensor, axis, op: str):
    if axis is None:
        return None
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def reduce(kind: str, x: Tensor, axis: int | None = None) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {kind!r}")
    axis = _check_axis(x, axis, kind)
    shape = x.shape
    n = x.value.size if axis is None else shape[axis]
    scale = 1.0 if kind == "sum" else 1.0 / n
    out = x.value.sum(axis=axis) * scale

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape).copy(),)

    return _record(np.asarray(out), (x,), back)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    return reduce("sum", x, axis)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    return reduce("mean", x, axis)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis, "logsumexp")
    v = x.value
    m = v.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    w = np.exp(v - m)
    s = w.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)
    soft = w / s
    return _record(out, (x,), lambda g: (np.expand_dims(g, axis) * soft,))


def index(x: Tensor, key) -> Tensor:
    """NumPy-style indexing; gradients scatter-add back (duplicates allowed)."""
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _record(np.asarray(x.value[key]), (x,), back)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    tape = _tape_of(*xs)
    xs = [lift(x, tape) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[x.shape for x in xs]} along axis {axis}") from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _record(out, xs, lambda g: tuple(np.split(g, sizes, axis=axis)))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _record(out, (x,), lambda g: (g.reshape(old),))


# --- reverse sweep ------------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> list:
    """Reverse-mode sweep from a scalar ``loss``.

    Gradients of every store parameter used on ``tape`` are overwritten
    (zero where the loss does not depend on them). Returns the per-node
    gradient list, which is also kept on ``tape.grads``.
    """
    if loss.tape is not tape:
        raise ContractError("loss does not belong to this tape")
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    nodes = tape.nodes
    for i in range(loss.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            j = parent.index
            grads[j] = pg if grads[j] is None else grads[j] + pg
    tape.grads = grads
    for (_, name), (store, leaf) in tape._params.items():
        g = grads[leaf.index]
        store.set_grad(name, np.zeros_like(leaf.value) if g is None else g)
    return grads
