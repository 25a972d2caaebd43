"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable primitive lives in the ``OPS`` registry as a pair of
plain numpy functions (forward, backward). ``apply`` runs the forward,
validates the result and records a node on the active :class:`Tape`.
``backward`` walks the tape in reverse creation order, which is already a
topological order of the graph.

The registry is looked up at call time, so swapping an entry (e.g. for
fault injection in the gradient checker) takes effect immediately.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class BackwardError(RuntimeError):
    pass


@dataclass
class OpDef:
    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[[np.ndarray, Any], Sequence[np.ndarray | None]]


OPS: dict[str, OpDef] = {}


def register(name: str, forward, backward) -> None:
    OPS[name] = OpDef(name, forward, backward)


# --------------------------------------------------------------------------
# tape


@dataclass
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    ctx: Any


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False

    def record(self, node: Node) -> None:
        if self.consumed:
            raise BackwardError("cannot record onto a tape that was already backpropagated")
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


_state = threading.local()


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _state.tape = tape
    return tape


def new_tape() -> Tape:
    """Discard whatever is on the thread's tape and start a fresh one."""
    _state.tape = Tape()
    return _state.tape


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


# --------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _wrap(arr: np.ndarray, requires_grad: bool) -> Tensor:
    # skips the defensive copy in Tensor.__init__ for freshly computed outputs
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = requires_grad
    t.grad = None
    t.name = None
    t._tape = None
    return t


def apply(name: str, *inputs, **kwargs) -> Tensor:
    op = OPS[name]
    tensors = tuple(as_tensor(x) for x in inputs)
    # overflow and 0/0 surface as NumericError below rather than numpy warnings
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out, ctx = op.forward(*(t.data for t in tensors), **kwargs)
    out = np.asarray(out, dtype=DTYPE)
    if not np.isfinite(out).all():
        raise NumericError(f"non-finite value produced by op '{name}'")
    needs_grad = grad_enabled() and any(t.requires_grad for t in tensors)
    result = _wrap(out, needs_grad)
    if needs_grad:
        tape = current_tape()
        tape.record(Node(name, tensors, result, ctx))
        result._tape = tape
    return result


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Leaves listed in ``params`` that the loss does not depend on end up with
    a zero gradient rather than ``None``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else []
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        _fill_zero(params)
        return
    if tape.consumed:
        raise BackwardError("backward called twice on the same graph; run a new forward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = OPS[node.op].backward(g, node.ctx)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            gi = unbroadcast(np.asarray(gi, dtype=DTYPE), t.shape)
            if t._tape is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                grads[key] = gi if key not in grads else grads[key] + gi
    tape.consumed = True
    tape.nodes.clear()
    if getattr(_state, "tape", None) is tape:
        _state.tape = Tape()
    _fill_zero(params)


def _fill_zero(params: list[Tensor]) -> None:
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


# --------------------------------------------------------------------------
# primitive definitions


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _matmul_fwd(a, b):
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul does not accept scalars")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return np.matmul(a, b), (a, b)


def _matmul_bwd(g, ctx):
    a, b = ctx
    if b.ndim == 2 and a.ndim >= 2:
        # shared weight matrix: fold the batch axes into one contraction
        ga = g @ b.T
        gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = np.matmul(g2, _swap(b2))
    gb = np.matmul(_swap(a2), g2)
    if a.ndim == 1:
        ga = ga[..., 0, :]
    if b.ndim == 1:
        gb = gb[..., 0]
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def _check_broadcast(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _add_fwd(a, b):
    _check_broadcast("add", a, b)
    return a + b, None


def _add_bwd(g, ctx):
    return g, g


def _sub_fwd(a, b):
    _check_broadcast("sub", a, b)
    return a - b, None


def _sub_bwd(g, ctx):
    return g, -g


def _mul_fwd(a, b):
    _check_broadcast("elementwise_mul", a, b)
    return a * b, (a, b)


def _mul_bwd(g, ctx):
    a, b = ctx
    return g * b, g * a


def _concat_fwd(*arrays, axis=-1):
    ref = arrays[0]
    ax = axis % ref.ndim
    for arr in arrays[1:]:
        if arr.ndim != ref.ndim or any(
            arr.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in arrays]} on axis {axis}")
    sizes = [arr.shape[ax] for arr in arrays]
    return np.concatenate(arrays, axis=ax), (ax, sizes)


def _concat_bwd(g, ctx):
    ax, sizes = ctx
    cuts = np.cumsum(sizes)[:-1]
    return np.split(g, cuts, axis=ax)


def _sigmoid_fwd(x):
    y = expit(x)
    return y, y


def _sigmoid_bwd(g, y):
    return (g * y * (1.0 - y),)


def _tanh_fwd(x):
    y = np.tanh(x)
    return y, y


def _tanh_bwd(g, y):
    return (g * (1.0 - y * y),)


def _relu_fwd(x):
    return np.maximum(x, 0.0), x > 0


def _relu_bwd(g, mask):
    return (g * mask,)


def _leaky_relu_fwd(x, slope=0.2):
    return np.where(x > 0, x, slope * x), (x > 0, slope)


def _leaky_relu_bwd(g, ctx):
    pos, slope = ctx
    return (np.where(pos, g, slope * g),)


def _softmax_fwd(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, (y, axis)


def _softmax_bwd(g, ctx):
    y, axis = ctx
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def _dropout_fwd(x, mask=None):
    return x * mask, mask


def _dropout_bwd(g, mask):
    return (g * mask,)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _sum_fwd(x, axis=None, keepdims=False):
    return x.sum(axis=axis, keepdims=keepdims), (x.shape, _norm_axis(axis, x.ndim), keepdims)


def _sum_bwd(g, ctx):
    shape, axes, keepdims = ctx
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return (np.broadcast_to(g, shape).copy(),)


def _mean_fwd(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return x.mean(axis=axis, keepdims=keepdims), (x.shape, axes, keepdims, count)


def _mean_bwd(g, ctx):
    shape, axes, keepdims, count = ctx
    (full,) = _sum_bwd(g, (shape, axes, keepdims))
    return (full / count,)


def _abs_fwd(x):
    return np.abs(x), np.sign(x)


def _abs_bwd(g, sign):
    # sign(0) == 0 gives the zero subgradient at ties
    return (g * sign,)


def _square_fwd(x):
    return x * x, x


def _square_bwd(g, x):
    return (2.0 * x * g,)


def _log_fwd(x):
    if np.any(x <= 0):
        raise NumericError("non-positive input to op 'log'")
    return np.log(x), x


def _log_bwd(g, x):
    return (g / x,)


def _exp_fwd(x):
    y = np.exp(x)
    return y, y


def _exp_bwd(g, y):
    return (g * y,)


def _clamp_fwd(x, lo=-np.inf, hi=np.inf):
    return np.clip(x, lo, hi), (x >= lo) & (x <= hi)


def _clamp_bwd(g, inside):
    return (g * inside,)


def _reshape_fwd(x, shape=()):
    try:
        return x.reshape(shape), x.shape
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None


def _reshape_bwd(g, shape):
    return (g.reshape(shape),)


def _transpose_fwd(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    return np.transpose(x, axes), axes


def _transpose_bwd(g, axes):
    return (np.transpose(g, np.argsort(axes)),)


def _getitem_fwd(x, index=None):
    return x[index], (x.shape, index)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is None or p is Ellipsis for p in parts)


def _getitem_bwd(g, ctx):
    shape, index = ctx
    out = np.zeros(shape, dtype=DTYPE)
    if _is_basic(index):
        out[index] = g
    else:
        np.add.at(out, index, g)
    return (out,)


def _broadcast_to_fwd(x, shape=()):
    try:
        return np.broadcast_to(x, shape).copy(), x.shape
    except ValueError:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from None


def _broadcast_to_bwd(g, shape):
    return (unbroadcast(g, shape),)


def _embedding_bag_fwd(weight, indices=None, segments=None, counts=None):
    """Mean of ``weight[indices]`` grouped by ``segments`` (one row per bag)."""
    out = np.zeros((len(counts), weight.shape[1]), dtype=DTYPE)
    if len(indices):
        np.add.at(out, segments, weight[indices])
    denom = np.maximum(counts, 1).astype(DTYPE)[:, None]
    return out / denom, (weight.shape, indices, segments, denom)


def _embedding_bag_bwd(g, ctx):
    shape, indices, segments, denom = ctx
    gw = np.zeros(shape, dtype=DTYPE)
    if len(indices):
        np.add.at(gw, indices, (g / denom)[segments])
    return (gw,)


def _lstm_cell_fwd(gates, c_prev):
    """One LSTM step from pre-activations (gate order i, f, g, o).

    Returns ``[h || c]`` so the fused step stays a single-output node.
    """
    d = c_prev.shape[-1]
    if gates.shape[-1] != 4 * d or gates.shape[:-1] != c_prev.shape[:-1]:
        raise ShapeError(f"lstm_cell: gates {gates.shape} incompatible with cell {c_prev.shape}")
    i = expit(gates[..., :d])
    f = expit(gates[..., d : 2 * d])
    g = np.tanh(gates[..., 2 * d : 3 * d])
    o = expit(gates[..., 3 * d :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return np.concatenate([h, c], axis=-1), (i, f, g, o, c_prev, tc)


def _lstm_cell_bwd(grad, ctx):
    i, f, g, o, c_prev, tc = ctx
    d = c_prev.shape[-1]
    gh = grad[..., :d]
    gc = grad[..., d:] + gh * o * (1.0 - tc * tc)
    d_gates = np.concatenate(
        [
            gc * g * i * (1.0 - i),
            gc * c_prev * f * (1.0 - f),
            gc * i * (1.0 - g * g),
            gh * tc * o * (1.0 - o),
        ],
        axis=-1,
    )
    return d_gates, gc * f


register("matmul", _matmul_fwd, _matmul_bwd)
register("add", _add_fwd, _add_bwd)
register("sub", _sub_fwd, _sub_bwd)
register("elementwise_mul", _mul_fwd, _mul_bwd)
register("concat", _concat_fwd, _concat_bwd)
register("sigmoid", _sigmoid_fwd, _sigmoid_bwd)
register("tanh", _tanh_fwd, _tanh_bwd)
register("relu", _relu_fwd, _relu_bwd)
register("leaky_relu", _leaky_relu_fwd, _leaky_relu_bwd)
register("softmax", _softmax_fwd, _softmax_bwd)
register("dropout", _dropout_fwd, _dropout_bwd)
register("mean", _mean_fwd, _mean_bwd)
register("sum", _sum_fwd, _sum_bwd)
register("abs", _abs_fwd, _abs_bwd)
register("square", _square_fwd, _square_bwd)
register("log", _log_fwd, _log_bwd)
register("exp", _exp_fwd, _exp_bwd)
register("clamp", _clamp_fwd, _clamp_bwd)
register("reshape", _reshape_fwd, _reshape_bwd)
register("transpose", _transpose_fwd, _transpose_bwd)
register("getitem", _getitem_fwd, _getitem_bwd)
register("broadcast_to", _broadcast_to_fwd, _broadcast_to_bwd)
register("embedding_bag", _embedding_bag_fwd, _embedding_bag_bwd)
register("lstm_cell", _lstm_cell_fwd, _lstm_cell_bwd)


# --------------------------------------------------------------------------
# public functional API


def matmul(a, b) -> Tensor:
    return apply("matmul", a, b)


def add(a, b) -> Tensor:
    return apply("add", a, b)


def sub(a, b) -> Tensor:
    return apply("sub", a, b)


def mul(a, b) -> Tensor:
    return apply("elementwise_mul", a, b)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def sigmoid(x) -> Tensor:
    return apply("sigmoid", x)


def tanh(x) -> Tensor:
    return apply("tanh", x)


def relu(x) -> Tensor:
    return apply("relu", x)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    return apply("leaky_relu", x, slope=slope)


def softmax(x, axis: int = -1) -> Tensor:
    return apply("softmax", x, axis=axis)


def dropout(x, keep_prob: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/keep_prob, eval is identity."""
    x = as_tensor(x)
    if not training or keep_prob >= 1.0:
        return x
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if rng is None:
        raise ValueError("dropout in training mode needs an RNG")
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    return apply("dropout", x, mask=mask)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    return apply("sum", x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return apply("mean", x, axis=axis, keepdims=keepdims)


def abs_(x) -> Tensor:
    return apply("abs", x)


def square(x) -> Tensor:
    return apply("square", x)


def log(x) -> Tensor:
    return apply("log", x)


def exp(x) -> Tensor:
    return apply("exp", x)


def clamp(x, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    return apply("clamp", x, lo=lo, hi=hi)


def reshape(x, shape) -> Tensor:
    return apply("reshape", x, shape=tuple(shape))


def transpose(x, axes=None) -> Tensor:
    return apply("transpose", x, axes=axes)


def getitem(x, index) -> Tensor:
    return apply("getitem", x, index=index)


def broadcast_to(x, shape) -> Tensor:
    return apply("broadcast_to", x, shape=tuple(shape))


def embedding_bag(weight, indices, segments, counts) -> Tensor:
    return apply(
        "embedding_bag",
        weight,
        indices=np.asarray(indices, dtype=np.int64),
        segments=np.asarray(segments, dtype=np.int64),
        counts=np.asarray(counts, dtype=np.int64),
    )


def lstm_cell(gates, c_prev) -> Tensor:
    return apply("lstm_cell", gates, c_prev)
