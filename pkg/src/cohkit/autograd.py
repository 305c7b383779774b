"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: row-major numpy storage, an explicit
gradient tape, and exactly the operations the coherence models need
(matrix products, gatewise nonlinearities, attention-style reductions,
loss arithmetic).  Operations are recorded only while a :class:`Tape`
is active, so inference runs without any bookkeeping overhead.

Broadcasting is intentionally restricted: elementwise ops demand equal
shapes, with the single exception of adding a 1-d bias along the last
axis.  Anything else raises :class:`ShapeMismatchError` rather than
silently stretching an operand.
"""

from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "ShapeMismatchError",
    "TapeError",
    "Tensor",
    "Parameter",
    "Node",
    "Tape",
    "active_tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "log",
    "clamp",
    "softmax",
    "concat_last_axis",
    "stack_rows",
    "take_row",
    "pick",
    "transpose",
    "sum_all",
    "mean_all",
    "pointwise",
]


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class TapeError(RuntimeError):
    """backward() was asked to differentiate an invalid target."""


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    """The innermost tape currently recording, or None."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """An n-d float64 value, optionally carrying a gradient.

    ``data`` is always a C-contiguous float64 array; ``values`` exposes
    the flat row-major view of it.  ``grad`` is populated by a backward
    sweep and accumulates across sweeps until reset.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would also promote 0-d scalars to 1-d.
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; all arithmetic routes through the module-level ops.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Parameter:
    """A named trainable tensor with a stable identity.

    The gradient buffer always exists (zeros when untouched), so a
    parameter that never appears on a loss path reports a zero gradient
    rather than None.
    """

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, tensor: Tensor):
        self.name = name
        self.tensor = tensor
        tensor.requires_grad = True
        if tensor.grad is None:
            tensor.zero_grad()

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class Node:
    """One executed operation: its operands, its result, and a closure
    that maps the result's gradient back onto the operands."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one reverse sweep.

    Nodes are appended in execution order, which is already a
    topological order of the computation graph; backward() walks the
    list once in reverse.  A tape is single-threaded by design.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise TapeError("tape stack corrupted: exited a tape that was not innermost")

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> int:
        """Reverse sweep from ``loss``; returns the number of nodes visited.

        Gradients accumulate into ``.grad`` of every tensor produced on
        the tape and of every leaf with ``requires_grad``.  Calling
        backward twice without resetting doubles the stored gradients.
        """
        if loss.tape is not self:
            raise TapeError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise TapeError(f"backward target must be scalar, got shape {loss.shape}")

        # Per-sweep flows keep repeated backward calls additive: stored
        # .grad values are never read as upstream signal.
        flows: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
        visited = 0
        for node in reversed(self.nodes):
            visited += 1
            entry = flows.pop(id(node.output), None)
            if entry is None:
                continue
            out, g = entry
            _finalize_grad(out, g)
            node.backward_fn(g, flows)
        for tensor, g in flows.values():
            if tensor.requires_grad:
                _finalize_grad(tensor, g)
        return visited


def backward(loss: Tensor, tape: Tape | None = None) -> int:
    """Run a reverse sweep for ``loss`` on ``tape`` (default: its own)."""
    target = tape if tape is not None else loss.tape
    if target is None:
        raise TapeError("loss is not attached to any tape")
    return target.backward(loss)


def _finalize_grad(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _wants_flow(t: Tensor) -> bool:
    return t.requires_grad or t.tape is not None


def _add_flow(flows: dict, t: Tensor, contrib: np.ndarray) -> None:
    if not _wants_flow(t):
        return
    entry = flows.get(id(t))
    if entry is None:
        # Own the buffer: identity-gradient ops hand out shared arrays.
        flows[id(t)] = [t, np.array(contrib)]
    else:
        entry[1] += contrib


def _emit(inputs: tuple[Tensor, ...], out_data: np.ndarray, backward_fn) -> Tensor:
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None:
        out.tape = tape
        tape.nodes.append(Node(inputs, out, backward_fn))
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 1-d and 2-d operands."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeMismatchError(f"matmul supports 1-d/2-d operands, got {a.shape} @ {b.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 0 else -1):
        raise ShapeMismatchError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    out_data = np.asarray(ad @ bd)

    def bw(g: np.ndarray, flows: dict) -> None:
        if ad.ndim == 2 and bd.ndim == 2:
            _add_flow(flows, a, g @ bd.T)
            _add_flow(flows, b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _add_flow(flows, a, np.outer(g, bd))
            _add_flow(flows, b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _add_flow(flows, a, bd @ g)
            _add_flow(flows, b, np.outer(ad, g))
        else:
            _add_flow(flows, a, g * bd)
            _add_flow(flows, b, g * ad)

    return _emit((a, b), out_data, bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-d bias along the last axis."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        bias = False
    elif bd.ndim == 1 and ad.ndim >= 1 and ad.shape[-1] == bd.shape[0]:
        bias = True
    else:
        raise ShapeMismatchError(f"add shapes do not conform: {a.shape} + {b.shape}")
    out_data = ad + bd

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, a, g)
        if bias:
            _add_flow(flows, b, g.reshape(-1, bd.shape[0]).sum(axis=0))
        else:
            _add_flow(flows, b, g)

    return _emit((a, b), out_data, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match exactly."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mul shapes do not conform: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    out_data = ad * bd

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, a, g * bd)
        _add_flow(flows, b, g * ad)

    return _emit((a, b), out_data, bw)


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a Python scalar constant."""
    if not isinstance(c, numbers.Real):
        raise TypeError(f"scale expects a real scalar, got {type(c).__name__}")
    c = float(c)
    out_data = x.data * c

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, g * c)

    return _emit((x,), out_data, bw)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, g * (1.0 - out_data * out_data))

    return _emit((x,), out_data, bw)


def sigmoid(x: Tensor) -> Tensor:
    out_data = _stable_sigmoid(x.data)

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, g * out_data * (1.0 - out_data))

    return _emit((x,), out_data, bw)


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def log(x: Tensor) -> Tensor:
    """Natural log; the caller is responsible for a positive domain."""
    out_data = np.log(x.data)

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, g / x.data)

    return _emit((x,), out_data, bw)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where x lies inside."""
    if not lo < hi:
        raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    inside = (x.data >= lo) & (x.data <= hi)
    out_data = np.clip(x.data, lo, hi)

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, g * inside)

    return _emit((x,), out_data, bw)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over a 1-d vector."""
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeMismatchError(f"softmax expects a non-empty 1-d vector, got shape {x.shape}")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    out_data = e / e.sum()

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, out_data * (g - np.dot(g, out_data)))

    return _emit((x,), out_data, bw)


def concat_last_axis(*tensors: Tensor) -> Tensor:
    """Concatenate along the last axis; other axes must agree."""
    if not tensors:
        raise ValueError("concat_last_axis needs at least one operand")
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.ndim != tensors[0].data.ndim or t.data.shape[:-1] != lead:
            raise ShapeMismatchError(
                "concat_last_axis operands disagree on leading axes: "
                + ", ".join(str(t.shape) for t in tensors)
            )
    out_data = np.concatenate([t.data for t in tensors], axis=-1)
    sizes = [t.data.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g: np.ndarray, flows: dict) -> None:
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            _add_flow(flows, t, g[..., start:stop])

    return _emit(tuple(tensors), out_data, bw)


def stack_rows(tensors: list[Tensor]) -> Tensor:
    """Stack 1-d vectors of equal length into a matrix, one per row."""
    if not tensors:
        raise ValueError("stack_rows needs at least one vector")
    width = tensors[0].data.shape
    for t in tensors:
        if t.data.ndim != 1 or t.data.shape != width:
            raise ShapeMismatchError(
                "stack_rows expects equal-length 1-d vectors: "
                + ", ".join(str(t.shape) for t in tensors)
            )
    out_data = np.stack([t.data for t in tensors])

    def bw(g: np.ndarray, flows: dict) -> None:
        for i, t in enumerate(tensors):
            _add_flow(flows, t, g[i])

    return _emit(tuple(tensors), out_data, bw)


def take_row(m: Tensor, i: int) -> Tensor:
    """Select row i of a matrix (embedding-style gather)."""
    if m.data.ndim != 2:
        raise ShapeMismatchError(f"take_row expects a matrix, got shape {m.shape}")
    if not 0 <= i < m.data.shape[0]:
        raise IndexError(f"row {i} outside matrix with {m.data.shape[0]} rows")
    out_data = np.array(m.data[i])

    def bw(g: np.ndarray, flows: dict) -> None:
        z = np.zeros_like(m.data)
        z[i] = g
        _add_flow(flows, m, z)

    return _emit((m,), out_data, bw)


def pick(v: Tensor, i: int) -> Tensor:
    """Select one element of a vector as a scalar tensor."""
    if v.data.ndim != 1:
        raise ShapeMismatchError(f"pick expects a vector, got shape {v.shape}")
    if not 0 <= i < v.data.shape[0]:
        raise IndexError(f"index {i} outside vector of length {v.data.shape[0]}")
    out_data = np.asarray(v.data[i])

    def bw(g: np.ndarray, flows: dict) -> None:
        z = np.zeros_like(v.data)
        z[i] = g
        _add_flow(flows, v, z)

    return _emit((v,), out_data, bw)


def transpose(m: Tensor) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got shape {m.shape}")
    out_data = np.ascontiguousarray(m.data.T)

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, m, g.T)

    return _emit((m,), out_data, bw)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out_data = np.asarray(x.data.sum())

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, np.full(x.data.shape, float(g)))

    return _emit((x,), out_data, bw)


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    n = x.data.size
    out_data = np.asarray(x.data.sum() / n)

    def bw(g: np.ndarray, flows: dict) -> None:
        _add_flow(flows, x, np.full(x.data.shape, float(g) / n))

    return _emit((x,), out_data, bw)


_POINTWISE = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "add": add,
    "mul": mul,
    "scale": scale,
    "concat_last_axis": concat_last_axis,
    "sum": sum_all,
    "mean": mean_all,
}


def pointwise(op: str, *args):
    """Dispatch an elementwise/reduction op by name."""
    fn = _POINTWISE.get(op)
    if fn is None:
        raise ValueError(f"unsupported pointwise op: {op!r}")
    return fn(*args)
