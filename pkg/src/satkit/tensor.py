"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

All numeric state lives in read-only numpy float64 buffers; a ``Tape``
records every operation applied while it is active, and ``backward`` replays
the records in reverse to populate gradients for the leaf tensors that
requested them.  Tensors are immutable after creation and safe to share for
reads; a tape is single-owner.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, GraphError, NumericalError, ShapeMismatchError


class Tensor:
    """Immutable n-dimensional array of 64-bit reals, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64, order="C")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad=False, name=None):
        # Internal fast path: adopt a freshly computed array without copying.
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64, order="C")
        if not arr.flags.owndata and arr.base is not None:
            arr = arr.copy()
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = bool(requires_grad)
        t.grad = None
        t.name = name
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        """Read-only view of the underlying buffer."""
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Small amount of operator sugar over the functional ops below.
    def __add__(self, other):
        return add_const(self, other) if np.isscalar(other) else add(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return add_const(self, -other) if np.isscalar(other) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, requires_grad=False, name=None):
    """Coerce arrays/sequences to Tensor; existing tensors pass through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad, name=name)


class _Record:
    __slots__ = ("op", "inputs", "output", "ctx")

    def __init__(self, op, inputs, output, ctx):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Tape:
    """Ordered record of operations; inputs of every record precede it."""

    def __init__(self):
        self.records = []
        self._producer = {}  # id(output tensor) -> record index

    def _append(self, record):
        self._producer[id(record.output)] = len(self.records)
        self.records.append(record)

    def produces(self, tensor):
        return id(tensor) in self._producer

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False


_TAPE_STACK: list[Tape] = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op} produced a non-finite value")


def _emit(op, inputs, out_arr, ctx=None):
    _check_finite(out_arr, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_arr, requires_grad=requires)
    tape = active_tape()
    if tape is not None and requires:
        tape._append(_Record(op, inputs, out, ctx))
    return out


def _require_shape(cond, op, a, b=None):
    if not cond:
        other = f" and {b.shape}" if b is not None else ""
        raise ShapeMismatchError(f"{op}: incompatible shapes {a.shape}{other}")


# ---------------------------------------------------------------------------
# Forward operations
# ---------------------------------------------------------------------------

def matmul(a, b, transpose_b=False):
    a, b = as_tensor(a), as_tensor(b)
    _require_shape(a.data.ndim == 2 and b.data.ndim == 2, "matmul", a, b)
    bd = b.data.T if transpose_b else b.data
    _require_shape(a.data.shape[1] == bd.shape[0], "matmul", a, b)
    return _emit("matmul", (a, b), a.data @ bd, ctx=transpose_b)


def bias_add(a, b):
    """Add a length-m bias vector to every row of an n-by-m matrix."""
    a, b = as_tensor(a), as_tensor(b)
    _require_shape(a.data.ndim == 2 and b.data.ndim == 1, "bias_add", a, b)
    _require_shape(a.data.shape[1] == b.data.shape[0], "bias_add", a, b)
    return _emit("bias_add", (a, b), a.data + b.data)


def _elementwise(op, a, b, fn):
    a, b = as_tensor(a), as_tensor(b)
    _require_shape(a.data.shape == b.data.shape, op, a, b)
    return _emit(op, (a, b), fn(a.data, b.data))


def add(a, b):
    return _elementwise("add", a, b, np.add)


def sub(a, b):
    return _elementwise("sub", a, b, np.subtract)


def mul(a, b):
    return _elementwise("mul", a, b, np.multiply)


def scale(a, c):
    a = as_tensor(a)
    return _emit("scale", (a,), a.data * float(c), ctx=float(c))


def add_const(a, c):
    a = as_tensor(a)
    return _emit("add_const", (a,), a.data + float(c))


def relu(a):
    a = as_tensor(a)
    return _emit("relu", (a,), np.maximum(a.data, 0.0))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", (a,), out)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive value")
    return _emit("log", (a,), np.log(a.data))


def tsum(a, axis=None):
    a = as_tensor(a)
    if axis is not None:
        _require_shape(a.data.ndim == 2 and axis in (0, 1), "sum(axis)", a)
    return _emit("sum", (a,), np.sum(a.data, axis=axis), ctx=axis)


def tmean(a, axis=None):
    a = as_tensor(a)
    if axis is not None:
        _require_shape(a.data.ndim == 2 and axis in (0, 1), "mean(axis)", a)
    return _emit("mean", (a,), np.mean(a.data, axis=axis), ctx=axis)


def sq_dist(a, b):
    """Squared l2 norm of (a - b), reduced over all entries."""
    a, b = as_tensor(a), as_tensor(b)
    _require_shape(a.data.shape == b.data.shape, "sq_dist", a, b)
    diff = a.data - b.data
    return _emit("sq_dist", (a, b), np.sum(diff * diff), ctx=diff)


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_shape(a.data.ndim == 1 and a.data.shape == b.data.shape, "dot", a, b)
    return _emit("dot", (a, b), np.dot(a.data, b.data))


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeMismatchError(f"reshape: cannot view {a.shape} as {shape}")
    return _emit("reshape", (a,), a.data.reshape(shape).copy(), ctx=a.data.shape)


def logsumexp(a, axis=None):
    """Overflow-free log of the sum of exponentials, over all entries or per row."""
    a = as_tensor(a)
    if axis is not None:
        _require_shape(a.data.ndim == 2 and axis in (0, 1), "logsumexp(axis)", a)
    m = np.max(a.data, axis=axis, keepdims=axis is not None)
    shifted = np.exp(a.data - (m if axis is not None else m))
    total = np.sum(shifted, axis=axis)
    out = (np.squeeze(m, axis=axis) if axis is not None else m) + np.log(total)
    softmax = shifted / (np.expand_dims(total, axis) if axis is not None else total)
    return _emit("logsumexp", (a,), out, ctx=(axis, softmax))


# ---------------------------------------------------------------------------
# Backward rules: (record, upstream grad, needs) -> per-input grads
# ---------------------------------------------------------------------------

def _bw_matmul(rec, g, needs):
    a, b = rec.inputs
    transpose_b = rec.ctx
    ga = gb = None
    if needs[0]:
        ga = g @ (b.data if transpose_b else b.data.T)
    if needs[1]:
        gb = g.T @ a.data if transpose_b else a.data.T @ g
    return ga, gb


def _bw_bias_add(rec, g, needs):
    return (g if needs[0] else None, g.sum(axis=0) if needs[1] else None)


def _bw_add(rec, g, needs):
    return (g if needs[0] else None, g if needs[1] else None)


def _bw_sub(rec, g, needs):
    return (g if needs[0] else None, -g if needs[1] else None)


def _bw_mul(rec, g, needs):
    a, b = rec.inputs
    return (g * b.data if needs[0] else None, g * a.data if needs[1] else None)


def _bw_scale(rec, g, needs):
    return (g * rec.ctx if needs[0] else None,)


def _bw_add_const(rec, g, needs):
    return (g if needs[0] else None,)


def _bw_relu(rec, g, needs):
    if not needs[0]:
        return (None,)
    return (g * (rec.inputs[0].data > 0.0),)


def _bw_exp(rec, g, needs):
    return (g * rec.output.data if needs[0] else None,)


def _bw_log(rec, g, needs):
    return (g / rec.inputs[0].data if needs[0] else None,)


def _expand_reduced(g, axis, like):
    if axis is None:
        return np.broadcast_to(g, like.shape)
    return np.broadcast_to(np.expand_dims(g, axis), like.shape)


def _bw_sum(rec, g, needs):
    if not needs[0]:
        return (None,)
    return (_expand_reduced(g, rec.ctx, rec.inputs[0].data).copy(),)


def _bw_mean(rec, g, needs):
    if not needs[0]:
        return (None,)
    a = rec.inputs[0].data
    count = a.size if rec.ctx is None else a.shape[rec.ctx]
    return (_expand_reduced(g, rec.ctx, a) / count,)


def _bw_sq_dist(rec, g, needs):
    diff = rec.ctx
    ga = 2.0 * g * diff if needs[0] else None
    gb = -2.0 * g * diff if needs[1] else None
    return ga, gb


def _bw_dot(rec, g, needs):
    a, b = rec.inputs
    return (g * b.data if needs[0] else None, g * a.data if needs[1] else None)


def _bw_reshape(rec, g, needs):
    return (g.reshape(rec.ctx) if needs[0] else None,)


def _bw_logsumexp(rec, g, needs):
    if not needs[0]:
        return (None,)
    axis, softmax = rec.ctx
    if axis is None:
        return (g * softmax,)
    return (np.expand_dims(g, axis) * softmax,)


_BACKWARD = {
    "matmul": _bw_matmul,
    "bias_add": _bw_bias_add,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "add_const": _bw_add_const,
    "relu": _bw_relu,
    "exp": _bw_exp,
    "log": _bw_log,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "sq_dist": _bw_sq_dist,
    "dot": _bw_dot,
    "reshape": _bw_reshape,
    "logsumexp": _bw_logsumexp,
}


class GradientSet:
    """Gradients keyed by leaf tensor identity, as returned by ``backward``."""

    def __init__(self):
        self._grads = {}  # id(tensor) -> (tensor, ndarray)

    def _add(self, tensor, grad):
        key = id(tensor)
        if key in self._grads:
            self._grads[key] = (tensor, self._grads[key][1] + grad)
        else:
            self._grads[key] = (tensor, grad)

    def get(self, tensor, default=None):
        entry = self._grads.get(id(tensor))
        return entry[1] if entry is not None else default

    def __contains__(self, tensor):
        return id(tensor) in self._grads

    def __getitem__(self, tensor):
        entry = self._grads.get(id(tensor))
        if entry is None:
            raise KeyError(f"no gradient recorded for {tensor!r}")
        return entry[1]

    def __len__(self):
        return len(self._grads)

    def tensors(self):
        return [t for t, _ in self._grads.values()]


def backward(tape, loss):
    """Populate ``grad`` for every requires_grad leaf reachable from ``loss``.

    Returns the gradients as a GradientSet; leaf tensors also get their
    ``grad`` field set.  Raises GraphError if the loss is not scalar or was
    not produced on this tape.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        got = getattr(loss, "shape", type(loss))
        raise GraphError(f"backward needs a scalar loss tensor, got {got}")
    if not tape.produces(loss):
        raise GraphError("loss is not on this tape (detached graph)")

    start = tape._producer[id(loss)]
    pending = {id(loss): np.ones((), dtype=np.float64)}
    grads = GradientSet()

    for rec in reversed(tape.records[: start + 1]):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        needs = tuple(
            t.requires_grad or tape.produces(t) for t in rec.inputs
        )
        input_grads = _BACKWARD[rec.op](rec, g, needs)
        for t, gi in zip(rec.inputs, input_grads):
            if gi is None:
                continue
            gi = np.asarray(gi, dtype=np.float64)
            if tape.produces(t):
                key = id(t)
                pending[key] = pending[key] + gi if key in pending else gi
            elif t.requires_grad:
                grads._add(t, gi)

    for t in grads.tensors():
        t.grad = grads[t]
    return grads
