"""Reverse-mode automatic differentiation over dense float64 arrays.

The design is a classic define-by-run tape: operations executed while a
:class:`Tape` is active append nodes (op kind, input tensors, saved output)
in topological order.  :func:`backward` walks the tape in reverse and builds
cotangents using the *same* primitive operations, so when ``create_graph``
is set the gradient computation itself lands on the tape and a second
:func:`backward` differentiates through it.  That closure property is what
makes exact second-order meta-gradients possible without any special casing.

Tapes are explicitly scoped (``with Tape() as tape:``); there is no global
mutable tape.  Tensors created outside any tape, or from plain constants,
stay detached and contribute zero gradient.
"""

from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

_TLS = threading.local()


def _tape_stack():
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Scope:
    """Pushes a tape (or None, pausing recording) for a ``with`` block."""

    def __init__(self, tape):
        self.tape = tape

    def __enter__(self):
        _tape_stack().append(self.tape)
        return self.tape

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def no_recording():
    """Context manager that suspends recording on any active tape."""
    return _Scope(None)


class Node:
    """One recorded primitive: kind, inputs, saved output, op constants."""

    __slots__ = ("kind", "inputs", "value", "meta", "idx")

    def __init__(self, kind, inputs, value, meta, idx):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.meta = meta
        self.idx = idx


class Tensor:
    """A dense float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node")

    def __init__(self, data, node=None):
        self.data = data
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detached(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = "attached" if self.node is not None else "detached"
        return f"Tensor(shape={self.data.shape}, {tag})"


def constant(values):
    """Wrap array-like data as a detached float64 tensor."""
    return Tensor(np.asarray(values, dtype=np.float64))


class Tape:
    """Append-only record of primitives, in topological order.

    A tape is entered with ``with`` and applies to the current thread only.
    Nested tapes are permitted; operations record on the innermost one.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self, "tape scopes must nest properly"
        return False

    def scope(self):
        return _Scope(self)

    def watch(self, tensor):
        """Register a tensor as a differentiable leaf of this tape."""
        if tensor.node is not None:
            return tensor
        node = Node("leaf", (), tensor.data, None, len(self.nodes))
        self.nodes.append(node)
        tensor.node = node
        return tensor

    def _append(self, kind, inputs, value, meta):
        node = Node(kind, inputs, value, meta, len(self.nodes))
        self.nodes.append(node)
        return node

    def replay(self):
        """Recompute every node from its stored inputs; True if bit-exact."""
        for node in self.nodes:
            if node.kind == "leaf":
                continue
            datas = [t.data for t in node.inputs]
            fresh = _FORWARD[node.kind](datas, node.meta)
            if not np.array_equal(fresh, node.value):
                return False
        return True


class ParamVector:
    """Ordered, named collection of parameter tensors (weights and biases)."""

    def __init__(self, entries):
        self.entries = list(entries)

    @property
    def q(self):
        return sum(t.data.size for _, t in self.entries)

    def names(self):
        return [n for n, _ in self.entries]

    def tensors(self):
        return [t for _, t in self.entries]

    def arrays(self):
        return [t.data for _, t in self.entries]

    def copy_arrays(self):
        return [t.data.copy() for _, t in self.entries]

    def detached(self):
        return ParamVector((n, t.detached()) for n, t in self.entries)

    @classmethod
    def from_arrays(cls, names, arrays):
        return cls(
            (n, Tensor(np.asarray(a, dtype=np.float64))) for n, a in zip(names, arrays)
        )

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


# ---------------------------------------------------------------------------
# forward kernels, keyed by op kind (also used for tape replay)
# ---------------------------------------------------------------------------


def _fw_matmul(datas, meta):
    return kernels.matmul(datas[0], datas[1])


def _fw_add(datas, meta):
    return datas[0] + datas[1]


def _fw_badd(datas, meta):
    return datas[0] + datas[1]


def _fw_smul(datas, meta):
    return datas[0] * meta


def _fw_mul(datas, meta):
    return datas[0] * datas[1]


def _fw_sin(datas, meta):
    return kernels.sin(datas[0])


def _fw_cos(datas, meta):
    return kernels.cos(datas[0])


def _fw_sigmoid(datas, meta):
    return kernels.sigmoid(datas[0])


def _fw_log(datas, meta):
    return np.log(datas[0])


def _fw_square(datas, meta):
    return datas[0] * datas[0]


def _fw_reciprocal(datas, meta):
    return 1.0 / datas[0]


def _fw_sum(datas, meta):
    return np.asarray(datas[0].sum(axis=meta))


def _fw_mean(datas, meta):
    return np.asarray(datas[0].mean())


def _fw_clamp(datas, meta):
    lo, hi, _ = meta
    return np.clip(datas[0], lo, hi)


def _fw_expand(datas, meta):
    return np.ascontiguousarray(np.broadcast_to(datas[0], meta))


def _fw_transpose(datas, meta):
    return np.ascontiguousarray(datas[0].T)


_FORWARD = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "broadcast-add": _fw_badd,
    "scalar-mul": _fw_smul,
    "elementwise-mul": _fw_mul,
    "sin": _fw_sin,
    "cos": _fw_cos,
    "sigmoid": _fw_sigmoid,
    "log": _fw_log,
    "square": _fw_square,
    "reciprocal": _fw_reciprocal,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "clamp": _fw_clamp,
    "expand": _fw_expand,
    "transpose": _fw_transpose,
}


def _make(kind, inputs, value, meta=None):
    tape = _active_tape()
    if tape is None or all(t.node is None for t in inputs):
        return Tensor(value)
    node = tape._append(kind, tuple(inputs), value, meta)
    return Tensor(value, node)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return constant(x)


# ---------------------------------------------------------------------------
# public primitives
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    return _make("matmul", (a, b), _fw_matmul((a.data, b.data), None))


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    return _make("add", (a, b), a.data + b.data)


def broadcast_add(m, bias):
    """Add a rank-1 bias across the rows of a rank-2 tensor."""
    m, bias = _as_tensor(m), _as_tensor(bias)
    if m.data.ndim != 2 or bias.data.ndim != 1 or m.shape[1] != bias.shape[0]:
        raise DimensionError(f"broadcast-add shapes: {m.shape} + {bias.shape}")
    return _make("broadcast-add", (m, bias), m.data + bias.data)


def scalar_mul(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _make("scalar-mul", (a,), a.data * c, meta=c)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"elementwise-mul shapes differ: {a.shape} vs {b.shape}")
    return _make("elementwise-mul", (a, b), a.data * b.data)


def sin(a):
    a = _as_tensor(a)
    return _make("sin", (a,), kernels.sin(a.data))


def cos(a):
    a = _as_tensor(a)
    return _make("cos", (a,), kernels.cos(a.data))


def sigmoid(a):
    a = _as_tensor(a)
    return _make("sigmoid", (a,), kernels.sigmoid(a.data))


def log(a):
    a = _as_tensor(a)
    return _make("log", (a,), np.log(a.data))


def square(a):
    a = _as_tensor(a)
    return _make("square", (a,), a.data * a.data)


def reciprocal(a):
    a = _as_tensor(a)
    return _make("reciprocal", (a,), 1.0 / a.data)


def tsum(a, axis=None):
    a = _as_tensor(a)
    if axis not in (None, 0):
        raise ContractError(f"sum supports axis None or 0, got {axis}")
    return _make("sum", (a,), np.asarray(a.data.sum(axis=axis)), meta=axis)


def tmean(a):
    a = _as_tensor(a)
    return _make("mean", (a,), np.asarray(a.data.mean()))


def clamp(a, lo, hi):
    """Clip into [lo, hi]; gradient is identity inside the bounds, zero outside."""
    a = _as_tensor(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _make("clamp", (a,), np.clip(a.data, lo, hi), meta=(lo, hi, mask))


def expand(a, shape):
    """Broadcast a scalar to ``shape`` or a rank-1 vector over rows."""
    a = _as_tensor(a)
    shape = tuple(shape)
    if a.data.ndim == 0:
        pass
    elif a.data.ndim == 1 and len(shape) == 2 and shape[1] == a.shape[0]:
        pass
    else:
        raise DimensionError(f"cannot expand {a.shape} to {shape}")
    return _make("expand", (a,), _fw_expand((a.data,), shape), meta=shape)


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects rank 2, got {a.shape}")
    return _make("transpose", (a,), np.ascontiguousarray(a.data.T))


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "broadcast-add": broadcast_add,
    "scalar-mul": scalar_mul,
    "elementwise-mul": mul,
    "sin": sin,
    "sigmoid": sigmoid,
    "log": log,
    "square": square,
    "sum": tsum,
    "mean": tmean,
    "clamp": clamp,
    # closure kinds: required so gradients of gradients stay on-tape
    "cos": cos,
    "reciprocal": reciprocal,
    "expand": expand,
    "transpose": transpose,
}


def primitive_forward(kind, *inputs, **kw):
    """Apply a primitive by kind name, recording on the active tape."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive kind: {kind!r}") from None
    return fn(*inputs, **kw)


# ---------------------------------------------------------------------------
# vector-Jacobian products, written in terms of the primitives above
# ---------------------------------------------------------------------------


def _ones_like(t):
    return constant(np.ones(t.data.shape))


def _vjp_matmul(node, g):
    a, b = node.inputs
    return [matmul(g, transpose(b)), matmul(transpose(a), g)]


def _vjp_add(node, g):
    return [g, g]


def _vjp_badd(node, g):
    return [g, tsum(g, axis=0)]


def _vjp_smul(node, g):
    return [scalar_mul(g, node.meta)]


def _vjp_mul(node, g):
    a, b = node.inputs
    return [mul(g, b), mul(g, a)]


def _vjp_sin(node, g):
    return [mul(g, cos(node.inputs[0]))]


def _vjp_cos(node, g):
    return [scalar_mul(mul(g, sin(node.inputs[0])), -1.0)]


def _vjp_sigmoid(node, g):
    out = Tensor(node.value, node)
    one_minus = add(scalar_mul(out, -1.0), _ones_like(out))
    return [mul(g, mul(out, one_minus))]


def _vjp_log(node, g):
    return [mul(g, reciprocal(node.inputs[0]))]


def _vjp_square(node, g):
    return [scalar_mul(mul(g, node.inputs[0]), 2.0)]


def _vjp_reciprocal(node, g):
    out = Tensor(node.value, node)
    return [scalar_mul(mul(g, square(out)), -1.0)]


def _vjp_sum(node, g):
    return [expand(g, node.inputs[0].data.shape)]


def _vjp_mean(node, g):
    x = node.inputs[0]
    return [scalar_mul(expand(g, x.data.shape), 1.0 / x.data.size)]


def _vjp_clamp(node, g):
    mask = constant(node.meta[2])
    return [mul(g, mask)]


def _vjp_expand(node, g):
    x = node.inputs[0]
    if x.data.ndim == 0:
        return [tsum(g)]
    return [tsum(g, axis=0)]


def _vjp_transpose(node, g):
    return [transpose(g)]


_VJP = {
    "matmul": _vjp_matmul,
    "add": _vjp_add,
    "broadcast-add": _vjp_badd,
    "scalar-mul": _vjp_smul,
    "elementwise-mul": _vjp_mul,
    "sin": _vjp_sin,
    "cos": _vjp_cos,
    "sigmoid": _vjp_sigmoid,
    "log": _vjp_log,
    "square": _vjp_square,
    "reciprocal": _vjp_reciprocal,
    "sum": _vjp_sum,
    "mean": _vjp_mean,
    "clamp": _vjp_clamp,
    "expand": _vjp_expand,
    "transpose": _vjp_transpose,
}


def backward(tape, output, wrt, create_graph=False):
    """Gradients of a scalar output w.r.t. every parameter in ``wrt``.

    With ``create_graph`` the cotangent computation is recorded on the same
    tape, so the returned gradients are attached tensors and a further
    backward differentiates through them (exact second order).  Parameters
    not reachable from the output get zero gradients.
    """
    if not isinstance(output, Tensor) or output.data.size != 1:
        raise ContractError("backward expects a scalar tensor output")
    if output.node is None:
        # Output detached from the tape: nothing depends on the parameters.
        return ParamVector(
            (n, constant(np.zeros(t.data.shape))) for n, t in wrt.entries
        )

    cot = {output.node: constant(np.ones(output.data.shape))}
    scope = tape.scope() if create_graph else no_recording()
    with scope:
        for node in reversed(tape.nodes[: output.node.idx + 1]):
            g = cot.pop(node, None)
            if g is None or node.kind == "leaf":
                if g is not None:
                    cot[node] = g  # keep leaf cotangents for collection
                continue
            partials = _VJP[node.kind](node, g)
            for inp, partial in zip(node.inputs, partials):
                if inp.node is None:
                    continue
                held = cot.get(inp.node)
                cot[inp.node] = partial if held is None else add(held, partial)

    grads = []
    for name, t in wrt.entries:
        g = cot.get(t.node) if t.node is not None else None
        if g is None:
            g = constant(np.zeros(t.data.shape))
        grads.append((name, g))
    return ParamVector(grads)
