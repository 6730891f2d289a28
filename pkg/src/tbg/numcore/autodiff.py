"""Tape-based reverse-mode differentiation over numpy arrays.

Every primitive evaluated on a :class:`Var` appends a node to its
:class:`Tape`.  Nodes are stored in evaluation order, so the tape is
topologically sorted by construction and a single reversed sweep
accumulates adjoints.

The set of primitives is deliberately small; it is what the vector
field, the flow-matching loss and the force-field energies need.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractViolation, NumericError

__all__ = ["Tape", "Var", "grad", "value_and_grad", "unbroadcast", "OPS"]


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _matmul(a, b):
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return a @ b


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- primitive table: name -> (forward, vjp) -------------------------------
# vjp(g, out, *inputs, **attrs) returns one cotangent (or None) per input.


def _vjp_matmul(g, out, a, b):
    if b.ndim == 2 and a.ndim >= 2:
        ga = _matmul(g, b.T)
        gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    if a.ndim == 1 or b.ndim == 1:
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if a.ndim == 1:
            ga = ga[..., 0, :]
        if b.ndim == 1:
            gb = gb[..., 0]
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def _vjp_sum(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _is_basic(key):
    key = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in key)


def _vjp_getitem(g, out, a, key=None):
    ga = np.zeros_like(a, dtype=float)
    if _is_basic(key):
        ga[key] = g
    else:
        np.add.at(ga, key, g)
    return (ga,)


def _vjp_concat(g, out, *parts, axis=0):
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return tuple(np.split(g, sizes, axis=axis))


def _vjp_silu(g, out, a):
    s = _sigmoid(a)
    return (g * (s * (1.0 + a * (1.0 - s))),)


def _vjp_atan2(g, out, y, x):
    r2 = x * x + y * y
    return unbroadcast(g * x / r2, y.shape), unbroadcast(-g * y / r2, x.shape)


OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (np.add, lambda g, o, a, b: (unbroadcast(g, a.shape), unbroadcast(g, b.shape))),
    "sub": (np.subtract, lambda g, o, a, b: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape))),
    "mul": (np.multiply, lambda g, o, a, b: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape))),
    "div": (
        np.divide,
        lambda g, o, a, b: (unbroadcast(g / b, a.shape), unbroadcast(-g * o / b, b.shape)),
    ),
    "neg": (np.negative, lambda g, o, a: (-g,)),
    "pow": (lambda a, p=1.0: a**p, lambda g, o, a, p=1.0: (g * p * a ** (p - 1),)),
    "matmul": (_matmul, _vjp_matmul),
    "sum": (lambda a, axis=None, keepdims=False: a.sum(axis=axis, keepdims=keepdims), _vjp_sum),
    "exp": (np.exp, lambda g, o, a: (g * o,)),
    "log": (np.log, lambda g, o, a: (g / a,)),
    "sqrt": (np.sqrt, lambda g, o, a: (g * 0.5 / o,)),
    "sin": (np.sin, lambda g, o, a: (g * np.cos(a),)),
    "cos": (np.cos, lambda g, o, a: (-g * np.sin(a),)),
    "tanh": (np.tanh, lambda g, o, a: (g * (1.0 - o * o),)),
    "sigmoid": (_sigmoid, lambda g, o, a: (g * o * (1.0 - o),)),
    "silu": (lambda a: a * _sigmoid(a), _vjp_silu),
    "atan2": (np.arctan2, _vjp_atan2),
    "reshape": (lambda a, shape=None: a.reshape(shape), lambda g, o, a, shape=None: (g.reshape(a.shape),)),
    "transpose": (
        lambda a, axes=None: np.transpose(a, axes),
        lambda g, o, a, axes=None: (np.transpose(g, np.argsort(axes) if axes is not None else None),),
    ),
    "broadcast_to": (
        lambda a, shape=None: np.broadcast_to(a, shape),
        lambda g, o, a, shape=None: (unbroadcast(g, a.shape),),
    ),
    "getitem": (lambda a, key=None: a[key], _vjp_getitem),
    "concat": (lambda *parts, axis=0: np.concatenate(parts, axis=axis), _vjp_concat),
}


class Tape:
    """Ordered record of primitive evaluations.

    ``nodes[k]`` is ``(op, input_indices, attrs)``; ``values[k]`` holds the
    forward result.  Leaves have op ``"leaf"`` and constants ``"const"``.
    """

    def __init__(self):
        self.nodes: list[tuple[str, tuple[int, ...], dict]] = []
        self.values: list[np.ndarray] = []
        self._needs_grad: list[bool] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        return self._push("leaf", (), {}, np.asarray(value, dtype=float), True)

    def const(self, value) -> "Var":
        return self._push("const", (), {}, np.asarray(value), False)

    def _push(self, op, inputs, attrs, value, needs_grad):
        self.nodes.append((op, inputs, attrs))
        self.values.append(value)
        self._needs_grad.append(needs_grad)
        return Var(self, len(self.nodes) - 1)

    def apply(self, op: str, *args, **attrs) -> "Var":
        idx = []
        for a in args:
            if isinstance(a, Var):
                if a.tape is not self:
                    raise ContractViolation("operands recorded on different tapes")
                idx.append(a.idx)
            else:
                idx.append(self.const(a).idx)
        fwd = OPS[op][0]
        value = fwd(*(self.values[i] for i in idx), **attrs)
        needs = any(self._needs_grad[i] for i in idx)
        return self._push(op, tuple(idx), attrs, value, needs)

    def first_nan(self) -> int | None:
        for k, v in enumerate(self.values):
            if np.issubdtype(np.asarray(v).dtype, np.floating) and np.isnan(v).any():
                return k
        return None

    def backward(self, out: "Var", seed=None) -> dict[int, np.ndarray]:
        """Adjoints of every gradient-carrying node with respect to ``out``."""
        grads: dict[int, np.ndarray] = {}
        grads[out.idx] = np.ones_like(self.values[out.idx]) if seed is None else np.asarray(seed)
        for k in range(out.idx, -1, -1):
            g = grads.get(k)
            if g is None:
                continue
            op, inputs, attrs = self.nodes[k]
            if op in ("leaf", "const"):
                continue
            vjp = OPS[op][1]
            cot = vjp(g, self.values[k], *(self.values[i] for i in inputs), **attrs)
            for i, c in zip(inputs, cot):
                if c is None or not self._needs_grad[i]:
                    continue
                grads[i] = grads[i] + c if i in grads else c
            del grads[k]
        return grads

    def replay(self, leaf_values: dict[int, np.ndarray] | None = None) -> list[np.ndarray]:
        """Re-evaluate the recorded program, optionally with new leaf values."""
        leaf_values = leaf_values or {}
        vals: list[np.ndarray] = []
        for k, (op, inputs, attrs) in enumerate(self.nodes):
            if op in ("leaf", "const"):
                vals.append(np.asarray(leaf_values.get(k, self.values[k])))
            else:
                vals.append(OPS[op][0](*(vals[i] for i in inputs), **attrs))
        return vals


class Var:
    """Handle to a tape node; behaves like a read-only numpy array."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var's reflected ops

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(node={self.idx}, shape={self.shape})"

    def __add__(self, o):
        return self.tape.apply("add", self, o)

    def __radd__(self, o):
        return self.tape.apply("add", o, self)

    def __sub__(self, o):
        return self.tape.apply("sub", self, o)

    def __rsub__(self, o):
        return self.tape.apply("sub", o, self)

    def __mul__(self, o):
        return self.tape.apply("mul", self, o)

    def __rmul__(self, o):
        return self.tape.apply("mul", o, self)

    def __truediv__(self, o):
        return self.tape.apply("div", self, o)

    def __rtruediv__(self, o):
        return self.tape.apply("div", o, self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, p):
        if p == 2:
            return self.tape.apply("mul", self, self)
        return self.tape.apply("pow", self, p=float(p))

    def __matmul__(self, o):
        return self.tape.apply("matmul", self, o)

    def __rmatmul__(self, o):
        return self.tape.apply("matmul", o, self)

    def __getitem__(self, key):
        return self.tape.apply("getitem", self, key=key)

    def sum(self, axis=None, keepdims=False):
        return self.tape.apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.apply("reshape", self, shape=tuple(shape))

    def transpose(self, *axes):
        axes = axes[0] if len(axes) == 1 and isinstance(axes[0], tuple) else axes
        return self.tape.apply("transpose", self, axes=tuple(axes) if axes else None)

    @property
    def T(self):
        return self.transpose()


def value_and_grad(f: Callable, at) -> tuple[float, np.ndarray]:
    """Evaluate scalar ``f`` at ``at`` and return ``(f(at), df/dat)``.

    ``f`` receives a :class:`Var` leaf; everything it computes from it is
    recorded.  Raises :class:`ContractViolation` for non-scalar output and
    :class:`NumericError` (with the first NaN node index) on NaN.
    """
    tape = Tape()
    x = tape.leaf(at)
    out = f(x)
    if not isinstance(out, Var):
        # f ignored its argument entirely
        val = np.asarray(out, dtype=float)
        if val.size != 1:
            raise ContractViolation(f"grad needs a scalar output, got shape {val.shape}")
        return float(val), np.zeros_like(x.value)
    if out.value.size != 1:
        raise ContractViolation(f"grad needs a scalar output, got shape {out.shape}")
    if np.isnan(out.value).any():
        k = tape.first_nan()
        raise NumericError(f"NaN produced at tape node {k} ({tape.nodes[k][0]})", index=k)
    grads = tape.backward(out)
    g = grads.get(x.idx)
    if g is None:
        g = np.zeros_like(x.value)
    return float(out.value.reshape(())), np.asarray(g, dtype=float).reshape(x.value.shape)


def grad(f: Callable, at) -> np.ndarray:
    return value_and_grad(f, at)[1]
