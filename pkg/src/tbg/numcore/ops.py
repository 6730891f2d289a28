"""Array functions that dispatch on ndarray / :class:`Var` / :class:`Dual`.

Model code written against these functions (plus ordinary operators) can
be evaluated plainly, recorded for reverse mode, or pushed forward with
tangents, without change.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Var, _sigmoid
from .dual import Dual

__all__ = [
    "exp", "log", "sqrt", "sin", "cos", "tanh", "sigmoid", "silu",
    "atan2", "concat", "value_of",
]


def _unary(name, np_fn):
    def fn(x):
        if isinstance(x, Var):
            return x.tape.apply(name, x)
        if isinstance(x, Dual):
            return getattr(x, name)()
        return np_fn(np.asarray(x))

    fn.__name__ = name
    return fn


exp = _unary("exp", np.exp)
log = _unary("log", np.log)
sqrt = _unary("sqrt", np.sqrt)
sin = _unary("sin", np.sin)
cos = _unary("cos", np.cos)
tanh = _unary("tanh", np.tanh)
sigmoid = _unary("sigmoid", _sigmoid)
silu = _unary("silu", lambda a: a * _sigmoid(a))


def atan2(y, x):
    if isinstance(y, Var) or isinstance(x, Var):
        tape = y.tape if isinstance(y, Var) else x.tape
        return tape.apply("atan2", y, x)
    if isinstance(y, Dual) or isinstance(x, Dual):
        yp, xp = value_of(y), value_of(x)
        r2 = xp * xp + yp * yp
        t = 0.0
        if isinstance(y, Dual):
            t = y.t * (xp / r2)
        if isinstance(x, Dual):
            t = t - x.t * (yp / r2)
        return Dual(np.arctan2(yp, xp), t)
    return np.arctan2(y, x)


def concat(parts, axis=-1):
    parts = list(parts)
    if any(isinstance(p, Var) for p in parts):
        tape = next(p.tape for p in parts if isinstance(p, Var))
        ndim = next(p.ndim for p in parts if isinstance(p, Var))
        return tape.apply("concat", *parts, axis=axis % ndim)
    if any(isinstance(p, Dual) for p in parts):
        k = next(p.k for p in parts if isinstance(p, Dual))
        ndim = next(p.ndim for p in parts if isinstance(p, Dual))
        ax = axis % ndim
        prim = np.concatenate([value_of(p) for p in parts], axis=ax)
        tans = [
            p.t if isinstance(p, Dual) else np.zeros((k,) + np.shape(p))
            for p in parts
        ]
        return Dual(prim, np.concatenate(tans, axis=ax + 1))
    return np.concatenate(parts, axis=axis)


def value_of(x):
    """Primal numpy value of any supported array type."""
    if isinstance(x, Var):
        return x.value
    if isinstance(x, Dual):
        return x.p
    return np.asarray(x)
