"""Forward-mode differentiation with a batch of tangent directions.

A :class:`Dual` carries a primal array ``p`` of shape ``S`` and tangents
``t`` of shape ``(K,) + S``: K directional derivatives propagated in one
vectorised sweep.  Plain ndarrays mixed into an expression are constants.
"""
from __future__ import annotations

import numpy as np

from .autodiff import _matmul, _sigmoid

__all__ = ["Dual", "jvp", "seed_basis"]


class Dual:
    __slots__ = ("p", "t")
    __array_ufunc__ = None

    def __init__(self, p, t):
        self.p = p
        self.t = t

    @property
    def shape(self):
        return self.p.shape

    @property
    def ndim(self):
        return self.p.ndim

    @property
    def k(self):
        return self.t.shape[0]

    def __repr__(self):
        return f"Dual(shape={self.shape}, directions={self.k})"

    # arithmetic -------------------------------------------------------
    def _lift(self, ndim):
        # align the tangent of a lower-rank operand under right-aligned broadcasting
        extra = ndim - self.ndim
        if extra <= 0:
            return self.t
        return self.t.reshape((self.k,) + (1,) * extra + self.p.shape)

    def __add__(self, o):
        if isinstance(o, Dual):
            nd = max(self.ndim, o.ndim)
            return Dual(self.p + o.p, self._lift(nd) + o._lift(nd))
        p = self.p + o
        t = self._lift(p.ndim)
        return Dual(p, np.broadcast_to(t, (self.k,) + p.shape))

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            nd = max(self.ndim, o.ndim)
            return Dual(self.p - o.p, self._lift(nd) - o._lift(nd))
        return self + (-np.asarray(o))

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Dual):
            nd = max(self.ndim, o.ndim)
            return Dual(self.p * o.p, self._lift(nd) * o.p + o._lift(nd) * self.p)
        o = np.asarray(o)
        return Dual(self.p * o, self._lift(o.ndim) * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            nd = max(self.ndim, o.ndim)
            q = self.p / o.p
            return Dual(q, (self._lift(nd) - o._lift(nd) * q) / o.p)
        o = np.asarray(o)
        return Dual(self.p / o, self._lift(o.ndim) / o)

    def __rtruediv__(self, o):
        q = o / self.p
        return Dual(q, -self._lift(q.ndim) * (q / self.p))

    def __neg__(self):
        return Dual(-self.p, -self.t)

    def __pow__(self, e):
        if e == 2:
            return self * self
        return Dual(self.p**e, self.t * (e * self.p ** (e - 1)))

    def __matmul__(self, o):
        if isinstance(o, Dual):
            return Dual(_matmul(self.p, o.p), _matmul(self.t, o.p) + _matmul(self.p, o.t))
        return Dual(_matmul(self.p, o), _matmul(self.t, o))

    def __rmatmul__(self, o):
        return Dual(o @ self.p, o @ self.t)

    def __getitem__(self, key):
        key_t = (slice(None),) + (key if isinstance(key, tuple) else (key,))
        return Dual(self.p[key], self.t[key_t])

    # reductions / reshaping ------------------------------------------
    def sum(self, axis=None, keepdims=False):
        if axis is None:
            return Dual(self.p.sum(), self.t.reshape(self.k, -1).sum(axis=1))
        ax = tuple(a % self.ndim + 1 for a in np.atleast_1d(axis))
        return Dual(self.p.sum(axis=axis, keepdims=keepdims), self.t.sum(axis=ax, keepdims=keepdims))

    def mean(self, axis=None, keepdims=False):
        n = self.p.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.p.reshape(shape), self.t.reshape((self.k,) + tuple(shape)))

    def transpose(self, *axes):
        axes = axes[0] if len(axes) == 1 and isinstance(axes[0], tuple) else axes
        axes = tuple(axes) if axes else tuple(reversed(range(self.ndim)))
        return Dual(np.transpose(self.p, axes), np.transpose(self.t, (0,) + tuple(a + 1 for a in axes)))

    @property
    def T(self):
        return self.transpose()

    # elementwise functions -------------------------------------------
    def _unary(self, val, deriv):
        return Dual(val, self.t * deriv)

    def exp(self):
        e = np.exp(self.p)
        return self._unary(e, e)

    def log(self):
        return self._unary(np.log(self.p), 1.0 / self.p)

    def sqrt(self):
        r = np.sqrt(self.p)
        return self._unary(r, 0.5 / r)

    def sin(self):
        return self._unary(np.sin(self.p), np.cos(self.p))

    def cos(self):
        return self._unary(np.cos(self.p), -np.sin(self.p))

    def tanh(self):
        y = np.tanh(self.p)
        return self._unary(y, 1.0 - y * y)

    def sigmoid(self):
        s = _sigmoid(self.p)
        return self._unary(s, s * (1.0 - s))

    def silu(self):
        s = _sigmoid(self.p)
        return self._unary(self.p * s, s * (1.0 + self.p * (1.0 - s)))


def seed_basis(x: np.ndarray) -> Dual:
    """Dual of ``x`` with one tangent per scalar entry (identity seed)."""
    n = x.size
    t = np.eye(n).reshape((n,) + x.shape)
    return Dual(np.asarray(x, dtype=float), t)


def jvp(f, x: np.ndarray, directions: np.ndarray):
    """Directional derivatives of ``f`` at ``x`` along ``directions``.

    ``directions`` has shape ``(K,) + x.shape``; returns ``(f(x), J @ d_k)``.
    """
    out = f(Dual(np.asarray(x, dtype=float), np.asarray(directions, dtype=float)))
    return out.p, out.t
