"""Forward-mode directional derivatives on numpy arrays.

A :class:`Dual` carries a primal array ``val`` plus a tangent array ``dot``
whose leading axis enumerates derivative lanes (one lane per differentiated
scalar parameter). Arithmetic applies the chain rule; comparisons and
branching look only at the primal, so piecewise functions take the
subgradient of whichever branch is active.

The physics step is written against the module-level helpers (where, maximum,
sqrt, ...) which accept plain ndarrays or Duals, so the same code runs in
primal or gradient mode.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "seed_scalar",
    "value",
    "tangent",
    "where",
    "maximum",
    "minimum",
    "clip",
    "sqrt",
    "absolute",
    "sign",
    "stack",
    "concatenate",
    "sum_",
    "dot_last",
    "norm_last",
    "cross",
]


def _pad_dot(dot: np.ndarray, val_ndim: int, out_ndim: int) -> np.ndarray:
    # dot is (lanes,) + val.shape; insert singleton axes after the lane axis so
    # it broadcasts against an out_ndim-dimensional primal result.
    if val_ndim >= out_ndim:
        return dot
    shape = dot.shape[:1] + (1,) * (out_ndim - val_ndim) + dot.shape[1:]
    return dot.reshape(shape)


def _lmatmul_dot(a, dot, val_ndim):
    # a @ dot where dot carries a leading lane axis. matmul treats leading
    # axes of the RIGHT operand as batch only for ndim >= 2 values; vector
    # values need an explicit trailing singleton so lanes stay a batch axis.
    if val_ndim == 1:
        return (a @ dot[..., None])[..., 0]
    return a @ dot


class Dual:
    __slots__ = ("val", "dot")

    # outrank ndarray so `ndarray @ Dual` defers to our __rmatmul__
    __array_priority__ = 1000

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=float)
        self.dot = np.asarray(dot, dtype=float)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def lanes(self):
        return self.dot.shape[0]

    def copy(self) -> "Dual":
        return Dual(self.val.copy(), self.dot.copy())

    def reshape(self, *shape) -> "Dual":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.dot.reshape((self.lanes,) + tuple(shape)))

    def __repr__(self):
        return f"Dual(val={self.val!r}, lanes={self.lanes})"

    # -- arithmetic ---------------------------------------------------------

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __add__(self, other):
        if isinstance(other, Dual):
            out = self.val + other.val
            return Dual(out, _pad_dot(self.dot, self.ndim, out.ndim)
                        + _pad_dot(other.dot, other.ndim, out.ndim))
        out = self.val + other
        return Dual(out, _pad_dot(self.dot, self.ndim, out.ndim) + np.zeros_like(out))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual) else -np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            out = self.val * other.val
            d = (_pad_dot(self.dot, self.ndim, out.ndim) * other.val
                 + _pad_dot(other.dot, other.ndim, out.ndim) * self.val)
            return Dual(out, d)
        other = np.asarray(other, dtype=float)
        out = self.val * other
        return Dual(out, _pad_dot(self.dot, self.ndim, out.ndim) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            out = self.val * inv
            d = (_pad_dot(self.dot, self.ndim, out.ndim) * inv
                 - _pad_dot(other.dot, other.ndim, out.ndim) * (out * inv))
            return Dual(out, d)
        other = np.asarray(other, dtype=float)
        out = self.val / other
        return Dual(out, _pad_dot(self.dot, self.ndim, out.ndim) / other)

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        inv = 1.0 / self.val
        out = other * inv
        return Dual(out, -_pad_dot(self.dot, self.ndim, out.ndim) * (out * inv))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar powers are supported")
        out = self.val ** p
        return Dual(out, _pad_dot(self.dot, self.ndim, out.ndim) * (p * self.val ** (p - 1)))

    def __matmul__(self, other):
        if isinstance(other, Dual):
            out = self.val @ other.val
            d = self.dot @ other.val + _lmatmul_dot(self.val, other.dot, other.ndim)
            return Dual(out, d)
        return Dual(self.val @ other, self.dot @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        return Dual(other @ self.val, _lmatmul_dot(other, self.dot, self.ndim))

    # -- comparisons (primal only) -----------------------------------------

    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    # -- indexing -----------------------------------------------------------

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.val[idx], self.dot[(slice(None),) + idx])

    def __setitem__(self, idx, v):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if isinstance(v, Dual):
            self.val[idx] = v.val
            self.dot[(slice(None),) + idx] = v.dot
        else:
            self.val[idx] = v
            self.dot[(slice(None),) + idx] = 0.0

    def sum(self, axis=None):
        return sum_(self, axis=axis)


def seed_scalar(v: float, lane: int, lanes: int) -> Dual:
    """A scalar Dual with a unit tangent in the given lane."""
    dot = np.zeros(lanes)
    dot[lane] = 1.0
    return Dual(np.asarray(v, dtype=float), dot)


def value(x):
    return x.val if isinstance(x, Dual) else x


def tangent(x, lanes: int):
    if isinstance(x, Dual):
        return x.dot
    x = np.asarray(x, dtype=float)
    return np.zeros((lanes,) + x.shape)


def _axis_for_dot(axis, ndim):
    if axis is None:
        return None
    if axis >= 0:
        return axis + 1
    return axis  # negative axes already count from the end, lane axis is in front


def where(cond, a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(cond, a, b)
    cond = np.asarray(cond)
    out = np.where(cond, value(a), value(b))
    lanes = a.lanes if isinstance(a, Dual) else b.lanes
    da = _pad_dot(a.dot, a.ndim, out.ndim) if isinstance(a, Dual) else 0.0
    db = _pad_dot(b.dot, b.ndim, out.ndim) if isinstance(b, Dual) else 0.0
    return Dual(out, np.where(cond[None], da, db))


def maximum(a, b):
    # ties take the first argument's subgradient
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.maximum(a, b)
    return where(value(a) >= value(b), a, b)


def minimum(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.minimum(a, b)
    return where(value(a) <= value(b), a, b)


def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)


def sqrt(x):
    if not isinstance(x, Dual):
        return np.sqrt(x)
    out = np.sqrt(x.val)
    return Dual(out, _pad_dot(x.dot, x.ndim, out.ndim) * (0.5 / out))


def absolute(x):
    if not isinstance(x, Dual):
        return np.abs(x)
    return where(x.val >= 0.0, x, -x)


def sign(x):
    return np.sign(value(x))


def stack(parts, axis=0):
    if not any(isinstance(p, Dual) for p in parts):
        return np.stack(parts, axis=axis)
    vals = [value(p) for p in parts]
    out = np.stack(vals, axis=axis)
    lanes = next(p.lanes for p in parts if isinstance(p, Dual))
    dots = [tangent(p, lanes) for p in parts]
    dot_axis = axis + 1 if axis >= 0 else axis
    return Dual(out, np.stack(dots, axis=dot_axis))


def concatenate(parts, axis=0):
    if not any(isinstance(p, Dual) for p in parts):
        return np.concatenate(parts, axis=axis)
    vals = [value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    lanes = next(p.lanes for p in parts if isinstance(p, Dual))
    dots = [tangent(p, lanes) for p in parts]
    dot_axis = axis + 1 if axis >= 0 else axis
    return Dual(out, np.concatenate(dots, axis=dot_axis))


def sum_(x, axis=None):
    if not isinstance(x, Dual):
        return np.sum(x, axis=axis)
    if axis is None:
        # full reduction keeps the lane axis: dot stays shape (lanes,)
        dot = np.sum(x.dot, axis=tuple(range(1, x.dot.ndim)))
        return Dual(np.sum(x.val), dot)
    return Dual(np.sum(x.val, axis=axis), np.sum(x.dot, axis=_axis_for_dot(axis, x.ndim)))


def dot_last(a, b):
    """Inner product over the trailing axis."""
    return sum_(a * b, axis=-1)


def norm_last(x):
    return sqrt(dot_last(x, x))


def cross(a, b):
    """Cross product over trailing axis 3, dual-safe."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)
