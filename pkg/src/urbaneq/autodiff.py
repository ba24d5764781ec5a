"""Forward-mode dual numbers, nestable once for exact second derivatives."""
from __future__ import annotations

import cmath
import math

import numpy as np


def _exp(x):
    if isinstance(x, Dual):
        return x.exp()
    if isinstance(x, complex):
        return cmath.exp(x)
    return math.exp(x)


def _log(x):
    if isinstance(x, Dual):
        return x.log()
    if isinstance(x, complex):
        return cmath.log(x)
    return math.log(x)


def _pow(x, r):
    """x**r for scalars or Duals; negative real bases take the principal complex branch."""
    if isinstance(x, Dual):
        return x ** r
    if isinstance(x, (int, float)) and x < 0 and not float(r).is_integer():
        return complex(x) ** r
    return x ** r


def primal(x):
    """Strip all dual layers and return the underlying number."""
    while isinstance(x, Dual):
        x = x.val
    return x


class Dual:
    """Number a + b*eps with eps**2 = 0.

    Both components may themselves be Dual, which yields exact mixed second
    derivatives from one nesting level. Arithmetic never inspects the component
    types beyond Dual-ness, so float, complex and Dual components all work.
    """

    __slots__ = ("val", "eps")

    def __init__(self, val, eps=0.0):
        self.val = val
        self.eps = eps

    def __repr__(self):
        return f"Dual({self.val!r}, {self.eps!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.eps + other.eps)
        return Dual(self.val + other, self.eps)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.eps - other.eps)
        return Dual(self.val - other, self.eps)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.eps)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.val * other.eps + self.eps * other.val)
        return Dual(self.val * other, self.eps * other)

    __rmul__ = __mul__

    def reciprocal(self):
        iv = 1.0 / self.val
        return Dual(iv, -(self.eps * iv) * iv)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.reciprocal()
        return Dual(self.val / other, self.eps / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, r):
        if isinstance(r, Dual):
            return (self.log() * r).exp()
        if isinstance(r, (int, np.integer)) or (isinstance(r, float) and r.is_integer()):
            n = int(r)
            if n == 0:
                return Dual(self.val ** 0, self.eps * 0)
            if n < 0:
                return self.reciprocal() ** (-n)
            vp = self.val ** (n - 1) if n > 1 else 1.0
            return Dual(vp * self.val, self.eps * (n * vp))
        vp = _pow(self.val, r - 1.0)
        return Dual(_pow(self.val, r), self.eps * (r * vp))

    def exp(self):
        e = _exp(self.val)
        return Dual(e, self.eps * e)

    def log(self):
        return Dual(_log(self.val), self.eps / self.val)

    def sqrt(self):
        return self ** 0.5

    def __abs__(self):
        s = 1.0 if primal(self.val).real >= 0 else -1.0
        return self * s

    def __eq__(self, other):
        return primal(self) == primal(other)

    def __lt__(self, other):
        return primal(self) < primal(other)

    def __le__(self, other):
        return primal(self) <= primal(other)

    def __gt__(self, other):
        return primal(self) > primal(other)

    def __ge__(self, other):
        return primal(self) >= primal(other)

    def __hash__(self):
        return hash(primal(self))


def exp(x):
    return _exp(x)


def log(x):
    return _log(x)


def dual_jacobian(f, x, t=None):
    """First partials of f: list -> list at x (and the scalar t when given).

    Returns (value, Jx) or (value, Jx, Jt). One seeded evaluation per variable.
    """
    x = list(x)
    n = len(x)
    value = None
    cols = []
    for a in range(n):
        seeded = [Dual(x[c], 1.0 if c == a else 0.0) for c in range(n)]
        out = f(seeded) if t is None else f(seeded, t)
        if value is None:
            value = [primal(v) for v in out]
        cols.append([v.eps if isinstance(v, Dual) else 0.0 for v in out])
    Jx = np.array(cols, dtype=_common_dtype(value)).T
    if t is None:
        return np.asarray(value), Jx
    out = f([Dual(v, 0.0) for v in x], Dual(t, 1.0))
    Jt = np.array([v.eps if isinstance(v, Dual) else 0.0 for v in out],
                  dtype=_common_dtype(value))
    return np.asarray(value), Jx, Jt


def second_partials(f, x, t):
    """All first and second partials of f(x, t) in the n+1 variables (x_1..x_n, t).

    f maps (sequence, scalar) to a sequence of m values and must be written in
    plain arithmetic (dual-safe). Returns (value, Jx, Jt, Hxx, Hxt, Htt) with
    shapes (m,), (m,n), (m,), (m,n,n), (m,n), (m,). Uses one nested-dual
    evaluation per unordered variable pair.
    """
    x = list(x)
    n = len(x)
    probe = f(x, t)
    m = len(probe)
    dt = _common_dtype([primal(v) for v in probe])
    value = np.array([primal(v) for v in probe], dtype=dt)
    Jx = np.zeros((m, n), dtype=dt)
    Jt = np.zeros(m, dtype=dt)
    Hxx = np.zeros((m, n, n), dtype=dt)
    Hxt = np.zeros((m, n), dtype=dt)
    Htt = np.zeros(m, dtype=dt)

    def seeded_eval(a, b):
        # variable index n means t; outer eps tracks a, inner tracks b
        args = []
        for c in range(n):
            inner = Dual(x[c], 1.0 if c == b else 0.0)
            args.append(Dual(inner, Dual(1.0 if c == a else 0.0, 0.0)))
        tin = Dual(Dual(t, 1.0 if b == n else 0.0), Dual(1.0 if a == n else 0.0, 0.0))
        return f(args, tin)

    def parts(v):
        # f, df/db, df/da, d2f/dadb from a nested dual
        if not isinstance(v, Dual):
            return v, 0.0, 0.0, 0.0
        va, ea = v.val, v.eps
        f0 = va.val if isinstance(va, Dual) else va
        fb = va.eps if isinstance(va, Dual) else 0.0
        fa = ea.val if isinstance(ea, Dual) else ea
        fab = ea.eps if isinstance(ea, Dual) else 0.0
        return f0, primal(fb), primal(fa), primal(fab)

    for a in range(n + 1):
        for b in range(a, n + 1):
            out = seeded_eval(a, b)
            for j in range(m):
                _, fb, fa, fab = parts(out[j])
                if a == n and b == n:
                    Jt[j] = fa
                    Htt[j] = fab
                elif b == n:
                    Jx[j, a] = fa
                    Hxt[j, a] = fab
                else:
                    if a == b:
                        Jx[j, a] = fa
                    Hxx[j, a, b] = fab
                    Hxx[j, b, a] = fab
    return value, Jx, Jt, Hxx, Hxt, Htt


def _common_dtype(values):
    for v in values:
        if isinstance(v, complex):
            return complex
    return float
