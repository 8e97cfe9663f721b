"""Truncated multivariate power series ("jets") with complex coefficients.

A :class:`Jet` of order ``K`` in ``m`` variables stores the coefficients
``c_alpha`` of ``sum_{|alpha| <= K} c_alpha (x - x0)^alpha`` in a dense array
of shape ``(K+1,)*m + batch``.  Entries with ``|alpha| > K`` are kept at zero
and never read.  The trailing ``batch`` axes let one jet object carry the
expansions at many points at once; all arithmetic broadcasts over them.

Jets serve two purposes here: Taylor-mode differentiation of closed-form
weights and symbols (evaluate the formula on jets), and the finite-order
surrogate for almost analytic extensions, :func:`aa_extend`.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, StructuralError

__all__ = [
    "Jet",
    "jet_mul",
    "jet_compose",
    "aa_extend",
    "real_taylor",
    "fd_derivative",
    "FD_STEP",
    "FD_MAX_ORDER",
    "Analytic",
    "real_to_zw",
    "exp",
    "sin",
    "cos",
    "sqrt",
    "log",
]

# step of an order-n difference: eps^(1/(n+4)) balances round-off and truncation
FD_STEP = None
FD_MAX_ORDER = 4


@lru_cache(maxsize=None)
def _indices(m: int, K: int) -> tuple[tuple[int, ...], ...]:
    return tuple(a for a in itertools.product(range(K + 1), repeat=m) if sum(a) <= K)


@lru_cache(maxsize=None)
def _pairs(m: int, K: int):
    idx = _indices(m, K)
    out = []
    for a in idx:
        for b in idx:
            if sum(a) + sum(b) <= K:
                out.append((a, b, tuple(i + j for i, j in zip(a, b))))
    return tuple(out)


@lru_cache(maxsize=None)
def _mask(m: int, K: int) -> np.ndarray:
    grids = np.indices((K + 1,) * m)
    return grids.sum(axis=0) <= K


class Jet:
    """Truncated power series about ``center``.

    Parameters
    ----------
    coeffs : array_like
        Coefficients, shape ``(K+1,)*m + batch``.
    center : array_like
        Expansion point, shape ``(m,) + batch`` or ``(m,)``.
    m : int
        Number of variables.
    """

    __array_priority__ = 100

    def __init__(self, coeffs, center, m: int):
        coeffs = np.asarray(coeffs, dtype=complex)
        K = coeffs.shape[0] - 1
        if coeffs.shape[:m] != (K + 1,) * m:
            raise StructuralError(f"coefficient array shape {coeffs.shape} is not a jet in {m} variables")
        self.m = int(m)
        self.K = int(K)
        mask = _mask(self.m, self.K).reshape(_mask(self.m, self.K).shape + (1,) * (coeffs.ndim - m))
        self.c = np.where(mask, coeffs, 0.0)
        center = np.asarray(center, dtype=complex)
        if center.shape[0] != self.m:
            raise StructuralError("center has the wrong number of components")
        self.center = center

    # -- constructors --------------------------------------------------------
    @classmethod
    def zeros(cls, m: int, K: int, center, batch: tuple = ()) -> "Jet":
        return cls(np.zeros((K + 1,) * m + tuple(batch), dtype=complex), center, m)

    @classmethod
    def constant(cls, value, m: int, K: int, center) -> "Jet":
        value = np.asarray(value, dtype=complex)
        c = np.zeros((K + 1,) * m + value.shape, dtype=complex)
        c[(0,) * m] = value
        return cls(c, center, m)

    @classmethod
    def variable(cls, i: int, m: int, K: int, center) -> "Jet":
        """The coordinate function ``x_i`` expanded about ``center``."""
        center = np.asarray(center, dtype=complex)
        batch = center.shape[1:]
        c = np.zeros((K + 1,) * m + batch, dtype=complex)
        c[(0,) * m] = center[i]
        if K >= 1:
            e = [0] * m
            e[i] = 1
            c[tuple(e)] = 1.0
        return cls(c, center, m)

    @classmethod
    def variables(cls, m: int, K: int, center) -> tuple["Jet", ...]:
        return tuple(cls.variable(i, m, K, center) for i in range(m))

    @classmethod
    def from_dict(cls, terms: dict, m: int, K: int, center) -> "Jet":
        """Build from ``{alpha: coefficient}`` (``alpha`` a tuple of length m)."""
        j = cls.zeros(m, K, center)
        for a, v in terms.items():
            a = (a,) if isinstance(a, int) else tuple(a)
            if sum(a) <= K:
                j.c[a] = v
        return j

    # -- basic info ------------------------------------------------------------
    @property
    def batch_shape(self) -> tuple:
        return self.c.shape[self.m:]

    def __getitem__(self, alpha) -> np.ndarray:
        alpha = (alpha,) if isinstance(alpha, (int, np.integer)) else tuple(alpha)
        if len(alpha) != self.m or sum(alpha) > self.K:
            raise StructuralError(f"multi-index {alpha} outside the jet")
        return self.c[alpha]

    def indices(self):
        return _indices(self.m, self.K)

    def value(self) -> np.ndarray:
        """Constant coefficient, i.e. the value at the expansion point."""
        return self.c[(0,) * self.m]

    def copy(self) -> "Jet":
        return Jet(self.c.copy(), self.center.copy(), self.m)

    def _like(self, c) -> "Jet":
        return Jet(c, self.center, self.m)

    def _compatible(self, other: "Jet"):
        if not isinstance(other, Jet):
            raise StructuralError("expected a Jet")
        if other.m != self.m or other.K != self.K:
            raise StructuralError(
                f"incompatible jets: (m={self.m}, K={self.K}) vs (m={other.m}, K={other.K})")
        if self.center.shape == other.center.shape:
            same = np.allclose(self.center, other.center, rtol=0, atol=1e-13)
        else:
            try:
                same = np.allclose(np.broadcast_to(self.center, np.broadcast_shapes(
                    self.center.shape, other.center.shape)), other.center, rtol=0, atol=1e-13)
            except ValueError:
                same = False
        if not same:
            raise StructuralError("jets have different expansion points")

    def truncate(self, K: int) -> "Jet":
        if K > self.K:
            raise StructuralError("cannot raise the order of a jet")
        sl = (slice(0, K + 1),) * self.m
        return Jet(self.c[sl], self.center, self.m)

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet):
            self._compatible(other)
            return self._like(self.c + other.c)
        c = self.c.copy()
        c[(0,) * self.m] = c[(0,) * self.m] + other
        return self._like(c)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return self._like(self.c * np.asarray(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other.reciprocal())
        return self._like(self.c / np.asarray(other))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            return self.power(k)
        out = Jet.constant(np.ones(self.batch_shape), self.m, self.K, self.center)
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    # -- univariate functions ----------------------------------------------------
    def apply_series(self, coeffs: Sequence) -> "Jet":
        """Return ``sum_k coeffs[k] (self - self(0))^k`` (Horner form).

        ``coeffs[k]`` are Taylor coefficients of an outer function at the
        constant term of ``self``; they may be arrays over the batch axes.
        """
        nil = self - self.value()
        out = Jet.constant(np.broadcast_to(np.asarray(coeffs[self.K], dtype=complex),
                                           self.batch_shape), self.m, self.K, self.center)
        for k in range(self.K - 1, -1, -1):
            out = out * nil + coeffs[k]
        return out

    def exp(self) -> "Jet":
        e = np.exp(self.value())
        return self.apply_series([e / factorial(k) for k in range(self.K + 1)])

    def reciprocal(self) -> "Jet":
        a = self.value()
        if np.any(a == 0):
            raise DomainError("reciprocal of a jet with vanishing constant term")
        return self.apply_series([(-1) ** k / a ** (k + 1) for k in range(self.K + 1)])

    def log(self) -> "Jet":
        a = self.value()
        co = [np.log(a)] + [(-1) ** (k + 1) / (k * a ** k) for k in range(1, self.K + 1)]
        return self.apply_series(co)

    def power(self, s: float) -> "Jet":
        a = self.value()
        co, b = [], 1.0
        for k in range(self.K + 1):
            co.append(b * a ** (s - k))
            b = b * (s - k) / (k + 1)
        return self.apply_series(co)

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def sin(self) -> "Jet":
        a = self.value()
        cyc = [np.sin(a), np.cos(a), -np.sin(a), -np.cos(a)]
        return self.apply_series([cyc[k % 4] / factorial(k) for k in range(self.K + 1)])

    def cos(self) -> "Jet":
        a = self.value()
        cyc = [np.cos(a), -np.sin(a), -np.cos(a), np.sin(a)]
        return self.apply_series([cyc[k % 4] / factorial(k) for k in range(self.K + 1)])

    # -- calculus ------------------------------------------------------------------
    def derivative(self, i: int) -> "Jet":
        """Partial derivative in variable ``i``; the order drops by one.

        The result keeps order ``K`` with its top-degree coefficients zero, so it
        stays compatible with the original jet.
        """
        c = np.zeros_like(self.c)
        for a in self.indices():
            if a[i] >= 1:
                b = list(a)
                b[i] -= 1
                c[tuple(b)] += a[i] * self.c[a]
        return self._like(c)

    def evaluate(self, point) -> np.ndarray:
        """Evaluate the polynomial at ``point`` (shape ``(m,) + batch``)."""
        point = np.asarray(point, dtype=complex)
        d = [point[i] - self.center[i] for i in range(self.m)]
        out = 0
        for a in self.indices():
            term = self.c[a]
            for i, ai in enumerate(a):
                if ai:
                    term = term * d[i] ** ai
            out = out + term
        return np.asarray(out)

    def partial(self, alpha) -> np.ndarray:
        """Partial derivative ``d^alpha`` at the expansion point."""
        alpha = tuple(alpha)
        f = 1
        for ai in alpha:
            f *= factorial(ai)
        return self[alpha] * f

    def conj_coeffs(self) -> "Jet":
        return Jet(np.conj(self.c), np.conj(self.center), self.m)

    def max_abs(self, order: int | None = None) -> float:
        """Largest coefficient modulus, optionally restricted to total degree ``order``."""
        vals = [np.max(np.abs(self.c[a])) for a in self.indices()
                if order is None or sum(a) == order]
        return float(max(vals)) if vals else 0.0

    def __repr__(self):
        return f"Jet(m={self.m}, K={self.K}, batch={self.batch_shape})"


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Truncated Cauchy product of two compatible jets."""
    a._compatible(b)
    bs = np.broadcast_shapes(a.batch_shape, b.batch_shape)
    c = np.zeros((a.K + 1,) * a.m + bs, dtype=complex)
    for ia, ib, s in _pairs(a.m, a.K):
        c[s] += a.c[ia] * b.c[ib]
    center = a.center if a.center.ndim >= b.center.ndim else b.center
    return Jet(c, center, a.m)


def jet_compose(f: Jet, g: Sequence[Jet], atol: float = 1e-12) -> Jet:
    """Substitute the jets ``g`` into the outer jet ``f``.

    Parameters
    ----------
    f : Jet
        Outer jet in ``len(g)`` variables, expanded about ``p``.
    g : sequence of Jet
        Inner jets, all compatible with each other, with constant terms
        equal to ``p``.

    Returns
    -------
    Jet
        ``f(g_1, ..., g_k)`` truncated at the inner order.
    """
    g = tuple(g)
    if len(g) != f.m:
        raise StructuralError(f"outer jet has {f.m} variables, got {len(g)} inner jets")
    for gi in g[1:]:
        g[0]._compatible(gi)
    for i, gi in enumerate(g):
        off = gi.value() - f.center[i]
        if np.max(np.abs(off)) > atol * (1 + np.max(np.abs(f.center[i]))):
            raise DomainError(
                f"inner jet {i} has constant term offset {np.max(np.abs(off)):.3e} "
                "from the outer expansion point")
    base = g[0]
    K = base.K
    nil = [gi - gi.value() for gi in g]
    # powers of each nilpotent part, computed once
    one = Jet.constant(np.ones(base.batch_shape), base.m, K, base.center)
    pw = []
    for ni in nil:
        lst = [one]
        for _ in range(min(f.K, K)):
            lst.append(lst[-1] * ni)
        pw.append(lst)
    out = Jet.zeros(base.m, K, base.center, base.batch_shape)
    for a in f.indices():
        if any(ai > K for ai in a):
            continue
        coef = f.c[a]
        if np.all(coef == 0):
            continue
        term = pw[0][a[0]]
        for i in range(1, f.m):
            term = term * pw[i][a[i]]
        out = out + term * coef
    return out


# ---------------------------------------------------------------------------
# real Taylor jets and almost analytic extensions


def _central_stencil(order: int, accuracy: int = 4):
    """Offsets and weights of a central difference for the given derivative."""
    if order == 0:
        return np.array([0]), np.array([1.0])
    p = (order + 1) // 2 - 1 + accuracy // 2
    offs = np.arange(-p, p + 1)
    A = np.vander(offs, increasing=True).T.astype(float)
    rhs = np.zeros(len(offs))
    rhs[order] = factorial(order)
    return offs, np.linalg.solve(A, rhs)


def fd_derivative(f: Callable, point, alpha, step: float | None = FD_STEP) -> np.ndarray:
    """4th-order central finite-difference estimate of ``d^alpha f(point)``.

    ``point`` has shape ``(m,) + batch``; ``f`` takes ``m`` arrays.  The
    default step depends on the total order ``n``: ``eps^(1/(n+4))``.
    """
    point = [np.asarray(p, dtype=float) for p in point]
    alpha = tuple(alpha)
    if step is None:
        step = np.finfo(float).eps ** (1.0 / (sum(alpha) + 4))
    stencils = [_central_stencil(a) for a in alpha]
    out = 0.0
    for combo in itertools.product(*[range(len(s[0])) for s in stencils]):
        w = 1.0
        args = []
        for i, k in enumerate(combo):
            off, wt = stencils[i]
            w *= wt[k]
            args.append(point[i] + off[k] * step)
        if w != 0:
            out = out + w * np.asarray(f(*args))
    return out / step ** sum(alpha)


def real_taylor(f, mu, K: int) -> Jet:
    """Real Taylor jet of ``f`` in ``(x, xi)`` about ``mu``.

    ``f`` is either an object with a ``taylor(center, K)`` method returning a
    :class:`Jet` (closed-form derivatives), or a plain callable ``f(x, xi)``,
    differentiated by 4th-order central differences up to order
    ``FD_MAX_ORDER``.
    """
    mu = np.asarray(mu, dtype=float)
    if hasattr(f, "taylor"):
        max_order = getattr(f, "max_order", np.inf)
        if K > max_order:
            raise CapabilityError(f"order {K} exceeds available derivative order {max_order}")
        return f.taylor(mu, K)
    if K > FD_MAX_ORDER:
        raise CapabilityError(
            f"order {K} exceeds the finite-difference derivative order {FD_MAX_ORDER}")
    j = Jet.zeros(2, K, mu.astype(complex), mu.shape[1:])
    for a in _indices(2, K):
        j.c[a] = fd_derivative(f, mu, a) / (factorial(a[0]) * factorial(a[1]))
    return j


def aa_extend(f, mu, K: int) -> Jet:
    """Order-``K`` almost analytic extension of ``f`` about the real point ``mu``.

    With ``z = x - i xi`` the result is a jet ``g(z, w)`` in two complex
    variables, expanded about ``(z_mu, conj(z_mu))``, such that
    ``g(z, conj(z))`` agrees with ``f`` to order ``K``.

    Parameters
    ----------
    f : callable or object with ``taylor``
        Function of ``(x, xi)``; see :func:`real_taylor`.
    mu : array_like
        Real expansion point(s), shape ``(2,) + batch``.
    K : int
        Truncation order.
    """
    mu = np.asarray(mu, dtype=float)
    t = real_taylor(f, mu, K)
    return real_to_zw(t)


def real_to_zw(t: Jet) -> Jet:
    """Rewrite a jet in ``(x, xi)`` as a jet in ``(z, w)``, ``x = (z+w)/2``,
    ``xi = i(z-w)/2``, expanded about ``(z_mu, conj(z_mu))``."""
    mu = t.center
    zc = mu[0] - 1j * mu[1]
    center = np.stack([zc, np.conj(zc)])
    Z, W = Jet.variables(2, t.K, center)
    xj = (Z + W) * 0.5
    xij = (Z - W) * 0.5j
    return jet_compose(t, (xj, xij))


# ---------------------------------------------------------------------------
# functions usable on both arrays and jets


def _dispatch(name: str, npfunc):
    def f(v):
        if isinstance(v, Jet):
            return getattr(v, name)()
        return npfunc(v)
    f.__name__ = name
    f.__doc__ = f"``{name}`` acting on arrays or jets."
    return f


exp = _dispatch("exp", np.exp)
sin = _dispatch("sin", np.sin)
cos = _dispatch("cos", np.cos)
sqrt = _dispatch("sqrt", np.sqrt)
log = _dispatch("log", np.log)


class Analytic:
    """Closed-form function of ``(x, xi)`` with Taylor jets by evaluation on jets.

    ``func`` must be written with arithmetic and the dispatching helpers
    :func:`exp`, :func:`sin`, ... of this module, so that calling it on
    :class:`Jet` arguments yields its exact Taylor expansion.
    """

    max_order = np.inf

    def __init__(self, func: Callable, name: str = ""):
        self.func = func
        self.name = name or getattr(func, "__name__", "analytic")

    def __call__(self, x, xi):
        return self.func(x, xi)

    def taylor(self, center, K: int) -> Jet:
        center = np.asarray(center, dtype=complex)
        X, XI = Jet.variables(2, K, center)
        out = self.func(X, XI)
        if not isinstance(out, Jet):
            out = Jet.constant(np.broadcast_to(out, center.shape[1:]), 2, K, center)
        return out
