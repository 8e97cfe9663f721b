"""Compactly supported weights and the flat and weighted FBI-side residuals.

The weighted space is ``L^2_phi = L^2(T*R, exp(-2 phi/h) dx dxi)``.  With
``z = x - i xi`` and ``d_z = (d_x + i d_xi)/2`` the deformed symbol is

    p_phi(x, xi) = p(x + 2 d_z phi, xi - 2i d_z phi).

The three residual functions below measure how far ``T P`` is from
multiplication by ``p`` (or ``p_phi``) on the FBI side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import jets
from .errors import DegenerateInputError, DomainError, PreconditionError
from .fbi import FbiOperator
from .jets import Jet
from .numgrid import PhaseSpaceGrid
from .symbols import Symbol, quantize

__all__ = [
    "Weight",
    "bump_weight",
    "xi_bump_weight",
    "zero_weight",
    "dz_weight",
    "deformed_symbol",
    "cofe_residual",
    "sjostrand_residual",
    "t2_residual",
    "operator_for",
    "quantized_for",
    "EPS0",
]

EPS0 = 0.5


@lru_cache(maxsize=2)
def operator_for(grid: PhaseSpaceGrid) -> FbiOperator:
    """Cached dense FBI operator for a grid (at most two kept alive)."""
    return FbiOperator(grid)


@lru_cache(maxsize=8)
def _quantized(grid: PhaseSpaceGrid, p: Symbol, flavor: str):
    return quantize(p, flavor, grid)


def quantized_for(grid: PhaseSpaceGrid, p: Symbol, flavor: str = "standard"):
    """Cached quantization of ``p`` on ``grid``."""
    return _quantized(grid, p, flavor)


@dataclass(frozen=True, eq=False)
class Weight:
    """Real, compactly supported phase-space function.

    Attributes
    ----------
    name : str
    taylor_func : callable
        Formula ``f(x, xi)`` valid on arrays and jets inside the support.
    eps : float
        Scale parameter.
    center, radius : support disc; the function vanishes outside.
    """

    name: str
    taylor_func: Callable
    eps: float
    center: tuple = (0.0, 0.0)
    radius: float = 2.0
    max_order = np.inf

    def _inside(self, x, xi):
        s = ((np.asarray(x, dtype=float) - self.center[0]) ** 2
             + (np.asarray(xi, dtype=float) - self.center[1]) ** 2) / self.radius ** 2
        return s < 1.0 - 1e-12

    def __call__(self, x, xi) -> np.ndarray:
        x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
        out = np.zeros(x.shape)
        m = self._inside(x, xi)
        if np.any(m):
            out[m] = np.real(self.taylor_func(x[m], xi[m]))
        return out

    def taylor(self, center, K: int) -> Jet:
        """Exact Taylor jet in ``(x, xi)`` about real ``center`` (shape ``(2,)+batch``)."""
        center = np.asarray(center, dtype=float)
        batch = center.shape[1:]
        m = self._inside(center[0], center[1])
        safe = np.where(m, center, np.asarray(self.center, dtype=float).reshape((2,) + (1,) * len(batch)))
        X, XI = Jet.variables(2, K, safe.astype(complex))
        j = self.taylor_func(X, XI)
        c = np.where(m, j.c, 0.0)
        return Jet(c, center.astype(complex), 2)

    def derivatives(self, x, xi, K: int = 2) -> Jet:
        """Taylor jets at the given points (any broadcastable shape)."""
        x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
        return self.taylor(np.stack([x, xi]), K)

    def gradient(self, x, xi):
        j = self.derivatives(x, xi, 1)
        return j[1, 0].real, j[0, 1].real

    def c2_norm(self, grid: Optional[PhaseSpaceGrid] = None, n: int = 201) -> float:
        """``max(sup|phi|, sup|d phi|, sup|d^2 phi|)`` over grid nodes or a sample.

        ``|d phi|`` is the Euclidean norm of the gradient and ``|d^2 phi|`` the
        spectral norm of the Hessian.
        """
        if grid is None:
            r = self.radius
            gx = np.linspace(self.center[0] - r, self.center[0] + r, n)
            gxi = np.linspace(self.center[1] - r, self.center[1] + r, n)
        else:
            gx, gxi = grid.x, grid.xi
        X, XI = np.meshgrid(gx, gxi, indexing="ij")
        j = self.derivatives(X, XI, 2)
        v = np.abs(j[0, 0].real)
        g = np.hypot(j[1, 0].real, j[0, 1].real)
        a, b, c = 2 * j[2, 0].real, j[1, 1].real, 2 * j[0, 2].real
        # spectral norm of [[a, b], [b, c]]
        hess = np.abs(0.5 * (a + c)) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
        return float(max(v.max(), g.max(), hess.max()))

    def gate(self, eps0: float = EPS0, grid: Optional[PhaseSpaceGrid] = None) -> float:
        """Enforce the smallness gate ``||phi||_{C^2} < eps0``; returns the norm."""
        c2 = self.c2_norm(grid)
        if not c2 < eps0:
            raise PreconditionError(
                f"weight {self.name}: ||phi||_C2 = {c2:.4g} is not below eps0 = {eps0}")
        return c2

    def inside_box(self, grid: PhaseSpaceGrid) -> bool:
        return (abs(self.center[0]) + self.radius < grid.Lx
                and abs(self.center[1]) + self.radius < grid.Lxi)

    def is_zero(self) -> bool:
        return self.eps == 0.0


def _bump_shape(R: float, cx: float, cxi: float):
    def rho(x, xi):
        s = ((x - cx) * (x - cx) + (xi - cxi) * (xi - cxi)) * (1.0 / R ** 2)
        return jets.exp(1.0 - 1.0 / (1.0 - s))
    return rho


def bump_weight(eps: float, R: float = 2.0, center=(0.0, 0.0)) -> Weight:
    """``eps * exp(1 - 1/(1 - r^2/R^2))`` on the disc of radius ``R``."""
    rho = _bump_shape(R, *center)
    return Weight(f"bump(eps={eps:g},R={R:g})", lambda x, xi: eps * rho(x, xi), eps,
                  tuple(center), R)


def xi_bump_weight(eps: float, R: float = 2.0, center=(0.0, 0.0)) -> Weight:
    """``eps * xi * rho(x, xi)`` with the unit bump ``rho``; depends on ``xi``."""
    rho = _bump_shape(R, *center)
    return Weight(f"xibump(eps={eps:g},R={R:g})", lambda x, xi: eps * xi * rho(x, xi), eps,
                  tuple(center), R)


def zero_weight() -> Weight:
    return Weight("zero", lambda x, xi: 0.0 * x * xi, 0.0, (0.0, 0.0), 1.0)


def dz_weight(phi: Weight, x, xi) -> np.ndarray:
    """``d_z phi = (phi_x + i phi_xi)/2`` at real points."""
    px, pxi = phi.gradient(x, xi)
    return 0.5 * (px + 1j * pxi)


def deformed_symbol(p: Symbol, phi: Weight, x, xi) -> np.ndarray:
    """Values of ``p_phi`` at real points, after checking the strip.

    Raises
    ------
    DomainError
        If the shifted points leave the strip of ``p``; the message names the
        worst point.
    """
    x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
    d = 2.0 * dz_weight(phi, x, xi)
    z = x + d
    zeta = xi - 1j * d
    bad_z = np.abs(z.imag) / p.a
    bad_zeta = np.abs(zeta.imag) / p.b
    worst = np.maximum(bad_z, bad_zeta)
    if worst.size and worst.max() > 1:
        k = int(np.argmax(worst))
        raise DomainError(
            f"deformed point leaves the strip of {p.name} at (x, xi) = "
            f"({x.flat[k]:.4g}, {xi.flat[k]:.4g}): |Im z| = {abs(z.imag.flat[k]):.4g} "
            f"(a = {p.a}), |Im zeta| = {abs(zeta.imag.flat[k]):.4g} (b = {p.b})")
    return p(z, zeta)


# ---------------------------------------------------------------------------
# residuals


def _prep(grid, u, v):
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    nu = np.sqrt(np.sum(np.abs(u) ** 2) * grid.dy)
    nv = np.sqrt(np.sum(np.abs(v) ** 2) * grid.dy)
    if nu == 0 or nv == 0:
        raise DegenerateInputError("test functions must be nonzero")
    return u, v, nu, nv


def cofe_residual(p: Symbol, u, v, grid: PhaseSpaceGrid, flavor: str = "standard") -> float:
    """``|<TPu, Tv> - <p Tu, Tv>| / (||u|| ||v||)`` in flat ``L^2(T*R)``.

    ``u`` and ``v`` are base node values.
    """
    u, v, nu, nv = _prep(grid, u, v)
    T = operator_for(grid)
    P = quantized_for(grid, p, flavor)
    X, XI = grid.phase_nodes()
    TPu = T.forward(P.matrix @ u)
    Tu = T.forward(u)
    Tv = T.forward(v)
    d = np.sum((TPu - p(X, XI) * Tu) * np.conj(Tv)) * grid.phase_weight
    return float(abs(d) / (nu * nv))


def sjostrand_residual(p: Symbol, u, grid: PhaseSpaceGrid, flavor: str = "standard") -> float:
    """``||TPu - p Tu|| / ||u||`` in flat ``L^2(T*R)``."""
    u, _, nu, _ = _prep(grid, u, u)
    T = operator_for(grid)
    P = quantized_for(grid, p, flavor)
    X, XI = grid.phase_nodes()
    r = T.forward(P.matrix @ u) - p(X, XI) * T.forward(u)
    return float(np.sqrt(np.sum(np.abs(r) ** 2) * grid.phase_weight) / nu)


def t2_residual(p: Symbol, phi: Weight, u, v, grid: PhaseSpaceGrid,
                flavor: str = "standard", deformed: bool = True,
                eps0: float = EPS0) -> float:
    """Weighted residual ``|<TPu,Tv>_phi - <p_phi Tu,Tv>_phi| / (||Tu||_phi ||Tv||_phi)``.

    Parameters
    ----------
    deformed : bool
        Subtract ``p_phi`` (default) or, for control runs, the undeformed ``p``.

    Notes
    -----
    For the zero weight this is literally :func:`cofe_residual`.
    """
    if phi.is_zero():
        return cofe_residual(p, u, v, grid, flavor)
    phi.gate(eps0, grid)
    u, v, _, _ = _prep(grid, u, v)
    T = operator_for(grid)
    P = quantized_for(grid, p, flavor)
    X, XI = grid.phase_nodes()
    mult = deformed_symbol(p, phi, X, XI) if deformed else p(X, XI)
    w = np.exp(-2.0 * phi(X, XI) / grid.h) * grid.phase_weight
    TPu = T.forward(P.matrix @ u)
    Tu = T.forward(u)
    Tv = T.forward(v)
    d = np.sum((TPu - mult * Tu) * np.conj(Tv) * w)
    nu = np.sqrt(np.sum(np.abs(Tu) ** 2 * w))
    nv = np.sqrt(np.sum(np.abs(Tv) ** 2 * w))
    if nu == 0 or nv == 0:
        raise DegenerateInputError("weighted norms vanish")
    return float(abs(d) / (nu * nv))
