"""The FBI transform, its adjoint and the orthogonal projector onto its range.

For ``n = 1``

    T u(x, xi) = c h^{-3/4} int exp((i/h)((x - y) xi + (i/2)(x - y)^2)) u(y) dy,

with ``c = 2^{-1/2} pi^{-3/4}``, which makes ``T`` an isometry
``L^2(R) -> L^2(T*R)``.  The projector ``Pi_0 = T T*`` has the kernel
``c0 h^{-1} exp(i psi0 / h)`` with ``c0 = 1/(2 pi)`` and

    psi0(a, b) = (x xi - x' xi')/2 + (x xi' - xi x')/2
                 + (i/4)(x - x')^2 + (i/4)(xi - xi')^2.

Both constants were fixed by calibration (see ``tests/test_fbi.py``) and agree
with the closed forms above.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, StructuralError
from .numgrid import GridFunction, PhaseSpaceGrid

__all__ = [
    "FBI_C",
    "PI0_C0",
    "FbiOperator",
    "Pi0Kernel",
    "fbi_kernel",
    "fbi_forward",
    "fbi_adjoint",
    "pi0_apply",
    "zj_residual",
    "psi0",
    "hermite_function",
    "coherent_state",
]

FBI_C = 2.0 ** -0.5 * np.pi ** -0.75
PI0_C0 = 1.0 / (2.0 * np.pi)


def fbi_kernel(z, zeta, y, h: float) -> np.ndarray:
    """FBI kernel at (possibly complex) phase points ``(z, zeta)`` and real ``y``.

    Arguments broadcast against each other.
    """
    d = z - y
    return FBI_C * h ** -0.75 * np.exp((1j / h) * (d * zeta + 0.5j * d * d))


def psi0(x, xi, xp, xip):
    """Phase of the kernel of ``Pi_0`` between ``(x, xi)`` and ``(xp, xip)``."""
    return (0.5 * (x * xi - xp * xip) + 0.5 * (x * xip - xi * xp)
            + 0.25j * ((x - xp) ** 2 + (xi - xip) ** 2))


class FbiOperator:
    """Dense discrete FBI transform on a :class:`PhaseSpaceGrid`.

    The matrix ``K`` holds kernel values at (phase node, base node) pairs.
    ``T u = K @ (u dy)`` and ``T* F = K^H @ (F dx dxi)``.
    """

    def __init__(self, grid: PhaseSpaceGrid):
        self.grid = grid
        self.h = grid.h
        self.c = FBI_C
        x, xi, y = grid.x, grid.xi, grid.y
        h = grid.h
        gauss = np.exp(-(x[:, None] - y[None, :]) ** 2 / (2 * h))        # (nx, nb)
        wave_y = np.exp(-1j * xi[:, None] * y[None, :] / h)              # (nxi, nb)
        wave_x = np.exp(1j * x[:, None] * xi[None, :] / h)               # (nx, nxi)
        K = (FBI_C * h ** -0.75) * (wave_x[:, :, None] * gauss[:, None, :]) * wave_y[None, :, :]
        self.K = K.reshape(grid.n_phase, grid.n_base)

    # -- array level -----------------------------------------------------------
    def forward(self, u: np.ndarray) -> np.ndarray:
        """``T u`` for node values ``u`` (shape ``(nb,)`` or ``(nb, k)``)."""
        return self.K @ (u * self.grid.dy)

    def adjoint(self, F: np.ndarray) -> np.ndarray:
        """Flat-``L^2`` adjoint ``T* F``."""
        return self.K.conj().T @ (F * self.grid.phase_weight)

    def project(self, F: np.ndarray) -> np.ndarray:
        """``Pi_0 F = T T* F``."""
        return self.forward(self.adjoint(F))

    def matrix(self) -> np.ndarray:
        """Matrix of ``T`` acting on node values (quadrature weight included)."""
        return self.K * self.grid.dy

    def _check(self, F: GridFunction, tag: str):
        if not isinstance(F, GridFunction) or F.grid != self.grid:
            raise StructuralError("grid function lives on a different grid")
        if F.tag != tag:
            raise StructuralError(f"expected a {tag} function, got {F.tag}")


class Pi0Kernel:
    """Closed-form kernel ``c0 h^{-1} exp(i psi0/h)`` of ``Pi_0``."""

    def __init__(self, h: float, c0: float = PI0_C0):
        self.h = h
        self.c0 = c0

    @staticmethod
    def phase(x, xi, xp, xip):
        return psi0(x, xi, xp, xip)

    def __call__(self, x, xi, xp, xip):
        return self.c0 / self.h * np.exp(1j * psi0(x, xi, xp, xip) / self.h)

    def apply_at(self, grid: PhaseSpaceGrid, F: np.ndarray, points) -> np.ndarray:
        """Quadrature of the kernel against ``F`` at output ``points`` (2, k)."""
        X, XI = grid.phase_nodes()
        px, pxi = np.asarray(points, dtype=float)
        vals = self(px[:, None], pxi[:, None], X[None, :], XI[None, :])
        return vals @ (F * grid.phase_weight)


def fbi_forward(T: FbiOperator, u: GridFunction) -> GridFunction:
    """Apply ``T`` to a base grid function."""
    T._check(u, "base")
    return T.grid.phase_function(T.forward(u.values))


def fbi_adjoint(T: FbiOperator, F: GridFunction) -> GridFunction:
    """Apply ``T*`` to a phase grid function."""
    T._check(F, "phase")
    return T.grid.base_function(T.adjoint(F.values))


def pi0_apply(T: FbiOperator, F: GridFunction) -> GridFunction:
    """Apply ``Pi_0 = T T*`` to a phase grid function."""
    T._check(F, "phase")
    return T.grid.phase_function(T.project(F.values))


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def _ddx(A: np.ndarray, step: float, axis: int) -> np.ndarray:
    """4th-order central first derivative on interior points (2 dropped per side)."""
    n = A.shape[axis]
    out = 0
    for k, w in enumerate(_D1):
        if w:
            sl = [slice(2, n - 2)] * A.ndim
            sl[axis] = slice(k, n - 4 + k)
            out = out + w * A[tuple(sl)]
    return out / step


def zj_residual(F: GridFunction, j: int = 0) -> float:
    """Relative residual ``||(h D_x - xi - i h D_xi) F|| / ||F||``.

    Derivatives are 4th-order central differences; the two outermost rows of
    nodes on each side are excluded from both norms.
    """
    if F.tag != "phase":
        raise StructuralError("zj_residual needs a phase-space function")
    if j != 0:
        raise StructuralError("only axis j = 0 exists for n = 1")
    g = F.grid
    A = F.values.reshape(g.nx, g.nxi)
    inner = A[2:-2, 2:-2]
    nrm = np.sqrt(np.sum(np.abs(inner) ** 2))
    if nrm == 0:
        raise DegenerateInputError("zj_residual of the zero function")
    h = g.h
    dx = _ddx(A, g.dx, 0)
    dxi = _ddx(A, g.dxi, 1)
    xi = g.xi[2:-2][None, :]
    Z = -1j * h * dx - xi * inner - 1j * (-1j * h * dxi)
    return float(np.sqrt(np.sum(np.abs(Z) ** 2)) / nrm)


# -- test family ----------------------------------------------------------------

def hermite_function(k: int, y, h: float, center: float = 0.0, momentum: float = 0.0):
    """Semiclassical Hermite function of order ``k``, L^2-normalized.

    ``h_k((y - center)/sqrt(h))`` times ``exp(i momentum y / h)``, where
    ``h_k`` is the k-th Hermite function.
    """
    s = (np.asarray(y, dtype=float) - center) / np.sqrt(h)
    # stable three-term recurrence for normalized Hermite functions
    p0 = np.pi ** -0.25 * np.exp(-s * s / 2)
    if k == 0:
        out = p0
    else:
        p1 = np.sqrt(2.0) * s * p0
        for n in range(2, k + 1):
            p0, p1 = p1, np.sqrt(2.0 / n) * s * p1 - np.sqrt((n - 1) / n) * p0
        out = p1
    return out * h ** -0.25 * np.exp(1j * momentum * np.asarray(y) / h)


def coherent_state(y, h: float, center: float = 0.0, momentum: float = 0.0):
    """Normalized Gaussian wave packet at ``(center, momentum)``."""
    return hermite_function(0, y, h, center, momentum)
