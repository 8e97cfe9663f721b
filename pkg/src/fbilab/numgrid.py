"""Grids, quadrature and inner products on ``R`` and ``T*R``.

A :class:`PhaseSpaceGrid` holds two uniform midpoint grids:

* a *base* grid ``y_j`` on ``[-L_b, L_b)`` for functions ``u(y)``;
* a *phase* grid ``(x_i, xi_k)`` on ``[-L_x, L_x) x [-L_xi, L_xi)`` for
  functions ``F(x, xi)``.

The base spacing is tied to the momentum box through ``dy = pi h / L_xi``,
so the phase grid spans exactly one period of the discrete Fourier dual of
the base grid.  With this choice the discrete FBI transform is an isometry
up to the Gaussian tail at the edge of the ``x`` box, which is what makes
the exact discrete projectors of :mod:`fbilab.fbi` and
:mod:`fbilab.wproj` possible.

Phase-space nodes are stored flat in ``x``-major order: node ``i * nxi + k``
is ``(x_i, xi_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (ConfigurationError, DegenerateInputError, DomainError,
                     StructuralError, CapabilityError)

__all__ = [
    "PhaseSpaceGrid",
    "GridFunction",
    "inner_product",
    "norm",
    "slope_fit",
    "gaussian_tail",
]

KAPPA_DEFAULT = 0.2
KAPPA_MAX = 0.25
MAX_POINTS = 512
# half-width of the strip where exp(-(x-y)^2/h) is above round-off
EDGE_MARGIN = 6.0


def gaussian_tail(L: float, h: float) -> float:
    """Mass of ``exp(-y^2/(2h))`` outside ``[-L, L]`` relative to the total."""
    from math import erfc, sqrt

    return erfc(L / sqrt(2.0 * h))


@dataclass(frozen=True, eq=False)
class PhaseSpaceGrid:
    """Uniform midpoint grids on the base space and on phase space.

    Parameters
    ----------
    h : float
        Semiclassical parameter, ``0 < h <= 1``.
    Lx, Lxi : float
        Half-widths of the phase-space box.
    Lb : float
        Requested half-width of the base box.  The stored value is rounded so
        that it holds an integer number of cells of width ``dy``.
    kappa : float
        Resolution factor; the phase steps satisfy ``d <= kappa * sqrt(h)``.
    n : int
        Dimension.  Only ``n = 1`` is implemented.
    """

    h: float
    Lx: float = 6.0
    Lxi: float = 6.0
    Lb: float | None = None
    kappa: float = KAPPA_DEFAULT
    n: int = 1
    nx: int = field(init=False)
    nxi: int = field(init=False)
    nb: int = field(init=False)

    def __post_init__(self):
        h = float(self.h)
        if not 0.0 < h <= 1.0:
            raise ConfigurationError(f"h must lie in (0, 1], got {h}")
        if self.n != 1:
            raise CapabilityError("only n = 1 grids are implemented")
        if not 0.0 < self.kappa <= KAPPA_MAX:
            raise ConfigurationError(
                f"resolution factor kappa={self.kappa} must lie in (0, {KAPPA_MAX}]")
        step = self.kappa * np.sqrt(h)
        nx = int(np.ceil(2 * self.Lx / step))
        nxi = int(np.ceil(2 * self.Lxi / step))
        if max(nx, nxi) > MAX_POINTS:
            raise ConfigurationError(
                f"phase grid needs {max(nx, nxi)} points per axis at h={h} "
                f"(limit {MAX_POINTS}); shrink the box or raise kappa")
        dy = np.pi * h / self.Lxi
        Lb = self.Lx - EDGE_MARGIN * np.sqrt(h) if self.Lb is None else self.Lb
        if Lb <= 0:
            raise ConfigurationError("base box is empty; enlarge Lx")
        if Lb > self.Lx - EDGE_MARGIN * np.sqrt(h) + 1e-12:
            raise ConfigurationError(
                f"base half-width {Lb} leaves less than {EDGE_MARGIN} sqrt(h) "
                f"to the phase box edge {self.Lx}")
        nb = max(int(np.floor(2 * Lb / dy)), 2)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "nxi", nxi)
        object.__setattr__(self, "nb", nb)
        object.__setattr__(self, "Lb", nb * dy / 2)

    @classmethod
    def around(cls, h: float, rho: float = 1.5, kappa: float = KAPPA_DEFAULT,
               pad: float = 10.0) -> "PhaseSpaceGrid":
        """Grid whose box covers the disc of radius ``rho`` plus Gaussian tails.

        The phase box half-width is ``rho + pad sqrt(h)`` and the base box
        keeps ``EDGE_MARGIN sqrt(h)`` away from its edge.
        """
        L = rho + pad * np.sqrt(h)
        return cls(h=h, Lx=L, Lxi=L, kappa=kappa)

    # -- spacings -----------------------------------------------------------
    @property
    def dx(self) -> float:
        return 2 * self.Lx / self.nx

    @property
    def dxi(self) -> float:
        return 2 * self.Lxi / self.nxi

    @property
    def dy(self) -> float:
        return np.pi * self.h / self.Lxi

    # -- nodes --------------------------------------------------------------
    @property
    def x(self) -> np.ndarray:
        return -self.Lx + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def xi(self) -> np.ndarray:
        return -self.Lxi + (np.arange(self.nxi) + 0.5) * self.dxi

    @property
    def y(self) -> np.ndarray:
        return -self.Lb + (np.arange(self.nb) + 0.5) * self.dy

    @property
    def n_phase(self) -> int:
        return self.nx * self.nxi

    @property
    def n_base(self) -> int:
        return self.nb

    def phase_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat arrays ``(X, XI)`` of all phase nodes in x-major order."""
        X, XI = np.meshgrid(self.x, self.xi, indexing="ij")
        return X.ravel(), XI.ravel()

    @property
    def phase_weight(self) -> float:
        """Quadrature weight of every phase node (midpoint rule)."""
        return self.dx * self.dxi

    @property
    def base_weight(self) -> float:
        return self.dy

    def phase_weights(self) -> np.ndarray:
        return np.full(self.n_phase, self.phase_weight)

    def base_weights(self) -> np.ndarray:
        return np.full(self.n_base, self.base_weight)

    @property
    def phase_volume(self) -> float:
        return 4 * self.Lx * self.Lxi

    @property
    def base_volume(self) -> float:
        return 2 * self.Lb

    def resolution_ok(self) -> bool:
        step = self.kappa * np.sqrt(self.h) * (1 + 1e-12)
        return self.dx <= step and self.dxi <= step

    def key(self) -> tuple:
        return (self.h, self.Lx, self.Lxi, self.Lb, self.kappa, self.nx,
                self.nxi, self.nb)

    def __eq__(self, other):
        return isinstance(other, PhaseSpaceGrid) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def describe(self) -> str:
        return (f"h={self.h:g} box=[{-self.Lx:.3f},{self.Lx:.3f}]x"
                f"[{-self.Lxi:.3f},{self.Lxi:.3f}] N={self.nx}x{self.nxi} "
                f"base N={self.nb} dy={self.dy:.4g}")

    # -- constructors for grid functions -------------------------------------
    def base_function(self, values) -> "GridFunction":
        return GridFunction(self, np.asarray(values, dtype=complex), "base")

    def phase_function(self, values) -> "GridFunction":
        return GridFunction(self, np.asarray(values, dtype=complex), "phase")


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex node values on a grid, tagged ``"base"`` or ``"phase"``."""

    grid: PhaseSpaceGrid
    values: np.ndarray
    tag: str

    def __post_init__(self):
        if self.tag not in ("base", "phase"):
            raise StructuralError(f"unknown tag {self.tag!r}")
        expected = self.grid.n_base if self.tag == "base" else self.grid.n_phase
        if self.values.shape[0] != expected:
            raise StructuralError(
                f"{self.tag} function has {self.values.shape[0]} values, "
                f"grid has {expected} nodes")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("grid function has non-finite entries")

    def weights(self) -> np.ndarray:
        if self.tag == "base":
            return self.grid.base_weights()
        return self.grid.phase_weights()

    def _check(self, other: "GridFunction"):
        if not isinstance(other, GridFunction):
            raise StructuralError("expected a GridFunction")
        if self.grid != other.grid or self.tag != other.tag:
            raise StructuralError("grid functions live on different grids")

    def __add__(self, other):
        self._check(other)
        return GridFunction(self.grid, self.values + other.values, self.tag)

    def __sub__(self, other):
        self._check(other)
        return GridFunction(self.grid, self.values - other.values, self.tag)

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * c, self.tag)

    __rmul__ = __mul__


def inner_product(F: GridFunction, G: GridFunction, w=None) -> complex:
    """Quadrature inner product ``sum F conj(G) w q`` over the nodes.

    Parameters
    ----------
    F, G : GridFunction
        Functions on the same grid with the same tag.
    w : array_like, optional
        Positive weight field, e.g. ``exp(-2 phi / h)``.  Absent means 1.
    """
    F._check(G)
    q = F.weights()
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != q.shape:
            raise StructuralError("weight field does not match the grid")
        if not np.all(np.isfinite(w)):
            raise DomainError("weight field has non-finite entries")
        if np.any(w <= 0):
            raise DomainError("weight field must be strictly positive")
        q = q * w
    return complex(np.sum(F.values * np.conj(G.values) * q))


def norm(F: GridFunction, w=None) -> float:
    return float(np.sqrt(inner_product(F, F, w).real))


def slope_fit(pairs: Iterable[Sequence[float]]) -> tuple[float, float]:
    """Least-squares slope of ``log(residual)`` against ``log(h)``.

    Parameters
    ----------
    pairs : iterable of (h, residual)
        At least four pairs with distinct ``h`` and positive residuals.

    Returns
    -------
    slope, r2 : float
        Fitted exponent and coefficient of determination.
    """
    pairs = [(float(h), float(r)) for h, r in pairs]
    if len(pairs) < 4:
        raise DegenerateInputError(f"need at least 4 (h, residual) pairs, got {len(pairs)}")
    hs = np.array([p[0] for p in pairs])
    rs = np.array([p[1] for p in pairs])
    if len(set(hs.tolist())) != len(hs):
        raise DegenerateInputError("h values must be distinct")
    for h, r in pairs:
        if not (r > 0) or not np.isfinite(r):
            raise DegenerateInputError(f"residual {r!r} at h={h} is not positive")
    lx, ly = np.log(hs), np.log(rs)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2
