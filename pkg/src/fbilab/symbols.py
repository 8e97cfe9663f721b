"""Test symbols, their holomorphic extensions and their quantizations.

Symbols are written with the dispatching helpers of :mod:`fbilab.jets`, so
the same formula evaluates on real or complex arrays and on jets.  The
latter gives exact Taylor coefficients, which the quasimode construction
and the derivative evaluators use.

Quantization is done on the base grid of a :class:`PhaseSpaceGrid` with the
discrete Fourier transform of that grid: the momentum quadrature runs over
the ``nb`` dual nodes in ``[-L_xi, L_xi)``, which is the momentum box of the
phase grid.  With this choice ``p = 1`` quantizes to the identity exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import jets
from .errors import ConfigurationError, DomainError, StructuralError
from .jets import Jet
from .numgrid import GridFunction, PhaseSpaceGrid

__all__ = [
    "Symbol",
    "QuantizedOperator",
    "quantize",
    "apply",
    "symbol_deformed_eval",
    "strip_honesty",
    "library",
    "get_symbol",
    "momentum_nodes",
]


@dataclass(frozen=True)
class Symbol:
    """Phase-space symbol with a holomorphic extension to a strip.

    Attributes
    ----------
    func : callable
        ``p(x, xi)``; must accept complex arrays and :class:`~fbilab.jets.Jet`.
    a, b : float
        Strip half-widths in ``Im x`` and ``Im xi``.
    M : float
        Declared bound of ``|p|`` on the strip over the sample box.
    p1 : callable, optional
        Subprincipal term; ``None`` means 0.
    sample_box : float
        Half-width of the real box on which ``M`` is claimed.
    """

    name: str
    func: Callable
    a: float = 0.3
    b: float = 0.3
    M: float = 1.0
    p1: Optional[Callable] = None
    sample_box: float = 3.0
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, x, xi):
        return self.func(x, xi)

    def subprincipal(self, x, xi):
        if self.p1 is None:
            return 0.0 * x * xi
        return self.p1(x, xi)

    def taylor(self, center, K: int) -> Jet:
        """Exact Taylor jet of ``p`` in ``(x, xi)`` about ``center``."""
        return jets.Analytic(self.func).taylor(center, K)

    def derivative(self, x, xi, alpha) -> np.ndarray:
        """``d_x^alpha[0] d_xi^alpha[1] p`` at real or complex points."""
        if sum(alpha) > 4:
            raise StructuralError("derivative evaluators go up to order 4")
        c = np.stack(np.broadcast_arrays(np.asarray(x, dtype=complex),
                                         np.asarray(xi, dtype=complex)))
        return self.taylor(c, sum(alpha)).partial(alpha)

    def with_p1(self, p1: Callable) -> "Symbol":
        return Symbol(self.name, self.func, self.a, self.b, self.M, p1,
                      self.sample_box, dict(self.meta))


def strip_honesty(p: Symbol, n: int = 20, tolerance: float = 0.05) -> tuple[bool, float]:
    """Sample ``|p|`` on an ``n^4`` complex grid inside the declared strip.

    Returns ``(ok, sampled_max)`` where ``ok`` means the sampled maximum does
    not exceed ``M`` by more than ``tolerance`` (relative).
    """
    L = p.sample_box
    r = np.linspace(-L, L, n)
    ia = np.linspace(-p.a, p.a, n)
    ib = np.linspace(-p.b, p.b, n)
    X, A, XI, B = np.meshgrid(r, ia, r, ib, indexing="ij", sparse=True)
    vals = np.abs(p(X + 1j * A, XI + 1j * B))
    m = float(np.max(vals))
    return m <= p.M * (1 + tolerance), m


def symbol_deformed_eval(p: Symbol, z, zeta) -> np.ndarray:
    """Holomorphic extension of ``p`` at complex points ``(z, zeta)``.

    Raises
    ------
    DomainError
        If ``|Im z| > a`` or ``|Im zeta| > b`` at some point.
    """
    z = np.asarray(z, dtype=complex)
    zeta = np.asarray(zeta, dtype=complex)
    iz = float(np.max(np.abs(z.imag))) if z.size else 0.0
    izeta = float(np.max(np.abs(zeta.imag))) if zeta.size else 0.0
    if iz > p.a:
        raise DomainError(f"|Im z| = {iz:.4g} exceeds the strip bound a = {p.a}")
    if izeta > p.b:
        raise DomainError(f"|Im zeta| = {izeta:.4g} exceeds the strip bound b = {p.b}")
    return p(z, zeta)


# ---------------------------------------------------------------------------
# quantization


def momentum_nodes(grid: PhaseSpaceGrid) -> np.ndarray:
    """Dual momentum nodes of the base grid, covering ``[-L_xi, L_xi)``."""
    nb, h, dy = grid.nb, grid.h, grid.dy
    return -np.pi * h / dy + (np.arange(nb) + 0.5) * 2 * np.pi * h / (nb * dy)


@dataclass(frozen=True, eq=False)
class QuantizedOperator:
    """Dense matrix of ``p(x, hD)`` or ``p^w(x, hD)`` on base nodes."""

    symbol: Symbol
    flavor: str
    grid: PhaseSpaceGrid
    matrix: np.ndarray

    @property
    def h(self) -> float:
        return self.grid.h

    def __matmul__(self, u):
        return self.matrix @ u


def quantize(p, flavor: str, grid: PhaseSpaceGrid, h: float | None = None) -> QuantizedOperator:
    """Matrix of the quantization of ``p`` on the base grid.

    Parameters
    ----------
    p : Symbol or callable
        Symbol to quantize.
    flavor : {"standard", "weyl"}
        ``standard``: ``(2 pi h)^{-1} int p(x, eta) e^{i(x-y)eta/h} u(y)``;
        ``weyl``: same with ``p((x+y)/2, eta)``.
    grid : PhaseSpaceGrid
    h : float, optional
        Must match ``grid.h`` when given.
    """
    if h is not None and not np.isclose(h, grid.h, rtol=0, atol=1e-15):
        raise ConfigurationError(f"h={h} does not match the grid (h={grid.h})")
    if grid.Lxi < 6 * np.sqrt(grid.h):
        raise ConfigurationError(
            f"momentum box {grid.Lxi:.3g} is narrower than 6 sqrt(h) = {6*np.sqrt(grid.h):.3g}; "
            "coherent states are not band-limited inside it")
    func = p.func if isinstance(p, Symbol) else p
    sym = p if isinstance(p, Symbol) else Symbol("anonymous", p)
    y = grid.y
    eta = momentum_nodes(grid)
    h = grid.h
    nb = grid.nb
    if flavor == "standard":
        vals = np.broadcast_to(func(y[:, None].astype(complex), eta[None, :].astype(complex)),
                               (nb, nb))
        left = vals * np.exp(1j * y[:, None] * eta[None, :] / h)
        right = np.exp(-1j * eta[:, None] * y[None, :] / h)
        M = (left @ right) / nb
    elif flavor == "weyl":
        M = np.empty((nb, nb), dtype=complex)
        # phases depend on j - k only through exp(i (y_j - y_k) eta / h)
        for j in range(nb):
            mid = 0.5 * (y[j] + y)
            vals = np.broadcast_to(func(mid[:, None].astype(complex), eta[None, :].astype(complex)),
                                   (nb, nb))
            ph = np.exp(1j * (y[j] - y)[:, None] * eta[None, :] / h)
            M[j] = np.sum(vals * ph, axis=1) / nb
    else:
        raise ConfigurationError(f"unknown quantization flavor {flavor!r}")
    return QuantizedOperator(sym, flavor, grid, M)


def apply(P: QuantizedOperator, u: GridFunction) -> GridFunction:
    """Apply a quantized operator to a base grid function."""
    if not isinstance(u, GridFunction) or u.grid != P.grid or u.tag != "base":
        raise StructuralError("operator and function live on different grids")
    return P.grid.base_function(P.matrix @ u.values)


# ---------------------------------------------------------------------------
# library


def _gauss(x, xi):
    return jets.exp(-x * x - xi * xi)


def _cosgauss(x, xi):
    return jets.cos(x) * jets.exp(-xi * xi)


def _lorentz(x, xi):
    return 1.0 / (1.0 + x * x + xi * xi)


def _one(x, xi):
    return 1.0 + 0.0 * x * xi


def _xsym(x, xi):
    return x + 0.0 * xi


def _xisym(x, xi):
    return xi + 0.0 * x


def _qm_linear(x, xi):
    return xi - 1j * x


def _qm_beta(x, xi):
    return xi - 1j * x + 0.1 * x * x


def _qm_xi2(x, xi):
    return xi - 1j * x + 0.1 * xi * xi


def _qm_wrong(x, xi):
    return xi + 1j * x


def _harmonic(x, xi):
    return xi * xi + x * x - 1.0


def _linear_bound(a, b, L, cx, cxi, c2=0.0):
    """Bound of |cxi*xi + cx*x + c2*x^2| on the sample strip box."""
    return abs(cxi) * (L + b) + abs(cx) * (L + a) + abs(c2) * (L + a) ** 2


def library() -> dict[str, Symbol]:
    """Built-in symbols by name."""
    a = b = 0.3
    L = 3.0
    return {
        "gauss": Symbol("gauss", _gauss, a, b, float(np.exp(a * a + b * b))),
        "cosgauss": Symbol("cosgauss", _cosgauss, a, b, float(np.cosh(a) * np.exp(b * b))),
        "lorentz": Symbol("lorentz", _lorentz, a, b, 1.0 / (1.0 - a * a - b * b)),
        "one": Symbol("one", _one, a, b, 1.0),
        "x": Symbol("x", _xsym, a, b, L + a),
        "xi": Symbol("xi", _xisym, a, b, L + b),
        "qm_linear": Symbol("qm_linear", _qm_linear, a, b, _linear_bound(a, b, L, 1, 1)),
        "qm_beta": Symbol("qm_beta", _qm_beta, a, b, _linear_bound(a, b, L, 1, 1, 0.1)),
        "qm_xi2": Symbol("qm_xi2", _qm_xi2, a, b, _linear_bound(a, b, L, 1, 1) + 0.1 * (L + b) ** 2),
        "qm_wrong": Symbol("qm_wrong", _qm_wrong, a, b, _linear_bound(a, b, L, 1, 1)),
        "harmonic": Symbol("harmonic", _harmonic, a, b, (L + a) ** 2 + (L + b) ** 2 + 1.0),
    }


def get_symbol(name: str) -> Symbol:
    lib = library()
    if name not in lib:
        raise ConfigurationError(f"unknown symbol {name!r}; choose from {sorted(lib)}")
    return lib[name]


def rotated_model(theta: float) -> Symbol:
    """``xi - i x`` composed with the rotation of phase space by ``theta``."""
    c, s = np.cos(theta), np.sin(theta)

    def f(x, xi):
        xr = c * x - s * xi
        xir = s * x + c * xi
        return xir - 1j * xr

    L, a = 3.0, 0.3
    return Symbol(f"rotated({theta:g})", f, a, a, 2 * np.sqrt(2) * (L + a))
