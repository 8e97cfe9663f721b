"""IR-manifold deformations of phase space and the weight they induce.

For a real escape function ``G`` the deformed manifold is parametrized by

    z = x + i G_xi,    zeta = xi - i G_x,

with induced weight ``H = G - xi G_xi`` and density ``b`` defined by
``b dx dxi = dzeta ^ dz`` up to orientation, so that ``b = 1`` at ``G = 0``:

    b = 1 + G_xxi^2 - G_xx G_xixi.

``T_Lambda`` evaluates the FBI kernel at ``(z, zeta)``; ``S_Lambda`` integrates
the holomorphically extended kernel of ``T*`` over the same points with
density ``b``.  Because every integrand is holomorphic, ``S_Lambda T_Lambda``
equals ``T* T`` up to quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import ConstructionError, DegenerateInputError, StructuralError
from .fbi import FBI_C, fbi_kernel
from .numgrid import GridFunction, PhaseSpaceGrid
from .symbols import Symbol, symbol_deformed_eval
from .weights import EPS0, Weight, cofe_residual, operator_for, quantized_for

__all__ = [
    "Deformation",
    "DeformedPair",
    "G2phWeight",
    "build_deformation",
    "deformed_pair",
    "tlambda",
    "slambda",
    "t3_residual",
    "kernel_diagonal_ratio",
    "psi_lambda",
    "psi_lambda_constant",
    "g2ph_weight",
    "g2ph_equivalence",
    "batched_nelder_mead",
]


def _adjoint_kernel(z, zeta, y, h):
    """Holomorphic extension of ``conj(K(x, xi, y))`` for real ``(x, xi)``."""
    d = z - y
    return FBI_C * h ** -0.75 * np.exp((1j / h) * (-d * zeta + 0.5j * d * d))


@dataclass
class Deformation:
    """Deformation data at the phase nodes of ``grid``.

    Attributes
    ----------
    G : Weight
        Escape function (same evaluator class as weights).
    z, zeta : ndarray
        Deformed points, flattened x-major like the phase nodes.
    H, b : ndarray
        Induced weight and density.
    c2 : float
        ``||G||_{C^2}`` as computed by the gate.
    """

    G: Weight
    grid: PhaseSpaceGrid
    z: np.ndarray
    zeta: np.ndarray
    H: np.ndarray
    b: np.ndarray
    c2: float

    @staticmethod
    def fields(G: Weight, x, xi):
        """``(z, zeta, H, b)`` at arbitrary real points."""
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        j = G.derivatives(x, xi, 2)
        g = j[0, 0].real
        gx, gxi = j[1, 0].real, j[0, 1].real
        gxx, gxxi, gxixi = 2 * j[2, 0].real, j[1, 1].real, 2 * j[0, 2].real
        z = x + 1j * gxi
        zeta = xi - 1j * gx
        H = g - xi * gxi
        b = 1.0 + gxxi ** 2 - gxx * gxixi
        return z, zeta, H, b

    def dH_defect(self, step: float = 1e-3) -> float:
        """Max over nodes of ``|dH + Im(zeta dz)|`` with ``dH`` by finite differences.

        ``dH`` uses 4th-order central differences of ``H``; ``Im(zeta dz)``
        uses the closed-form derivatives of ``z``.
        """
        X, XI = self.grid.phase_nodes()
        G = self.G

        def Hf(x, xi):
            return self.fields(G, x, xi)[2]

        w = np.array([1.0, -8.0, 8.0, -1.0]) / (12 * step)
        off = np.array([-2, -1, 1, 2]) * step
        Hx = sum(wk * Hf(X + o, XI) for wk, o in zip(w, off))
        Hxi = sum(wk * Hf(X, XI + o) for wk, o in zip(w, off))
        j = G.derivatives(X, XI, 2)
        gx = j[1, 0].real
        gxxi, gxixi = j[1, 1].real, 2 * j[0, 2].real
        zeta = XI - 1j * gx
        z_x = 1 + 1j * gxxi
        z_xi = 1j * gxixi
        ex = Hx + (zeta * z_x).imag
        exi = Hxi + (zeta * z_xi).imag
        return float(np.max(np.hypot(ex, exi)))

    @property
    def weight(self) -> np.ndarray:
        """Flat quadrature weights of ``L^2_Lambda`` at the phase nodes."""
        return np.exp(-2.0 * self.H / self.grid.h) * self.grid.phase_weight


def build_deformation(G: Weight, grid: PhaseSpaceGrid, eps0: float = EPS0) -> Deformation:
    """Deformation of the phase nodes of ``grid`` by ``G``.

    Raises
    ------
    PreconditionError
        If ``||G||_{C^2}`` fails the smallness gate.
    ConstructionError
        If the support leaves the box or ``b`` vanishes at a node.
    """
    c2 = 0.0 if G.is_zero() else G.gate(eps0, grid)
    if not G.is_zero() and not G.inside_box(grid):
        raise ConstructionError("escape function support must lie strictly inside the box")
    X, XI = grid.phase_nodes()
    z, zeta, H, b = Deformation.fields(G, X, XI)
    k = int(np.argmin(b))
    if b[k] <= 0:
        raise ConstructionError(
            f"density b vanishes at node ({X[k]:.4g}, {XI[k]:.4g}): b = {b[k]:.4g}")
    return Deformation(G, grid, z, zeta, H, b, c2)


class DeformedPair:
    """Dense ``T_Lambda`` (base to phase) and ``S_Lambda`` (phase to base)."""

    def __init__(self, deformation: Deformation):
        self.deformation = deformation
        g = deformation.grid
        self.grid = g
        self.h = g.h
        y = g.y
        if deformation.G.is_zero():
            T = operator_for(g)
            self.KT = T.K
            self.KS = T.K.conj().T
        else:
            z, zeta = deformation.z[:, None], deformation.zeta[:, None]
            self.KT = fbi_kernel(z, zeta, y[None, :], g.h)
            self.KS = (_adjoint_kernel(z, zeta, y[None, :], g.h) * deformation.b[:, None]).T

    def forward(self, u: np.ndarray) -> np.ndarray:
        return self.KT @ (u * self.grid.dy)

    def inverse(self, F: np.ndarray) -> np.ndarray:
        return self.KS @ (F * self.grid.phase_weight)

    def norm(self, F: np.ndarray) -> np.ndarray:
        """``L^2_Lambda`` norm(s) of phase node values (columns for 2-d input)."""
        w = self.deformation.weight
        if F.ndim == 2:
            w = w[:, None]
        return np.sqrt(np.sum(np.abs(F) ** 2 * w, axis=0))

    def roundtrip_defect(self, family) -> float:
        """``max ||S T u - u|| / ||u||`` over base node vectors in ``family``."""
        worst = 0.0
        for u in family:
            r = self.inverse(self.forward(u)) - u
            worst = max(worst, np.linalg.norm(r) / np.linalg.norm(u))
        return float(worst)

    def ts_norm(self, iters: int = 40, seed: int = 0) -> float:
        """``||T_Lambda S_Lambda||`` on ``L^2_Lambda`` by power iteration.

        With ``D = diag(exp(-H/h))`` the weighted norm of ``A`` is the
        spectral norm of ``D A D^{-1}``; the iteration runs on its Gram
        operator from a seeded random start.
        """
        g = self.grid
        d = np.exp(-self.deformation.H / self.h)
        dy, pw = g.dy, g.phase_weight

        def B(v):
            return d * (self.KT @ (self.KS @ (v / d) * pw) * dy)

        def BH(v):
            return (self.KS.conj().T @ (self.KT.conj().T @ (d * v) * dy) * pw) / d

        rng = np.random.default_rng(seed)
        v = rng.standard_normal(g.n_phase) + 1j * rng.standard_normal(g.n_phase)
        v /= np.linalg.norm(v)
        s = 0.0
        for _ in range(iters):
            w = BH(B(v))
            s = np.linalg.norm(w)
            v = w / s
        return float(np.sqrt(s))


def deformed_pair(deformation: Deformation) -> DeformedPair:
    return DeformedPair(deformation)


def tlambda(pair: DeformedPair, u: GridFunction) -> GridFunction:
    """``T_Lambda u`` at the phase nodes."""
    if not isinstance(u, GridFunction) or u.grid != pair.grid or u.tag != "base":
        raise StructuralError("u must be a base function on the pair's grid")
    return pair.grid.phase_function(pair.forward(u.values))


def slambda(pair: DeformedPair, F: GridFunction) -> GridFunction:
    """``S_Lambda F`` at the base nodes."""
    if not isinstance(F, GridFunction) or F.grid != pair.grid or F.tag != "phase":
        raise StructuralError("F must be a phase function on the pair's grid")
    return pair.grid.base_function(pair.inverse(F.values))


def t3_residual(p: Symbol, u, v, pair: DeformedPair, flavor: str = "standard") -> float:
    """``|<T P u, T v>_Lambda - <p|_Lambda T u, T v>_Lambda| / (||Tu||_Lambda ||Tv||_Lambda)``.

    All transforms are ``T_Lambda``.  For ``G = 0`` this is literally
    :func:`~fbilab.weights.cofe_residual`.
    """
    d = pair.deformation
    if d.G.is_zero():
        return cofe_residual(p, u, v, pair.grid, flavor)
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    P = quantized_for(pair.grid, p, flavor)
    mult = symbol_deformed_eval(p, d.z, d.zeta)
    w = d.weight
    TPu = pair.forward(P.matrix @ u)
    Tu = pair.forward(u)
    Tv = pair.forward(v)
    num = np.sum((TPu - mult * Tu) * np.conj(Tv) * w)
    nu = np.sqrt(np.sum(np.abs(Tu) ** 2 * w))
    nv = np.sqrt(np.sum(np.abs(Tv) ** 2 * w))
    if nu == 0 or nv == 0:
        raise DegenerateInputError("deformed transforms vanish")
    return float(abs(num) / (nu * nv))


def kernel_diagonal_ratio(p: Symbol, G: Weight, grid: PhaseSpaceGrid, points,
                          flavor: str = "standard") -> np.ndarray:
    """Kernel diagonal of ``T_Lambda P S_Lambda`` at ``points`` over its calibration.

    The calibration constant is the kernel diagonal of ``T T*`` (``G = 0``,
    ``p = 1``) at the same points.  The density ``b`` of ``S_Lambda`` enters
    the kernel as a factor and is divided out, so the result should be
    ``p|_Lambda`` up to ``O(h)``.
    """
    px, pxi = (np.asarray(c, dtype=float) for c in points)
    z, zeta, _, b = Deformation.fields(G, px, pxi)
    y = grid.y
    h = grid.h
    P = quantized_for(grid, p, flavor).matrix
    rowT = fbi_kernel(z[:, None], zeta[:, None], y[None, :], h) * grid.dy
    colS = _adjoint_kernel(z[:, None], zeta[:, None], y[None, :], h)
    kP = np.einsum("ij,jk,ik->i", rowT, P, colS)
    K0 = fbi_kernel(px[:, None], pxi[:, None], y[None, :], h)
    cal = np.sum(np.abs(K0) ** 2, axis=1) * grid.dy
    return kP / cal


def psi_lambda(G: Weight, a, bpt) -> np.ndarray:
    """Phase of the ``T_Lambda S_Lambda`` kernel between points ``a`` and ``bpt``.

    The ``y``-integral of the composition is Gaussian; its critical value is
    returned (``Im`` of it is ``|a - b|^2 / 4`` at ``G = 0``).
    """
    z, zeta, _, _ = Deformation.fields(G, *a)
    zp, zetap, _, _ = Deformation.fields(G, *bpt)
    B = zetap - zeta - 1j * (z + zp)
    C = z * zeta - zp * zetap + 0.5j * (z * z + zp * zp)
    return C + 0.25j * B * B


def psi_lambda_constant(G: Weight, n: int = 10_000, seed: int = 0, rmax: float = 2.0) -> float:
    """Smallest ``C`` with ``-H(a) - Im psi_Lambda(a, b) + H(b) <= -|a - b|^2 / C`` on samples.

    Returns ``inf`` if some sample violates the bound for every ``C``.
    """
    rng = np.random.default_rng(seed)
    R = G.radius + 0.5 * rmax
    cx, cxi = G.center
    rad = R * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    a = np.array([cx + rad * np.cos(th), cxi + rad * np.sin(th)])
    r = rng.uniform(0.01, rmax, n)
    om = rng.uniform(0, 2 * np.pi, n)
    bpt = a + r * np.array([np.cos(om), np.sin(om)])
    Ha = Deformation.fields(G, *a)[2]
    Hb = Deformation.fields(G, *bpt)[2]
    e = -Ha - psi_lambda(G, a, bpt).imag + Hb
    if np.any(e >= 0):
        return float("inf")
    return float(np.max(r ** 2 / -e))


# ---------------------------------------------------------------------------
# weight from deformation


def batched_nelder_mead(f, x0, step: float, xatol: float = 1e-10, fatol: float = 1e-14,
                        maxiter: int = 2000):
    """Minimize many independent 2-d problems at once with Nelder--Mead.

    ``f`` maps points of shape ``(2, m)`` to values ``(m,)``; problem ``j``
    starts at ``x0[:, j]``.  Standard coefficients (1, 2, 1/2, 1/2).  scipy's
    implementation handles one problem per call, which is too slow for the
    thousands of nodes here.

    Returns
    -------
    x : ndarray, shape (2, m)
    fx : ndarray, shape (m,)
    """
    x0 = np.asarray(x0, float)
    m = x0.shape[1]
    S = np.stack([x0, x0 + [[step], [0.0]], x0 + [[0.0], [step]]])  # (3, 2, m)
    F = np.stack([f(S[k]) for k in range(3)])
    for _ in range(maxiter):
        order = np.argsort(F, axis=0)
        S = np.take_along_axis(S, order[:, None, :], axis=0)
        F = np.take_along_axis(F, order, axis=0)
        size = np.max(np.abs(S[1:] - S[0]), axis=(0, 1))
        active = (size > xatol) | (F[2] - F[0] > fatol)
        if not np.any(active):
            break
        c = 0.5 * (S[0] + S[1])
        xr = 2.0 * c - S[2]
        fr = f(xr)
        xe = 3.0 * c - 2.0 * S[2]
        fe = f(xe)
        xoc = 1.5 * c - 0.5 * S[2]
        foc = f(xoc)
        xic = 0.5 * (c + S[2])
        fic = f(xic)
        expand = fr < F[0]
        use_e = expand & (fe < fr)
        use_r = ((fr >= F[0]) & (fr < F[1])) | (expand & ~use_e)
        outside = (fr >= F[1]) & (fr < F[2])
        inside = fr >= F[2]
        use_oc = outside & (foc <= fr)
        use_ic = inside & (fic < F[2])
        for mask, xx, ff in ((use_r, xr, fr), (use_e, xe, fe),
                             (use_oc, xoc, foc), (use_ic, xic, fic)):
            mask = mask & active
            S[2][:, mask] = xx[:, mask]
            F[2][mask] = ff[mask]
        shrink = ((outside & ~use_oc) | (inside & ~use_ic)) & active
        if np.any(shrink):
            for k in (1, 2):
                S[k][:, shrink] = 0.5 * (S[0][:, shrink] + S[k][:, shrink])
                F[k][shrink] = f(S[k])[shrink]
    j = np.argmin(F, axis=0)
    cols = np.arange(m)
    return S[j, :, cols].T, F[j, cols]


def _cv_max(x, xi, zp, zetap):
    """Critical value over y of ``Phi(x, xi, y) - conj-Phi(z', zeta', y)``."""
    B = zetap - xi - 1j * (x + zp)
    C = x * xi - zp * zetap + 0.5j * (x * x + zp * zp)
    return C + 0.25j * B * B


def _cv_min(x, xi, zp, zetap):
    """Critical value over y of ``-conj-Phi(x, xi, y) + Phi(z', zeta', y)``."""
    B = xi - 1j * x - zetap - 1j * zp
    C = -x * xi + zp * zetap + 0.5j * (x * x + zp * zp)
    return C + 0.25j * B * B


@dataclass
class G2phWeight:
    """Weight ``phi`` built from a deformation by the max/min critical values.

    ``phi_max`` and ``phi_min`` are tabulated on a regular grid covering the
    support of ``G`` plus a margin; ``phi := phi_max``.  Evaluation off the
    table uses a bicubic spline and returns 0 outside the table.
    """

    G: Weight
    xs: np.ndarray
    xis: np.ndarray
    phi_max: np.ndarray
    phi_min: np.ndarray
    margin: float
    _spline: object = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(self.phi_max - self.phi_min)))

    def outside_max(self) -> float:
        """``max |phi|`` over table nodes outside the support dilated by half the margin."""
        X, XI = np.meshgrid(self.xs, self.xis, indexing="ij")
        r = np.hypot(X - self.G.center[0], XI - self.G.center[1])
        out = r > self.G.radius + 0.5 * self.margin
        return float(np.max(np.abs(self.phi_max[out]))) if np.any(out) else 0.0

    def __call__(self, x, xi) -> np.ndarray:
        if self._spline is None:
            self._spline = RectBivariateSpline(self.xs, self.xis, self.phi_max, kx=3, ky=3)
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        inside = ((x >= self.xs[0]) & (x <= self.xs[-1])
                  & (xi >= self.xis[0]) & (xi <= self.xis[-1]))
        out = np.zeros(x.shape)
        if np.any(inside):
            out[inside] = self._spline.ev(x[inside], xi[inside])
        return out


def g2ph_weight(G: Weight, step: float = 0.1, margin: float = 0.6, patch: float = 0.3,
                patch_step: float = 0.02, tol: Optional[float] = None,
                strict: bool = True, eps0: float = EPS0) -> G2phWeight:
    """Compute ``phi_max`` and ``phi_min`` on a table around the support of ``G``.

    The outer optimization over ``(x', xi')`` is a search over a local patch
    of half-width ``patch`` (spacing ``patch_step``) around each node, refined
    by Nelder--Mead with tolerance ``1e-10``.

    Parameters
    ----------
    tol : float, optional
        Gap tolerance, default ``1e-3 * eps``.
    strict : bool
        Raise when the gap exceeds ``tol``; otherwise return the result and
        leave the judgement to the caller.

    Raises
    ------
    ConstructionError
        Gap above tolerance (with ``strict``); reports the gap and the node.
    """
    if not G.is_zero():
        G.gate(eps0)
    cx, cxi = G.center
    L = G.radius + margin
    n = int(np.ceil(2 * L / step)) + 1
    xs = cx + np.linspace(-L, L, n)
    xis = cxi + np.linspace(-L, L, n)
    X, XI = np.meshgrid(xs, xis, indexing="ij")
    x, xi = X.ravel(), XI.ravel()
    if G.is_zero():
        z = np.zeros(X.shape)
        return G2phWeight(G, xs, xis, z, z.copy(), margin)

    def fields(bx, bxi):
        z, zeta, H, _ = Deformation.fields(G, bx, bxi)
        return z, zeta, H

    def neg_max_obj(xa, xia):
        def f(bpt):
            zp, zetap, H = fields(bpt[0], bpt[1])
            return _cv_max(xa, xia, zp, zetap).imag - H
        return f

    def min_obj(xa, xia):
        def f(bpt):
            zp, zetap, H = fields(bpt[0], bpt[1])
            return _cv_min(xa, xia, zp, zetap).imag + H
        return f

    # patch search: offsets shared by all nodes
    k = int(round(patch / patch_step))
    o = np.arange(-k, k + 1) * patch_step
    OX, OXI = np.meshgrid(o, o, indexing="ij")
    OX, OXI = OX.ravel(), OXI.ravel()
    best = []
    for obj in (neg_max_obj, min_obj):
        starts = np.empty((2, x.size))
        # process nodes in chunks to bound memory
        for s in range(0, x.size, 256):
            sl = slice(s, s + 256)
            bx = x[sl, None] + OX[None, :]
            bxi = xi[sl, None] + OXI[None, :]
            vals = obj(x[sl, None], xi[sl, None])(np.stack([bx, bxi]))
            j = np.argmin(vals, axis=1)
            starts[0, sl] = bx[np.arange(bx.shape[0]), j]
            starts[1, sl] = bxi[np.arange(bx.shape[0]), j]
        _, fx = batched_nelder_mead(obj(x, xi), starts, step=patch_step)
        best.append(fx)
    phi_max = (-best[0]).reshape(X.shape)
    phi_min = best[1].reshape(X.shape)
    res = G2phWeight(G, xs, xis, phi_max, phi_min, margin)
    tol = 1e-3 * G.eps if tol is None else tol
    if strict and res.gap > tol:
        d = np.abs(phi_max - phi_min)
        i = np.unravel_index(int(np.argmax(d)), d.shape)
        raise ConstructionError(
            f"phi_max and phi_min differ by {res.gap:.3e} > {tol:.3e} at node "
            f"({xs[i[0]]:.3g}, {xis[i[1]]:.3g}); G is too large for the construction")
    return res


def g2ph_equivalence(G: Weight, phi, hs, family, grid_factory, power: float = 2.0):
    """Ratios ``||T v||_phi / ||T_Lambda v||_Lambda`` for each ``h`` and ``v``.

    Parameters
    ----------
    phi : callable
        Weight evaluator (for example a :class:`G2phWeight`).
    family : callable
        ``family(grid)`` returns a list of base node vectors.
    grid_factory : callable
        ``grid_factory(h)`` returns the grid to use at ``h``.
    power : float
        ``L^2_phi`` uses the density ``exp(-power * phi / h)``.

    Returns
    -------
    ndarray, shape (len(hs), len(family))
    """
    rows = []
    for h in hs:
        g = grid_factory(h)
        pair = DeformedPair(build_deformation(G, g))
        T = operator_for(g)
        X, XI = g.phase_nodes()
        wphi = np.exp(-power * phi(X, XI) / h) * g.phase_weight
        row = []
        for v in family(g):
            a = np.sqrt(np.sum(np.abs(T.forward(v)) ** 2 * wphi))
            b = pair.norm(pair.forward(v))
            row.append(a / b)
        rows.append(row)
    return np.array(rows)
