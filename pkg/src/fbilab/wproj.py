"""Weighted phases, the leading-order Bergman kernel and the exact weighted projector.

Notation: ``alpha = (x, xi)``, ``beta = (y, eta)``, ``z = x - i xi``.  For a
weight ``phi`` the phase is

    psi(alpha, beta) = psi0(alpha, beta) + g(z_alpha, conj(z_beta)),

where ``g`` is the order-``K`` almost analytic extension of ``-2i phi``
expanded about the midpoint of ``alpha`` and ``beta``.  It satisfies
``psi(alpha, alpha) = -2i phi(alpha)`` exactly and
``Im psi + phi(alpha) + phi(beta) = c0 |alpha - beta|^2 + O(|alpha - beta|^3)``
with ``c0 = 1/4`` at ``phi = 0``.

The leading amplitude on the diagonal is ``a0 = 1/f`` with
``f = 2 pi / (1 + Laplacian(phi))``, which is what stationary phase gives for
the composition ``B o B`` at ``alpha = beta``.  Off the diagonal ``a0`` is
extended almost analytically in the same way as the phase.

Everything is computed in *flattened* form: a function ``F`` in ``L^2_phi``
is represented by ``exp(-phi/h) F`` in flat ``L^2``, so weighted norms and
adjoints become flat ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
import scipy.linalg

from .errors import ConstructionError, PreconditionError
from .fbi import FbiOperator, PI0_C0, psi0
from .jets import Jet, aa_extend, real_to_zw
from .numgrid import PhaseSpaceGrid, slope_fit
from .weights import EPS0, Weight, operator_for

__all__ = [
    "WeightedPhase",
    "BergmanKernel",
    "OracleProjector",
    "build_weighted_phase",
    "build_bergman",
    "oracle_projector",
    "projector_gap",
    "diagonal_amplitude",
    "chi",
]

DELTA_DEFAULT = 2.0
# offsets are dropped once exp(-C0_FLOOR r^2/h) < exp(-TRUNCATION)
TRUNCATION = 27.0
C0_FLOOR = 0.2


def chi(t):
    """Smooth cutoff: 1 on ``[0, 1]``, 0 beyond ``1.5``."""
    t = np.asarray(t, dtype=float)
    s = np.clip((t - 1.0) / 0.5, 0.0, 1.0)
    out = np.ones_like(s)
    inner = (s > 0) & (s < 1)
    a = np.exp(-1.0 / np.where(inner, s, 1.0))
    b = np.exp(-1.0 / np.where(inner, 1 - s, 1.0))
    out = np.where(inner, b / (a + b), out)
    return np.where(s >= 1, 0.0, out)


def _laplacian_jet(t: Jet, K: int) -> Jet:
    lap = t.derivative(0).derivative(0) + t.derivative(1).derivative(1)
    return lap.truncate(K)


def diagonal_amplitude(phi: Weight, x, xi) -> np.ndarray:
    """``a0(alpha, alpha) = (1 + Laplacian phi(alpha)) / (2 pi)``."""
    j = phi.derivatives(x, xi, 2)
    lap = 2 * j[2, 0].real + 2 * j[0, 2].real
    return (1.0 + lap) / (2 * np.pi)


@dataclass
class WeightedPhase:
    """Phase ``psi = psi0 + g(z, conj(w))`` for a weight ``phi``.

    Parameters
    ----------
    phi : Weight
    K : int
        Jet order of the almost analytic extension.
    delta : float
        Cutoff radius of the kernel built from this phase.
    """

    phi: Weight
    K: int = 3
    delta: float = DELTA_DEFAULT

    def correction_jet(self, mx, mxi, K: Optional[int] = None) -> Jet:
        """Jets of ``-2i phi`` in ``(z, w)`` about the midpoints ``(mx, mxi)``."""
        K = self.K if K is None else K
        m = np.stack(np.broadcast_arrays(np.asarray(mx, float), np.asarray(mxi, float)))
        return aa_extend(self.phi, m, K) * (-2j)

    def amplitude_jet(self, mx, mxi, Ka: int) -> Jet:
        """Almost analytic extension of ``(1 + Laplacian phi)/(2 pi)``."""
        m = np.stack(np.broadcast_arrays(np.asarray(mx, float), np.asarray(mxi, float)))
        t = self.phi.taylor(m, Ka + 2)
        a = (_laplacian_jet(t, Ka) + 1.0) * (1.0 / (2 * np.pi))
        return real_to_zw(a)

    def __call__(self, x, xi, y, eta) -> np.ndarray:
        x, xi, y, eta = np.broadcast_arrays(*(np.asarray(v, float) for v in (x, xi, y, eta)))
        g = self.correction_jet(0.5 * (x + y), 0.5 * (xi + eta))
        za = x - 1j * xi
        zb = y - 1j * eta
        return psi0(x, xi, y, eta) + g.evaluate(np.stack([za, np.conj(zb)]))

    # -- diagnostics ---------------------------------------------------------
    def diagonal_defect(self, x, xi) -> float:
        """``max |psi(a, a) + 2i phi(a)|`` over the given points."""
        v = self(x, xi, x, xi) + 2j * self.phi(x, xi)
        return float(np.max(np.abs(v)))

    def positivity(self, n: int = 10_000, seed: int = 0, rmin: float = 0.01,
                   rmax: Optional[float] = None):
        """Fit ``Im psi + phi(a) + phi(b) >= c0 r^2 - C r^3`` on random pairs.

        Returns
        -------
        c0 : float
            Quadratic coefficient: minimum of the ratio over pairs with
            ``r <= 4 rmin``.
        C : float
            Smallest cubic constant making the bound hold on all samples.
        worst : tuple
            ``(alpha, beta, ratio)`` of the pair with the smallest ratio.
        """
        rng = np.random.default_rng(seed)
        rmax = self.delta if rmax is None else rmax
        # first points cover every pair whose midpoint can meet the support
        R = self.phi.radius + 0.5 * rmax
        cx, cxi = self.phi.center
        rad = R * np.sqrt(rng.uniform(0, 1, n))
        th = rng.uniform(0, 2 * np.pi, n)
        a = np.array([cx + rad * np.cos(th), cxi + rad * np.sin(th)])
        r = rng.uniform(rmin, rmax, n)
        r[: n // 4] = rng.uniform(rmin, 4 * rmin, n // 4)
        om = rng.uniform(0, 2 * np.pi, n)
        b = a + r * np.array([np.cos(om), np.sin(om)])
        val = self(a[0], a[1], b[0], b[1]).imag + self.phi(a[0], a[1]) + self.phi(b[0], b[1])
        ratio = val / r ** 2
        small = r <= 4 * rmin
        c0 = float(ratio[small].min())
        C = float(max(0.0, np.max((c0 - ratio) / r)))
        k = int(np.argmin(ratio))
        worst = ((float(a[0, k]), float(a[1, k])), (float(b[0, k]), float(b[1, k])), float(ratio[k]))
        return c0, C, worst

    def eikonal_residuals(self, alpha, direction, radii, step: float = 1e-4):
        """Finite-difference residuals of both eikonal equations.

        Returns an array of shape ``(len(radii), 2)`` with
        ``|psi_x - xi - i psi_xi|`` and ``|-psi_y - eta - i psi_eta|`` at the
        pairs ``(alpha, alpha + r * direction)``.
        """
        x, xi = alpha
        out = []
        d = np.asarray(direction, float) / np.linalg.norm(direction)
        for r in radii:
            y, eta = x + r * d[0], xi + r * d[1]
            s = step
            def D(f, k):
                # 4th-order central difference in argument k
                args = [x, xi, y, eta]
                vals = []
                for m in (-2, -1, 1, 2):
                    a2 = list(args)
                    a2[k] = args[k] + m * s
                    vals.append(f(*a2))
                return (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * s)
            e1 = D(self, 0) - xi - 1j * D(self, 1)
            e2 = -D(self, 2) - eta - 1j * D(self, 3)
            out.append((abs(complex(e1)), abs(complex(e2))))
        return np.array(out)


def build_weighted_phase(phi: Weight, K: int = 3, delta: float = DELTA_DEFAULT,
                         check: bool = True, eps0: float = EPS0) -> WeightedPhase:
    """Construct the weighted phase and verify diagonal condition and positivity.

    Raises
    ------
    ConstructionError
        If positivity fails on the sample; the message reports the worst pair
        and the fitted ``c0``.
    """
    if not phi.is_zero():
        phi.gate(eps0)
    ph = WeightedPhase(phi, K, delta)
    if check:
        c0, C, worst = ph.positivity(n=10_000)
        if c0 <= 0 or worst[2] <= 0:
            raise ConstructionError(
                f"positivity fails: fitted c0 = {c0:.4g}, worst pair {worst[0]} -> {worst[1]} "
                f"with ratio {worst[2]:.4g}; reduce eps or raise K")
    return ph


# ---------------------------------------------------------------------------
# kernel application


@numba.njit(cache=True)
def _apply_correction(F, out, xi, phin, coefP, coefA, active, rows, di, dk, dxs, monoP,
                      monoA, chis, psi0off, h, c0, q):
    """Add ``chi * (near - free)`` applied to ``F``; pairs away from the weight vanish."""
    nx, nxi, nv = F.shape
    no = di.shape[0]
    nP = monoP.shape[1]
    nA = monoA.shape[1]
    for i in range(nx):
        for k in range(nxi):
            if not rows[i, k]:
                continue
            for o in range(no):
                ch = chis[o]
                if ch == 0.0:
                    continue
                i2 = i + di[o]
                k2 = k + dk[o]
                if i2 < 0 or i2 >= nx or k2 < 0 or k2 >= nxi:
                    continue
                s = i + i2
                t = k + k2
                w = phin[i, k] + phin[i2, k2]
                act = active[s, t]
                if not act and w == 0.0:
                    continue
                base = psi0off[o] - xi[k] * dxs[o]
                pt = 0j
                am = c0 + 0j
                if act:
                    am = 0j
                    for m in range(nP):
                        pt += coefP[s, t, m] * monoP[o, m]
                    for m in range(nA):
                        am += coefA[s, t, m] * monoA[o, m]
                e0 = np.exp(1j * base / h)
                kern = ch * q / h * e0 * (am * np.exp(1j * pt / h - w / h) - c0)
                for v in range(nv):
                    out[i, k, v] += kern * F[i2, k2, v]


@numba.njit(cache=True)
def _tail_rowsum(nx, nxi, xi, phin, coefP, active, di, dk, dxs, monoP, rs, psi0off, h, delta):
    """Row sums of |near kernel| over offsets with r > delta (amplitude 1/(2 pi))."""
    out = np.zeros((nx, nxi))
    no = di.shape[0]
    nP = monoP.shape[1]
    for o in range(no):
        if rs[o] <= delta:
            continue
        a = di[o]
        b = dk[o]
        for i in range(max(0, -a), min(nx, nx - a)):
            i2 = i + a
            for k in range(max(0, -b), min(nxi, nxi - b)):
                k2 = k + b
                pt = 0j
                if active[i + i2, k + k2]:
                    for m in range(nP):
                        pt += coefP[i + i2, k + k2, m] * monoP[o, m]
                ph = psi0off[o] - xi[k] * dxs[o] + pt
                out[i, k] += np.exp((-ph.imag - phin[i, k] - phin[i2, k2]) / h)
    return out


class BergmanKernel:
    """Leading-order kernel ``B`` on a phase grid, applied in flattened form.

    The flattened kernel is

        k(a, b) = chi * h^{-1} a0(a, b) exp(i psi/h - (phi(a) + phi(b))/h)
                  + (1 - chi) * c0 h^{-1} exp(i psi0/h),

    with ``chi = chi(|a - b| / delta)``.  Beyond ``delta`` the ansatz is
    replaced by the free projector kernel.  The free kernel is applied as the
    discrete ``T T*`` (its quadrature), and only the correction
    ``chi * (ansatz - free)`` is summed pair by pair.  The correction vanishes
    unless a pair touches the support of ``phi``, so ``phi = 0`` gives
    ``T T*`` exactly.  Offsets are truncated where ``exp(-C0_FLOOR r^2/h)``
    drops below ``exp(-TRUNCATION)``.
    """

    def __init__(self, phase: WeightedPhase, grid: PhaseSpaceGrid, Ka: int = 2):
        self.phase = phase
        self.grid = grid
        self.h = grid.h
        self.Ka = Ka
        phi = phase.phi
        K = phase.K
        h = grid.h
        nx, nxi = grid.nx, grid.nxi
        # half-grid of midpoints
        sx = -grid.Lx + (np.arange(2 * nx - 1) / 2 + 0.5) * grid.dx
        sxi = -grid.Lxi + (np.arange(2 * nxi - 1) / 2 + 0.5) * grid.dxi
        MX, MXI = np.meshgrid(sx, sxi, indexing="ij")
        act = phi._inside(MX, MXI) if not phi.is_zero() else np.zeros(MX.shape, bool)
        self.idxP = [a for a in Jet.zeros(2, K, [0, 0]).indices()]
        self.idxA = [a for a in Jet.zeros(2, Ka, [0, 0]).indices()]
        coefP = np.zeros(MX.shape + (len(self.idxP),), complex)
        coefA = np.zeros(MX.shape + (len(self.idxA),), complex)
        if np.any(act):
            mx, mxi = MX[act], MXI[act]
            gP = phase.correction_jet(mx, mxi)
            gA = phase.amplitude_jet(mx, mxi, Ka)
            for m, a in enumerate(self.idxP):
                coefP[act, m] = gP.c[a]
            for m, a in enumerate(self.idxA):
                coefA[act, m] = gA.c[a]
        self.coefP, self.coefA, self.active = coefP, coefA, act
        # offsets
        rmax = np.sqrt(TRUNCATION * h / C0_FLOOR)
        ni = int(np.ceil(rmax / grid.dx))
        nk = int(np.ceil(rmax / grid.dxi))
        DI, DK = np.meshgrid(np.arange(-ni, ni + 1), np.arange(-nk, nk + 1), indexing="ij")
        DX, DXI = DI * grid.dx, DK * grid.dxi
        R = np.hypot(DX, DXI)
        keep = R <= rmax
        self.di = DI[keep].astype(np.int64)
        self.dk = DK[keep].astype(np.int64)
        dx, dxi = DX[keep], DXI[keep]
        self.dxs = dx
        self.rs = R[keep]
        # z_a - z_m and conj(z_b) - conj(z_m) depend only on the offset
        Z = -0.5 * dx + 0.5j * dxi
        W = 0.5 * dx + 0.5j * dxi
        self.monoP = np.stack([Z ** a[0] * W ** a[1] for a in self.idxP], axis=1)
        self.monoA = np.stack([Z ** a[0] * W ** a[1] for a in self.idxA], axis=1)
        self.chis = chi(self.rs / phase.delta)
        self.psi0off = -0.5 * dx * dxi + 0.25j * (dx ** 2 + dxi ** 2)
        X, XI = grid.phase_nodes()
        self.phin = phi(X, XI).reshape(nx, nxi)
        reach = phi.radius + rmax
        self.rows = (np.hypot(X - phi.center[0], XI - phi.center[1]) < reach).reshape(nx, nxi)
        if phi.is_zero():
            self.rows[:] = False
        self.T = operator_for(grid)

    def apply_flat(self, F: np.ndarray) -> np.ndarray:
        """Apply the flattened kernel to ``F`` of shape ``(n_phase,)`` or ``(n_phase, k)``."""
        g = self.grid
        single = F.ndim == 1
        Fa = np.ascontiguousarray(F.reshape(g.nx, g.nxi, -1).astype(complex))
        out = self.T.project(Fa.reshape(g.n_phase, -1)).reshape(Fa.shape)
        _apply_correction(Fa, out, g.xi, self.phin, self.coefP, self.coefA, self.active,
                          self.rows, self.di, self.dk, self.dxs, self.monoP, self.monoA,
                          self.chis, self.psi0off, self.h, PI0_C0, g.phase_weight)
        out = out.reshape(g.n_phase, -1)
        return out[:, 0] if single else out

    def apply(self, F: np.ndarray) -> np.ndarray:
        """Apply ``B`` to unflattened values (weighted space)."""
        e = np.exp(-self.phin.ravel() / self.h)
        if F.ndim == 2:
            e = e[:, None]
        return self.apply_flat(F * e) / e

    def schur_tail(self) -> float:
        """Schur norm of the part of the ansatz kernel beyond ``delta``.

        The kernel there is bounded with the free amplitude ``1/(2 pi)``; the
        bound below the truncation radius is added analytically.
        """
        g = self.grid
        rs = _tail_rowsum(g.nx, g.nxi, g.xi, self.phin, self.coefP, self.active, self.di,
                          self.dk, self.dxs, self.monoP, self.rs, self.psi0off, self.h,
                          self.phase.delta)
        amp = PI0_C0 * (1 + 5 * self.phase.phi.eps) / self.h
        rc = self.rs.max()
        beyond = np.pi / C0_FLOOR * np.exp(-C0_FLOOR * rc ** 2 / self.h) / self.h
        return float(amp * g.phase_weight * rs.max() + beyond)


def build_bergman(phi: Weight, grid: PhaseSpaceGrid, K: int = 3, delta: float = DELTA_DEFAULT,
                  Ka: int = 2, check: bool = True) -> BergmanKernel:
    """Weighted phase plus leading amplitude on ``grid``."""
    if not phi.is_zero() and not phi.inside_box(grid):
        raise PreconditionError("weight support must lie strictly inside the phase box")
    phase = build_weighted_phase(phi, K, delta, check=check)
    return BergmanKernel(phase, grid, Ka)


class OracleProjector:
    """Exact weighted-orthogonal projector onto the range of the discrete ``T``.

    In flattened form it is the flat orthogonal projector ``Q Q^H`` onto the
    column space of ``diag(exp(-phi/h)) T``; ``Q`` comes from a thin QR.
    """

    def __init__(self, phi: Weight, grid: PhaseSpaceGrid, T: Optional[FbiOperator] = None):
        self.grid = grid
        self.h = grid.h
        T = FbiOperator(grid) if T is None else T
        X, XI = grid.phase_nodes()
        self.phin = phi(X, XI)
        e = np.exp(-self.phin / grid.h)
        A = T.K * (e * np.sqrt(grid.phase_weight))[:, None]
        Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True, overwrite_a=True)
        d = np.abs(np.diag(R))
        self.rank = int(np.sum(d > d[0] * 1e-13))
        if self.rank < A.shape[1]:
            raise ConstructionError(
                f"T has numerical rank {self.rank} < {A.shape[1]} under the weight; "
                "the box under-resolves h")
        self.Q = Q
        self.diag_R = d

    def apply_flat(self, F: np.ndarray) -> np.ndarray:
        return self.Q @ (self.Q.conj().T @ F)

    def apply(self, F: np.ndarray) -> np.ndarray:
        e = np.exp(-self.phin / self.h)
        if F.ndim == 2:
            e = e[:, None]
        return self.apply_flat(F * e) / e

    def diagonal(self, idx) -> np.ndarray:
        """Flattened kernel diagonal ``k(a, a)`` at node indices ``idx``."""
        rows = self.Q[idx]
        return np.sum(np.abs(rows) ** 2, axis=1) / self.grid.phase_weight


def oracle_projector(phi: Weight, grid: PhaseSpaceGrid, T: Optional[FbiOperator] = None):
    return OracleProjector(phi, grid, T)


def random_flat_vectors(grid: PhaseSpaceGrid, n: int, seed: int) -> np.ndarray:
    """Complex Gaussian vectors normalized in flat ``L^2`` (unit in ``L^2_phi``)."""
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((grid.n_phase, n)) + 1j * rng.standard_normal((grid.n_phase, n))
    F /= np.sqrt(np.sum(np.abs(F) ** 2, axis=0) * grid.phase_weight)
    return F


def _norms(F, grid):
    return np.sqrt(np.sum(np.abs(F) ** 2, axis=0) * grid.phase_weight)


def projector_gap(B: BergmanKernel, oracle: OracleProjector, n: int = 32, seed: int = 0,
                  F: Optional[np.ndarray] = None) -> float:
    """``max_j ||(Pi_phi - B) F_j||_phi`` over random weighted-unit vectors."""
    F = random_flat_vectors(B.grid, n, seed) if F is None else F
    D = oracle.apply_flat(F) - B.apply_flat(F)
    return float(np.max(_norms(D, B.grid) / _norms(F, B.grid)))


def idempotency_defect(B: BergmanKernel, n: int = 32, seed: int = 0, F=None) -> float:
    """``max_j ||(B^2 - B) F_j||_phi`` over random weighted-unit vectors."""
    F = random_flat_vectors(B.grid, n, seed) if F is None else F
    BF = B.apply_flat(F)
    D = B.apply_flat(BF) - BF
    return float(np.max(_norms(D, B.grid) / _norms(F, B.grid)))


def adjoint_defect(B: BergmanKernel, n: int = 32, seed: int = 0, F=None) -> float:
    """``max |<BF, G>_phi - <F, BG>_phi|`` over pairs of random unit vectors."""
    F = random_flat_vectors(B.grid, n, seed) if F is None else F
    BF = B.apply_flat(F)
    w = B.grid.phase_weight
    M1 = BF.conj().T @ F * w      # <F_j, B F_i>
    M2 = F.conj().T @ BF * w      # <B F_j, F_i>
    return float(np.max(np.abs(M1 - M2)))
