import numpy as np
import pytest
from scipy.optimize import minimize

from fbilab.deform import (Deformation, DeformedPair, batched_nelder_mead, build_deformation,
                           g2ph_equivalence, g2ph_weight, kernel_diagonal_ratio, psi_lambda,
                           psi_lambda_constant, slambda, t3_residual, tlambda)
from fbilab.errors import ConstructionError, PreconditionError
from fbilab.fbi import coherent_state, hermite_function, psi0
from fbilab.jets import fd_derivative
from fbilab.numgrid import PhaseSpaceGrid
from fbilab.symbols import get_symbol
from fbilab.weights import Weight, bump_weight, cofe_residual, xi_bump_weight, zero_weight


@pytest.fixture(scope="module")
def grid():
    return PhaseSpaceGrid.around(0.1, 2, 0.25)


@pytest.fixture(scope="module")
def bump_pair(grid):
    return DeformedPair(build_deformation(bump_weight(0.05), grid))


def _family(g):
    return [hermite_function(k, g.y, g.h, 0.3, 0.2) for k in range(3)]


def test_fields_at_zero_escape_function():
    x = np.array([0.3, -1.0])
    xi = np.array([0.5, 0.2])
    z, zeta, H, b = Deformation.fields(zero_weight(), x, xi)
    assert np.all(z == x) and np.all(zeta == xi)
    assert np.all(H == 0) and np.all(b == 1)


def test_fields_against_finite_differences():
    G = xi_bump_weight(0.05)
    pt = np.array([0.4, -0.7])
    d = {a: fd_derivative(G, pt, a) for a in ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2))}
    z, zeta, H, b = Deformation.fields(G, pt[:1], pt[1:])
    assert z[0] == pytest.approx(pt[0] + 1j * d[0, 1], abs=1e-9)
    assert zeta[0] == pytest.approx(pt[1] - 1j * d[1, 0], abs=1e-9)
    assert H[0] == pytest.approx(G(pt[0], pt[1]) - pt[1] * d[0, 1], abs=1e-9)
    assert b[0] == pytest.approx(1 + d[1, 1] ** 2 - d[2, 0] * d[0, 2], abs=1e-8)


def test_lagrangian_identity(grid):
    for G in (bump_weight(0.05), xi_bump_weight(0.05)):
        assert build_deformation(G, grid).dH_defect() < 1e-6


def test_zero_deformation_is_free_transform(grid):
    pair = DeformedPair(build_deformation(zero_weight(), grid))
    assert pair.roundtrip_defect(_family(grid)) < 1e-12
    assert pair.ts_norm() == pytest.approx(1.0, abs=1e-6)
    p = get_symbol("gauss")
    u = coherent_state(grid.y, grid.h, 0.7, 0.2)
    assert t3_residual(p, u, u, pair) == cofe_residual(p, u, u, grid)


def test_deformed_pair_identities(grid, bump_pair):
    assert bump_pair.roundtrip_defect(_family(grid)) < 1e-4
    assert bump_pair.ts_norm() <= 2.0
    u = grid.base_function(_family(grid)[0])
    back = slambda(bump_pair, tlambda(bump_pair, u))
    assert np.linalg.norm(back.values - u.values) / np.linalg.norm(u.values) < 1e-4


def test_t3_rate_between_two_h():
    p = get_symbol("gauss")
    G = bump_weight(0.05)
    res = []
    for h in (0.1, 0.05):
        g = PhaseSpaceGrid.around(h, 2, 0.25)
        pair = DeformedPair(build_deformation(G, g))
        u = coherent_state(g.y, h, 0.9, 0.4)
        res.append(t3_residual(p, u, u, pair))
    assert 1.6 < res[0] / res[1] < 2.4


def test_psi_lambda_reduces_to_free_phase():
    a = np.array([[0.3, -0.5], [0.1, 0.7]])
    b = np.array([[-0.2, 0.4], [0.6, -0.1]])
    v = psi_lambda(zero_weight(), a, b)
    assert np.max(np.abs(v - psi0(a[0], a[1], b[0], b[1]))) < 1e-15
    assert psi_lambda_constant(zero_weight()) == pytest.approx(4.0, rel=1e-9)
    assert psi_lambda_constant(bump_weight(0.05)) <= 8.0


def test_kernel_diagonal_ratio_at_zero_deformation():
    g = PhaseSpaceGrid(h=0.02, Lx=2.5, Lxi=2.5, kappa=0.25)
    p = get_symbol("gauss")
    pts = np.array([[0.5, -0.3], [0.2, 0.6]])
    r = kernel_diagonal_ratio(p, zero_weight(), g, pts)
    exact = p(pts[0], pts[1])
    assert np.max(np.abs(r - exact) / np.abs(exact)) < 0.1


def test_gate_and_support_errors(grid):
    with pytest.raises(PreconditionError):
        build_deformation(bump_weight(0.5), grid)
    small = PhaseSpaceGrid(h=0.1, Lx=2.0, Lxi=2.0, kappa=0.25)
    with pytest.raises(ConstructionError):
        build_deformation(bump_weight(0.05), small)


def test_batched_nelder_mead_matches_scipy():
    def rosen(p):
        return (1 - p[0]) ** 2 + 5 * (p[1] - p[0] ** 2) ** 2

    x0 = np.array([[-1.0, 0.5, 2.0], [1.0, -0.5, 1.5]])
    x, fx = batched_nelder_mead(rosen, x0, step=0.1)
    for k in range(3):
        ref = minimize(rosen, x0[:, k], method="Nelder-Mead",
                       options=dict(xatol=1e-10, fatol=1e-14, maxiter=2000))
        assert np.allclose(x[:, k], ref.x, atol=1e-6)
        assert fx[k] == pytest.approx(ref.fun, abs=1e-12)


def test_g2ph_linear_escape_function():
    # for linear G: phi_max = G + |grad G|^2 / 2 and phi_min = G - |grad G|^2 / 2
    G = Weight("linear", lambda x, xi: 0.02 * x + 0.03 * xi, 0.05, (0.0, 0.0), 1.5)
    w = g2ph_weight(G, step=0.2, strict=False)
    X, XI = np.meshgrid(w.xs, w.xis, indexing="ij")
    inner = np.hypot(X, XI) < 0.8
    g = 0.02 * X + 0.03 * XI
    q = 0.5 * (0.02 ** 2 + 0.03 ** 2)
    assert np.max(np.abs(w.phi_max - g - q)[inner]) < 1e-10
    assert np.max(np.abs(w.phi_min - g + q)[inner]) < 1e-10


def test_g2ph_zero_escape_function():
    w = g2ph_weight(zero_weight())
    assert w.gap == 0
    assert np.all(w(np.array([0.1, 3.0]), np.array([0.2, 0.0])) == 0)
    hs = [0.1, 0.05]

    def family(g):
        return [coherent_state(g.y, g.h, 0.5, 0.2)]

    r = g2ph_equivalence(zero_weight(), w, hs, family,
                         lambda h: PhaseSpaceGrid.around(h, 1.5, 0.25))
    assert np.max(np.abs(r - 1)) < 1e-12


@pytest.mark.slow
def test_g2ph_bump_gap_is_second_order():
    # the gap scales like eps^2, so the strict 1e-3 eps tolerance is refused
    gaps = []
    for eps in (0.05, 0.025):
        w = g2ph_weight(bump_weight(eps), step=0.2, strict=False)
        gaps.append(w.gap)
        assert w.outside_max() < 1e-12
    assert 3.5 < gaps[0] / gaps[1] < 4.5
    with pytest.raises(ConstructionError, match="differ"):
        g2ph_weight(bump_weight(0.05), step=0.2)
