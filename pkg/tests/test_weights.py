import numpy as np
import pytest

from fbilab.errors import DegenerateInputError, DomainError, PreconditionError
from fbilab.fbi import coherent_state
from fbilab.jets import fd_derivative
from fbilab.numgrid import PhaseSpaceGrid
from fbilab.symbols import get_symbol
from fbilab.weights import (bump_weight, cofe_residual, deformed_symbol, dz_weight,
                            sjostrand_residual, t2_residual, xi_bump_weight, zero_weight)


def test_bump_values_and_support():
    phi = bump_weight(0.05)
    assert phi(0.0, 0.0) == pytest.approx(0.05)
    r = 1.0
    assert phi(r, 0.0) == pytest.approx(0.05 * np.exp(1 - 1 / (1 - r * r / 4)))
    assert np.all(phi(np.array([2.0, 2.5, 0.0]), np.array([0.0, 0.0, -3.0])) == 0)
    psi = xi_bump_weight(0.05)
    assert psi(0.3, 0.5) == pytest.approx(0.5 * phi(0.3, 0.5))


def test_taylor_matches_finite_differences():
    phi = bump_weight(0.05)
    pt = np.array([0.6, -0.4])
    j = phi.taylor(pt, 3)
    for alpha in ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1)):
        fd = fd_derivative(phi, pt, alpha)
        assert j.partial(alpha).real == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_jets_vanish_outside_support():
    phi = bump_weight(0.05)
    j = phi.derivatives(np.array([2.5]), np.array([0.0]), 2)
    assert np.all(j.c == 0)


def test_c2_norm_scales_and_gate():
    small = bump_weight(0.05)
    big = bump_weight(0.5)
    assert big.c2_norm() == pytest.approx(10 * small.c2_norm(), rel=1e-12)
    assert 0.2 < small.c2_norm() < 0.3
    small.gate()
    with pytest.raises(PreconditionError):
        big.gate()


def test_zero_weight():
    z = zero_weight()
    assert z.is_zero()
    assert np.all(z(np.linspace(-1, 1, 5), 0.3) == 0)


def test_dz_and_deformed_symbol_for_linear_symbols():
    # p = x: p_phi = x + phi_x + i phi_xi ; p = xi: p_phi = xi + phi_xi - i phi_x
    phi = bump_weight(0.05)
    x = np.array([0.5, -1.0, 0.2])
    xi = np.array([0.3, 0.4, -1.1])
    gx = np.array([fd_derivative(phi, np.array([a, b]), (1, 0)) for a, b in zip(x, xi)])
    gxi = np.array([fd_derivative(phi, np.array([a, b]), (0, 1)) for a, b in zip(x, xi)])
    assert np.allclose(dz_weight(phi, x, xi), 0.5 * (gx + 1j * gxi), atol=1e-10)
    assert np.allclose(deformed_symbol(get_symbol("x"), phi, x, xi), x + gx + 1j * gxi, atol=1e-9)
    assert np.allclose(deformed_symbol(get_symbol("xi"), phi, x, xi), xi + gxi - 1j * gx, atol=1e-9)


def test_deformed_symbol_leaves_strip():
    phi = bump_weight(0.4)
    with pytest.raises(DomainError, match="strip"):
        deformed_symbol(get_symbol("gauss"), phi, np.array([-0.7]), np.array([-1.35]))


def _packet(g, x0, xi0):
    return coherent_state(g.y, g.h, x0, xi0)


def test_cofe_residual_is_first_order():
    p = get_symbol("gauss")
    res = []
    for h in (0.1, 0.05):
        g = PhaseSpaceGrid.around(h, 1.5)
        u = _packet(g, 0.7, 0.2)
        res.append(cofe_residual(p, u, u, g))
    assert 1.6 < res[0] / res[1] < 2.4


def test_sjostrand_residual_is_half_order():
    p = get_symbol("gauss")
    res = []
    for h in (0.1, 0.05):
        g = PhaseSpaceGrid.around(h, 1.5)
        res.append(sjostrand_residual(p, _packet(g, 0.7, 0.2), g))
    assert 1.2 < res[0] / res[1] < 1.6


def test_t2_reduces_to_cofe_for_zero_weight():
    p = get_symbol("gauss")
    g = PhaseSpaceGrid.around(0.1, 2)
    u = _packet(g, 0.9, 0.4)
    assert t2_residual(p, zero_weight(), u, u, g) == cofe_residual(p, u, u, g)


def test_t2_control_ratio_grows_as_h_shrinks():
    # the deformed residual is O(h) while the control stays O(1)
    p = get_symbol("gauss")
    phi = bump_weight(0.05)
    ratios = []
    for h in (0.1, 0.05):
        g = PhaseSpaceGrid.around(h, 2)
        u = _packet(g, 0.9, 0.4)
        d = t2_residual(p, phi, u, u, g)
        c = t2_residual(p, phi, u, u, g, deformed=False)
        ratios.append(c / d)
    assert 1 < ratios[0] < ratios[1]
    assert ratios[1] > 1.8


def test_t2_gate_and_zero_vectors():
    p = get_symbol("gauss")
    g = PhaseSpaceGrid.around(0.1, 2)
    u = _packet(g, 0.0, 0.0)
    with pytest.raises(PreconditionError):
        t2_residual(p, bump_weight(0.5), u, u, g)
    with pytest.raises(DegenerateInputError):
        cofe_residual(p, np.zeros(g.nb), u, g)
