import numpy as np
import pytest

from fbilab.errors import ConfigurationError, DomainError, StructuralError
from fbilab.fbi import coherent_state
from fbilab.numgrid import PhaseSpaceGrid
from fbilab.symbols import (apply, get_symbol, library, momentum_nodes, quantize, rotated_model,
                            strip_honesty, symbol_deformed_eval)


@pytest.fixture(scope="module")
def grid():
    return PhaseSpaceGrid(h=0.05, Lx=4.0, Lxi=3.0)


def test_library_contents():
    names = set(library())
    assert {"gauss", "cosgauss", "lorentz", "qm_beta", "qm_wrong", "qm_xi2", "harmonic"} <= names
    with pytest.raises(ConfigurationError):
        get_symbol("nope")


@pytest.mark.parametrize("name", sorted(library()))
def test_declared_bounds_are_honest(name):
    ok, m = strip_honesty(get_symbol(name))
    assert ok, f"{name}: sampled max {m} above declared M"


def test_strip_check_on_complex_points():
    p = get_symbol("gauss")
    v = symbol_deformed_eval(p, np.array([0.1 + 0.2j]), np.array([0.3 - 0.1j]))
    assert v[0] == pytest.approx(np.exp(-(0.1 + 0.2j) ** 2 - (0.3 - 0.1j) ** 2))
    with pytest.raises(DomainError, match="Im z"):
        symbol_deformed_eval(p, np.array([0.5j]), np.array([0.0]))
    with pytest.raises(DomainError, match="Im zeta"):
        symbol_deformed_eval(p, np.array([0.0]), np.array([0.5j]))


def test_closed_form_derivatives():
    p = get_symbol("gauss")
    x, xi = 0.3, -0.4
    e = np.exp(-x * x - xi * xi)
    assert p.derivative(x, xi, (1, 0)) == pytest.approx(-2 * x * e)
    assert p.derivative(x, xi, (1, 1)) == pytest.approx(4 * x * xi * e)
    assert p.derivative(x, xi, (0, 2)) == pytest.approx((4 * xi * xi - 2) * e)
    with pytest.raises(StructuralError):
        p.derivative(x, xi, (3, 2))


def test_momentum_nodes_cover_box(grid):
    eta = momentum_nodes(grid)
    assert eta.size == grid.nb
    assert eta.min() >= -grid.Lxi and eta.max() <= grid.Lxi
    assert np.allclose(np.diff(eta), 2 * np.pi * grid.h / (grid.nb * grid.dy))


@pytest.mark.parametrize("flavor", ["standard", "weyl"])
def test_constant_and_position_symbols(grid, flavor):
    I = quantize(get_symbol("one"), flavor, grid).matrix
    assert np.max(np.abs(I - np.eye(grid.nb))) < 1e-12
    X = quantize(get_symbol("x"), flavor, grid).matrix
    assert np.max(np.abs(X - np.diag(grid.y))) < 1e-10


@pytest.mark.parametrize("flavor", ["standard", "weyl"])
def test_momentum_symbol_is_hD(grid, flavor):
    # hD applied to the packet at (y0, eta0) gives (eta0 + i (y - y0)) u
    y0, eta0 = 0.3, 0.6
    u = coherent_state(grid.y, grid.h, y0, eta0)
    P = quantize(get_symbol("xi"), flavor, grid)
    v = apply(P, grid.base_function(u)).values
    expected = (eta0 + 1j * (grid.y - y0)) * u
    assert np.max(np.abs(v - expected)) < 1e-9


def test_weyl_and_standard_differ_by_commutator(grid):
    # Op_w(x xi) = Op_std(x xi) + h/(2i)
    def xxi(x, xi):
        return x * xi

    u = coherent_state(grid.y, grid.h, 0.2, -0.3)
    S = quantize(xxi, "standard", grid).matrix
    W = quantize(xxi, "weyl", grid).matrix
    d = (W - S) @ u
    assert np.max(np.abs(d - grid.h / 2j * u)) < 1e-9


def test_standard_quantization_of_product_symbol(grid):
    # Op_std(x^2 xi) = y^2 hD
    def f(x, xi):
        return x * x * xi

    u = coherent_state(grid.y, grid.h, 0.1, 0.4)
    v = quantize(f, "standard", grid).matrix @ u
    expected = grid.y ** 2 * (0.4 + 1j * (grid.y - 0.1)) * u
    assert np.max(np.abs(v - expected)) < 1e-9


def test_quantize_rejects_bad_arguments(grid):
    p = get_symbol("gauss")
    with pytest.raises(ConfigurationError):
        quantize(p, "anti-wick", grid)
    with pytest.raises(ConfigurationError):
        quantize(p, "standard", grid, h=0.1)
    narrow = PhaseSpaceGrid(h=0.1, Lx=3.0, Lxi=1.0)
    with pytest.raises(ConfigurationError, match="momentum box"):
        quantize(p, "standard", narrow)
    other = PhaseSpaceGrid(h=0.1, Lx=4.0, Lxi=3.0)
    P = quantize(p, "standard", grid)
    with pytest.raises(StructuralError):
        apply(P, other.base_function(np.ones(other.nb)))


def test_rotated_model_at_zero_angle():
    p = rotated_model(0.0)
    q = get_symbol("qm_linear")
    x, xi = np.meshgrid(np.linspace(-1, 1, 5), np.linspace(-1, 1, 5))
    assert np.allclose(p(x, xi), q(x, xi))
    r = rotated_model(np.pi / 2)
    # rotation by pi/2 maps (x, xi) to (-xi, x)
    assert np.allclose(r(x, xi), x + 1j * xi)


def test_subprincipal_default_and_override():
    p = get_symbol("qm_beta")
    assert np.all(p.subprincipal(np.ones(3), np.ones(3)) == 0)
    q = p.with_p1(lambda x, xi: 0.3 + 0 * x)
    assert np.allclose(q.subprincipal(np.ones(3), np.ones(3)), 0.3)
    assert q.name == p.name
