import numpy as np
import pytest

from fbilab.errors import StructuralError
from fbilab.fbi import (FBI_C, PI0_C0, FbiOperator, Pi0Kernel, coherent_state, fbi_adjoint,
                        fbi_forward, hermite_function, pi0_apply, psi0, zj_residual)
from fbilab.numgrid import PhaseSpaceGrid, norm


@pytest.fixture(scope="module")
def setup():
    g = PhaseSpaceGrid.around(0.1, 1.5, 0.2)
    return g, FbiOperator(g)


def test_normalization_constants():
    assert FBI_C == pytest.approx(2 ** -0.5 * np.pi ** -0.75, rel=1e-15)
    assert PI0_C0 == pytest.approx(1 / (2 * np.pi), rel=1e-15)


def test_isometry_on_hermite_family(setup):
    g, T = setup
    for k in range(5):
        u = g.base_function(hermite_function(k, g.y, g.h, 0.3, 0.2))
        Tu = fbi_forward(T, u)
        assert abs(norm(Tu) - norm(u)) / norm(u) < 1e-10


def test_left_inverse_on_random_vector(setup, rng):
    g, T = setup
    u = rng.standard_normal(g.n_base) + 1j * rng.standard_normal(g.n_base)
    back = T.adjoint(T.forward(u))
    assert np.max(np.abs(back - u)) / np.max(np.abs(u)) < 1e-12


def test_transform_of_coherent_state_in_closed_form(setup):
    # |T u|(a) = (2 pi h)^(-1/2) exp(-|a - a0|^2 / (4h)) for the packet at a0
    g, T = setup
    x0, xi0 = 0.4, -0.3
    F = T.forward(coherent_state(g.y, g.h, x0, xi0))
    X, XI = g.phase_nodes()
    expected = (2 * np.pi * g.h) ** -0.5 * np.exp(-((X - x0) ** 2 + (XI - xi0) ** 2) / (4 * g.h))
    assert np.max(np.abs(np.abs(F) - expected)) < 1e-10 * expected.max()


def test_projector_idempotent_and_self_adjoint(setup, rng):
    g, T = setup
    F = rng.standard_normal(g.n_phase) + 1j * rng.standard_normal(g.n_phase)
    G = rng.standard_normal(g.n_phase) + 1j * rng.standard_normal(g.n_phase)
    PF = T.project(F)
    assert np.linalg.norm(T.project(PF) - PF) / np.linalg.norm(PF) < 1e-12
    w = g.phase_weight
    lhs = np.sum(PF * np.conj(G)) * w
    rhs = np.sum(F * np.conj(T.project(G))) * w
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_closed_form_kernel_reproduces_range(setup):
    g, T = setup
    F = T.forward(coherent_state(g.y, g.h, 0.2, 0.1))
    X, XI = g.phase_nodes()
    idx = np.argsort(np.hypot(X - 0.2, XI - 0.1))[:20]
    pts = np.array([X[idx], XI[idx]])
    vals = Pi0Kernel(g.h).apply_at(g, F, pts)
    assert np.max(np.abs(vals - F[idx])) < 1e-8 * np.max(np.abs(F))


def test_psi0_diagonal_and_positivity():
    a = np.array([0.3, -1.2])
    assert psi0(a[0], a[1], a[0], a[1]) == 0
    b = np.array([0.5, 0.4])
    d2 = np.sum((a - b) ** 2)
    assert psi0(a[0], a[1], b[0], b[1]).imag == pytest.approx(d2 / 4)
    # Hermitian symmetry of the kernel
    assert psi0(*a, *b) == pytest.approx(-np.conj(psi0(*b, *a)))


def test_zj_residual_decreases_under_refinement():
    res = []
    for kappa in (0.2, 0.1, 0.05):
        g = PhaseSpaceGrid(h=0.1, Lx=2.5, Lxi=2.5, kappa=kappa)
        T = FbiOperator(g)
        F = fbi_forward(T, g.base_function(coherent_state(g.y, g.h, 0.1, 0.2)))
        res.append(zj_residual(F))
    assert res[0] > res[1] > res[2]
    order = np.log(res[0] / res[2]) / np.log(4.0)
    assert order >= 2


def test_grid_function_wrappers(setup):
    g, T = setup
    u = g.base_function(coherent_state(g.y, g.h))
    F = fbi_forward(T, u)
    assert np.allclose(fbi_adjoint(T, F).values, u.values, atol=1e-12)
    assert np.allclose(pi0_apply(T, F).values, F.values, atol=1e-12)
    with pytest.raises(StructuralError):
        fbi_forward(T, F)
    with pytest.raises(StructuralError):
        fbi_adjoint(T, u)
    with pytest.raises(StructuralError):
        zj_residual(u)
    with pytest.raises(StructuralError):
        zj_residual(F, j=1)
    other = PhaseSpaceGrid(h=0.05, Lx=2.0, Lxi=2.0)
    with pytest.raises(StructuralError):
        fbi_forward(T, other.base_function(np.ones(other.n_base)))


def test_hermite_functions_orthonormal():
    g = PhaseSpaceGrid(h=0.05, Lx=4.0, Lxi=3.0)
    H = np.array([hermite_function(k, g.y, g.h, 0.1) for k in range(5)])
    gram = H.conj() @ H.T * g.dy
    assert np.max(np.abs(gram - np.eye(5))) < 1e-12
