import numpy as np
import pytest

from fbilab.errors import ConstructionError, PreconditionError
from fbilab.fbi import FbiOperator, psi0
from fbilab.numgrid import PhaseSpaceGrid
from fbilab.weights import bump_weight, zero_weight
from fbilab.wproj import (adjoint_defect, build_bergman, build_weighted_phase, chi,
                          diagonal_amplitude, idempotency_defect, oracle_projector,
                          projector_gap, random_flat_vectors)


@pytest.fixture(scope="module")
def grid():
    return PhaseSpaceGrid.around(0.1, 2, 0.25)


@pytest.fixture(scope="module")
def bump_pair(grid):
    phi = bump_weight(0.05)
    return build_bergman(phi, grid), oracle_projector(phi, grid)


def test_cutoff_profile():
    t = np.linspace(0, 2, 201)
    c = chi(t)
    assert np.all(c[t <= 1.0] == 1.0)
    assert np.all(c[t >= 1.5] == 0.0)
    assert np.all(np.diff(c) <= 0)
    assert np.all((c >= 0) & (c <= 1))


def test_phase_is_free_phase_for_zero_weight():
    ph = build_weighted_phase(zero_weight(), check=False)
    a = np.array([0.3, -0.2, 1.1])
    b = np.array([0.5, 0.4, -0.7])
    v = ph(a, b, b[::-1], a[::-1])
    assert np.allclose(v, psi0(a, b, b[::-1], a[::-1]), atol=1e-15)


def test_phase_diagonal_is_exact():
    ph = build_weighted_phase(bump_weight(0.05))
    rng = np.random.default_rng(1)
    x, xi = rng.uniform(-2.5, 2.5, (2, 500))
    assert ph.diagonal_defect(x, xi) <= 1e-13


def test_positivity_constant_near_quarter():
    ph = build_weighted_phase(bump_weight(0.05))
    c0, C, worst = ph.positivity()
    assert 0.25 - 5 * 0.05 <= c0 <= 0.25 + 5 * 0.05
    assert worst[2] > 0


def test_higher_jet_order_is_refused():
    with pytest.raises(ConstructionError, match="positivity"):
        build_weighted_phase(bump_weight(0.05), K=4)


def test_diagonal_amplitude():
    z = diagonal_amplitude(zero_weight(), np.array([0.3]), np.array([0.1]))
    assert z[0] == pytest.approx(1 / (2 * np.pi))
    # at the bump center Laplacian phi = -4 eps / R^2 (second derivatives of exp(1 - 1/(1-s)))
    a = diagonal_amplitude(bump_weight(0.05), np.array([0.0]), np.array([0.0]))
    assert a[0] == pytest.approx((1 - 4 * 0.05 / 4) / (2 * np.pi), rel=1e-12)


def test_bergman_is_free_projector_at_zero_weight(grid):
    B = build_bergman(zero_weight(), grid)
    T = FbiOperator(grid)
    F = random_flat_vectors(grid, 4, 3)
    assert np.max(np.abs(B.apply_flat(F) - T.project(F))) < 1e-14


def test_oracle_is_orthogonal_projector(grid, bump_pair):
    _, O = bump_pair
    F = random_flat_vectors(grid, 4, 5)
    PF = O.apply_flat(F)
    assert np.max(np.abs(O.apply_flat(PF) - PF)) < 1e-10
    w = grid.phase_weight
    M = F.conj().T @ PF * w
    assert np.max(np.abs(M - M.conj().T)) < 1e-10
    assert O.rank == grid.nb


def test_oracle_matches_free_projector_at_zero_weight(grid):
    O = oracle_projector(zero_weight(), grid)
    B = build_bergman(zero_weight(), grid)
    assert projector_gap(B, O, n=8) <= 1e-10


def test_surrogate_is_hermitian_and_close(grid, bump_pair):
    B, O = bump_pair
    assert adjoint_defect(B, n=8) < 1e-12
    gap = projector_gap(B, O, n=8)
    assert 1e-4 < gap < 3e-2
    assert idempotency_defect(B, n=8) < 3e-2
    # the kernel dropped beyond delta is small next to the measured gap
    assert B.schur_tail() < 0.1 * gap


def test_weight_support_must_fit_in_box():
    g = PhaseSpaceGrid(h=0.1, Lx=2.0, Lxi=2.0, kappa=0.25)
    with pytest.raises(PreconditionError):
        build_bergman(bump_weight(0.05), g)


def test_gate_applies_before_construction():
    with pytest.raises(PreconditionError):
        build_weighted_phase(bump_weight(0.5))
