from math import factorial

import numpy as np
import pytest

from fbilab import jets
from fbilab.errors import CapabilityError, DomainError, StructuralError
from fbilab.jets import Jet, aa_extend, fd_derivative, jet_compose, jet_mul, real_taylor


def test_exp_of_sin_series():
    # exp(sin x) = 1 + x + x^2/2 - x^4/8 - x^5/15 + ...
    (x,) = Jet.variables(1, 5, [0.0])
    j = jets.exp(jets.sin(x))
    expected = [1, 1, 1 / 2, 0, -1 / 8, -1 / 15]
    assert np.allclose(j.c, expected, atol=1e-15)


def test_log_exp_and_sqrt_square_round_trip():
    X, XI = Jet.variables(2, 4, [0.3, -0.2])
    f = 1.0 + X * XI + 0.5 * X ** 2
    assert np.allclose(jets.log(jets.exp(f)).c, f.c, atol=1e-14)
    assert np.allclose((jets.sqrt(f) * jets.sqrt(f)).c, f.c, atol=1e-14)
    assert np.allclose((f * (1.0 / f)).c, Jet.constant(1.0, 2, 4, [0.3, -0.2]).c, atol=1e-14)


def test_reciprocal_of_vanishing_constant_raises():
    (x,) = Jet.variables(1, 3, [0.0])
    with pytest.raises(DomainError):
        1.0 / x


def test_derivative_and_partial():
    X, XI = Jet.variables(2, 4, [0.0, 0.0])
    f = X ** 3 * XI
    d = f.derivative(0)
    assert d[2, 1] == pytest.approx(3.0)
    assert f.partial((3, 1)) == pytest.approx(6.0)
    assert d.K == f.K


def test_evaluate_matches_polynomial():
    X, XI = Jet.variables(2, 3, [1.0, 2.0])
    f = X * X * XI - 2.0 * XI + 1.0
    pt = np.array([1.3, 1.7])
    assert complex(f.evaluate(pt)) == pytest.approx(1.3 ** 2 * 1.7 - 2 * 1.7 + 1.0)


def test_jet_mul_matches_operator():
    X, XI = Jet.variables(2, 4, [0.1, 0.2])
    a = jets.exp(X + 2.0 * XI)
    b = jets.cos(X * XI)
    assert np.allclose(jet_mul(a, b).c, (a * b).c)


def test_incompatible_jets_raise():
    (a,) = Jet.variables(1, 3, [0.0])
    (b,) = Jet.variables(1, 3, [1.0])
    with pytest.raises(StructuralError):
        a + b
    (c,) = Jet.variables(1, 2, [0.0])
    with pytest.raises(StructuralError):
        a * c


def test_compose_equals_direct_evaluation():
    (x,) = Jet.variables(1, 5, [0.4])
    inner = jets.sin(x)
    (u,) = Jet.variables(1, 5, [np.sin(0.4)])
    outer = jets.exp(u)
    composed = jet_compose(outer, (inner,))
    assert np.allclose(composed.c, jets.exp(jets.sin(x)).c, atol=1e-14)


def test_compose_checks_expansion_point():
    (x,) = Jet.variables(1, 3, [0.0])
    (u,) = Jet.variables(1, 3, [1.0])
    with pytest.raises(DomainError):
        jet_compose(u * u, (x,))


def test_batched_jets_match_pointwise():
    centers = np.array([[0.1, -0.3, 0.7], [0.2, 0.5, -0.4]])
    X, XI = Jet.variables(2, 3, centers)
    j = jets.exp(-X * X - XI * XI)
    for k in range(3):
        Xk, XIk = Jet.variables(2, 3, centers[:, k])
        jk = jets.exp(-Xk * Xk - XIk * XIk)
        assert np.allclose(j.c[..., k], jk.c)


def test_aa_extension_of_holomorphic_and_modulus():
    class Z2:
        def taylor(self, center, K):
            X, XI = Jet.variables(2, K, center.astype(complex))
            return (X - 1j * XI) ** 2

    class Mod2:
        def taylor(self, center, K):
            X, XI = Jet.variables(2, K, center.astype(complex))
            return X * X + XI * XI

    mu = np.array([0.0, 0.0])
    g = aa_extend(Z2(), mu, 3)
    expected = np.zeros_like(g.c)
    expected[2, 0] = 1.0
    assert np.allclose(g.c, expected, atol=1e-15)
    g = aa_extend(Mod2(), mu, 3)
    expected = np.zeros_like(g.c)
    expected[1, 1] = 1.0
    assert np.allclose(g.c, expected, atol=1e-15)


def test_aa_extension_restricts_to_function():
    class F:
        def taylor(self, center, K):
            X, XI = Jet.variables(2, K, center.astype(complex))
            return jets.sin(X) * jets.exp(XI)

    mu = np.array([0.3, -0.1])
    g = aa_extend(F(), mu, 6)
    d = np.array([1e-2, -2e-2])
    z = (mu[0] + d[0]) - 1j * (mu[1] + d[1])
    val = complex(g.evaluate(np.array([z, np.conj(z)])))
    exact = np.sin(mu[0] + d[0]) * np.exp(mu[1] + d[1])
    assert abs(val - exact) < 1e-12


def test_real_taylor_by_finite_differences():
    def f(x, xi):
        return np.sin(x) * np.cos(xi)

    mu = np.array([0.3, 0.2])
    t = real_taylor(f, mu, 3)
    X, XI = Jet.variables(2, 3, mu.astype(complex))
    exact = jets.sin(X) * jets.cos(XI)
    assert np.max(np.abs(t.c - exact.c)) < 1e-6
    with pytest.raises(CapabilityError):
        real_taylor(f, mu, 5)


def test_fd_derivative_of_polynomial():
    def f(x, xi):
        return x ** 3 * xi ** 2

    v = fd_derivative(f, np.array([0.5, 0.7]), (2, 1))
    assert v == pytest.approx(6 * 0.5 * 2 * 0.7, rel=1e-7)


def test_from_dict_and_indexing():
    j = Jet.from_dict({(0, 0): 1.0, (1, 2): 3.0}, 2, 3, [0.0, 0.0])
    assert j[1, 2] == 3.0
    assert j.partial((1, 2)) == pytest.approx(3.0 * factorial(2))
    with pytest.raises(StructuralError):
        j[3, 1]
