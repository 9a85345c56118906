import math

import numpy as np
import pytest
from scipy import integrate

from specstab import orthopoly as op
from specstab.branch import global_factorization
from specstab.exceptions import DomainError, ParameterError
from specstab.models import make_model


def test_eigenvalue_examples():
    assert make_model("gaussian").eigenvalue(2) == 2.0
    assert make_model("gamma", s=2.0, theta=0.7).eigenvalue(1) == pytest.approx(1 / 0.7, rel=1e-15)
    for N in (2.0, 3.0, 5.5):
        assert make_model("beta", N=N).eigenvalue(2) == pytest.approx(2 * (N + 1), rel=1e-15)


def test_density_normalized_and_eigenvalues_increase(model):
    assert model.expect(lambda x: np.ones_like(x), method="adaptive") == pytest.approx(1.0, abs=1e-10)
    lam = [model.eigenvalue(k) for k in range(7)]
    assert lam[0] == 0.0 and np.all(np.diff(lam) > 0)
    lo, hi = model.interval
    x = np.linspace(max(lo, -5.0), min(hi, 5.0), 50)[1:-1]
    assert np.all(model.a(x) > 0)


def test_beta_normalizer_against_quadrature():
    for N in (1.5, 2.0, 3.0, 7.0):
        m = make_model("beta", N=N)
        b = N / 2 - 1
        val, _ = integrate.quad(lambda x: 1.0, -1, 1, weight="alg", wvar=(b, b), epsabs=1e-13, epsrel=1e-13)
        assert m.mu_density(0.0) == pytest.approx(1.0 / val, rel=1e-12)


def test_weak_eigen_relation(model):
    tests = [lambda x: np.sin(x), lambda x: np.cos(0.5 * x), lambda x: np.exp(-x * x)]
    dtests = [lambda x: np.cos(x), lambda x: -0.5 * np.sin(0.5 * x), lambda x: -2 * x * np.exp(-x * x)]
    for k in range(1, 7):
        for g, dg in zip(tests, dtests):
            val = model.expect(lambda x: model.a(x) * model.df(k, x) * dg(x)
                               - model.eigenvalue(k) * model.f(k, x) * g(x), method="adaptive")
            assert abs(val) <= 1e-7


def test_carre_du_champ_examples():
    g = make_model("gaussian")
    assert g.gamma_of_eigenfunction(2, 1.0) == pytest.approx(2.0, rel=1e-14)
    assert g.gamma_of_eigenfunction(2, 0.0) == 0.0
    gm = make_model("gamma", s=1.0, theta=1.0)
    assert gm.gamma_of_eigenfunction(1, 2.0) == pytest.approx(2.0 * op.eval_derivative(op.laguerre(1, 1, 1), 2.0) ** 2)
    with pytest.raises(DomainError):
        gm.gamma_of_eigenfunction(1, -1.0)
    with pytest.raises(DomainError):
        make_model("beta", N=3).gamma_of_eigenfunction(2, 1.5)


def test_interval_masses():
    g = make_model("gaussian")
    assert g.mu_mass_of_interval(-math.inf, 0.0) == pytest.approx(0.5, abs=1e-12)
    assert g.mu_mass_of_interval(-math.inf, math.inf) == pytest.approx(1.0, abs=1e-12)
    assert make_model("beta", N=3).mu_mass_of_interval(-1.0, 0.0) == pytest.approx(0.5, abs=1e-12)


def test_gaussian_moments():
    g = make_model("gaussian")
    assert g.expect(lambda x: x ** 2, method="adaptive") == pytest.approx(1.0, abs=1e-10)
    assert g.expect(lambda x: x ** 4, method="adaptive") == pytest.approx(3.0, abs=1e-10)


@pytest.mark.parametrize("family,kw", [("gaussian", {}), ("beta", {"N": 2.0}), ("beta", {"N": 3.0}),
                                       ("beta", {"N": 6.0})])
def test_global_factorization_k2(family, kw):
    m = make_model(family, **kw)
    h = global_factorization(m, 2)
    lo, hi = m.interval
    x = np.linspace(max(lo, -6.0), min(hi, 6.0), 201)
    np.testing.assert_allclose(m.gamma_of_eigenfunction(2, x), h(m.f(2, x)), rtol=1e-12, atol=1e-12)


def test_invalid_parameters():
    for fam, kw in [("gamma", {"s": 0.0}), ("gamma", {"theta": -1.0}), ("beta", {"N": 1.0}), ("cauchy", {})]:
        with pytest.raises(ParameterError):
            make_model(fam, **kw)
