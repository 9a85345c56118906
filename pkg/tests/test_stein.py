import math

import numpy as np
import pytest

from specstab.branch import decompose, synthetic_branch
from specstab.exceptions import ContractError
from specstab.models import make_model
from specstab.pushforward import mu_star
from specstab.stein import _sup_grid, solve_stein, stein_constant, stein_operator

from conftest import lipschitz_test_function


@pytest.fixture(scope="module")
def gauss1():
    br = decompose(make_model("gaussian"), 1).branches[0]
    return br, mu_star(br, 1.0)


@pytest.fixture(scope="module")
def gauss2():
    br = decompose(make_model("gaussian"), 2).branches[1]
    return br, mu_star(br, 2.0)


def test_constant_g_gives_zero(gauss2):
    br, law = gauss2
    sol = solve_stein(br, law, 2.0, lambda t: np.full(np.shape(t), 0.7))
    # quadrature error in the cumulatives is amplified by 1 / (h rho) near the singular end
    assert np.max(np.abs(sol.psi(sol.grid))) <= 1e-10
    assert np.max(np.sqrt(br.h(sol.grid)) * np.abs(sol.dpsi(sol.grid))) <= 1e-8


def test_gaussian_identity_solution(gauss1):
    # psi' - t psi = t is solved by psi = -1
    br, law = gauss1
    sol = solve_stein(br, law, 1.0, lambda t: np.asarray(t, dtype=float))
    np.testing.assert_allclose(sol.psi(sol.grid), -1.0, atol=1e-10)
    assert sol.residual_sup <= 1e-9


def test_gaussian_k2_operator_and_residual(gauss2):
    br, law = gauss2
    op = stein_operator(br, 2.0)
    t = np.linspace(-0.7, 8.0, 97)
    np.testing.assert_allclose(op.drift(t), 2 * t, rtol=0, atol=1e-12)
    np.testing.assert_allclose(op.diffusion(t), 2 * math.sqrt(2) * (t + 1 / math.sqrt(2)), rtol=1e-12, atol=1e-12)
    sol = solve_stein(br, law, 2.0, lambda s: np.asarray(s, dtype=float))
    assert sol.residual_sup <= 1e-6
    tt, psi, dpsi, res = sol.table()
    assert np.max(np.abs(res)) == pytest.approx(sol.residual_sup)
    # the Stein operator annihilates means: A psi = -(g - mean)
    f = op.apply(sol.psi, sol.dpsi)(tt)
    np.testing.assert_allclose(f, -(tt - sol.mean), atol=1e-9)


def test_non_lipschitz_rejected(gauss2):
    br, law = gauss2
    with pytest.raises(ContractError):
        solve_stein(br, law, 2.0, lambda t: 3.0 * np.asarray(t))


@pytest.mark.parametrize("k", [2, 3])
def test_residual_sin(model, k):
    lam = model.eigenvalue(k)
    for br in decompose(model, k).branches:
        sol = solve_stein(br, mu_star(br, lam), lam, np.sin)
        assert sol.residual_sup <= 1e-6


def test_gaussian_k1_constant(gauss1):
    br, law = gauss1
    c = stein_constant(br, law, 1.0)
    assert not c.presumed_infinite
    # for h = 1 the bracket peaks at the median with value sqrt(2 / pi)
    assert c.value == pytest.approx(math.sqrt(2 / math.pi), rel=1e-6)
    fine = stein_constant(br, law, 1.0, n=40960)
    assert abs(fine.value - c.value) <= 0.02 * c.value


@pytest.mark.parametrize("family,kw,k", [("gamma", {"s": 2.5, "theta": 0.7}, 3), ("beta", {"N": 3.0}, 2)])
def test_constant_stable_under_refinement(family, kw, k):
    m = make_model(family, **kw)
    lam = m.eigenvalue(k)
    for br in decompose(m, k).branches:
        law = mu_star(br, lam)
        coarse, fine = stein_constant(br, law, lam, 2048), stein_constant(br, law, lam, 4096)
        assert math.isfinite(coarse.value) and abs(fine.value - coarse.value) < 0.02 * fine.value


def test_cubic_vanishing_is_presumed_infinite():
    br = synthetic_branch(lambda t: (np.asarray(t) + 1) ** 3 * (1 - np.asarray(t)), (-1.0, 1.0), 0.0, 0.5)
    law = mu_star(br, 1.0, check=False)
    c = stein_constant(br, law, 1.0)
    assert c.presumed_infinite and c.value == math.inf


def test_random_lipschitz_bound(gauss2, rng):
    br, law = gauss2
    C = stein_constant(br, law, 2.0).value
    t = _sup_grid(law, 4096)
    for _ in range(10):
        sol = solve_stein(br, law, 2.0, lipschitz_test_function(rng, law))
        assert np.max(np.sqrt(br.h(t)) * np.abs(sol.dpsi(t))) <= C * (1 + 1e-3)
