import math

import numpy as np
import pytest

from specstab.branch import (INFINITE, LINEAR, VIOLATION, classify_endpoint_rates, decompose, global_factorization,
                             synthetic_branch)
from specstab.exceptions import DomainError
from specstab.models import make_model


def _interior_samples(model, br, n=200):
    lo, hi = br.J
    c_lo, c_hi = model.cdf(lo), model.cdf(hi)
    q = c_lo + (c_hi - c_lo) * np.linspace(0.002, 0.998, n)
    return np.clip(model.ppf(q), lo, hi)


def test_gaussian_examples():
    g = make_model("gaussian")
    d1 = decompose(g, 1)
    assert len(d1) == 1 and len(d1.crit) == 0 and d1.branches[0].J == (-math.inf, math.inf)
    assert d1.branches[0].local_inverse(0.37) == pytest.approx(0.37, abs=1e-15)
    d2 = decompose(g, 2)
    np.testing.assert_allclose(d2.crit, [0.0], atol=1e-15)
    assert [b.J for b in d2.branches] == [(-math.inf, 0.0), (0.0, math.inf)]
    right = d2.branches[1]
    assert right.local_inverse(0.0) == pytest.approx(1.0, abs=1e-14)
    assert right.h(0.0) == pytest.approx(2.0, rel=1e-13)
    assert right.h(3 / math.sqrt(2)) == pytest.approx(8.0, rel=1e-13)
    assert right.h(-1 / math.sqrt(2)) == pytest.approx(0.0, abs=1e-14)
    d3 = decompose(g, 3)
    np.testing.assert_allclose(d3.crit, [-1.0, 1.0], atol=1e-14)
    assert d3.branches[1].local_inverse(0.0) == pytest.approx(0.0, abs=1e-15)


def test_local_inverse_outside_image():
    br = decompose(make_model("gaussian"), 2).branches[1]
    with pytest.raises(DomainError):
        br.local_inverse(-1.0)
    with pytest.raises(DomainError):
        br.h(np.array([0.0, -2.0]))


@pytest.mark.parametrize("k", range(1, 6))
def test_decomposition_invariants(model, k):
    dec = decompose(model, k)
    assert len(dec) == k
    lo, hi = model.interval
    assert dec.branches[0].J[0] == lo and dec.branches[-1].J[1] == hi
    for left, right in zip(dec.branches[:-1], dec.branches[1:]):
        assert left.J[1] == right.J[0]
    assert dec.total_mass == pytest.approx(1.0, abs=1e-9)
    for br in dec.branches:
        x = _interior_samples(model, br)
        assert np.all(br.sign * model.df(k, x) > 0)
        t = model.f(k, x)
        np.testing.assert_allclose(br.h(t), model.gamma_of_eigenfunction(k, x), rtol=1e-9)
        np.testing.assert_allclose(br.local_inverse(t), x, rtol=1e-10, atol=1e-10)
        resid = np.abs(model.f(k, br.local_inverse(t)) - t)
        assert np.all(resid <= 1e-12 * (1 + np.abs(t)))
        assert np.all(br.h(t) > 0)
        for r in br.endpoint_rates():
            if math.isfinite(r.value):
                assert r.kind == LINEAR
                assert br.h(r.value) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("family,kw", [("gaussian", {}), ("beta", {"N": 3.0}), ("beta", {"N": 2.0})])
def test_k2_branches_share_one_factorization(family, kw):
    m = make_model(family, **kw)
    left, right = decompose(m, 2).branches
    h = global_factorization(m, 2)
    lo = max(left.a, right.a)
    hi = min(left.b, right.b, 50.0)
    t = np.linspace(lo, hi, 300)[1:-1]
    assert np.max(np.abs(left.h(t) - right.h(t))) <= 1e-10 * max(1.0, np.max(h(t)))
    assert np.max(np.abs(left.h(t) - h(t))) <= 1e-10 * max(1.0, np.max(h(t)))


def test_infinite_end_exponents():
    br = decompose(make_model("gaussian"), 3).branches[0]
    rate = classify_endpoint_rates(br)[0]
    assert rate.kind == INFINITE and rate.exponent == pytest.approx(4 / 3, abs=0.1)
    for k in (2, 3, 4):
        last = decompose(make_model("gamma", s=1.0, theta=1.0), k).branches[-1]
        inf_rate = [r for r in last.endpoint_rates() if not math.isfinite(r.value)][0]
        assert inf_rate.exponent == pytest.approx(2 - 1 / k, abs=0.1)


def test_gaussian_k2_finite_end_is_linear():
    br = decompose(make_model("gaussian"), 2).branches[1]
    rate = [r for r in br.endpoint_rates() if math.isfinite(r.value)][0]
    assert rate.value == pytest.approx(-1 / math.sqrt(2), abs=1e-14)
    assert rate.kind == LINEAR and rate.exponent == pytest.approx(1.0, abs=0.02)


def test_synthetic_rates():
    ok = synthetic_branch(lambda t: 1 - np.asarray(t) ** 2, (-1.0, 1.0), 0.0)
    assert ok.admissible
    cubic = synthetic_branch(lambda t: (np.asarray(t) + 1) ** 3 * (1 - np.asarray(t)), (-1.0, 1.0), 0.0)
    rates = cubic.endpoint_rates()
    assert rates[0].kind == VIOLATION and rates[0].exponent == pytest.approx(3.0, abs=0.05)
    assert not cubic.admissible
    fast = synthetic_branch(lambda t: 1 + np.asarray(t) ** 4, (-math.inf, math.inf), 0.0)
    assert [r.kind for r in fast.endpoint_rates()] == [VIOLATION, VIOLATION]
    with pytest.raises(DomainError):
        ok.local_inverse(0.0)
