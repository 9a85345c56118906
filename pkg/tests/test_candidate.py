import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from specstab.candidate import (candidate_from_model, check_normalization, discrete_spectrum, load_candidate,
                                projections, read_candidate_csv)
from specstab.exceptions import DegenerateCandidateError, InputError
from specstab.models import make_model


def gaussian_candidate(sigma=1.0, n=2000, half_width=8.0, loc=0.0):
    x = np.linspace(-half_width, half_width, n + 1)
    return load_candidate(x, stats.norm(loc, sigma).pdf(x))


def test_load_records_factor():
    m = make_model("gaussian")
    x = np.linspace(-8, 8, 2001)
    cand = load_candidate(x, m.mu_density(x), model=m)
    assert cand.factor == pytest.approx(1.0, abs=1e-3)
    assert cand.cumulative(x[-1]) == pytest.approx(1.0, abs=1e-12)
    assert cand.expect(lambda s: np.ones_like(s)) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("x,d", [
    (np.linspace(0, 1, 20), np.zeros(20)),
    (np.linspace(1, 0, 20), np.ones(20)),
    (np.linspace(0, 1, 20), -np.ones(20)),
    (np.linspace(0, 1, 10), np.ones(10)),
    (np.r_[np.linspace(0, 1, 19), np.nan], np.ones(20)),
])
def test_load_rejects_bad_input(x, d):
    with pytest.raises(InputError):
        load_candidate(x, d)


def test_load_rejects_nodes_outside_model():
    with pytest.raises(InputError):
        load_candidate(np.linspace(-1, 3, 40), np.ones(40), model=make_model("gamma", s=2, theta=1))


def test_csv_with_sidecar(tmp_path):
    path = tmp_path / "cand.csv"
    x = np.linspace(0.0, 2.0, 30)
    path.write_text("x,density\n" + "".join(f"{a:.17g},1\n" for a in x))
    assert read_candidate_csv(path).n_nodes == 30
    (tmp_path / "cand.json").write_text(json.dumps({"support": [0.0, 1.0]}))
    with pytest.raises(InputError):
        read_candidate_csv(path)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        read_candidate_csv(tmp_path / "bad.csv")
    with pytest.raises(InputError):
        read_candidate_csv(tmp_path / "missing.csv")


def test_normalization_examples():
    g = make_model("gaussian")
    mu = candidate_from_model(g)
    rep = check_normalization(mu, g, 2)
    assert rep.passed
    assert (rep.mean, rep.second, rep.energy) == pytest.approx((0.0, 1.0, 2.0), abs=1e-4)
    assert check_normalization(mu, g, 3).energy == pytest.approx(3.0, abs=1e-4)
    wide = check_normalization(gaussian_candidate(1.1, half_width=10), g, 1)
    assert wide.second == pytest.approx(1.21, abs=1e-4) and not wide.passed


def test_gaussian_spectrum():
    g = make_model("gaussian")
    spec = discrete_spectrum(gaussian_candidate(), g, m=3)
    np.testing.assert_allclose(spec.values, [1.0, 2.0, 3.0], rtol=2e-2)
    assert np.all(np.diff(spec.values) > 1e-6)


@pytest.mark.parametrize("sigma", [0.8, 1.25])
def test_scaled_gaussian_spectrum(sigma):
    spec = discrete_spectrum(gaussian_candidate(sigma, half_width=8 * sigma), make_model("gaussian"), m=2)
    assert spec.values[0] * sigma ** 2 == pytest.approx(1.0, rel=2e-2)


def test_beta_spectrum():
    m = make_model("beta", N=3.0)
    spec = discrete_spectrum(candidate_from_model(m), m, m=3)
    np.testing.assert_allclose(spec.values, [3.0, 8.0, 15.0], rtol=5e-2)


def test_spectrum_invariants(model):
    cand = candidate_from_model(model)
    spec = discrete_spectrum(cand, model, m=4)
    assert np.all(np.diff(spec.values) > 1e-6)
    np.testing.assert_allclose(spec.gram(), np.eye(4), atol=1e-8)
    for i in range(4):
        assert spec.rayleigh(i) == pytest.approx(spec.values[i], rel=1e-8)
    ones = np.ones(len(spec.nodes))
    assert np.max(np.abs(ones @ (spec.mass @ spec.vectors))) <= 1e-10
    for j in range(4):
        col = spec.vectors[:, j]
        assert col[np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0][0]] > 0


def test_refinement_consistency():
    m = make_model("gamma", s=2.5, theta=0.7)
    coarse = discrete_spectrum(candidate_from_model(m, 1000), m, 4).values
    fine = discrete_spectrum(candidate_from_model(m, 2000), m, 4).values
    assert np.all(fine <= coarse * (1 + 1e-3))


def test_projections_of_mu(model):
    cand = candidate_from_model(model)
    spec = discrete_spectrum(cand, model, m=4)
    assert projections(cand, model, 1, spec) == []
    for k in (2, 3, 4):
        projs = projections(cand, model, k, spec)
        assert len(projs) == k - 1
        assert all(p.d <= 5e-3 for p in projs)
        assert sum(p.d ** 2 for p in projs) <= cand.expect(lambda x: model.f(k, x) ** 2) + 1e-6
        assert all(p.C >= 0 for p in projs)


def test_projection_of_tilted_gaussian_against_direct_quadrature():
    g = make_model("gaussian")
    base = gaussian_candidate()
    nu = base.tilted(lambda x: x, 0.1)
    spec = discrete_spectrum(nu, g, m=2)
    p1 = projections(nu, g, 2, spec)[0]
    assert p1.d > 1e-3
    e1 = spec.vectors[:, 0]
    x = spec.x
    fn = lambda s: g.f(2, s) * np.interp(s, x, e1) * nu.density(s)
    # e_1 is piecewise linear: integrate node to node
    direct = sum(integrate.quad(fn, a, b, epsabs=1e-14)[0] for a, b in zip(x[:-1], x[1:]))
    assert p1.d == pytest.approx(abs(direct), rel=5e-2)


def test_degenerate_candidates():
    g = make_model("gaussian")
    with pytest.raises(DegenerateCandidateError):
        discrete_spectrum(gaussian_candidate(n=40), g, m=2)
    with pytest.raises(DegenerateCandidateError):
        discrete_spectrum(gaussian_candidate(), g, m=9)


def test_disconnected_support_warns():
    g = make_model("gaussian")
    x = np.linspace(-6, 6, 801)
    d = stats.norm.pdf(x) * (np.abs(x) > 0.5) + 0.5 * stats.norm.pdf(x) * (x > 0.5)
    with pytest.warns(RuntimeWarning, match="disconnected"):
        spec = discrete_spectrum(load_candidate(x, d), g, m=2)
    assert spec.warnings and spec.x[0] > 0
