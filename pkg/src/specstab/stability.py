"""Eigenvalue comparison, approximate integration by parts and the branch-wise
Wasserstein stability certificate.

Everything is evaluated for a gridded candidate nu against the model mu and
the index k.  The eigenvalues of nu come from the finite-element spectrum of
:mod:`specstab.candidate`, so every pass/fail decision carries an explicit
tolerance covering discretization error.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import math
import os
from typing import Callable, Optional, Sequence

import numpy as np

from . import orthopoly
from .branch import Branch, decompose
from .candidate import (_GL_S, _GL_W, CandidateMeasure, DiscreteSpectrum, NormalizationReport, Projection,
                        check_normalization, discrete_spectrum, load_candidate, projections)
from .exceptions import InputError, UnsupportedBranchError
from .models import DiffusionModel
from .pushforward import mu_star, nu_star, wasserstein1
from .stein import stein_constant

SCHEMA = "stability-report/1"

TOL_NORMALIZATION = 1e-3
TOL_LEMMA = 1e-2
TOL_IPP = 1e-2
TOL_MAIN = 1e-2          # relative to C
AUTO_NORMALIZE_FACTOR = 10.0
N_IPP_RANDOM = 4


def thread_count() -> int:
    """Worker threads for branch-wise terms, capped by SPECSTAB_THREADS."""
    raw = os.environ.get("SPECSTAB_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as exc:
        raise InputError(f"SPECSTAB_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


@dataclass(frozen=True)
class CandidateContext:
    """Spectral data of nu needed by every term of the certificate."""

    model: DiffusionModel
    k: int
    candidate: CandidateMeasure
    normalization: NormalizationReport
    spectrum: DiscreteSpectrum
    projections: tuple

    @property
    def lam_mu(self) -> float:
        return self.model.eigenvalue(self.k)

    @property
    def lam_nu(self) -> float:
        return float(self.spectrum.values[self.k - 1])

    @property
    def lam1_nu(self) -> float:
        return float(self.spectrum.values[0])

    @property
    def gap(self) -> float:
        return self.lam_mu - self.lam_nu

    def bracket(self) -> float:
        """sqrt|dlam| + |dlam| / sqrt(lam_1(nu)) + sum_i C_i d_i."""
        g = abs(self.gap)
        return float(math.sqrt(g) + g / math.sqrt(self.lam1_nu) + sum(p.C * p.d for p in self.projections))


def prepare(candidate: CandidateMeasure, model: DiffusionModel, k: int,
            tol_normalization: float = TOL_NORMALIZATION) -> CandidateContext:
    norm = check_normalization(candidate, model, k, tol_normalization)
    spec = discrete_spectrum(candidate, model, m=k)
    projs = projections(candidate, model, k, spec)
    return CandidateContext(model, k, candidate, norm, spec, tuple(projs))


# -- auto-normalization ----------------------------------------------------------

@dataclass(frozen=True)
class Reweighting:
    """nu' = (c0 + c1 f_k + c2 f_k^2) nu, chosen so nu' has the required moments."""

    coefficients: tuple
    before: dict
    after: dict


def auto_normalize(candidate: CandidateMeasure, model: DiffusionModel, k: int,
                   tol: float = TOL_NORMALIZATION) -> tuple[CandidateMeasure, Optional[Reweighting]]:
    """Repair a candidate that narrowly fails the normalization check.

    Returns the candidate unchanged when it already passes.  A quadratic
    reweighting in f_k fixes mass, mean and second moment exactly; it is only
    attempted within ``AUTO_NORMALIZE_FACTOR * tol`` of passing and refused
    if it would make the density negative.
    """
    rep = check_normalization(candidate, model, k, tol)
    if rep.passed:
        return candidate, None
    miss = max(abs(rep.mean), abs(rep.second - 1.0), rep.energy - rep.bound)
    if miss > AUTO_NORMALIZE_FACTOR * tol:
        raise InputError(f"candidate misses the normalization by {miss:.3g}, beyond the auto-normalize range")
    fam = model.eigenfunction(k)
    m = [candidate.expect(lambda x, p=p: fam(x) ** p) for p in range(5)]
    A = np.array([[m[0], m[1], m[2]], [m[1], m[2], m[3]], [m[2], m[3], m[4]]])
    c = np.linalg.solve(A, np.array([1.0, 0.0, 1.0]))
    fx = fam(candidate.x)
    fac = c[0] + c[1] * fx + c[2] * fx * fx
    if np.any(fac < 0):
        raise InputError("auto-normalize reweighting would make the density negative")
    fixed = load_candidate(candidate.x, candidate.w * fac, label=f"{candidate.label}~normalized")
    after = check_normalization(fixed, model, k, tol)
    return fixed, Reweighting(tuple(float(v) for v in c), rep.to_dict(), after.to_dict())


# -- eigenvalue comparison -------------------------------------------------------

@dataclass(frozen=True)
class LemmaResult:
    lhs: float
    rhs: float
    tol: float
    passed: bool


def lemma_bound(ctx: CandidateContext, tol: float = TOL_LEMMA) -> LemmaResult:
    """lambda_k(nu) <= lambda_k(mu) + sum_i (lambda_k(nu) - lambda_i(nu)) d_i^2."""
    lhs = ctx.lam_nu
    rhs = ctx.lam_mu + sum((ctx.lam_nu - p.eigenvalue) * p.d ** 2 for p in ctx.projections)
    return LemmaResult(lhs, rhs, tol, bool(lhs <= rhs + tol))


# -- approximate integration by parts ---------------------------------------------

@dataclass(frozen=True)
class IppResult:
    lhs: float
    rhs: float
    energy: float        # sqrt(int Gamma(g) dnu)
    tol: float
    passed: bool


def _grid_function(ctx: CandidateContext, g) -> tuple[np.ndarray, np.ndarray]:
    """Values of g on Gauss points and its elementwise slopes, g piecewise linear."""
    x = ctx.candidate.x
    gv = np.asarray(g(x) if callable(g) else g, dtype=float)
    if gv.shape != x.shape:
        raise InputError("grid function must have one value per candidate node")
    pts, _ = ctx.candidate.element_quadrature()
    vals = np.interp(pts, x, gv)
    slopes = np.diff(gv) / np.diff(x)
    return vals, slopes


def ipp_residual(ctx: CandidateContext, g, tol: float = TOL_IPP) -> IppResult:
    """|int (lambda_k(mu) f_k g - a f_k' g') dnu| against the bracket times sqrt(int a g'^2 dnu).

    ``g`` is a callable or its values on the candidate nodes, extended
    piecewise linearly.
    """
    model, k = ctx.model, ctx.k
    pts, wts = ctx.candidate.element_quadrature()
    vals, slopes = _grid_function(ctx, g)
    a = np.asarray(model.a(pts), dtype=float)
    fk = model.f(k, pts)
    dfk = model.df(k, pts)
    lhs = abs(float(np.sum(wts * (ctx.lam_mu * fk * vals - a * dfk * slopes[:, None]))))
    energy = math.sqrt(float(np.sum(wts * a * slopes[:, None] ** 2)))
    rhs = ctx.bracket() * energy
    return IppResult(lhs, rhs, energy, tol, bool(lhs <= rhs + tol * energy))


def ipp_samples(ctx: CandidateContext, n_random: int = N_IPP_RANDOM, seed: int = 0) -> list[tuple[str, Callable]]:
    """Deterministic test functions: f_k, f_1 and seeded random walks on the grid."""
    x = ctx.candidate.x
    out = [("f_k", lambda s: ctx.model.f(ctx.k, s)), ("f_1", lambda s: ctx.model.f(1, s))]
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        steps = rng.standard_normal(len(x))
        walk = np.cumsum(steps)
        walk = (walk - walk.mean()) / (np.ptp(walk) or 1.0)
        out.append((f"walk{i}", walk))
    return out


# -- tilt family --------------------------------------------------------------------

def _envelope(model: DiffusionModel, x):
    x = np.asarray(x, dtype=float)
    if model.family == "gaussian":
        return np.exp(-0.25 * x * x)
    if model.family == "gamma":
        return np.exp(-0.25 * x / model.theta)
    return np.ones_like(x)


def tilt_direction(base: CandidateMeasure, model: DiffusionModel, k: int, degree: int = 6,
                   seed: int = 0) -> Callable:
    """Bounded phi with nu(phi) = nu(phi f_k) = nu(phi f_k^2) = nu(phi Gamma(f_k)) = 0.

    phi is a combination of envelope(x) x^j, j < degree, in the null space of
    the four moment constraints, computed with the quadrature that the tilted
    candidate itself will use, so base (1 + eps phi) keeps the moments of
    base for every eps.  Scaled to sup |phi| = 1 on the grid.
    """
    if degree < 5:
        raise InputError("tilt needs at least five basis functions")
    x = base.x
    center = float(base.expect(lambda s: s))
    spread = math.sqrt(max(float(base.expect(lambda s: (s - center) ** 2)), 1e-300))
    fam = model.eigenfunction(k)

    def basis(s):
        s = np.asarray(s, dtype=float)
        u = (s - center) / spread
        return np.stack([_envelope(model, s) * u ** j for j in range(degree)], axis=-1)

    h = np.diff(x)
    pts = x[:-1, None] + h[:, None] * _GL_S[None, :]
    gw = h[:, None] * _GL_W[None, :]
    # density of the tilt increment: w * phi at the nodes, interpolated as tilted() does
    bx = basis(x) * base.w[:, None]
    dens = bx[:-1, None, :] * (1.0 - _GL_S[None, :, None]) + bx[1:, None, :] * _GL_S[None, :, None]
    tests = [np.ones_like(pts), fam(pts), fam(pts) ** 2, model.gamma_of_eigenfunction(k, pts)]
    A = np.array([[float(np.sum(gw * t * dens[..., j])) for j in range(degree)] for t in tests])
    A /= np.maximum(np.abs(A).max(axis=1, keepdims=True), 1e-300)
    _, _, vt = np.linalg.svd(A)
    null = vt[4:]
    seed_vec = np.random.default_rng(seed).standard_normal(degree)
    c = null.T @ (null @ seed_vec)
    peak = float(np.max(np.abs(basis(x) @ c)))
    c = c / peak
    return lambda s: basis(s) @ c


def tilt_family(base: CandidateMeasure, model: DiffusionModel, k: int, eps: Sequence[float],
                degree: int = 6, seed: int = 0) -> list[CandidateMeasure]:
    phi = tilt_direction(base, model, k, degree, seed)
    return [base.tilted(phi, float(e), label=f"{base.label}~tilt({float(e)!r})") for e in eps]


# -- main certificate -----------------------------------------------------------------

def cubic_violation(index: int = 0) -> Branch:
    """Synthetic branch on (-1, 1) with h = (t + 1)^3 (1 - t), cubic at the lower end."""
    from .branch import synthetic_branch
    return synthetic_branch(lambda t: (np.asarray(t) + 1.0) ** 3 * (1.0 - np.asarray(t)), (-1.0, 1.0),
                            anchor=0.0, scale=0.5, index=index)


@dataclass(frozen=True)
class BranchTerm:
    index: int
    J: list
    I: list
    mass_nu: float
    mass_mu: float
    w1: float
    stein_constant: float
    argmax: float

    def to_dict(self) -> dict:
        return asdict(self)


def _branch_term(branch: Branch, lam: float, candidate: CandidateMeasure) -> BranchTerm:
    law = mu_star(branch, lam)
    sc = stein_constant(branch, law, lam)
    mass, pushed = nu_star(candidate, branch)
    w1 = wasserstein1(pushed, law) if pushed is not None else 0.0
    return BranchTerm(branch.index, [float(v) for v in branch.J], [float(v) for v in branch.I], float(mass),
                      float(branch.mu_mass), float(w1), float(sc.value), float(sc.argmax))


def _finite_list(v):
    return [float(x) for x in v]


@dataclass
class StabilityReport:
    """Every term of the certificate, with tolerances and verdicts.

    ``status`` is "pass", "fail" or "not-applicable" (some branch violates
    the endpoint growth assumption; see ``violating_branch``).  Fields that
    could not be computed are None.
    """

    model: str
    params: dict
    k: int
    candidate: str
    n_nodes: int
    status: str
    lambda_k_mu: float
    lambda_k_nu: float
    lambda_1_nu: float
    eigenvalues_nu: list
    projection_groups: list
    d: list
    C_i: list
    normalization: dict
    lemma_lhs: float
    lemma_rhs: float
    lemma_tol: float
    lemma_pass: bool
    ipp: list
    ipp_tol: float
    ipp_pass: bool
    main_lhs: Optional[float]
    main_bracket: float
    C: Optional[float]
    main_tol: Optional[float]
    main_margin: Optional[float]
    main_pass: Optional[bool]
    branches: list
    violating_branch: Optional[dict] = None
    notes: list = field(default_factory=list)
    schema: str = SCHEMA

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StabilityReport":
        if data.get("schema") != SCHEMA:
            raise InputError(f"unknown report schema {data.get('schema')!r}")
        return cls(**data)


def _violation(branches) -> Optional[dict]:
    for br in branches:
        for rate in br.endpoint_rates():
            if not rate.ok:
                return {"index": br.index, "I": [float(v) for v in br.I], "side": rate.side,
                        "endpoint": float(rate.value), "exponent": float(rate.exponent)}
    return None


def main_certificate(ctx: CandidateContext, tol_lemma: float = TOL_LEMMA, tol_ipp: float = TOL_IPP,
                     tol_main: float = TOL_MAIN, overrides: Optional[dict] = None,
                     notes: Sequence[str] = ()) -> StabilityReport:
    """Assemble the full report for one candidate.

    main_lhs = sum_j nu(J_j) W1(nu_j*, mu_j*) is compared with C * bracket,
    C = sum_j C_{h_j}^2, and passes within ``tol_main * C``.  ``overrides``
    maps branch indices to replacement branches (used to inject synthetic
    violations).  Branch terms run on :func:`thread_count` threads.
    """
    model, k = ctx.model, ctx.k
    branches = list(decompose(model, k).branches)
    for idx, br in (overrides or {}).items():
        branches[idx] = br
    lemma = lemma_bound(ctx, tol_lemma)
    ipp = [(name, ipp_residual(ctx, g, tol_ipp)) for name, g in ipp_samples(ctx)]
    bracket = float(ctx.bracket())
    bad = _violation(branches)
    terms: list[BranchTerm] = []
    main_lhs = C = tol_abs = margin = main_pass = None
    if bad is None:
        lam = ctx.lam_mu
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            terms = list(pool.map(lambda br: _branch_term(br, lam, ctx.candidate), branches))
        main_lhs = float(sum(t.mass_nu * t.w1 for t in terms))
        C = float(sum(t.stein_constant ** 2 for t in terms))
        tol_abs = tol_main * C
        margin = C * bracket + tol_abs - main_lhs
        main_pass = bool(margin >= 0 and math.isfinite(C))
    ipp_pass = all(r.passed for _, r in ipp)
    if bad is not None:
        status = "not-applicable"
    elif ctx.normalization.passed and lemma.passed and ipp_pass and main_pass:
        status = "pass"
    else:
        status = "fail"
    return StabilityReport(
        model=model.ident, params=model.params(), k=k, candidate=ctx.candidate.label,
        n_nodes=ctx.candidate.n_nodes, status=status,
        lambda_k_mu=float(ctx.lam_mu), lambda_k_nu=float(ctx.lam_nu), lambda_1_nu=float(ctx.lam1_nu),
        eigenvalues_nu=_finite_list(ctx.spectrum.values),
        projection_groups=[list(p.indices) for p in ctx.projections],
        d=[float(p.d) for p in ctx.projections], C_i=[float(p.C) for p in ctx.projections],
        normalization=ctx.normalization.to_dict(),
        lemma_lhs=float(lemma.lhs), lemma_rhs=float(lemma.rhs), lemma_tol=float(tol_lemma),
        lemma_pass=lemma.passed,
        ipp=[{"g": name, "lhs": float(r.lhs), "rhs": float(r.rhs), "energy": float(r.energy), "pass": r.passed}
             for name, r in ipp],
        ipp_tol=float(tol_ipp), ipp_pass=ipp_pass,
        main_lhs=main_lhs, main_bracket=bracket, C=C, main_tol=tol_abs, main_margin=margin, main_pass=main_pass,
        branches=[t.to_dict() for t in terms], violating_branch=bad,
        notes=list(notes) + list(ctx.spectrum.warnings),
    )


def certify(candidate: CandidateMeasure, model: DiffusionModel, k: int,
            tol_normalization: float = TOL_NORMALIZATION, tol_lemma: float = TOL_LEMMA,
            tol_ipp: float = TOL_IPP, tol_main: float = TOL_MAIN, normalize: bool = False,
            overrides: Optional[dict] = None) -> StabilityReport:
    """prepare + main_certificate, optionally repairing the normalization first."""
    notes = []
    if model.family == "beta":
        factors = [orthopoly.gegenbauer_rescale_factor(model.N, i) for i in range(1, k + 1)]
        if any(f != 1.0 for f in factors):
            notes.append("gegenbauer constants rescaled to unit norm by " + ", ".join(repr(f) for f in factors))
    if normalize:
        candidate, rw = auto_normalize(candidate, model, k, tol_normalization)
        if rw is not None:
            notes.append("auto-normalized: density multiplied by c0 + c1 f_k + c2 f_k^2 with c = "
                         + ", ".join(repr(c) for c in rw.coefficients))
    ctx = prepare(candidate, model, k, tol_normalization)
    return main_certificate(ctx, tol_lemma, tol_ipp, tol_main, overrides, notes)
