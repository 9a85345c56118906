"""Monotone branches of an eigenfunction and the carre du champ factorizations.

Removing the critical set of f_k from the state space leaves open intervals
J_j on which f_k is strictly monotone.  On each of them the carre du champ
factorizes as Gamma(f_k) = h_j o f_k with h_j(t) = Gamma(f_k)(f_k^{-1}(t)),
t in the image I_j = f_k(J_j).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, Optional

import numpy as np
from scipy.optimize import elementwise

from . import orthopoly
from .exceptions import DomainError, ParameterError
from .models import DiffusionModel

LINEAR = "finite-linear-vanish"
QUADRATIC = "finite-quadratic-bounded"
INFINITE = "infinite-with-exponent"
VIOLATION = "violation"

_MAX_STEPS = 200


@dataclass(frozen=True)
class EndpointRate:
    side: str  # "a" (lower image end) or "b"
    value: float
    kind: str
    exponent: float

    @property
    def ok(self) -> bool:
        return self.kind != VIOLATION


@dataclass(frozen=True)
class Branch:
    """One monotone piece of f_k, or a synthetic stand-in given by ``h`` alone.

    ``anchor`` is an interior image point in the bulk of the pushed-forward
    law and ``scale`` a typical spread of that law; both only steer
    quadrature grids.
    """

    index: int
    I: tuple[float, float]
    anchor: float
    scale: float
    J: tuple[float, float] = (math.nan, math.nan)
    sign: int = 1
    mu_mass: float = math.nan
    f: Optional[Callable] = field(default=None, repr=False, compare=False)
    df: Optional[Callable] = field(default=None, repr=False, compare=False)
    gamma_fn: Optional[Callable] = field(default=None, repr=False, compare=False)
    density: Optional[Callable] = field(default=None, repr=False, compare=False)
    h_override: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def a(self) -> float:
        return self.I[0]

    @property
    def b(self) -> float:
        return self.I[1]

    @property
    def synthetic(self) -> bool:
        return self.f is None

    def _check_image(self, t):
        a, b = self.I
        tol = 1e-12 * (1.0 + np.abs(t))
        if np.any(np.isnan(t)) or np.any(t < a - tol) or np.any(t > b + tol):
            raise DomainError(f"t outside the branch image [{a}, {b}]")
        return np.clip(t, a, b)

    def _bracket(self, x_finite, x_ref, target, step_dir):
        # walk away from x_ref until sign * f crosses target
        if math.isfinite(x_finite):
            return x_finite
        d = 1.0
        for _ in range(200):
            x = x_ref + step_dir * d
            u = self.sign * self.f(x)
            if (step_dir < 0 and u <= target) or (step_dir > 0 and u >= target):
                return x
            d *= 2.0
        raise RuntimeError("failed to bracket local inverse")

    def local_inverse(self, t):
        """The unique x in the closure of J with f_k(x) = t (vectorized)."""
        if self.synthetic:
            raise DomainError("synthetic branch has no underlying state space")
        ta = self._check_image(np.asarray(t, dtype=float))
        u = self.sign * ta
        lo_J, hi_J = self.J
        ref = 0.5 * (lo_J + hi_J) if math.isfinite(lo_J + hi_J) else (
            lo_J + 1.0 if math.isfinite(lo_J) else (hi_J - 1.0 if math.isfinite(hi_J) else 0.0))
        x_lo = self._bracket(lo_J, ref, float(np.min(u)), -1)
        x_hi = self._bracket(hi_J, ref, float(np.max(u)), +1)
        lo = np.full(u.shape, x_lo)
        hi = np.full(u.shape, x_hi)
        resid = lambda x, target: self.sign * np.asarray(self.f(x)) - target
        r_lo, r_hi = resid(lo, u), resid(hi, u)
        x = np.where(r_lo >= 0, lo, hi)
        inner = (r_lo < 0) & (r_hi > 0)
        if inner.any():
            res = elementwise.find_root(resid, (lo[inner], hi[inner]), args=(u[inner],),
                                        tolerances=dict(xatol=0.0, xrtol=2 * np.finfo(float).eps, fatol=0.0, frtol=0.0),
                                        maxiter=_MAX_STEPS)
            x[inner] = res.x
        return float(x) if x.ndim == 0 else x

    def h(self, t):
        """h_j(t) = Gamma(f_k)(f_k^{-1}(t)), nonnegative."""
        ta = np.asarray(t, dtype=float)
        if self.h_override is not None:
            self._check_image(ta)
            out = np.asarray(self.h_override(ta), dtype=float)
        else:
            out = np.asarray(self.gamma_fn(self.local_inverse(ta)), dtype=float)
        out = np.maximum(out, 0.0)
        return float(out) if out.ndim == 0 else out

    def change_of_variables_density(self, t):
        """Density of the law of f_k under mu restricted to J, normalized.

        mu(x) / |f_k'(x)| / mu(J) at x = f_k^{-1}(t).  Independent of h.
        """
        if self.synthetic or self.density is None:
            raise DomainError("change of variables needs an underlying model")
        x = self.local_inverse(t)
        return self.density(x) / np.abs(self.df(x)) / self.mu_mass

    def end_resolution(self, end: float) -> float:
        """Smallest distance from a finite image end at which h is reliable.

        For model branches h goes through the local inverse, whose relative
        error near a critical value grows like eps |end| / distance.
        """
        return (1e-14 if self.synthetic else 1e-8) * max(1.0, abs(end))

    def h_noise(self, t):
        """Estimated relative rounding error of h at t (see end_resolution)."""
        t = np.asarray(t, dtype=float)
        eps = np.finfo(float).eps
        out = np.full(t.shape, 16 * eps)
        if not self.synthetic:
            for end in self.I:
                if math.isfinite(end):
                    with np.errstate(divide="ignore"):
                        out = out + 16 * eps * max(1.0, abs(end)) / np.abs(t - end)
        return out

    def endpoint_rates(self) -> tuple[EndpointRate, EndpointRate]:
        return classify_endpoint_rates(self)

    @property
    def admissible(self) -> bool:
        return all(r.ok for r in classify_endpoint_rates(self))


def _loglog_slope(d, hv):
    good = np.isfinite(hv) & (hv > 0)
    if good.sum() < 4:
        return math.nan
    return float(np.polyfit(np.log(d[good]), np.log(hv[good]), 1)[0])


def classify_endpoint_rates(branch: Branch) -> tuple[EndpointRate, EndpointRate]:
    """Fit log-log slopes of h at both image endpoints.

    Finite end: samples at distance eps 2^-i (i = 0..20) with eps = 1e-2 times
    the image width; slope in [0.8, 1.2] is a linear vanish, in (1.2, 2.05] a
    quadratic-bounded vanish, anything else a violation.  Infinite end:
    samples at R 2^i; a slope p <= 2 (with 0.05 slack) admits the growth
    window with alpha = p.
    """
    a, b = branch.I
    width = b - a if math.isfinite(b - a) else 2.0 * max(abs(branch.anchor - a) if math.isfinite(a) else 0.0,
                                                          abs(b - branch.anchor) if math.isfinite(b) else 0.0,
                                                          branch.scale)
    i = np.arange(21)
    out = []
    for side, end, inward in (("a", a, +1.0), ("b", b, -1.0)):
        if math.isfinite(end):
            d = 1e-2 * width * 2.0 ** (-i)
            p = _loglog_slope(d, branch.h(end + inward * d))
            if 0.8 <= p <= 1.2:
                kind = LINEAR
            elif 1.2 < p <= 2.05:
                kind = QUADRATIC
            else:
                kind = VIOLATION
        else:
            R = 100.0 * max(1.0, abs(branch.anchor), branch.scale)
            d = R * 2.0 ** i
            t = branch.anchor - inward * d
            p = _loglog_slope(d, branch.h(t))
            kind = INFINITE if p <= 2.05 else VIOLATION
        out.append(EndpointRate(side, end, kind, p))
    return tuple(out)


@dataclass(frozen=True)
class BranchDecomposition:
    model: DiffusionModel
    k: int
    crit: np.ndarray
    branches: tuple

    def __len__(self):
        return len(self.branches)

    @property
    def total_mass(self) -> float:
        return float(sum(br.mu_mass for br in self.branches))

    @property
    def assumption_holds(self) -> bool:
        return all(br.admissible for br in self.branches)


def decompose(model: DiffusionModel, k: int) -> BranchDecomposition:
    """Split the state space at the critical points of f_k."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    fam = model.eigenfunction(k)
    if k > 1:
        _, companion = orthopoly.derivative_companion(fam)
        crit = orthopoly.roots(companion)
    else:
        crit = np.empty(0)
    lo, hi = model.interval
    edges = [lo, *crit.tolist(), hi]
    f = lambda x: orthopoly.evaluate(fam, x)
    df = lambda x: orthopoly.eval_derivative(fam, x)
    gamma_fn = lambda x: model.a(x) * np.asarray(df(x)) ** 2
    branches = []
    for j in range(len(edges) - 1):
        jl, jh = edges[j], edges[j + 1]
        if math.isfinite(jl) and math.isfinite(jh):
            probe = 0.5 * (jl + jh)
        elif math.isfinite(jl):
            probe = jl + 1.0
        elif math.isfinite(jh):
            probe = jh - 1.0
        else:
            probe = 0.0
        sign = 1 if df(probe) > 0 else -1

        def end_value(x, outward):
            if math.isfinite(x):
                return float(f(x))
            far = probe + outward * 1e3 * (1.0 + abs(probe))
            return math.copysign(math.inf, f(far))

        va, vb = end_value(jl, -1), end_value(jh, +1)
        image = (min(va, vb), max(va, vb))
        c_lo, c_hi = float(model.cdf(jl)), float(model.cdf(jh))
        qs = model.ppf(c_lo + (c_hi - c_lo) * np.array([0.25, 0.5, 0.75]))
        qs = np.clip(qs, jl, jh)
        tq = np.asarray(f(qs))
        branches.append(Branch(
            index=j, I=image, anchor=float(tq[1]), scale=float(abs(tq[2] - tq[0])),
            J=(float(jl), float(jh)), sign=sign, mu_mass=model.mu_mass_of_interval(jl, jh),
            f=f, df=df, gamma_fn=gamma_fn, density=model.mu_density,
        ))
    return BranchDecomposition(model=model, k=k, crit=crit, branches=tuple(branches))


def synthetic_branch(h: Callable, image: tuple[float, float], anchor: float, scale: float = 1.0,
                     index: int = 0) -> Branch:
    """A branch described only by its factorization h on ``image``.

    Used to probe the growth assumption and the Stein machinery on h's that
    do not come from one of the three models.
    """
    a, b = image
    if not a < anchor < b:
        raise ParameterError("anchor must lie inside the image interval")
    return Branch(index=index, I=(float(a), float(b)), anchor=float(anchor), scale=float(scale), h_override=h)


def global_factorization(model: DiffusionModel, k: int) -> Optional[Callable]:
    """Global h with Gamma(f_k) = h o f_k on all of M, where one exists.

    Only k = 1 (any family, via the inverse) and k = 2 for the symmetric
    gaussian and beta models admit one.
    gaussian k=2: h(t) = 2 sqrt(2) (t + 1/sqrt(2)).
    beta k=2, f_2 = c ((N+1) x^2 - 1): h(t) = 4 (t + c) (c N - t).
    """
    if k != 2 or model.family == "gamma":
        return None
    if model.family == "gaussian":
        return lambda t: 2.0 * math.sqrt(2.0) * (np.asarray(t) + 1.0 / math.sqrt(2.0))
    fam = model.eigenfunction(2)
    c = orthopoly.normalization_constant(fam) * (model.N - 1.0) / 2.0
    N = model.N
    return lambda t: 4.0 * (np.asarray(t) + c) * (c * N - np.asarray(t))
