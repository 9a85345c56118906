"""Normalized Hermite, generalized Laguerre and Gegenbauer polynomials.

Each family is evaluated by its forward three-term recurrence and then scaled
to unit norm in L^2 of its orthogonality measure:

* hermite: probabilists' polynomials under N(0, 1),
* laguerre(s, theta): polynomials in x / theta under Gamma(s, theta),
* gegenbauer(N): polynomials on [-1, 1] under the density proportional to
  (1 - x^2)^(N/2 - 1).

Derivatives use the closed-form lowering identities, never finite differences.
Degrees are capped at :data:`MAX_DEGREE`, where the forward recurrences are
well conditioned in double precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import optimize, special

from .exceptions import ParameterError

MAX_DEGREE = 12

HERMITE = "hermite"
LAGUERRE = "laguerre"
GEGENBAUER = "gegenbauer"


@dataclass(frozen=True)
class PolynomialFamily:
    """One normalized member of an orthogonal family.

    Parameters
    ----------
    kind : {"hermite", "laguerre", "gegenbauer"}
    degree : int
    s, theta : float
        Gamma shape and scale (laguerre only).
    N : float
        Dimension parameter, N > 1 (gegenbauer only).
    """

    kind: str
    degree: int
    s: float = 1.0
    theta: float = 1.0
    N: float = 2.0

    def __post_init__(self):
        if self.kind not in (HERMITE, LAGUERRE, GEGENBAUER):
            raise ParameterError(f"unknown polynomial family {self.kind!r}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ParameterError(f"degree must be a nonnegative integer, got {self.degree}")
        if self.degree > MAX_DEGREE:
            raise ParameterError(f"degree {self.degree} exceeds supported maximum {MAX_DEGREE}")
        if self.kind == LAGUERRE and not (self.s > 0 and self.theta > 0):
            raise ParameterError(f"laguerre needs s > 0 and theta > 0, got s={self.s}, theta={self.theta}")
        if self.kind == GEGENBAUER and not self.N > 1:
            raise ParameterError(f"gegenbauer needs N > 1, got N={self.N}")

    def with_degree(self, degree: int) -> "PolynomialFamily":
        return PolynomialFamily(self.kind, degree, self.s, self.theta, self.N)

    @property
    def interval(self) -> tuple[float, float]:
        if self.kind == HERMITE:
            return (-math.inf, math.inf)
        if self.kind == LAGUERRE:
            return (0.0, math.inf)
        return (-1.0, 1.0)

    def __call__(self, x):
        return evaluate(self, x)

    def derivative(self, x):
        return eval_derivative(self, x)


def hermite(degree: int) -> PolynomialFamily:
    return PolynomialFamily(HERMITE, degree)


def laguerre(degree: int, s: float, theta: float) -> PolynomialFamily:
    return PolynomialFamily(LAGUERRE, degree, s=s, theta=theta)


def gegenbauer(degree: int, N: float) -> PolynomialFamily:
    return PolynomialFamily(GEGENBAUER, degree, N=N)


# -- raw recurrences ---------------------------------------------------------

def _hermite_raw(k, x):
    p_prev, p = np.ones_like(x), x.copy()
    if k == 0:
        return p_prev
    for n in range(1, k):
        p_prev, p = p, x * p - n * p_prev
    return p


def _laguerre_raw(k, s, y):
    l_prev, l = np.ones_like(y), s - y
    if k == 0:
        return l_prev
    for n in range(1, k):
        l_prev, l = l, (2.0 + (s - 2.0 - y) / (n + 1)) * l - (1.0 + (s - 2.0) / (n + 1)) * l_prev
    return l


def _gegenbauer_raw(k, N, x):
    p_prev, p = np.ones_like(x), (N - 1.0) * x
    if k == 0:
        return p_prev
    for n in range(2, k + 1):
        p_prev, p = p, (2.0 * x / n) * (n + (N - 3.0) / 2.0) * p - (n + N - 3.0) / n * p_prev
    return p


def _laguerre_norm(k, s):
    return math.exp(0.5 * (math.lgamma(k + 1) + math.lgamma(s) - math.lgamma(k + s)))


def _gegenbauer_published_constant(k, N):
    # binom(k+N-2, k)^-1 (2k+N-1)/(N-1), as printed; not unit-norm in general
    return (2 * k + N - 1.0) / (N - 1.0) / special.binom(k + N - 2.0, k)


@lru_cache(maxsize=None)
def gegenbauer_rescale_factor(N: float, k: int) -> float:
    """Factor applied on top of the published Gegenbauer constant.

    Computed by Gauss-Jacobi quadrature (exact for these polynomials) so that
    the normalized member has unit L^2 norm; equals 1 when the published
    constant is already correct.
    """
    if k == 0:
        return 1.0
    alpha = N / 2.0 - 1.0
    nodes, weights = special.roots_jacobi(k + 2, alpha, alpha)
    weights = weights / weights.sum()
    g = _gegenbauer_published_constant(k, N) * _gegenbauer_raw(k, N, nodes)
    norm = math.sqrt(float(np.dot(weights, g * g)))
    factor = 1.0 / norm
    return 1.0 if abs(factor - 1.0) <= 1e-6 else factor


def normalization_constant(fam: PolynomialFamily) -> float:
    """Multiplier turning the raw recurrence value into the normalized one."""
    k = fam.degree
    if fam.kind == HERMITE:
        return 1.0 / math.sqrt(math.factorial(k))
    if fam.kind == LAGUERRE:
        return _laguerre_norm(k, fam.s)
    return _gegenbauer_published_constant(k, fam.N) * gegenbauer_rescale_factor(fam.N, k)


def evaluate(fam: PolynomialFamily, x):
    """Value of the normalized polynomial at ``x`` (scalar or array)."""
    xa = np.asarray(x, dtype=float)
    k = fam.degree
    if fam.kind == HERMITE:
        raw = _hermite_raw(k, xa)
    elif fam.kind == LAGUERRE:
        raw = _laguerre_raw(k, fam.s, xa / fam.theta)
    else:
        raw = _gegenbauer_raw(k, fam.N, xa)
    out = normalization_constant(fam) * raw
    return float(out) if np.ndim(out) == 0 else out


def derivative_companion(fam: PolynomialFamily) -> tuple[float, PolynomialFamily]:
    """Return ``(c, q)`` such that the derivative of ``fam`` equals ``c * q``.

    hermite:    H_k' = sqrt(k) H_{k-1}
    laguerre:   L_{k,s}' = -(1/theta) sqrt(k/s) L_{k-1,s+1}
    gegenbauer: G_{N,k}' = c G_{N+2,k-1}, c from the raw identity
                P_{N,k}' = (N-1) P_{N+2,k-1} and the two normalizations.
    """
    k = fam.degree
    if k == 0:
        raise ParameterError("degree-0 member has no derivative companion")
    if fam.kind == HERMITE:
        return math.sqrt(k), hermite(k - 1)
    if fam.kind == LAGUERRE:
        return -math.sqrt(k / fam.s) / fam.theta, laguerre(k - 1, fam.s + 1.0, fam.theta)
    low = gegenbauer(k - 1, fam.N + 2.0)
    c = normalization_constant(fam) * (fam.N - 1.0) / normalization_constant(low)
    return c, low


def eval_derivative(fam: PolynomialFamily, x):
    """Derivative of the normalized polynomial, via the lowering identity."""
    if fam.degree == 0:
        out = np.zeros_like(np.asarray(x, dtype=float))
        return float(out) if np.ndim(out) == 0 else out
    c, low = derivative_companion(fam)
    out = c * np.asarray(evaluate(low, x))
    return float(out) if np.ndim(out) == 0 else out


def _root_radius(fam: PolynomialFamily) -> tuple[float, float]:
    k = fam.degree
    if fam.kind == HERMITE:
        r = math.sqrt(4 * k + 2) + 1.0
        return -r, r
    if fam.kind == LAGUERRE:
        # zeros are positive and sum to k(k+s-1) in x/theta units
        return 0.0, fam.theta * (k * (k + fam.s - 1.0) + 1.0)
    return -1.0, 1.0


def roots(fam: PolynomialFamily) -> np.ndarray:
    """All real roots in increasing order.

    Sign changes are bracketed on a grid inside an explicit root bound, then
    each bracket is refined with Brent's method and polished by one Newton
    step.
    """
    k = fam.degree
    if k < 1:
        raise ParameterError("roots need degree >= 1")
    lo, hi = _root_radius(fam)
    n = 400 * (k + 1)
    for _ in range(6):
        grid = np.linspace(lo, hi, n)
        if fam.kind == LAGUERRE:
            grid = np.union1d(grid, lo + (hi - lo) * np.geomspace(1e-14, 1e-2, 200))
        vals = evaluate(fam, grid)
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if len(idx) == k:
            break
        n *= 4
    else:
        raise RuntimeError(f"could not isolate {k} roots of {fam}")
    f = lambda t: evaluate(fam, t)
    out = []
    for i in idx:
        r = optimize.brentq(f, grid[i], grid[i + 1], xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        d = eval_derivative(fam, r)
        if d != 0.0:
            r2 = r - f(r) / d
            if grid[i] <= r2 <= grid[i + 1] and abs(f(r2)) < abs(f(r)):
                r = r2
        out.append(r)
    return np.array(out)
