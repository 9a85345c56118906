"""The three reversible diffusion models and their eigenstructure.

===========  ============  ===========  ==================  =============
family       interval      a(x)         invariant law        lambda_k
===========  ============  ===========  ==================  =============
gaussian     (-inf, inf)   1            N(0, 1)              k
gamma        (0, inf)      x            Gamma(s, theta)      k / theta
beta         (-1, 1)       1 - x^2      ~(1-x^2)^(N/2-1)     k (k + N - 1)
===========  ============  ===========  ==================  =============

The carre du champ is Gamma(f, g) = a f' g' in every case.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
from scipy import integrate, special, stats

from . import orthopoly
from .exceptions import DomainError, ParameterError

FAMILIES = ("gaussian", "gamma", "beta")


@dataclass(frozen=True)
class DiffusionModel:
    family: str
    s: float = 1.0
    theta: float = 1.0
    N: float = 3.0
    _law: object = field(default=None, repr=False, compare=False)
    _logZ: float = field(default=0.0, repr=False, compare=False)

    # -- identity -------------------------------------------------------------

    @property
    def ident(self) -> str:
        if self.family == "gaussian":
            return "gaussian"
        if self.family == "gamma":
            return f"gamma(s={self.s!r},theta={self.theta!r})"
        return f"beta(N={self.N!r})"

    def params(self) -> dict:
        if self.family == "gamma":
            return {"s": self.s, "theta": self.theta}
        if self.family == "beta":
            return {"N": self.N}
        return {}

    @property
    def interval(self) -> tuple[float, float]:
        return {"gaussian": (-math.inf, math.inf), "gamma": (0.0, math.inf), "beta": (-1.0, 1.0)}[self.family]

    # -- generator data -----------------------------------------------------------

    def a(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            out = np.ones_like(x)
        elif self.family == "gamma":
            out = x.copy()
        else:
            out = 1.0 - x * x
        return float(out) if out.ndim == 0 else out

    def mu_density(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.interval
        inside = (x >= lo) & (x <= hi)
        xs = np.where(inside, x, 0.5 if self.family != "gaussian" else 0.0)
        if self.family == "gaussian":
            out = np.exp(-0.5 * xs * xs) / math.sqrt(2 * math.pi)
        elif self.family == "gamma":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.exp((self.s - 1) * np.log(xs) - xs / self.theta - self._logZ)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.exp((self.N / 2 - 1) * np.log1p(-xs * xs) - self._logZ)
        out = np.where(inside, out, 0.0)
        return float(out) if out.ndim == 0 else out

    def eigenvalue(self, k: int) -> float:
        if k < 0:
            raise ParameterError("eigenvalue index must be >= 0")
        if self.family == "gaussian":
            return float(k)
        if self.family == "gamma":
            return k / self.theta
        return k * (k + self.N - 1.0)

    def eigenfunction(self, k: int) -> orthopoly.PolynomialFamily:
        if self.family == "gaussian":
            return orthopoly.hermite(k)
        if self.family == "gamma":
            return orthopoly.laguerre(k, self.s, self.theta)
        return orthopoly.gegenbauer(k, self.N)

    def f(self, k, x):
        return orthopoly.evaluate(self.eigenfunction(k), x)

    def df(self, k, x):
        return orthopoly.eval_derivative(self.eigenfunction(k), x)

    def gamma_of_eigenfunction(self, k: int, x):
        """Carre du champ a(x) f_k'(x)^2."""
        if k < 1:
            raise ParameterError("k must be >= 1")
        xa = np.asarray(x, dtype=float)
        lo, hi = self.interval
        if np.any(xa < lo) or np.any(xa > hi) or np.any(np.isnan(xa)):
            raise DomainError(f"x outside the closure of {self.interval}")
        d = orthopoly.eval_derivative(self.eigenfunction(k), xa)
        out = self.a(xa) * np.asarray(d) ** 2
        return float(out) if np.ndim(out) == 0 else out

    # -- the law itself -----------------------------------------------------------

    def cdf(self, x):
        return self._law.cdf(x)

    def sf(self, x):
        return self._law.sf(x)

    def ppf(self, q):
        return self._law.ppf(q)

    def isf(self, q):
        return self._law.isf(q)

    def mu_mass_of_interval(self, lo: float, hi: float) -> float:
        """mu((lo, hi)), clipped to [0, 1]."""
        if lo > hi:
            raise DomainError("lo must not exceed hi")
        # difference of the smaller tails avoids cancellation
        if hi <= self.median:
            m = self._law.cdf(hi) - self._law.cdf(lo)
        elif lo >= self.median:
            m = self._law.sf(lo) - self._law.sf(hi)
        else:
            m = 1.0 - self._law.cdf(lo) - self._law.sf(hi)
        return float(min(1.0, max(0.0, m)))

    @property
    def median(self) -> float:
        return float(self._law.ppf(0.5))

    def gauss_rule(self, n: int = 80) -> tuple[np.ndarray, np.ndarray]:
        """Gauss nodes and probability weights for mu (exact to degree 2n-1)."""
        if self.family == "gaussian":
            x, w = special.roots_hermitenorm(n)
        elif self.family == "gamma":
            x, w = special.roots_genlaguerre(n, self.s - 1.0)
            x = x * self.theta
        else:
            alpha = self.N / 2.0 - 1.0
            x, w = special.roots_jacobi(n, alpha, alpha)
        return x, w / w.sum()

    def expect(self, fn: Callable, method: str = "gauss", n: int = 80) -> float:
        """Integral of ``fn`` against mu.

        ``gauss`` uses the family's Gauss rule (ideal for polynomials and
        entire functions); ``adaptive`` uses QUADPACK with algebraic endpoint
        weights where the density is singular.
        """
        if method == "gauss":
            x, w = self.gauss_rule(n)
            return float(np.dot(w, fn(x)))
        opts = dict(epsabs=1e-13, epsrel=1e-11, limit=400)
        if self.family == "gaussian":
            val, _ = integrate.quad(lambda x: fn(x) * self.mu_density(x), -np.inf, np.inf, **opts)
            return val
        if self.family == "gamma":
            # x^(s-1) may be singular at 0: weight the head algebraically
            cut = self.theta
            head, _ = integrate.quad(lambda x: fn(x) * math.exp(-x / self.theta - self._logZ),
                                     0.0, cut, weight="alg", wvar=(self.s - 1.0, 0.0), **opts)
            tail, _ = integrate.quad(lambda x: fn(x) * self.mu_density(x), cut, np.inf, **opts)
            return head + tail
        beta = self.N / 2.0 - 1.0
        # the weighted rule hits roundoff well before 1e-13 when the integral cancels to ~0
        opts["epsabs"] = 1e-12
        val, _ = integrate.quad(lambda x: fn(x) * math.exp(-self._logZ), -1.0, 1.0,
                                weight="alg", wvar=(beta, beta), **opts)
        return val


def make_model(family: str, s: float = 1.0, theta: float = 1.0, N: float = 3.0) -> DiffusionModel:
    """Build a validated :class:`DiffusionModel`.

    The beta normalizer uses the Euler beta integral directly.
    """
    if family == "gaussian":
        return DiffusionModel("gaussian", _law=stats.norm())
    if family == "gamma":
        if not (s > 0 and theta > 0):
            raise ParameterError(f"gamma model needs s > 0 and theta > 0, got s={s}, theta={theta}")
        logZ = math.lgamma(s) + s * math.log(theta)
        return DiffusionModel("gamma", s=float(s), theta=float(theta), _law=stats.gamma(s, scale=theta), _logZ=logZ)
    if family == "beta":
        if not N > 1:
            raise ParameterError(f"beta model needs N > 1, got N={N}")
        beta = N / 2.0 - 1.0
        # int_{-1}^{1} (1 - x^2)^beta dx = 2^(2 beta + 1) B(beta + 1, beta + 1)
        logZ = (2 * beta + 1) * math.log(2.0) + special.betaln(beta + 1, beta + 1)
        return DiffusionModel("beta", N=float(N), _law=stats.beta(N / 2.0, N / 2.0, loc=-1.0, scale=2.0),
                              _logZ=logZ)
    raise ParameterError(f"unknown family {family!r}; expected one of {FAMILIES}")
