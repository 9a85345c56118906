"""Stein equation on a branch image and its Lipschitz-to-sup constant.

On a branch with factorization h and pushforward law mu* (density rho), the
Stein equation

    h psi' - lambda t psi = g - mu*(g)

is solved by psi = G / (h rho) with G(t) = int_a^t (g - mu*(g)) d mu*.  Since
(h rho)' = -lambda t rho, this representation never multiplies an exploding
exponential by a vanishing integral.  G is read from whichever cumulative
(left or right) is small at t, so both tails keep full relative precision.

Writing g - mu*(g) through g' and the CDF q of mu* gives, pointwise,

    h psi' = A [1 - (1 - q) lambda t / (h rho)] - B [1 + q lambda t / (h rho)]

with |A| <= ||g'|| int_a^t q and |B| <= ||g'|| int_t^b (1 - q); the Stein
constant is the supremum over t of the resulting bound on sqrt(h) |psi'|.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
from scipy import optimize

from .branch import Branch
from .exceptions import ContractError
from .pushforward import BranchLaw

OVERFLOW_GUARD = 1e12
SUP_GRID = 4096
TAIL_FLOOR = 1e-14
_ENDPOINT_LEVELS = 40


@dataclass(frozen=True)
class SteinOperator:
    """A_h f(t) = lambda t f(t) - h(t) f'(t); mu* is its invariant law."""

    lam: float
    h: Callable

    def drift(self, t):
        return self.lam * np.asarray(t, dtype=float)

    def diffusion(self, t):
        return self.h(t)

    def apply(self, f: Callable, df: Callable) -> Callable:
        return lambda t: self.drift(t) * f(t) - self.diffusion(t) * df(t)


def stein_operator(branch: Branch, lam: float) -> SteinOperator:
    return SteinOperator(float(lam), branch.h)


@dataclass
class SteinSolution:
    branch: Branch
    g: Callable = field(repr=False)
    lam: float
    mean: float
    psi: Callable = field(repr=False)
    dpsi: Callable = field(repr=False)
    grid: np.ndarray = field(repr=False)
    residual_sup: float

    def residual(self, t) -> np.ndarray:
        """h psi' - lambda t psi - (g - mean) with psi' from a five-point finite difference.

        The step is 1e-2 of the distance to the image ends, capped by the
        branch scale and by 1.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        a, b = self.branch.I
        room = np.minimum(t - a, b - t)
        step = 1e-2 * np.minimum(room, min(self.branch.scale, 1.0))
        fd = _fd_derivative(self.psi, t, step)
        return self.branch.h(t) * fd - self.lam * t * self.psi(t) - (np.asarray(self.g(t)) - self.mean)

    def table(self, t=None):
        """(t, psi, psi', finite-difference residual), on the check grid by default."""
        t = self.grid if t is None else np.atleast_1d(np.asarray(t, dtype=float))
        return t, self.psi(t), self.dpsi(t), self.residual(t)


def interior_grid(law: BranchLaw, n: int = 400, lo_q: float = 1e-3, hi_q: float = 1 - 1e-3) -> np.ndarray:
    """Approximate mu*-quantiles in [lo_q, hi_q], strictly inside the image."""
    t, _, q = law.grid()
    qs = np.linspace(lo_q, hi_q, n)
    out = np.interp(qs, q, t)
    a, b = law.support
    return np.unique(out[(out > a) & (out < b)])


def check_lipschitz(g: Callable, t: np.ndarray, bound: float = 1.0) -> float:
    """Largest sampled difference quotient of g; ContractError above bound."""
    t = np.unique(np.asarray(t, dtype=float))
    gv = np.asarray(g(t), dtype=float)
    dq = np.abs(np.diff(gv)) / np.diff(t)
    worst = float(np.max(dq)) if len(dq) else 0.0
    if worst > bound * (1.0 + 1e-9):
        raise ContractError(f"test function is not {bound}-Lipschitz on the branch image (slope {worst:.6g})")
    return worst


def _log_h_rho(law: BranchLaw, t):
    return law.log_density(t) + np.log(law.branch.h(t))


def _fd_derivative(fn: Callable, t: np.ndarray, step: np.ndarray) -> np.ndarray:
    return (fn(t - 2 * step) - 8 * fn(t - step) + 8 * fn(t + step) - fn(t + 2 * step)) / (12 * step)


def solve_stein(branch: Branch, law: BranchLaw, lam: float, g: Callable, lipschitz: float = 1.0) -> SteinSolution:
    """Closed-form solution of the Stein equation for test function g.

    ``residual_sup`` is measured with an independent five-point finite
    difference of psi on interior mu*-quantiles, not with the psi' formula.
    """
    lam = float(lam)
    check_lipschitz(g, law.nodes.ravel(), lipschitz)
    cum_g = law.cumulative(g)
    mean = cum_g.total
    cum_1 = law._cdf_cum

    def G(t):
        gl, gr = law.eval_cumulative(cum_g, t)
        ql, qr = law.eval_cumulative(cum_1, t)
        return np.where(ql <= 0.5, gl - mean * ql, -(gr - mean * qr))

    def psi(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        with np.errstate(over="ignore"):
            return G(t) * np.exp(-_log_h_rho(law, t))

    def dpsi(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return (np.asarray(g(t)) - mean + lam * t * psi(t)) / branch.h(t)

    grid = interior_grid(law)
    sol = SteinSolution(branch, g, lam, mean, psi, dpsi, grid, math.nan)
    sol.residual_sup = float(np.max(np.abs(sol.residual(grid))))
    return sol


def _sup_grid(law: BranchLaw, n: int) -> np.ndarray:
    lo, hi = law.window
    k = np.arange(1, n + 1)
    t = 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(np.pi * k / (n + 1))
    pieces = [t, interior_grid(law, n // 4, 1e-6, 1 - 1e-6)]
    t0 = law.branch.anchor
    for end in law.support:
        if math.isfinite(end):
            dist = abs(t0 - end) * 2.0 ** -np.arange(1, _ENDPOINT_LEVELS + 1)
            dist = dist[dist >= law.branch.end_resolution(end)]
            pieces.append(end + np.sign(t0 - end) * dist)
    a, b = law.support
    t = np.unique(np.concatenate(pieces))
    t = t[(t > a) & (t < b)]
    # near a truncated infinite side q / rho is no longer accurate
    if not math.isfinite(a):
        t = t[law.cdf(t) >= TAIL_FLOOR]
    if not math.isfinite(b):
        t = t[law.sf(t) >= TAIL_FLOOR]
    return t


def stein_bracket(law: BranchLaw, lam: float, t) -> np.ndarray:
    """Pointwise bound on sqrt(h) |psi'| per unit Lipschitz norm of g."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    h = law.branch.h(t)
    q, sf = law.cdf(t), law.sf(t)
    Q, R = law.partial_expectations(t)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        inv_hrho = np.exp(-_log_h_rho(law, t))
        c1 = np.abs(1.0 - sf * lam * t * inv_hrho)
        c2 = np.abs(1.0 + q * lam * t * inv_hrho)
        # 0 * inf where a cumulative underflows: that term carries no weight
        term1 = np.where(Q > 0, c1 * Q, 0.0)
        term2 = np.where(R > 0, c2 * R, 0.0)
        out = (term1 + term2) / np.sqrt(h)
    return np.where(np.isnan(out), np.inf, out)


@dataclass(frozen=True)
class SteinConstant:
    value: float
    argmax: float
    presumed_infinite: bool


def stein_constant(branch: Branch, law: BranchLaw, lam: float, n: int = SUP_GRID) -> SteinConstant:
    """Sup of the pointwise bracket over a clustered grid plus a local polish.

    Values above :data:`OVERFLOW_GUARD` (or non-finite) are reported as
    presumed infinite.
    """
    lam = float(lam)
    t = _sup_grid(law, n)
    vals = stein_bracket(law, lam, t)
    i = int(np.argmax(vals))
    best, arg = float(vals[i]), float(t[i])
    if not math.isfinite(best) or best > OVERFLOW_GUARD:
        return SteinConstant(math.inf, arg, True)
    lo = t[max(i - 1, 0)]
    hi = t[min(i + 1, len(t) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda s: -float(stein_bracket(law, lam, s)[0]), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12 * max(1.0, abs(arg))})
        if -res.fun > best:
            best, arg = float(-res.fun), float(res.x)
    return SteinConstant(best, arg, False)
