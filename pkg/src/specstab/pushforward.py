"""Pushforward laws on branch images and the one-dimensional W1 distance.

``mu_star`` builds the invariant law of the branch diffusion

    L_j psi = h_j psi'' - lambda t psi'

directly from h_j: its density is exp(-lambda Lambda(t)) / (Z h_j(t)) with
Lambda(t) = int_{t0}^t u / h_j(u) du anchored at an interior point t0, so no
quadrature ever starts at a point where h_j vanishes.  The image is covered
by Gauss-Legendre panels (geometric towards finite ends, growing outwards
towards infinite ones until the law is negligible); every cumulative quantity
is stored at panel nodes and interpolated spectrally.

``nu_star`` pushes a gridded candidate density through the same branch, with
its CDF read off the candidate's exact cumulative mass in x.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import _panels as P
from .branch import Branch, classify_endpoint_rates
from .exceptions import ContractError, UnsupportedBranchError

_GEOM_LEVELS = 36          # finite ends resolved down to 2^-36 of the anchor distance
_TAIL_DROP = 40.0          # truncate infinite sides once the remaining mass is ~e^-40
_MAX_PANELS = 6000
_REFINE_DEPTH = 14
_TAIL_FLOOR = 1e-6
_CHILD_S = np.concatenate([0.5 * (P.NODES - 1.0), 0.5 * (P.NODES + 1.0)])


def _locate(L, R, t):
    edges = np.concatenate([L, R[-1:]])
    idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(L) - 1)
    s = (2.0 * t - L[idx] - R[idx]) / (R[idx] - L[idx])
    return idx, np.clip(s, -1.0, 1.0)


@dataclass
class Cumulative:
    """A cumulative integral of (values * density), from both ends.

    Carries its own panels, which refine the law's panels where the
    integrand needs it.
    """

    L: np.ndarray
    R: np.ndarray
    left_nodes: np.ndarray
    right_nodes: np.ndarray
    left_edges: np.ndarray
    right_edges: np.ndarray
    tail_a: float
    tail_b: float

    @property
    def total(self) -> float:
        return float(self.left_edges[-1] + self.tail_b)


class PushforwardMeasure:
    """A probability law on (part of) the real line.

    Subclasses provide ``cdf`` (and optionally ``sf``/``density``) plus a
    finite ``window`` carrying all but negligible mass and sorted ``breaks``
    at which the CDF may be non-smooth.
    """

    support: tuple[float, float]
    window: tuple[float, float]
    breaks: np.ndarray
    mass: float = 1.0

    def cdf(self, t):
        raise NotImplementedError

    def sf(self, t):
        return 1.0 - np.asarray(self.cdf(t))

    def density(self, t):
        raise NotImplementedError

    def shifted(self, delta: float) -> "CallableLaw":
        """Law of X + delta."""
        return CallableLaw(cdf=lambda t: self.cdf(np.asarray(t) - delta),
                           window=(self.window[0] + delta, self.window[1] + delta),
                           breaks=np.asarray(self.breaks) + delta,
                           support=(self.support[0] + delta, self.support[1] + delta),
                           density=lambda t: self.density(np.asarray(t) - delta))


class CallableLaw(PushforwardMeasure):
    """Law given by explicit callables (test laws, shifts, uniform, ...)."""

    def __init__(self, cdf: Callable, window, breaks=None, support=None, density: Optional[Callable] = None):
        self._cdf = cdf
        self._density = density
        self.window = (float(window[0]), float(window[1]))
        self.support = tuple(support) if support is not None else self.window
        if breaks is None:
            breaks = np.linspace(self.window[0], self.window[1], 2001)
        self.breaks = np.unique(np.clip(np.asarray(breaks, dtype=float), *self.window))

    def cdf(self, t):
        return np.clip(np.asarray(self._cdf(np.asarray(t, dtype=float)), dtype=float), 0.0, 1.0)

    def density(self, t):
        if self._density is None:
            raise NotImplementedError("no density supplied")
        return self._density(np.asarray(t, dtype=float))


def uniform(lo: float, hi: float) -> CallableLaw:
    return CallableLaw(cdf=lambda t: np.clip((t - lo) / (hi - lo), 0.0, 1.0), window=(lo, hi),
                       breaks=np.array([lo, hi]), density=lambda t: ((t >= lo) & (t <= hi)) / (hi - lo))


class BranchLaw(PushforwardMeasure):
    """mu_j^*: the normalized law of f_k under mu restricted to J_j, from h_j."""

    def __init__(self, branch: Branch, lam: float):
        self.branch = branch
        self.lam = float(lam)
        self.support = branch.I
        self.mass = 1.0
        self._build()

    # -- construction -------------------------------------------------------

    def _side(self, outward, direction, lam_inner):
        """Panels stepping outward from the anchor; returns per-panel arrays."""
        inner, outer = outward[:-1], outward[1:]
        L = np.minimum(inner, outer)
        R = np.maximum(inner, outer)
        nodes = P.panel_nodes(L, R)
        h_nodes = self.branch.h(nodes.ravel()).reshape(nodes.shape)
        if np.any(~(h_nodes > 0)) or np.any(~np.isfinite(h_nodes)):
            raise UnsupportedBranchError(f"h vanishes inside the image of branch {self.branch.index}")
        integrand = nodes / h_nodes
        half = 0.5 * (R - L)
        incr = half * (integrand @ P.WEIGHTS)
        lam_outer = lam_inner + direction * np.cumsum(incr)
        lam_in = np.concatenate([[lam_inner], lam_outer[:-1]])
        if direction > 0:
            lam_nodes = lam_in[:, None] + half[:, None] * (integrand @ P.LEFT.T)
        else:
            lam_nodes = lam_in[:, None] - half[:, None] * (integrand @ P.RIGHT.T)
        return L, R, nodes, h_nodes, lam_nodes, lam_outer

    def _outward_finite(self, t0, end, w):
        D = abs(end - t0)
        dist = D * 2.0 ** (-np.arange(_GEOM_LEVELS + 1))
        dist = dist[(dist >= self.branch.end_resolution(end)) | (np.arange(len(dist)) < 2)]
        pos = end + np.sign(t0 - end) * dist
        pos[0] = t0
        return self._subdivide(pos, t0, w)

    @staticmethod
    def _subdivide(pos, t0, w):
        out = [pos[0]]
        for p0, p1 in zip(pos[:-1], pos[1:]):
            allowed = max(0.25 * w, 0.2 * abs(0.5 * (p0 + p1) - t0))
            n = max(1, int(math.ceil(abs(p1 - p0) / allowed)))
            out.extend(np.linspace(p0, p1, n + 1)[1:])
        return np.array(out)

    def _build(self):
        br, lam = self.branch, self.lam
        a, b = br.I
        t0 = br.anchor
        w = max(br.scale, 1e-8 * max(1.0, abs(t0)))
        sides = {}
        for name, end, direction in (("a", a, -1.0), ("b", b, +1.0)):
            if math.isfinite(end):
                sides[name] = [self._side(self._outward_finite(t0, end, w), direction, 0.0)]
            else:
                sides[name] = []
        # grow infinite sides until the law is negligible
        def log_mass(part):
            half = 0.5 * (part[1] - part[0])
            return logsumexp(-lam * part[4] - np.log(part[3]) + np.log(half[:, None] * P.WEIGHTS[None, :]))

        total = logsumexp([log_mass(part) for parts in sides.values() for part in parts] or [-np.inf])
        for name, end, direction in (("a", a, -1.0), ("b", b, +1.0)):
            if math.isfinite(end):
                continue
            e, lam_edge, outer, n_panels = 0.0, 0.0, t0, 0
            while True:
                steps = []
                for _ in range(32):
                    e += max(0.25 * w, 0.2 * e)
                    steps.append(t0 + direction * e)
                part = self._side(np.array([outer, *steps]), direction, lam_edge)
                n_panels += len(steps)
                logrho = -lam * part[4] - np.log(part[3])
                total = np.logaddexp(total, log_mass(part))
                # stop at the first panel where density times distance is negligible
                reach = np.abs(np.array(steps) - t0) + w
                done = np.nonzero(logrho[:, -1] + np.log(reach) < total - _TAIL_DROP)[0]
                if len(done):
                    keep = done[0] + 1
                    sides[name].append(tuple(x[:keep] for x in part))
                    break
                sides[name].append(part)
                lam_edge, outer = part[5][-1], steps[-1]
                if n_panels > _MAX_PANELS:
                    raise UnsupportedBranchError(f"branch {br.index}: law does not decay on an infinite side")
        # assemble left-to-right
        pieces = []
        for part in reversed(sides["a"]):
            L, R, nodes, hn, ln, _ = part
            pieces.append((L[::-1], R[::-1], nodes[::-1], hn[::-1], ln[::-1]))
        for part in sides["b"]:
            L, R, nodes, hn, ln, _ = part
            pieces.append((L, R, nodes, hn, ln))
        self._L = np.concatenate([p[0] for p in pieces])
        self._R = np.concatenate([p[1] for p in pieces])
        self.nodes = np.concatenate([p[2] for p in pieces])
        self.h_nodes = np.concatenate([p[3] for p in pieces])
        self.lam_nodes = np.concatenate([p[4] for p in pieces])
        self.edges = np.concatenate([self._L, self._R[-1:]])
        self._half = 0.5 * (self._R - self._L)
        logrho_u = -lam * self.lam_nodes - np.log(self.h_nodes)
        shift = float(np.max(logrho_u))
        rho_u = np.exp(logrho_u - shift)
        # endpoint pieces below the innermost panel: power law fitted on the panels
        self._tails = {}
        mass_u = float(np.sum(self._half[:, None] * rho_u * P.WEIGHTS[None, :]))
        for name, end in (("a", a), ("b", b)):
            if not math.isfinite(end):
                self._tails[name] = None
                continue
            edge = self.edges[0] if name == "a" else self.edges[-1]
            d = abs(edge - end)
            far_target = end + 16.0 * (edge - end)
            j = int(np.argmin(np.abs(self.edges - far_target)))
            lr_edge = self._edge_logrho(edge, shift)
            lr_far = self._edge_logrho(self.edges[j], shift)
            if lr_edge < -700.0:
                self._tails[name] = (d, 1.0, 0.0, lr_edge)
                continue
            beta = 1.0 + (lr_far - lr_edge) / math.log(abs(self.edges[j] - end) / d)
            if not beta > 0:
                raise UnsupportedBranchError(f"branch {br.index}: law not integrable at endpoint {end}")
            tail_u = math.exp(lr_edge) * d / beta
            self._tails[name] = (d, beta, tail_u, lr_edge)
            mass_u += tail_u
        self.log_Z = math.log(mass_u) + shift
        scale = 1.0 / mass_u
        self.rho_nodes = rho_u * scale
        self._tail_mass = {k: (0.0 if v is None else v[2] * scale) for k, v in self._tails.items()}
        self._cdf_cum = self.cumulative_values(np.ones_like(self.nodes), 1.0, 1.0)
        self._mom_cum = self.cumulative_values(self.nodes - t0, a - t0 if math.isfinite(a) else 0.0,
                                               b - t0 if math.isfinite(b) else 0.0)
        lo = a if math.isfinite(a) else self.edges[0]
        hi = b if math.isfinite(b) else self.edges[-1]
        self.window = (float(lo), float(hi))
        self.breaks = np.unique(np.concatenate([[lo, hi], self.edges]))

    def _edge_logrho(self, t, shift):
        # Lambda at an edge from the node interpolation of the adjacent panel
        lam_t = self._interp(self.lam_nodes, np.atleast_1d(float(t)))[0]
        return -self.lam * lam_t - math.log(self.branch.h(float(t))) - shift

    # -- evaluation ----------------------------------------------------------

    def _interp(self, node_values, t):
        idx, s = _locate(self._L, self._R, t)
        return P.interpolate(node_values[idx], s)

    def _cumulate(self, L, R, rv, tail_a, tail_b) -> Cumulative:
        half = 0.5 * (R - L)
        panel = half * (rv @ P.WEIGHTS)
        left_edges = tail_a + np.concatenate([[0.0], np.cumsum(panel)])
        right_edges = tail_b + np.concatenate([np.cumsum(panel[::-1])[::-1], [0.0]])
        left_nodes = left_edges[:-1, None] + half[:, None] * (rv @ P.LEFT.T)
        right_nodes = right_edges[1:, None] + half[:, None] * (rv @ P.RIGHT.T)
        return Cumulative(L, R, left_nodes, right_nodes, left_edges, right_edges, tail_a, tail_b)

    def _tail_terms(self, value_a, value_b):
        return value_a * self._tail_mass.get("a", 0.0), value_b * self._tail_mass.get("b", 0.0)

    def cumulative_values(self, values, tail_a_value, tail_b_value) -> Cumulative:
        """Cumulative integral of ``values * density`` given node values."""
        ta, tb = self._tail_terms(tail_a_value, tail_b_value)
        return self._cumulate(self._L, self._R, values * self.rho_nodes, ta, tb)

    def cumulative(self, g: Callable, rtol: float = 1e-12) -> Cumulative:
        """Cumulative integrals of g d(mu*) from the left and from the right.

        Panels are bisected until the node interpolant of g * density is
        accurate, so oscillatory or kinked g are resolved.
        """
        a, b = self.support
        ga = float(g(np.array([a]))[0]) if math.isfinite(a) else 0.0
        gb = float(g(np.array([b]))[0]) if math.isfinite(b) else 0.0
        ta, tb = self._tail_terms(ga, gb)

        def values(L, R):
            nodes = P.panel_nodes(L, R)
            return np.asarray(g(nodes.ravel()), dtype=float).reshape(nodes.shape) * self.density(nodes.ravel()).reshape(nodes.shape)

        L, R = self._L, self._R
        rv = values(L, R)
        gscale = float(np.sum(0.5 * (R - L) * (np.abs(rv) @ P.WEIGHTS))) + 1e-300
        kept = []
        for depth in range(_REFINE_DEPTH + 1):
            if depth == _REFINE_DEPTH or len(L) == 0:
                kept.append((L, R, rv))
                break
            M = 0.5 * (L + R)
            lv, rvv = values(L, M), values(M, R)
            # the cumulative is interpolated inside panels, so test the
            # integrand's interpolant at the children's nodes
            n = len(L)
            rows = np.repeat(rv, 2 * P.ORDER, axis=0)
            interp = P.interpolate(rows, np.tile(_CHILD_S, n)).reshape(n, 2 * P.ORDER)
            err = 0.5 * (R - L) * np.max(np.abs(interp - np.hstack([lv, rvv])), axis=1)
            # accuracy relative to the mass between the panel and the nearer end,
            # floored so the far tails are not resolved needlessly
            near = np.minimum(np.asarray(self.cdf(R)), np.asarray(self.sf(L)))
            # values near a critical value carry rounding noise from h
            noise = 0.5 * (R - L) * np.max(np.abs(rv), axis=1) * np.max(
                self.branch.h_noise(P.panel_nodes(L, R)), axis=1)
            bad = err > rtol * gscale * np.maximum(near, _TAIL_FLOOR) + 4.0 * noise
            kept.append((L[~bad], R[~bad], rv[~bad]))
            L = np.concatenate([L[bad], M[bad]])
            R = np.concatenate([M[bad], R[bad]])
            rv = np.concatenate([lv[bad], rvv[bad]])
        L = np.concatenate([k[0] for k in kept])
        R = np.concatenate([k[1] for k in kept])
        rv = np.concatenate([k[2] for k in kept])
        order = np.argsort(L, kind="stable")
        L, R, rv = L[order], R[order], rv[order]
        return self._cumulate(L, R, rv, ta, tb)

    def eval_cumulative(self, cum: Cumulative, t):
        """(int_a^t, int_t^b) of the cumulated integrand, vectorized in t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        left = np.empty_like(t)
        right = np.empty_like(t)
        lo_e, hi_e = self.edges[0], self.edges[-1]
        mid = (t >= lo_e) & (t <= hi_e)
        if mid.any():
            idx, s = _locate(cum.L, cum.R, t[mid])
            left[mid] = P.interpolate(cum.left_nodes[idx], s)
            right[mid] = P.interpolate(cum.right_nodes[idx], s)
        below, above = t < lo_e, t > hi_e
        if below.any():
            tail = self._tails.get("a")
            if tail is None:
                frac = np.zeros(below.sum())
            else:
                d, beta = tail[0], tail[1]
                frac = np.clip((t[below] - self.support[0]) / d, 0.0, 1.0) ** beta
            left[below] = cum.tail_a * frac
            right[below] = cum.right_edges[0] + cum.tail_a * (1.0 - frac)
        if above.any():
            tail = self._tails.get("b")
            if tail is None:
                frac = np.zeros(above.sum())
            else:
                d, beta = tail[0], tail[1]
                frac = np.clip((self.support[1] - t[above]) / d, 0.0, 1.0) ** beta
            right[above] = cum.tail_b * frac
            left[above] = cum.left_edges[-1] + cum.tail_b * (1.0 - frac)
        return left, right

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        left, right = self.eval_cumulative(self._cdf_cum, t)
        out = np.where(left <= 0.5, left, 1.0 - right)
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if t.ndim == 0 else out

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        left, right = self.eval_cumulative(self._cdf_cum, t)
        out = np.clip(np.where(right <= 0.5, right, 1.0 - left), 0.0, 1.0)
        return float(out[0]) if t.ndim == 0 else out

    def log_density(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.full(t.shape, -np.inf)
        a, b = self.support
        inside = (t > a) & (t < b)
        lo_e, hi_e = self.edges[0], self.edges[-1]
        core = inside & (t >= lo_e) & (t <= hi_e)
        if core.any():
            lam_t = self._interp(self.lam_nodes, t[core])
            out[core] = -self.lam * lam_t - self.log_Z - np.log(self.branch.h(t[core]))
        for name, sel, edge, end in (("a", inside & (t < lo_e), lo_e, a), ("b", inside & (t > hi_e), hi_e, b)):
            tail = self._tails.get(name)
            if tail is not None and sel.any():
                d, beta, _, _ = tail
                lr_edge = self._edge_logrho(edge, 0.0) - self.log_Z
                out[sel] = lr_edge + (beta - 1.0) * np.log(np.abs(t[sel] - end) / d)
        return out

    def density(self, t):
        t = np.asarray(t, dtype=float)
        out = np.exp(self.log_density(t))
        return float(out[0]) if t.ndim == 0 else out

    def expect(self, g: Callable) -> float:
        """Integral of g against mu*."""
        return self.cumulative(g).total

    def partial_expectations(self, t):
        """Q(t) = int_a^t q(y) dy and R(t) = int_t^b (1 - q(y)) dy."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ql, qr = self.eval_cumulative(self._cdf_cum, t)
        ml, mr = self.eval_cumulative(self._mom_cum, t)
        c = t - self.branch.anchor
        return np.maximum(c * ql - ml, 0.0), np.maximum(mr - c * qr, 0.0)

    def grid(self):
        """Node abscissae with density and CDF, for tabulation."""
        t = self.nodes.ravel()
        return t, self.rho_nodes.ravel(), self.cdf(t)


class GridPushforward(PushforwardMeasure):
    """nu_j^*: a gridded candidate restricted to J_j and pushed through f_k."""

    def __init__(self, candidate, branch: Branch, mass: float, x_lo: float, x_hi: float):
        self.candidate = candidate
        self.branch = branch
        self.mass = mass
        self._x_lo, self._x_hi = x_lo, x_hi
        self._c_lo = float(candidate.cumulative(x_lo))
        self._c_hi = float(candidate.cumulative(x_hi))
        t_ends = sorted((float(branch.f(x_lo)), float(branch.f(x_hi))))
        self.support = branch.I
        self.window = (t_ends[0], t_ends[1])
        xs = candidate.x[(candidate.x > x_lo) & (candidate.x < x_hi)]
        self.breaks = np.unique(np.concatenate([t_ends, np.asarray(branch.f(xs), dtype=float)]))

    def _x_of(self, t):
        t = np.clip(np.asarray(t, dtype=float), *self.window)
        return np.clip(self.branch.local_inverse(t), self._x_lo, self._x_hi)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.candidate.cumulative(self._x_of(t)))
        if self.branch.sign > 0:
            out = (c - self._c_lo) / self.mass
        else:
            out = (self._c_hi - c) / self.mass
        out = np.where(t <= self.window[0], 0.0, np.where(t >= self.window[1], 1.0, out))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def density(self, t):
        t = np.asarray(t, dtype=float)
        x = self._x_of(t)
        out = self.candidate.density(x) / np.abs(self.branch.df(x)) / self.mass
        out = np.where((t < self.window[0]) | (t > self.window[1]), 0.0, out)
        return float(out) if out.ndim == 0 else out


def mu_star(branch: Branch, lam: float, check: bool = True) -> BranchLaw:
    """Invariant law of the branch diffusion, built from h_j alone.

    With ``check`` the branch must pass the endpoint growth classification.
    """
    if check:
        rates = classify_endpoint_rates(branch)
        bad = [r for r in rates if not r.ok]
        if bad:
            raise UnsupportedBranchError(
                f"branch {branch.index}: endpoint {bad[0].side}={bad[0].value} violates the growth window "
                f"(fitted exponent {bad[0].exponent:.3g})")
    return BranchLaw(branch, lam)


def nu_star(candidate, branch: Branch) -> tuple[float, Optional[GridPushforward]]:
    """Mass nu(J_j) and the normalized pushforward of nu restricted to J_j.

    Returns ``(0.0, None)`` when the candidate puts (numerically) no mass on J_j.
    """
    lo_J, hi_J = branch.J
    x_lo = max(lo_J, float(candidate.x[0]))
    x_hi = min(hi_J, float(candidate.x[-1]))
    if not x_lo < x_hi:
        return 0.0, None
    mass = float(candidate.cumulative(x_hi) - candidate.cumulative(x_lo))
    if mass < 1e-12:
        return 0.0, None
    return mass, GridPushforward(candidate, branch, mass, x_lo, x_hi)


_W1_ORDER = 8
_w1_x, _w1_w = np.polynomial.legendre.leggauss(_W1_ORDER)


def _check_normalized(p: PushforwardMeasure, name: str):
    lo, hi = p.window
    c_lo, c_hi = float(np.asarray(p.cdf(np.array([lo])))[0]), float(np.asarray(p.cdf(np.array([hi])))[0])
    if abs(c_lo) > 1e-6 or abs(c_hi - 1.0) > 1e-6:
        raise ContractError(f"{name} is not a normalized law on its window (cdf {c_lo:.3g} .. {c_hi:.3g})")


def wasserstein1(p: PushforwardMeasure, q: PushforwardMeasure) -> float:
    """W1(p, q) = int |F_p - F_q| dt, Gauss-Legendre on the merged breakpoints."""
    _check_normalized(p, "first law")
    _check_normalized(q, "second law")
    lo = min(p.window[0], q.window[0])
    hi = max(p.window[1], q.window[1])
    brk = np.unique(np.concatenate([[lo, hi], p.breaks, q.breaks, p.window, q.window]))
    brk = brk[(brk >= lo) & (brk <= hi)]
    L, R = brk[:-1], brk[1:]
    t = 0.5 * (L + R)[:, None] + 0.5 * (R - L)[:, None] * _w1_x[None, :]
    diff = np.abs(np.asarray(p.cdf(t.ravel())) - np.asarray(q.cdf(t.ravel()))).reshape(t.shape)
    return float(np.sum(0.5 * (R - L) * (diff @ _w1_w)))
