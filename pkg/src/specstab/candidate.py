"""Gridded candidate measures, their moments and their discrete spectrum.

A candidate nu is a nonnegative density given at strictly increasing nodes
and interpolated linearly in between.  Its spectrum is the one of the
Dirichlet form int a u' v' dnu relative to L^2(nu), discretized with
continuous piecewise-linear elements on the candidate's own grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import math
from pathlib import Path
from typing import Callable, Optional
import warnings

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh

from .exceptions import DegenerateCandidateError, InputError
from .models import DiffusionModel

MIN_NODES = 16
MIN_SPECTRUM_NODES = 64
MAX_EIGENPAIRS = 8
DEGENERATE_GAP = 1e-8

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_S = 0.5 * (_GL_X + 1.0)      # positions in [0, 1]
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True)
class CandidateMeasure:
    """Piecewise-linear probability density on a grid.

    Attributes
    ----------
    x : ndarray
        Strictly increasing nodes.
    w : ndarray
        Density values at the nodes, normalized to unit mass.
    factor : float
        Multiplier that was applied to the raw input to normalize it.
    """

    x: np.ndarray
    w: np.ndarray
    factor: float = 1.0
    label: str = "candidate"
    _cum: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.x)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def density(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.x, self.w, left=0.0, right=0.0)
        return float(out) if out.ndim == 0 else out

    def cumulative(self, t):
        """Exact nu((-inf, t]) of the piecewise-linear density."""
        t = np.asarray(t, dtype=float)
        x, w = self.x, self.w
        i = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
        h = x[i + 1] - x[i]
        s = np.clip(t - x[i], 0.0, h)
        out = self._cum[i] + w[i] * s + (w[i + 1] - w[i]) * s * s / (2.0 * h)
        out = np.where(t <= x[0], 0.0, np.where(t >= x[-1], 1.0, out))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def element_quadrature(self):
        """Gauss points (n_el, 8) and weights including the density."""
        x, w = self.x, self.w
        h = np.diff(x)
        pts = x[:-1, None] + h[:, None] * _GL_S[None, :]
        dens = w[:-1, None] * (1.0 - _GL_S[None, :]) + w[1:, None] * _GL_S[None, :]
        return pts, h[:, None] * _GL_W[None, :] * dens

    def expect(self, fn: Callable) -> float:
        """int fn dnu, 8-point Gauss-Legendre on every element."""
        pts, wts = self.element_quadrature()
        return float(np.sum(wts * np.asarray(fn(pts), dtype=float)))

    def tilted(self, phi: Callable, eps: float, label: Optional[str] = None) -> "CandidateMeasure":
        """Candidate with density proportional to w (1 + eps phi)."""
        fac = 1.0 + eps * np.asarray(phi(self.x), dtype=float)
        if np.any(fac < 0):
            raise InputError("tilt makes the density negative")
        return load_candidate(self.x, self.w * fac, label=label or f"{self.label}~tilt({eps!r})")


def _element_masses(x, w):
    return 0.5 * np.diff(x) * (w[:-1] + w[1:])


def load_candidate(x, density, model: Optional[DiffusionModel] = None,
                   support: Optional[tuple[float, float]] = None, label: str = "candidate") -> CandidateMeasure:
    """Validate and normalize a gridded density.

    Raises InputError for fewer than 16 nodes, unsorted or repeated nodes,
    non-finite or negative values, an all-zero density, or nodes outside the
    model's state space (or the declared ``support``).
    """
    x = np.asarray(x, dtype=float).ravel()
    d = np.asarray(density, dtype=float).ravel()
    if x.shape != d.shape:
        raise InputError("grid and density have different lengths")
    if len(x) < MIN_NODES:
        raise InputError(f"candidate needs at least {MIN_NODES} nodes, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        raise InputError("grid and density must be finite")
    if np.any(np.diff(x) <= 0):
        raise InputError("grid nodes must be strictly increasing")
    if np.any(d < 0):
        raise InputError("density values must be nonnegative")
    bounds = []
    if model is not None:
        bounds.append(model.interval)
    if support is not None:
        bounds.append(tuple(support))
    for lo, hi in bounds:
        if x[0] < lo or x[-1] > hi:
            raise InputError(f"grid [{x[0]}, {x[-1]}] leaves the support [{lo}, {hi}]")
    mass = float(np.sum(_element_masses(x, d)))
    if not mass > 0:
        raise InputError("density has empty support")
    w = d / mass
    cum = np.concatenate([[0.0], np.cumsum(_element_masses(x, w))])
    return CandidateMeasure(x=x, w=w, factor=1.0 / mass, label=label, _cum=cum)


def read_candidate_csv(path, model: Optional[DiffusionModel] = None) -> CandidateMeasure:
    """Read a ``x,density`` CSV, plus an optional ``<stem>.json`` sidecar.

    The sidecar may declare ``{"support": [lo, hi]}``.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read candidate file {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["x", "density"]:
        raise InputError("candidate CSV must start with the header 'x,density'")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InputError(f"non-numeric entry in {path}") from exc
    if data.ndim != 2 or data.shape[1] != 2:
        raise InputError("candidate CSV rows must have exactly two columns")
    support = None
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            if "support" in meta:
                support = tuple(float(v) for v in meta["support"])
        except (ValueError, TypeError) as exc:
            raise InputError(f"malformed sidecar {sidecar}") from exc
    return load_candidate(data[:, 0], data[:, 1], model=model, support=support, label=path.name)


def default_grid(model: DiffusionModel, n_elements: int = 2000) -> np.ndarray:
    """Grid covering the model's law up to ~1e-15 tail mass.

    On the compact beta interval the nodes are Chebyshev-clustered, which
    resolves the endpoint behaviour of the density.
    """
    lo, hi = model.interval
    if model.family == "beta":
        return -np.cos(np.pi * np.linspace(0.0, 1.0, n_elements + 1))
    if not math.isfinite(lo):
        lo = float(model.ppf(1e-15))
    if not math.isfinite(hi):
        hi = float(model.isf(1e-15))
    return np.linspace(lo, hi, n_elements + 1)


def candidate_from_model(model: DiffusionModel, n_elements: int = 2000, grid=None) -> CandidateMeasure:
    """mu itself, sampled on a grid (the reflexive candidate)."""
    x = default_grid(model, n_elements) if grid is None else np.asarray(grid, dtype=float)
    d = np.asarray(model.mu_density(x), dtype=float)
    # integrable endpoint singularities: sample just inside instead
    bad = ~np.isfinite(d)
    if bad.any():
        inner = np.where(x[bad] <= x[0], x[bad] + 1e-9 * (x[1] - x[0]), x[bad] - 1e-9 * (x[-1] - x[-2]))
        d[bad] = model.mu_density(inner)
    return load_candidate(x, d, model=model, label=f"mu[{model.ident}]")


# -- normalization ------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationReport:
    mean: float          # int f_k dnu
    second: float        # int f_k^2 dnu
    energy: float        # int Gamma(f_k) dnu
    bound: float         # lambda_k(mu)
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {"int_f": self.mean, "int_f2": self.second, "int_gamma_f": self.energy,
                "lambda_k_mu": self.bound, "tol": self.tol, "pass": self.passed}


def check_normalization(candidate: CandidateMeasure, model: DiffusionModel, k: int,
                        tol: float = 1e-3) -> NormalizationReport:
    fam = model.eigenfunction(k)
    first = candidate.expect(fam)
    second = candidate.expect(lambda x: fam(x) ** 2)
    energy = candidate.expect(lambda x: model.gamma_of_eigenfunction(k, x))
    lam = model.eigenvalue(k)
    ok = abs(first) <= tol and abs(second - 1.0) <= tol and energy <= lam + tol
    return NormalizationReport(first, second, energy, lam, tol, bool(ok))


# -- discrete spectrum ---------------------------------------------------------

@dataclass(frozen=True)
class DiscreteSpectrum:
    """Smallest nonzero eigenpairs of the candidate's Dirichlet form.

    ``vectors[:, i]`` are nodal values on ``x`` (L^2(nu)-orthonormal,
    nu-centered).  ``nodes`` indexes the candidate nodes kept after dropping
    zero-mass elements.
    """

    values: np.ndarray
    vectors: np.ndarray
    x: np.ndarray
    nodes: np.ndarray
    stiffness: sparse.csr_matrix = field(repr=False)
    mass: sparse.csr_matrix = field(repr=False)
    warnings: tuple = ()

    def rayleigh(self, i: int) -> float:
        v = self.vectors[:, i]
        return float(v @ (self.stiffness @ v)) / float(v @ (self.mass @ v))

    def gram(self) -> np.ndarray:
        return self.vectors.T @ (self.mass @ self.vectors)


def _assemble(candidate: CandidateMeasure, model: DiffusionModel, keep_el: np.ndarray):
    x, w = candidate.x, candidate.w
    n = len(x)
    h = np.diff(x)
    pts, wts = candidate.element_quadrature()
    energy = np.sum(wts * np.asarray(model.a(pts)), axis=1)   # int_e a dnu
    kd = np.where(keep_el, energy / h ** 2, 0.0)
    m_diag0 = np.where(keep_el, h * (3 * w[:-1] + w[1:]) / 12.0, 0.0)
    m_diag1 = np.where(keep_el, h * (w[:-1] + 3 * w[1:]) / 12.0, 0.0)
    m_off = np.where(keep_el, h * (w[:-1] + w[1:]) / 12.0, 0.0)
    i = np.arange(n - 1)
    rows = np.concatenate([i, i + 1, i, i + 1])
    cols = np.concatenate([i, i + 1, i + 1, i])
    K = sparse.coo_matrix((np.concatenate([kd, kd, -kd, -kd]), (rows, cols)), shape=(n, n)).tocsr()
    M = sparse.coo_matrix((np.concatenate([m_diag0, m_diag1, m_off, m_off]), (rows, cols)), shape=(n, n)).tocsr()
    return K, M


def discrete_spectrum(candidate: CandidateMeasure, model: DiffusionModel, m: int = 4) -> DiscreteSpectrum:
    """The m smallest nonzero eigenvalues of -L_nu with eigenvectors.

    The constant mode (eigenvalue 0) is computed along with the others and
    discarded; the remaining eigenvectors are M-orthogonal to it, i.e.
    nu-centered.  Elements carrying no nu-mass are removed; if that splits
    the grid, the component with the most mass is kept and a warning issued.
    """
    if not 1 <= m <= MAX_EIGENPAIRS:
        raise DegenerateCandidateError(f"number of eigenpairs must be in 1..{MAX_EIGENPAIRS}")
    if candidate.n_nodes < MIN_SPECTRUM_NODES:
        raise DegenerateCandidateError(f"spectrum needs at least {MIN_SPECTRUM_NODES} nodes")
    x, w = candidate.x, candidate.w
    el_mass = _element_masses(x, w)
    keep_el = el_mass > 0
    notes = []
    # connected components of the element graph restricted to massive elements
    n = len(x)
    i = np.nonzero(keep_el)[0]
    adj = sparse.coo_matrix((np.ones(len(i)), (i, i + 1)), shape=(n, n))
    n_comp, labels = csgraph.connected_components(adj, directed=False)
    comp_mass = np.bincount(labels[i], weights=el_mass[i], minlength=n_comp)
    main = int(np.argmax(comp_mass))
    nodes = np.nonzero(labels == main)[0]
    if np.count_nonzero(comp_mass > 0) > 1:
        msg = f"candidate support is disconnected; spectrum computed on the component holding {comp_mass[main]:.6g} of the mass"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    keep_el &= (labels[:-1] == main) & (labels[1:] == main)
    if len(nodes) < m + 2:
        raise DegenerateCandidateError("too few nodes carry mass for the requested eigenpairs")
    K, M = _assemble(candidate, model, keep_el)
    K = K[nodes][:, nodes]
    M = M[nodes][:, nodes]
    nn = len(nodes)
    if nn <= 400:
        vals, vecs = linalg.eigh(K.toarray(), M.toarray(), subset_by_index=(0, m))
    else:
        v0 = np.cos(np.linspace(0.0, 3.0, nn)) + 2.0
        vals, vecs = eigsh(K.tocsc(), k=m + 1, M=M.tocsc(), sigma=-1.0, which="LM", v0=v0)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    if vals[0] > 1e-6 * max(1.0, abs(vals[-1])) or vals[1] <= 1e-10 * max(1.0, abs(vals[-1])):
        raise DegenerateCandidateError("mass/stiffness pencil is rank deficient")
    vals, vecs = vals[1:], vecs[:, 1:]
    # center against nu, then M-orthonormalize
    ones = np.ones(nn)
    total = float(ones @ (M @ ones))
    vecs = vecs - np.outer(ones, (ones @ (M @ vecs)) / total)
    G = vecs.T @ (M @ vecs)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    vecs = np.linalg.solve(L, vecs.T).T
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        first = np.nonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))[0][0]
        if col[first] < 0:
            vecs[:, j] = -col
    return DiscreteSpectrum(values=np.asarray(vals, dtype=float), vectors=vecs, x=x[nodes], nodes=nodes,
                            stiffness=K.tocsr(), mass=M.tocsr(), warnings=tuple(notes))


# -- projections ---------------------------------------------------------------

@dataclass(frozen=True)
class Projection:
    """Component of f_k on one eigenspace Sp_i(nu) (a group when degenerate)."""

    indices: tuple
    eigenvalue: float
    coefficients: np.ndarray
    d: float            # || p_k^i ||_{L^2(nu)}
    C: float            # sqrt|lam_k - lam_i| + (lam_k - lam_i) / sqrt(lam_i)

    def grid_function(self, spectrum: DiscreteSpectrum) -> np.ndarray:
        cols = [i - 1 for i in self.indices]
        return spectrum.vectors[:, cols] @ self.coefficients


def load_vector(candidate: CandidateMeasure, fn: Callable, nodes: np.ndarray) -> np.ndarray:
    """b_j = int fn phi_j dnu for the hat functions on the kept nodes."""
    pts, wts = candidate.element_quadrature()
    fw = wts * np.asarray(fn(pts), dtype=float)
    left = np.sum(fw * (1.0 - _GL_S[None, :]), axis=1)
    right = np.sum(fw * _GL_S[None, :], axis=1)
    # elements leaving the kept component contribute nothing
    mask = np.zeros(candidate.n_nodes, dtype=bool)
    mask[nodes] = True
    el_in = mask[:-1] & mask[1:]
    b_in = np.zeros(candidate.n_nodes)
    np.add.at(b_in, np.arange(len(left))[el_in], left[el_in])
    np.add.at(b_in, np.arange(1, len(right) + 1)[el_in], right[el_in])
    return b_in[nodes]


def projections(candidate: CandidateMeasure, model: DiffusionModel, k: int,
                spectrum: DiscreteSpectrum) -> list[Projection]:
    """Orthogonality errors d_i = |int f_k e_i dnu| for i < k.

    Eigenvalues closer than :data:`DEGENERATE_GAP` (relative) are grouped
    and d is the norm of the projection on the group's span.
    """
    if k <= 1:
        return []
    if len(spectrum.values) < k:
        raise DegenerateCandidateError(f"spectrum has {len(spectrum.values)} eigenpairs, need {k}")
    fam = model.eigenfunction(k)
    b = load_vector(candidate, fam, spectrum.nodes)
    coef = spectrum.vectors.T @ b
    lam = spectrum.values
    lam_k = lam[k - 1]
    groups: list[list[int]] = []
    for i in range(1, k):
        if groups and abs(lam[i - 1] - lam[groups[-1][-1] - 1]) <= DEGENERATE_GAP * max(1.0, abs(lam[i - 1])):
            groups[-1].append(i)
        else:
            groups.append([i])
    out = []
    for grp in groups:
        c = coef[[i - 1 for i in grp]]
        lam_i = float(np.mean(lam[[i - 1 for i in grp]]))
        delta = lam_k - lam_i
        C = math.sqrt(abs(delta)) + delta / math.sqrt(lam_i)
        out.append(Projection(tuple(grp), lam_i, c, float(np.linalg.norm(c)), C))
    return out
