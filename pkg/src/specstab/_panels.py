"""Gauss-Legendre panel toolkit: node tables, indefinite integration, interpolation."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre

ORDER = 16

NODES, WEIGHTS = legendre.leggauss(ORDER)


def _integration_matrix(x):
    # S[m, n] = int_{-1}^{x_m} l_n(s) ds for the Lagrange basis l_n on x
    inv_v = np.linalg.inv(legendre.legvander(x, len(x) - 1))
    S = np.empty((len(x), len(x)))
    for n in range(len(x)):
        S[:, n] = legendre.legval(x, legendre.legint(inv_v[:, n], lbnd=-1))
    return S


LEFT = _integration_matrix(NODES)
RIGHT = WEIGHTS[None, :] - LEFT  # int_{x_m}^{1}

_diff = NODES[:, None] - NODES[None, :]
np.fill_diagonal(_diff, 1.0)
BARY = 1.0 / np.prod(_diff, axis=1)


def panel_nodes(L, R):
    """Nodes of every panel, shape (P, ORDER)."""
    L = np.asarray(L, dtype=float)
    R = np.asarray(R, dtype=float)
    return 0.5 * (L + R)[:, None] + 0.5 * (R - L)[:, None] * NODES[None, :]


def interpolate(values, s):
    """Barycentric interpolation of per-panel node values.

    values : (M, ORDER) rows already selected per query point
    s : (M,) local coordinates in [-1, 1]
    """
    d = s[:, None] - NODES[None, :]
    exact = d == 0.0
    d = np.where(exact, 1.0, d)
    c = BARY[None, :] / d
    out = (c * values).sum(axis=1) / c.sum(axis=1)
    hit = exact.any(axis=1)
    if hit.any():
        out[hit] = values[hit][exact[hit]]
    return out
