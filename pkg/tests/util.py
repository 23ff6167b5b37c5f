"""Shared helpers for the test suite."""

import numpy as np

from sbm_miss import PartialAdjacency, SbmParams


def planted_params(q, p_in, p_out, alpha=None, directed=False):
    alpha = np.full(q, 1.0 / q) if alpha is None else np.asarray(alpha, dtype=float)
    pi = np.full((q, q), p_out) + (p_in - p_out) * np.eye(q)
    return SbmParams(alpha=alpha, pi=pi, directed=directed)


def adjacency_from_edges(n, edges, missing=(), directed=False):
    mat = np.zeros((n, n))
    for i, j in edges:
        mat[i, j] = 1.0
        if not directed:
            mat[j, i] = 1.0
    for i, j in missing:
        mat[i, j] = np.nan
        if not directed:
            mat[j, i] = np.nan
    np.fill_diagonal(mat, np.nan)
    return PartialAdjacency(mat, directed=directed)


def elbo_is_monotone(fit, slack=1e-8):
    values = [row.elbo for row in fit.monitoring]
    return all(b >= a - slack for a, b in zip(values, values[1:]))
