"""Partially observed binary networks, covariates, and shared numerics.

A partially observed network is tri-state: every dyad (unordered pair of
distinct nodes for undirected networks, ordered pair otherwise) is absent (0),
present (1) or missing.  Missing dyads are carried as NaN inside a dense float
matrix; the diagonal is structurally undefined and never enters any sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import InputError, NumericalError

# Probabilities are clamped into [PROB_CLAMP, 1 - PROB_CLAMP] before any log:
# degenerate M-steps can produce exact 0/1 entries.
PROB_CLAMP = 1e-12


def logistic(x):
    """Logistic function 1/(1+exp(-x)), overflow-free for any finite float."""
    return expit(x)


def as_rng(seed) -> np.random.Generator:
    """Build a generator from an int seed, a SeedSequence, or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def clamp_prob(p):
    """Clip probabilities away from 0 and 1 before taking logs."""
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def safe_log(p):
    """log of a probability, clamped so degenerate 0/1 values stay finite."""
    return np.log(clamp_prob(p))


def safe_logit(p):
    """logit of a probability with the same clamping as :func:`safe_log`."""
    p = clamp_prob(p)
    return np.log(p) - np.log1p(-p)


def l1_similarity(x, y):
    """Componentwise -|x - y|, the default nodal-to-dyad similarity."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InputError(f"similarity arguments differ in shape: {x.shape} vs {y.shape}")
    return -np.abs(x - y)


SIMILARITIES: dict[str, Callable] = {"l1": l1_similarity}


def _resolve_similarity(similarity):
    if callable(similarity):
        return similarity
    try:
        return SIMILARITIES[similarity]
    except KeyError:
        raise InputError(f"unknown similarity {similarity!r}") from None


class PartialAdjacency:
    """Tri-state adjacency matrix of a partially observed binary network.

    Parameters
    ----------
    matrix:
        Square array with entries in {0, 1, NaN}; NaN marks a missing dyad.
        The diagonal is ignored (forced to NaN).  Undirected networks must be
        symmetric, missing entries included.
    directed:
        Whether dyads are ordered pairs.

    The object is immutable after construction and safe to share between
    threads.  Canonical dyad order is row-major over ``i < j`` (undirected)
    or over all ordered pairs ``i != j`` (directed).
    """

    def __init__(self, matrix, directed: bool = False):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError("adjacency matrix must be square")
        n = m.shape[0]
        if n < 1:
            raise InputError("network needs at least one node")
        np.fill_diagonal(m, np.nan)
        off = ~np.eye(n, dtype=bool)
        vals = m[off]
        finite = vals[~np.isnan(vals)]
        if finite.size and not np.isin(finite, (0.0, 1.0)).all():
            raise InputError("adjacency entries must be 0, 1 or missing")
        if not directed:
            nan = np.isnan(m)
            ok = (nan & nan.T) | (m == m.T)
            if not ok[off].all():
                raise InputError("undirected adjacency must be symmetric, missing dyads included")
        m.flags.writeable = False
        self._matrix = m
        self.directed = bool(directed)

    # -- basic shape -------------------------------------------------------

    @property
    def n(self) -> int:
        return self._matrix.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Dense read-only view, NaN on missing dyads and on the diagonal."""
        return self._matrix

    @property
    def n_dyads(self) -> int:
        n = self.n
        return n * (n - 1) if self.directed else n * (n - 1) // 2

    # -- accessors ---------------------------------------------------------

    def entry(self, i: int, j: int):
        """Value of dyad (i, j): 0, 1, or None when missing."""
        if i == j:
            raise InputError("self-dyads are undefined")
        v = self._matrix[i, j]
        return None if np.isnan(v) else int(v)

    def is_missing(self, i: int, j: int) -> bool:
        return self.entry(i, j) is None

    def dyads(self) -> Iterator[tuple[int, int]]:
        """Canonical dyad order."""
        n = self.n
        if self.directed:
            return ((i, j) for i in range(n) for j in range(n) if i != j)
        return ((i, j) for i in range(n) for j in range(i + 1, n))

    @cached_property
    def observed_mask(self) -> np.ndarray:
        """R matrix: 1 where the dyad is observed, 0 where missing (0 diagonal)."""
        r = np.where(np.isnan(self._matrix), 0.0, 1.0)
        np.fill_diagonal(r, 0.0)
        r.flags.writeable = False
        return r

    @cached_property
    def missing_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays (rows, cols) of missing dyads in canonical order."""
        nan = np.isnan(self._matrix)
        np.fill_diagonal(nan, False)
        if not self.directed:
            nan = np.triu(nan)
        mi, mj = np.nonzero(nan)
        mi.flags.writeable = False
        mj.flags.writeable = False
        return mi, mj

    def missing_dyads(self) -> list[tuple[int, int]]:
        mi, mj = self.missing_pairs
        return list(zip(mi.tolist(), mj.tolist()))

    @property
    def n_missing(self) -> int:
        return self.missing_pairs[0].size

    @property
    def n_observed(self) -> int:
        return self.n_dyads - self.n_missing

    @property
    def fully_observed(self) -> bool:
        return self.n_missing == 0

    @property
    def observed_density(self) -> float:
        """Edge frequency among observed dyads (0.5 fallback when none)."""
        r = self.observed_mask
        total = r.sum()
        if total == 0:
            return 0.5
        edges = np.nansum(self._matrix * r)
        return float(edges / total)

    # -- derived matrices ----------------------------------------------------

    def filled(self, missing_values=None) -> np.ndarray:
        """Dense float matrix with the diagonal at 0 and missing dyads filled.

        ``missing_values`` may be None (requires a fully observed network),
        a scalar, or a vector aligned with :attr:`missing_pairs`.
        """
        out = np.array(self._matrix)
        np.fill_diagonal(out, 0.0)
        mi, mj = self.missing_pairs
        if mi.size:
            if missing_values is None:
                raise InputError("network has missing dyads but no fill values were given")
            vals = np.broadcast_to(np.asarray(missing_values, dtype=float), mi.shape)
            out[mi, mj] = vals
            if not self.directed:
                out[mj, mi] = vals
        return out

    def mask_where(self, keep: np.ndarray) -> "PartialAdjacency":
        """Copy with every dyad where ``keep`` is false turned missing."""
        out = np.array(self._matrix)
        out[~keep.astype(bool)] = np.nan
        if not self.directed:
            out = np.where(np.isnan(out) | np.isnan(out.T), np.nan, out)
        return PartialAdjacency(out, directed=self.directed)

    def __eq__(self, other):
        if not isinstance(other, PartialAdjacency):
            return NotImplemented
        if self.directed != other.directed or self.n != other.n:
            return False
        a, b = self._matrix, other._matrix
        return bool(np.all((a == b) | (np.isnan(a) & np.isnan(b))))

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"PartialAdjacency(n={self.n}, {kind}, missing={self.n_missing}/{self.n_dyads})"


@dataclass(frozen=True)
class Partition:
    """Hard node clustering: 0-based block labels and block count q."""

    labels: np.ndarray
    q: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        if self.q < 1:
            raise InputError("block count must be >= 1")
        if labels.ndim != 1 or labels.size == 0:
            raise InputError("labels must be a non-empty vector")
        if labels.min() < 0 or labels.max() >= self.q:
            raise InputError("labels out of range for the declared block count")

    @classmethod
    def from_labels(cls, labels: Sequence[int], q: int | None = None) -> "Partition":
        labels = np.asarray(labels, dtype=int)
        if q is None:
            q = int(labels.max()) + 1 if labels.size else 1
        return cls(labels=labels, q=q)

    @property
    def n(self) -> int:
        return self.labels.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.q)

    def onehot(self) -> np.ndarray:
        out = np.zeros((self.n, self.q))
        out[np.arange(self.n), self.labels] = 1.0
        return out


@dataclass(frozen=True)
class CovariateSet:
    """Covariates attached to a network, on nodes or directly on dyads.

    Nodal covariates are length-n vectors (one scalar per node per covariate)
    and are transferred to the dyad level by a symmetric similarity function.
    Dyadic covariates are n x n matrices.
    """

    kind: str
    nodal: tuple = ()
    dyadic: tuple = ()
    similarity: str | Callable = "l1"

    def __post_init__(self):
        if self.kind not in ("nodal", "dyadic"):
            raise InputError(f"covariate kind must be 'nodal' or 'dyadic', got {self.kind!r}")
        object.__setattr__(self, "nodal", tuple(np.asarray(v, dtype=float) for v in self.nodal))
        object.__setattr__(self, "dyadic", tuple(np.asarray(m, dtype=float) for m in self.dyadic))
        for v in self.nodal:
            if v.ndim != 1:
                raise InputError("nodal covariates must be vectors")
        for m in self.dyadic:
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InputError("dyadic covariates must be square matrices")
            if not np.isfinite(m).all():
                raise InputError("dyadic covariate entries must be finite")

    @classmethod
    def from_nodal(cls, vectors: Sequence, similarity="l1") -> "CovariateSet":
        return cls(kind="nodal", nodal=tuple(vectors), similarity=similarity)

    @classmethod
    def from_dyadic(cls, matrices: Sequence) -> "CovariateSet":
        return cls(kind="dyadic", dyadic=tuple(matrices))

    @property
    def m(self) -> int:
        """Number of dyad-level covariates (after transfer)."""
        return len(self.dyadic) if self.dyadic else len(self.nodal)

    @property
    def m_nodal(self) -> int:
        return len(self.nodal)

    @property
    def n(self) -> int:
        if self.dyadic:
            return self.dyadic[0].shape[0]
        if self.nodal:
            return self.nodal[0].size
        raise InputError("empty covariate set has no node count")

    def nodal_matrix(self) -> np.ndarray:
        """n x m_nodal design matrix of the nodal covariates."""
        if not self.nodal:
            raise InputError("no nodal covariates available")
        return np.column_stack(self.nodal)

    def dyadic_stack(self) -> np.ndarray:
        """m x n x n array of the dyad-level covariates."""
        if not self.dyadic:
            raise InputError("no dyadic covariates available; transfer first")
        return np.stack(self.dyadic)


def transfer_covariates(cov: CovariateSet) -> CovariateSet:
    """Transfer nodal covariates to the dyad level (identity on dyadic sets).

    Each nodal covariate produces one dyadic matrix through the similarity
    function, applied per pair of scalar values.  Nodal vectors are retained on
    the result for designs that act on nodes.
    """
    if cov.kind == "dyadic":
        return cov
    if not cov.nodal:
        raise InputError("nodal covariate set is empty")
    n = cov.nodal[0].size
    sim = _resolve_similarity(cov.similarity)
    mats = []
    for vec in cov.nodal:
        if vec.size != n:
            raise InputError("nodal covariate vectors must share one length")
        if sim is l1_similarity:
            mat = -np.abs(vec[:, None] - vec[None, :])
        else:
            mat = np.empty((n, n))
            for i in range(n):
                for j in range(n):
                    mat[i, j] = float(sim(np.atleast_1d(vec[i]), np.atleast_1d(vec[j]))[0])
        mats.append(mat)
    return CovariateSet(kind="dyadic", nodal=cov.nodal, dyadic=tuple(mats), similarity=cov.similarity)


def degrees(adj: PartialAdjacency, impute=None, observed_only: bool = False) -> np.ndarray:
    """Node degrees D_i = sum_j y_ij, with missing dyads imputed.

    ``impute`` may be an object carrying a ``nu`` vector aligned with
    ``adj.missing_pairs``, such a vector itself, or a mapping keyed by dyad.
    With ``observed_only`` missing dyads contribute 0 instead; otherwise a
    network with missing dyads and no imputation values is an error.
    Directed networks use row sums (out-degrees).
    """
    nu = getattr(impute, "nu", impute)
    if nu is None and adj.n_missing and not observed_only:
        raise InputError("missing dyads present: supply imputation values or request observed-only degrees")
    if observed_only and nu is None:
        fill = 0.0
    elif isinstance(nu, Mapping):
        fill = np.array([nu[d] for d in adj.missing_dyads()]) if adj.n_missing else None
    else:
        fill = nu if adj.n_missing else None
    filled = adj.filled(fill) if adj.n_missing else adj.filled()
    return filled.sum(axis=1)


def fit_logistic(x: np.ndarray, y: np.ndarray, weights=None, start=None,
                 max_iter: int = 25, ridge: float = 1e-10) -> tuple[np.ndarray, float]:
    """Damped Newton fit of a (weighted) logistic regression.

    ``x`` is the n x p design matrix (include a column of ones for an
    intercept), ``y`` binary responses, ``weights`` optional non-negative case
    weights.  Steps are halved until the penalized log-likelihood does not
    decrease; separation therefore yields large finite coefficients instead of
    a divergence.  Returns (coefficients, log-likelihood).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(y.shape) if weights is None else np.asarray(weights, dtype=float)
    p = x.shape[1]
    coef = np.zeros(p) if start is None else np.array(start, dtype=float)

    def loglik(c):
        prob = clamp_prob(expit(x @ c))
        return float(np.sum(w * (y * np.log(prob) + (1.0 - y) * np.log1p(-prob))))

    current = loglik(coef)
    for _ in range(max_iter):
        prob = expit(x @ coef)
        grad = x.T @ (w * (y - prob))
        hess = (x * (w * prob * (1.0 - prob))[:, None]).T @ x
        hess[np.diag_indices_from(hess)] += ridge
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular Hessian in logistic fit") from exc
        if not np.isfinite(step).all():
            raise NumericalError("non-finite Newton step in logistic fit")
        scale = 1.0
        for _ in range(20):
            candidate = coef + scale * step
            value = loglik(candidate)
            if value >= current - 1e-12:
                break
            scale *= 0.5
        else:
            return coef, current
        if abs(value - current) < 1e-10 and np.max(np.abs(scale * step)) < 1e-8:
            return candidate, value
        coef, current = candidate, value
    return coef, current
