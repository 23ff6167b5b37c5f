"""Binary stochastic block model, with or without dyad covariates.

Plain variant: nodes carry latent block labels drawn from the proportions
alpha, and a dyad between blocks (q, l) is an edge with probability pi[q, l].
Covariate variant: the edge probability becomes
logistic(gamma[q, l] + beta . x_ij), so blocks describe the connectivity
heterogeneity left over once the covariate effect is removed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_expit

from .errors import InputError, NumericalError
from .network import (
    CovariateSet,
    PartialAdjacency,
    Partition,
    as_rng,
    clamp_prob,
    logistic,
    safe_log,
    transfer_covariates,
)

ALPHA_TOL = 1e-10


@dataclass(frozen=True)
class SbmParams:
    """SBM parameters: block proportions plus connectivity (pi or gamma/beta)."""

    alpha: np.ndarray
    pi: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    directed: bool = False

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        alpha.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)
        if alpha.ndim != 1 or alpha.size < 1:
            raise InputError("alpha must be a non-empty vector")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > ALPHA_TOL:
            raise InputError("alpha must be a probability vector summing to 1")
        q = alpha.size
        if (self.pi is None) == (self.gamma is None):
            raise InputError("provide exactly one of pi (plain) or gamma (covariate variant)")
        if self.pi is not None:
            pi = np.asarray(self.pi, dtype=float)
            if pi.shape != (q, q):
                raise InputError(f"pi must be {q} x {q}")
            if np.any(pi < 0) or np.any(pi > 1):
                raise InputError("pi entries must lie in [0, 1]")
            if not self.directed and not np.allclose(pi, pi.T):
                raise InputError("undirected pi must be symmetric")
            pi = np.array(pi)
            pi.flags.writeable = False
            object.__setattr__(self, "pi", pi)
        else:
            gamma = np.asarray(self.gamma, dtype=float)
            if gamma.shape != (q, q):
                raise InputError(f"gamma must be {q} x {q}")
            if not self.directed and not np.allclose(gamma, gamma.T):
                raise InputError("undirected gamma must be symmetric")
            beta = np.asarray(self.beta, dtype=float)
            if beta.ndim != 1 or beta.size < 1:
                raise InputError("covariate variant needs a beta vector")
            gamma = np.array(gamma)
            beta = np.array(beta)
            gamma.flags.writeable = False
            beta.flags.writeable = False
            object.__setattr__(self, "gamma", gamma)
            object.__setattr__(self, "beta", beta)

    @property
    def q(self) -> int:
        return self.alpha.size

    @property
    def variant(self) -> str:
        return "plain" if self.pi is not None else "covariate"

    @property
    def connectivity(self) -> np.ndarray:
        """pi for the plain variant, gamma otherwise (block-pair parameters)."""
        return self.pi if self.pi is not None else self.gamma

    def to_json(self) -> dict:
        out = {"Q": self.q, "directed": self.directed, "variant": self.variant,
               "alpha": self.alpha.tolist()}
        if self.variant == "plain":
            out["pi"] = self.pi.tolist()
        else:
            out["gamma"] = self.gamma.tolist()
            out["beta"] = self.beta.tolist()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "SbmParams":
        try:
            if data.get("variant", "plain") == "plain":
                return cls(alpha=np.array(data["alpha"]), pi=np.array(data["pi"]),
                           directed=bool(data.get("directed", False)))
            return cls(alpha=np.array(data["alpha"]), gamma=np.array(data["gamma"]),
                       beta=np.array(data["beta"]), directed=bool(data.get("directed", False)))
        except KeyError as exc:
            raise InputError(f"SBM parameter object misses field {exc}") from None


@dataclass(frozen=True)
class MembershipDraw:
    """Latent block labels drawn from the block proportions (0-based)."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def partition(self, q: int) -> Partition:
        return Partition(labels=self.labels, q=q)


def dyad_covariate_effect(params: SbmParams, covariates: Optional[CovariateSet]) -> np.ndarray:
    """n x n matrix of beta . x_ij."""
    if covariates is None:
        raise InputError("covariate variant needs dyadic covariates")
    x = transfer_covariates(covariates).dyadic_stack()
    if x.shape[0] != params.beta.size:
        raise InputError(f"beta has {params.beta.size} entries but {x.shape[0]} covariates given")
    return np.tensordot(params.beta, x, axes=1)


def sample_network(params: SbmParams, n: int, covariates: Optional[CovariateSet] = None,
                   rng_seed: int = 0) -> tuple[PartialAdjacency, MembershipDraw]:
    """Draw memberships and a fully observed network from the model."""
    rng = as_rng(rng_seed)
    z = rng.choice(params.q, size=n, p=params.alpha)
    if params.variant == "plain":
        prob = params.pi[np.ix_(z, z)]
    else:
        prob = logistic(params.gamma[np.ix_(z, z)] + dyad_covariate_effect(params, covariates))
    u = rng.random((n, n))
    if not params.directed:
        u = np.triu(u) + np.triu(u, 1).T
    mat = (u < prob).astype(float)
    np.fill_diagonal(mat, np.nan)
    return PartialAdjacency(mat, directed=params.directed), MembershipDraw(labels=z)


def _dyad_weight(adj: PartialAdjacency, state) -> tuple[np.ndarray, np.ndarray, float]:
    """(weights W over the dyad set in play, filled values, pair scale).

    Missing dyads enter with their imputation probabilities when the state
    carries them; otherwise the sums restrict to observed dyads.
    """
    scale = 1.0 if adj.directed else 0.5
    nu = getattr(state, "nu", None)
    if nu is not None:
        w = np.ones((adj.n, adj.n)) - np.eye(adj.n)
        y = adj.filled(nu)
    else:
        w = np.array(adj.observed_mask)
        y = adj.filled(0.0)
    return w, y, scale


def expected_loglik_sbm(params: SbmParams, adj: PartialAdjacency, state,
                        covariates: Optional[CovariateSet] = None) -> float:
    """Variational expectation of the complete-data SBM log-likelihood.

    Covers the membership factor and the dyad factor over the observed dyads
    (no imputation state) or over every dyad with missing values replaced by
    nu (imputation state present).
    """
    tau = state.tau
    if tau.shape != (adj.n, params.q):
        raise InputError("tau shape does not match the network / block count")
    total = float(np.sum(tau @ safe_log(params.alpha)))
    w, y, scale = _dyad_weight(adj, state)
    if params.variant == "plain":
        la = safe_log(params.pi)
        lb = np.log1p(-clamp_prob(params.pi))
        s1 = tau @ la @ tau.T
        s0 = tau @ lb @ tau.T
        total += scale * float(np.sum(w * (y * s1 + (1.0 - y) * s0)))
    else:
        c = dyad_covariate_effect(params, covariates)
        for qi in range(params.q):
            for li in range(params.q):
                eta = params.gamma[qi, li] + c
                wql = np.outer(tau[:, qi], tau[:, li]) * w
                total += scale * float(np.sum(wql * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta))))
    return total


def predict_probabilities(params: SbmParams, state,
                          covariates: Optional[CovariateSet] = None) -> np.ndarray:
    """Connection probabilities sum_ql tau_iq tau_jl p_ql(x_ij); NaN diagonal."""
    tau = state.tau
    if params.variant == "plain":
        out = tau @ params.pi @ tau.T
    else:
        c = dyad_covariate_effect(params, covariates)
        out = np.zeros_like(c)
        for qi in range(params.q):
            for li in range(params.q):
                out += np.outer(tau[:, qi], tau[:, li]) * logistic(params.gamma[qi, li] + c)
    np.fill_diagonal(out, np.nan)
    return out


# ---------------------------------------------------------------------------
# Spectral initialization
# ---------------------------------------------------------------------------

def spectral_init(adj: PartialAdjacency, q: int, rng_seed: int = 0) -> Partition:
    """Absolute-eigenvalue spectral clustering of the zero-filled adjacency.

    Missing dyads count as zero; directed matrices are symmetrized.  The q
    eigenvectors with largest |eigenvalue| embed the nodes, clustered by
    k-means.  Deterministic given the seed.
    """
    if q < 1:
        raise InputError("block count must be >= 1")
    if q > adj.n:
        raise InputError(f"cannot split {adj.n} nodes into {q} blocks")
    if q == 1:
        return Partition(labels=np.zeros(adj.n, dtype=int), q=1)
    a = adj.filled(0.0)
    if adj.directed:
        a = 0.5 * (a + a.T)
    try:
        eigval, eigvec = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in spectral initialization") from exc
    top = np.argsort(-np.abs(eigval), kind="stable")[:q]
    embedding = eigvec[:, top]
    rng = as_rng(rng_seed)
    labels = kmeans(embedding, q, rng)
    return Partition(labels=labels, q=q)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           n_init: int = 10, max_iter: int = 100) -> np.ndarray:
    """Plain Lloyd k-means, squared Euclidean, best inertia over restarts.

    Centers start from a k-means++ draw; a cluster that empties is reseeded
    from the point farthest from its center.
    """
    n = points.shape[0]
    if k >= n:
        return np.arange(n) % k
    best_labels, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = _kmeans_pp(points, k, rng)
        labels = np.zeros(n, dtype=int)
        for _ in range(max_iter):
            dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            for empty in np.setdiff1d(np.arange(k), np.unique(new_labels)):
                farthest = int(np.argmax(dist[np.arange(n), new_labels]))
                new_labels[farthest] = empty
                dist[farthest, :] = np.inf
                dist[farthest, empty] = 0.0
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
            centers = np.vstack([points[labels == c].mean(axis=0) for c in range(k)])
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_inertia, best_labels = inertia, labels
    return best_labels


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([(np.square(points - c).sum(axis=1)) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.array(centers)


# ---------------------------------------------------------------------------
# Covariate connectivity M-step
# ---------------------------------------------------------------------------

def fit_covariate_connectivity(adj: PartialAdjacency, state,
                               covariates: CovariateSet,
                               start: Optional[tuple[np.ndarray, np.ndarray]] = None,
                               max_iter: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Maximize the tau-weighted logistic dyad likelihood in (gamma, beta).

    Damped Newton on the concave objective: each dyad is softly replicated
    over block pairs with weight tau_iq tau_jl, the block-pair intercepts
    gamma share parameters across the symmetric pair for undirected networks.
    Returns the updated (gamma, beta).
    """
    tau = state.tau
    n, q = tau.shape
    w, y, _ = _dyad_weight(adj, state)
    x = transfer_covariates(covariates).dyadic_stack()
    m = x.shape[0]
    if adj.directed:
        gamma_index = [(a, b) for a in range(q) for b in range(q)]
    else:
        gamma_index = [(a, b) for a in range(q) for b in range(a, q)]
    pos = {pair: idx for idx, pair in enumerate(gamma_index)}
    n_gamma = len(gamma_index)
    p = n_gamma + m

    if start is None:
        gamma0 = np.zeros((q, q))
        beta0 = np.zeros(m)
    else:
        gamma0, beta0 = np.array(start[0]), np.array(start[1])
    theta = np.concatenate([[gamma0[a, b] for a, b in gamma_index], beta0])
    x_cols = x.reshape(m, -1).T  # (n*n, m)
    w_flat_mask = w.reshape(-1)
    y_flat = y.reshape(-1)

    def unpack(vec):
        gamma = np.zeros((q, q))
        for idx, (a, b) in enumerate(gamma_index):
            gamma[a, b] = vec[idx]
            if not adj.directed:
                gamma[b, a] = vec[idx]
        return gamma, vec[n_gamma:]

    def objective(vec):
        gamma, beta = unpack(vec)
        c = np.tensordot(beta, x, axes=1)
        total = 0.0
        for a in range(q):
            for b in range(q):
                eta = gamma[a, b] + c
                wab = np.outer(tau[:, a], tau[:, b]) * w
                total += float(np.sum(wab * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta))))
        return total

    current = objective(theta)
    for _ in range(max_iter):
        gamma, beta = unpack(theta)
        c = np.tensordot(beta, x, axes=1)
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        for a in range(q):
            for b in range(q):
                idx = pos[(a, b)] if (a, b) in pos else pos[(b, a)]
                mu = logistic(gamma[a, b] + c)
                wab = np.outer(tau[:, a], tau[:, b]) * w
                resid = (wab * (y - mu)).reshape(-1)
                curv = (wab * mu * (1.0 - mu)).reshape(-1)
                grad[idx] += resid.sum()
                grad[n_gamma:] += x_cols.T @ resid
                hess[idx, idx] += curv.sum()
                cross = x_cols.T @ curv
                hess[idx, n_gamma:] += cross
                hess[n_gamma:, idx] += cross
                hess[n_gamma:, n_gamma:] += (x_cols * curv[:, None]).T @ x_cols
        hess[np.diag_indices_from(hess)] += 1e-10
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular Hessian in covariate connectivity fit") from exc
        if not np.isfinite(step).all():
            raise NumericalError("non-finite Newton step in covariate connectivity fit")
        scale_step = 1.0
        accepted = current
        for _ in range(20):
            cand = theta + scale_step * step
            value = objective(cand)
            if value >= current - 1e-12:
                accepted = value
                break
            scale_step *= 0.5
        else:
            break
        moved = np.max(np.abs(scale_step * step))
        theta, current = cand, accepted
        if moved < 1e-8:
            break
    gamma, beta = unpack(theta)
    return gamma, beta
