"""The nine network observation processes (sampling designs).

Dyad-centered designs decide observation dyad by dyad; node-centered designs
draw a set of observed nodes, and observing a node reveals every dyad
involving it.  Each design provides four behaviors used by the estimation
engine: mask generation from a fully observed network, the variational
expectation of its log-likelihood, the M-step update of its parameters, and
its free-parameter count for the model-selection penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InputError
from .network import (
    CovariateSet,
    as_rng,
    PartialAdjacency,
    Partition,
    clamp_prob,
    degrees,
    fit_logistic,
    logistic,
    safe_log,
    transfer_covariates,
)

AVAILABLE_SAMPLINGS = (
    "dyad",
    "covar-dyad",
    "node",
    "covar-node",
    "block-node",
    "block-dyad",
    "double-standard",
    "degree",
    "snowball",
)

DYAD_CENTERED = frozenset({"dyad", "double-standard", "block-dyad", "covar-dyad"})
NODE_CENTERED = frozenset({"node", "snowball", "degree", "block-node", "covar-node"})

MISSINGNESS_CLASS = {
    "dyad": "MCAR",
    "node": "MCAR",
    "covar-dyad": "MAR",
    "covar-node": "MAR",
    "snowball": "MAR",
    "double-standard": "MNAR",
    "block-dyad": "MNAR",
    "degree": "MNAR",
    "block-node": "MNAR",
}


def centering(tag: str) -> str:
    if tag in DYAD_CENTERED:
        return "dyad-centered"
    if tag in NODE_CENTERED:
        return "node-centered"
    raise InputError(f"unknown sampling design {tag!r}")


def needs_clusters(tag: str) -> bool:
    return tag in ("block-dyad", "block-node")


def needs_covariates(tag: str) -> bool:
    return tag in ("covar-dyad", "covar-node")


@dataclass(frozen=True)
class SamplingDesign:
    """One observation process with its parameter vector psi.

    psi layout by tag:
      dyad, node, snowball   scalar observation rate in [0, 1]
      double-standard        (rho1, rho0): keep rates for edges / non-edges
      block-dyad             Q x Q matrix of dyad rates by block pair
      block-node             length-Q vector of node rates by block
      covar-dyad             (intercept, kappa_1..kappa_m), logistic on dyad covariates
      covar-node             (intercept, eta_1..eta_m), logistic on nodal covariates
      degree                 (a, b), node rate logistic(a + b * degree)
    Snowball additionally carries its wave count (first batch included).
    """

    tag: str
    psi: np.ndarray
    waves: int = 1

    def __post_init__(self):
        if self.tag not in AVAILABLE_SAMPLINGS:
            raise InputError(f"unknown sampling design {self.tag!r}")
        psi = np.array(self.psi, dtype=float)
        if self.tag in ("dyad", "node", "snowball"):
            psi = psi.reshape(())
            _check_unit(psi, self.tag)
        elif self.tag == "double-standard":
            if psi.shape != (2,):
                raise InputError("double-standard expects (rho1, rho0)")
            _check_unit(psi, self.tag)
        elif self.tag == "block-dyad":
            if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
                raise InputError("block-dyad expects a Q x Q rate matrix")
            _check_unit(psi, self.tag)
        elif self.tag == "block-node":
            if psi.ndim != 1 or psi.size < 1:
                raise InputError("block-node expects a length-Q rate vector")
            _check_unit(psi, self.tag)
        elif self.tag == "degree":
            if psi.shape != (2,):
                raise InputError("degree expects (a, b)")
        else:  # covar-dyad / covar-node
            if psi.ndim != 1 or psi.size < 2:
                raise InputError(f"{self.tag} expects (intercept, slopes...)")
        if not np.isfinite(psi).all():
            raise InputError(f"{self.tag}: psi entries must be finite")
        if self.tag == "snowball" and self.waves < 1:
            raise InputError("snowball needs at least one wave")
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)

    @property
    def missingness_class(self) -> str:
        return MISSINGNESS_CLASS[self.tag]

    @property
    def centering(self) -> str:
        return centering(self.tag)

    @property
    def is_mnar(self) -> bool:
        return self.missingness_class == "MNAR"

    @property
    def node_centered(self) -> bool:
        return self.tag in NODE_CENTERED

    def df(self, q: int, directed: bool = False) -> int:
        return design_df(self, q, directed=directed)


def _check_unit(values, tag):
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InputError(f"{tag}: rates must lie in [0, 1]")


def design_df(design: SamplingDesign, q: int, directed: bool = False) -> int:
    """Number K of free sampling parameters entering the ICL penalty."""
    if q < 1:
        raise InputError("block count must be >= 1")
    tag = design.tag
    if tag in ("dyad", "node", "snowball"):
        return 1
    if tag in ("double-standard", "degree"):
        return 2
    if tag == "block-dyad":
        return q * q if directed else q * (q + 1) // 2
    if tag == "block-node":
        return q
    # covar designs: intercept + one slope per covariate
    return int(design.psi.size)


def make_default_design(tag: str, q: int, n_covariates: int = 0, waves: int = 1) -> SamplingDesign:
    """Neutral starting parameters for the first M-step of a fit."""
    if tag in ("dyad", "node"):
        return SamplingDesign(tag, np.float64(0.5))
    if tag == "snowball":
        return SamplingDesign(tag, np.float64(0.5), waves=waves)
    if tag == "double-standard":
        return SamplingDesign(tag, np.array([0.5, 0.5]))
    if tag == "block-dyad":
        return SamplingDesign(tag, np.full((q, q), 0.5))
    if tag == "block-node":
        return SamplingDesign(tag, np.full(q, 0.5))
    if tag == "degree":
        return SamplingDesign(tag, np.zeros(2))
    if tag in ("covar-dyad", "covar-node"):
        return SamplingDesign(tag, np.zeros(1 + n_covariates))
    raise InputError(f"unknown sampling design {tag!r}")


@dataclass(frozen=True)
class ObservationEvent:
    """Realized observation pattern: the 0/1 mask R, plus node indicators V.

    ``nodes`` is only defined for node-centered designs, where observing a
    node reveals all dyads involving it, so R_ij = 1 whenever V_i or V_j.
    When reconstructed from data, a node counts as observed iff every dyad
    involving it is observed.
    """

    mask: np.ndarray
    nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=float)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        if self.nodes is not None:
            nodes = np.asarray(self.nodes, dtype=float)
            nodes.flags.writeable = False
            object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_adjacency(cls, adj: PartialAdjacency, tag: str) -> "ObservationEvent":
        mask = adj.observed_mask
        nodes = None
        if tag in NODE_CENTERED:
            off = ~np.eye(adj.n, dtype=bool)
            full_row = np.array([mask[i][off[i]].all() for i in range(adj.n)])
            if adj.directed:
                full_col = np.array([mask[:, i][off[:, i]].all() for i in range(adj.n)])
                full_row &= full_col
            nodes = full_row.astype(float)
        return cls(mask=mask, nodes=nodes)


# ---------------------------------------------------------------------------
# Mask generation
# ---------------------------------------------------------------------------

def observe_network(adj: PartialAdjacency, design: SamplingDesign,
                    clusters: Optional[Partition] = None,
                    covariates: Optional[CovariateSet] = None,
                    rng_seed: int = 0) -> PartialAdjacency:
    """Partially observe a fully observed network under a sampling design.

    Returns a copy of ``adj`` where every dyad left unobserved by the design
    is missing.  ``clusters`` is required by block designs and ``covariates``
    by covar designs.  The draw is a pure function of the seed.
    """
    if not adj.fully_observed:
        raise InputError("observe_network needs a fully observed network")
    tag = design.tag
    if needs_clusters(tag) and clusters is None:
        raise InputError(f"{tag} sampling requires a clustering")
    if needs_covariates(tag) and covariates is None:
        raise InputError(f"{tag} sampling requires covariates")
    rng = as_rng(rng_seed)
    n = adj.n

    if tag in NODE_CENTERED:
        v = _draw_nodes(adj, design, clusters, covariates, rng)
        keep = (v[:, None] + v[None, :]) > 0
        return adj.mask_where(keep)

    # dyad-centered: decide each canonical dyad independently
    rate = _dyad_rates(adj, design, clusters, covariates)
    u = rng.random((n, n))
    if not adj.directed:
        u = np.triu(u) + np.triu(u, 1).T
    keep = u < rate
    return adj.mask_where(keep)


def _dyad_rates(adj, design, clusters, covariates) -> np.ndarray:
    tag = design.tag
    n = adj.n
    if tag == "dyad":
        return np.full((n, n), float(design.psi))
    if tag == "double-standard":
        rho1, rho0 = design.psi
        y = adj.filled()
        return np.where(y > 0, rho1, rho0)
    if tag == "block-dyad":
        z = clusters.labels
        if design.psi.shape[0] != clusters.q:
            raise InputError("block-dyad rate matrix does not match the clustering")
        return design.psi[np.ix_(z, z)]
    if tag == "covar-dyad":
        x = transfer_covariates(covariates).dyadic_stack()
        if x.shape[0] != design.psi.size - 1:
            raise InputError("covar-dyad slope count does not match the covariates")
        intercept, kappa = design.psi[0], design.psi[1:]
        return logistic(intercept + np.tensordot(kappa, x, axes=1))
    raise InputError(f"{tag} is not dyad-centered")


def _draw_nodes(adj, design, clusters, covariates, rng) -> np.ndarray:
    tag = design.tag
    n = adj.n
    if tag == "node":
        return (rng.random(n) < float(design.psi)).astype(float)
    if tag == "block-node":
        z = clusters.labels
        if design.psi.size != clusters.q:
            raise InputError("block-node rate vector does not match the clustering")
        return (rng.random(n) < design.psi[z]).astype(float)
    if tag == "covar-node":
        x = covariates.nodal_matrix()
        if x.shape[1] != design.psi.size - 1:
            raise InputError("covar-node slope count does not match the covariates")
        rate = logistic(design.psi[0] + x @ design.psi[1:])
        return (rng.random(n) < rate).astype(float)
    if tag == "degree":
        a, b = design.psi
        rate = logistic(a + b * degrees(adj))
        return (rng.random(n) < rate).astype(float)
    if tag == "snowball":
        v = (rng.random(n) < float(design.psi)).astype(float)
        y = adj.filled()
        for _ in range(design.waves - 1):
            reached = (y @ v) > 0
            v = np.maximum(v, reached.astype(float))
        return v
    raise InputError(f"{tag} is not node-centered")


# ---------------------------------------------------------------------------
# Variational expectation of the sampling log-likelihood
# ---------------------------------------------------------------------------

def sampling_loglik(design: SamplingDesign, event: ObservationEvent, state,
                    adj: PartialAdjacency, covariates: Optional[CovariateSet] = None) -> float:
    """E[log p(R | .)] under the variational state.

    Unknown dyad values are replaced by their imputation probabilities nu;
    block designs average over the membership probabilities tau.
    """
    tag = design.tag
    scale = 1.0 if adj.directed else 0.5
    r = event.mask
    n = adj.n

    if tag == "dyad":
        n_obs = scale * r.sum()
        n_miss = adj.n_dyads - n_obs
        psi = clamp_prob(float(design.psi))
        return float(n_obs * np.log(psi) + n_miss * np.log1p(-psi))

    if tag in ("node", "snowball"):
        v = event.nodes
        psi = clamp_prob(float(design.psi))
        return float(v.sum() * np.log(psi) + (n - v.sum()) * np.log1p(-psi))

    if tag == "double-standard":
        rho1, rho0 = clamp_prob(design.psi)
        y = adj.filled(0.0) if adj.fully_observed else adj.filled(_nu_of(state, adj))
        obs = scale * np.sum(r * (y * np.log(rho1) + (1.0 - y) * np.log(rho0)))
        rc = _offdiag_complement(r)
        miss = scale * np.sum(rc * (y * np.log1p(-rho1) + (1.0 - y) * np.log1p(-rho0)))
        return float(obs + miss)

    if tag == "block-dyad":
        tau = state.tau
        lp = safe_log(design.psi)
        lq = np.log1p(-clamp_prob(design.psi))
        s1 = tau @ lp @ tau.T
        s0 = tau @ lq @ tau.T
        rc = _offdiag_complement(r)
        return float(scale * np.sum(r * s1 + rc * s0))

    if tag == "block-node":
        tau = state.tau
        v = event.nodes
        lp = safe_log(design.psi)
        lq = np.log1p(-clamp_prob(design.psi))
        return float(np.sum(tau * (v[:, None] * lp[None, :] + (1.0 - v)[:, None] * lq[None, :])))

    if tag == "covar-dyad":
        x = transfer_covariates(covariates).dyadic_stack()
        eta = design.psi[0] + np.tensordot(design.psi[1:], x, axes=1)
        p = clamp_prob(logistic(eta))
        rc = _offdiag_complement(r)
        return float(scale * np.sum(r * np.log(p) + rc * np.log1p(-p)))

    if tag == "covar-node":
        x = covariates.nodal_matrix()
        v = event.nodes
        p = clamp_prob(logistic(design.psi[0] + x @ design.psi[1:]))
        return float(np.sum(v * np.log(p) + (1.0 - v) * np.log1p(-p)))

    if tag == "degree":
        a, b = design.psi
        v = event.nodes
        d = _expected_degrees(adj, state)
        p = clamp_prob(logistic(a + b * d))
        return float(np.sum(v * np.log(p) + (1.0 - v) * np.log1p(-p)))

    raise InputError(f"unknown sampling design {tag!r}")


def _offdiag_complement(r: np.ndarray) -> np.ndarray:
    out = 1.0 - r
    np.fill_diagonal(out, 0.0)
    return out


def _nu_of(state, adj):
    nu = getattr(state, "nu", None)
    if nu is None and adj.n_missing:
        raise InputError("MNAR computation needs imputation probabilities for missing dyads")
    return nu


def _expected_degrees(adj, state) -> np.ndarray:
    if adj.fully_observed:
        return degrees(adj)
    return degrees(adj, impute=_nu_of(state, adj))


# ---------------------------------------------------------------------------
# M-step updates of psi
# ---------------------------------------------------------------------------

def update_psi(design: SamplingDesign, event: ObservationEvent, state,
               adj: PartialAdjacency, covariates: Optional[CovariateSet] = None
               ) -> tuple[SamplingDesign, tuple[str, ...]]:
    """Maximize the expected sampling log-likelihood in psi.

    Closed forms everywhere except the logistic designs, which run a damped
    Newton fit warm-started at the current parameters.  Components with an
    empty denominator keep their previous value; the returned flags name
    them for the fit monitoring.
    """
    tag = design.tag
    r = event.mask
    n = adj.n
    flags: tuple[str, ...] = ()

    if tag == "dyad":
        scale = 1.0 if adj.directed else 0.5
        return SamplingDesign(tag, np.float64(scale * r.sum() / adj.n_dyads)), flags

    if tag in ("node", "snowball"):
        # Wave labels are not recoverable from the mask, so the snowball rate
        # falls back to the observed-node proportion (MAR: theta unaffected).
        rate = np.float64(event.nodes.sum() / n)
        return SamplingDesign(tag, rate, waves=design.waves), flags

    if tag == "double-standard":
        y = adj.filled(0.0) if adj.fully_observed else adj.filled(_nu_of(state, adj))
        rc = _offdiag_complement(r)
        # r and rc carry a zero diagonal, so the (1 - y) terms never count self-dyads
        obs_edge = np.sum(r * y)
        obs_non = np.sum(r * (1.0 - y))
        miss_edge = np.sum(rc * y)
        miss_non = np.sum(rc * (1.0 - y))
        rho1, rho0 = design.psi
        if obs_edge + miss_edge > 0:
            rho1 = obs_edge / (obs_edge + miss_edge)
        else:
            flags += ("double-standard: no edge mass, rho1 kept",)
        if obs_non + miss_non > 0:
            rho0 = obs_non / (obs_non + miss_non)
        else:
            flags += ("double-standard: no non-edge mass, rho0 kept",)
        return SamplingDesign(tag, np.array([rho1, rho0])), flags

    if tag == "block-dyad":
        tau = state.tau
        off = np.ones((n, n)) - np.eye(n)
        num = tau.T @ r @ tau
        den = tau.T @ off @ tau
        psi = np.array(design.psi)
        psi = np.where(den > 0, np.divide(num, den, out=np.zeros_like(num), where=den > 0), psi)
        if not adj.directed:
            psi = 0.5 * (psi + psi.T)
        psi = np.clip(psi, 0.0, 1.0)
        if np.any(den <= 0):
            flags += ("block-dyad: empty block pair, rate kept",)
        return SamplingDesign(tag, psi), flags

    if tag == "block-node":
        tau = state.tau
        v = event.nodes
        num = tau.T @ v
        den = tau.sum(axis=0)
        psi = np.array(design.psi)
        psi = np.where(den > 0, np.divide(num, den, out=np.zeros_like(num), where=den > 0), psi)
        psi = np.clip(psi, 0.0, 1.0)
        if np.any(den <= 0):
            flags += ("block-node: empty block, rate kept",)
        return SamplingDesign(tag, psi), flags

    if tag == "covar-dyad":
        x = transfer_covariates(covariates).dyadic_stack()
        rows, cols = _canonical_pairs(n, adj.directed)
        design_mat = np.column_stack([np.ones(rows.size)] + [xk[rows, cols] for xk in x])
        coef, _ = fit_logistic(design_mat, r[rows, cols], start=design.psi)
        return SamplingDesign(tag, coef), flags

    if tag == "covar-node":
        x = covariates.nodal_matrix()
        design_mat = np.column_stack([np.ones(n), x])
        coef, _ = fit_logistic(design_mat, event.nodes, start=design.psi)
        return SamplingDesign(tag, coef), flags

    if tag == "degree":
        d = _expected_degrees(adj, state)
        design_mat = np.column_stack([np.ones(n), d])
        coef, _ = fit_logistic(design_mat, event.nodes, start=design.psi)
        return SamplingDesign(tag, coef), flags

    raise InputError(f"unknown sampling design {tag!r}")


def _canonical_pairs(n: int, directed: bool) -> tuple[np.ndarray, np.ndarray]:
    if directed:
        keep = ~np.eye(n, dtype=bool)
    else:
        keep = np.triu(np.ones((n, n), dtype=bool), 1)
    return np.nonzero(keep)


# ---------------------------------------------------------------------------
# VE-step ingredients
# ---------------------------------------------------------------------------

def tau_static_terms(design: SamplingDesign, event: ObservationEvent, n: int) -> Optional[np.ndarray]:
    """n x Q additive log terms for the tau update that do not couple nodes.

    Only block-node sampling contributes: V_i log psi_q + (1-V_i) log(1-psi_q).
    """
    if design.tag != "block-node":
        return None
    v = event.nodes
    lp = safe_log(design.psi)
    lq = np.log1p(-clamp_prob(design.psi))
    return v[:, None] * lp[None, :] + (1.0 - v)[:, None] * lq[None, :]


def tau_pairwise_logs(design: SamplingDesign) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """(log psi, log(1-psi)) matrices for designs whose mask couples block pairs."""
    if design.tag != "block-dyad":
        return None
    return safe_log(design.psi), np.log1p(-clamp_prob(design.psi))


def nu_logit_correction(design: SamplingDesign, event: ObservationEvent,
                        adj: PartialAdjacency, nu: np.ndarray):
    """Additive logit-scale correction for the imputation update of missing dyads.

    Double-standard sampling shifts every missing dyad by
    log((1-rho1)/(1-rho0)); degree sampling propagates the sensitivity of the
    node observation rates to the expected degrees.  Other designs leave the
    imputation at the model prediction.
    """
    tag = design.tag
    if tag == "double-standard":
        rho1, rho0 = clamp_prob(design.psi)
        return float(np.log1p(-rho1) - np.log1p(-rho0))
    if tag == "degree":
        a, b = design.psi
        d = degrees(adj, impute=nu) if adj.n_missing else degrees(adj)
        g = logistic(a + b * d)
        mi, mj = adj.missing_pairs
        v = event.nodes
        return b * ((v[mi] - g[mi]) + (v[mj] - g[mj]))
    return 0.0
