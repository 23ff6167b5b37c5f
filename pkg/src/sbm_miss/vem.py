"""Variational EM for the SBM under partial observation.

The latent variables are the block memberships and, for MNAR designs, the
missing dyads themselves.  The variational family factorizes completely:
multinomial rows tau for memberships, independent Bernoulli means nu for the
missing dyads.  The VE step runs a fixed-point update of (tau, nu); tau rows
are updated sequentially (each row update is an exact coordinate maximizer of
the bound, which keeps the ELBO monotone), nu jointly (the bound separates
over missing dyads for every design except degree sampling, whose coupled
update is safeguarded by backtracking).  The M step has closed forms for
(alpha, pi) and the block/rate designs, and damped Newton fits for the
logistic ones.

Under MAR designs the missing dyads drop from the objective: the SBM factor
restricts to observed dyads and nu is only materialized on demand for
imputation.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_expit, xlogy

from .errors import InputError, NumericalError
from .network import (
    CovariateSet,
    PartialAdjacency,
    Partition,
    clamp_prob,
    logistic,
    safe_log,
    safe_logit,
    transfer_covariates,
)
from .sampling import (
    AVAILABLE_SAMPLINGS,
    MISSINGNESS_CLASS,
    ObservationEvent,
    SamplingDesign,
    centering,
    design_df,
    make_default_design,
    needs_covariates,
    nu_logit_correction,
    sampling_loglik,
    tau_pairwise_logs,
    tau_static_terms,
    update_psi,
)
from .sbm import (
    SbmParams,
    dyad_covariate_effect,
    expected_loglik_sbm,
    fit_covariate_connectivity,
    kmeans,
    predict_probabilities,
    spectral_init,
)

INIT_SOFTENING = 1e-3
ELBO_SLACK = 1e-8


def derive_seed(base: int, *keys: int) -> np.random.SeedSequence:
    """Stable child seed; identical inputs give identical streams everywhere."""
    return np.random.SeedSequence(entropy=int(base), spawn_key=tuple(int(k) for k in keys))


@dataclass(frozen=True)
class VariationalState:
    """Variational parameters: membership probabilities and imputation means.

    ``nu`` is aligned with the canonical missing-dyad order of the network it
    was fitted on; it is None for MAR fits, where the missing dyads play no
    role in the objective.
    """

    tau: np.ndarray
    nu: Optional[np.ndarray] = None

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        tau.flags.writeable = False
        object.__setattr__(self, "tau", tau)
        if tau.ndim != 2:
            raise InputError("tau must be an n x Q matrix")
        if np.any(tau < 0) or np.max(np.abs(tau.sum(axis=1) - 1.0)) > 1e-8:
            raise InputError("tau rows must be probability vectors")
        if self.nu is not None:
            nu = np.asarray(self.nu, dtype=float)
            nu.flags.writeable = False
            object.__setattr__(self, "nu", nu)
            if np.any(nu < 0) or np.any(nu > 1):
                raise InputError("nu values must lie in [0, 1]")

    @property
    def q(self) -> int:
        return self.tau.shape[1]

    def memberships(self) -> np.ndarray:
        return self.tau.argmax(axis=1)

    def nu_map(self, adj: PartialAdjacency) -> dict[tuple[int, int], float]:
        if self.nu is None:
            return {}
        return dict(zip(adj.missing_dyads(), self.nu.tolist()))


@dataclass
class ControlOptions:
    """Tuning knobs of the estimation loop."""

    threshold: float = 1e-2
    max_iter: int = 50
    fix_point_iter: int = 3
    exploration: str = "both"
    iterates: int = 1
    use_cov: bool = False
    trace: bool = False
    rng_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.threshold <= 0:
            raise InputError("threshold must be positive")
        if self.max_iter < 1 or self.fix_point_iter < 1 or self.iterates < 1 or self.workers < 1:
            raise InputError("iteration counts must be positive")
        if self.exploration not in ("forward", "backward", "both", "none"):
            raise InputError("exploration must be forward, backward, both or none")


@dataclass(frozen=True)
class MonitorRow:
    iter: int
    elbo: float
    delta: float
    flags: tuple[str, ...] = ()


def soften_partition(partition: Partition, q: int, eps: float = INIT_SOFTENING) -> np.ndarray:
    """Hard labels to near-hard tau; exact zeros would freeze the fixed point."""
    n = partition.n
    if q == 1:
        return np.ones((n, 1))
    tau = np.full((n, q), eps)
    tau[np.arange(n), partition.labels] = 1.0 - (q - 1) * eps
    return tau


def icl_penalty(q: int, k: int, n: int, centering_kind: str,
                directed: bool = False, n_covariates: int = 0) -> float:
    """Model-selection penalty; sampling parameters are charged at the scale
    of their data (dyad pairs or nodes)."""
    n_pairs = n * (n - 1) if directed else n * (n - 1) / 2
    conn = (q * q if directed else q * (q + 1) / 2) + n_covariates
    if centering_kind == "dyad-centered":
        return float((k + conn) * math.log(n_pairs) + (q - 1) * math.log(n))
    if centering_kind == "node-centered":
        return float(conn * math.log(n_pairs) + (k + q - 1) * math.log(n))
    raise InputError(f"unknown centering {centering_kind!r}")


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class _Engine:
    """Per-fit precomputations and the VE/M/ELBO primitives.

    ``tag`` may be None for a pure SBM fit on the observed part of the data
    (no sampling factor in the objective).
    """

    def __init__(self, adj: PartialAdjacency, tag: Optional[str],
                 covariates: Optional[CovariateSet], use_cov: bool):
        if tag is not None and tag not in AVAILABLE_SAMPLINGS:
            raise InputError(f"unknown sampling design {tag!r}")
        if tag is not None and needs_covariates(tag) and covariates is None:
            raise InputError(f"{tag} sampling requires covariates")
        if use_cov and covariates is None:
            raise InputError("use_cov requires covariates")
        self.adj = adj
        self.tag = tag
        self.n = adj.n
        self.directed = adj.directed
        self.scale = 1.0 if adj.directed else 0.5
        self.mnar = tag is not None and MISSINGNESS_CLASS[tag] == "MNAR"
        self.event = ObservationEvent.from_adjacency(adj, tag) if tag is not None else \
            ObservationEvent(mask=adj.observed_mask)
        self.r = np.array(adj.observed_mask)
        self.off = np.ones((self.n, self.n)) - np.eye(self.n)
        self.w = self.off if self.mnar else self.r
        self.mi, self.mj = adj.missing_pairs
        self.use_cov = use_cov
        self.covariates_raw = covariates
        self.covariates = transfer_covariates(covariates) if covariates is not None else None
        self.sbm_covariates = self.covariates if use_cov else None

    # -- initialization ------------------------------------------------------

    def initial_state(self, init: Partition, q: int) -> VariationalState:
        tau = soften_partition(init, q)
        nu = None
        if self.mnar:
            nu = np.full(self.mi.size, float(clamp_prob(self.adj.observed_density)))
        return VariationalState(tau=tau, nu=nu)

    # -- M step ---------------------------------------------------------------

    def m_step(self, state: VariationalState, prev: Optional[SbmParams],
               design: Optional[SamplingDesign]):
        tau = state.tau
        q = tau.shape[1]
        alpha = tau.mean(axis=0)
        flags: tuple[str, ...] = ()
        if self.use_cov:
            start = (prev.gamma, prev.beta) if prev is not None and prev.variant == "covariate" else None
            gamma, beta = fit_covariate_connectivity(self.adj, state, self.covariates, start=start)
            params = SbmParams(alpha=alpha, gamma=gamma, beta=beta, directed=self.directed)
        else:
            y = self.adj.filled(state.nu) if self.mnar else self.adj.filled(0.0)
            num = tau.T @ (self.w * y) @ tau
            den = tau.T @ self.w @ tau
            fallback = prev.pi if prev is not None else np.full((q, q), self.adj.observed_density)
            with np.errstate(invalid="ignore", divide="ignore"):
                pi = np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)
            if np.any(den <= 0):
                flags += ("empty block pair: pi entry kept",)
            if not self.directed:
                pi = 0.5 * (pi + pi.T)
            pi = np.clip(pi, 0.0, 1.0)
            params = SbmParams(alpha=alpha, pi=pi, directed=self.directed)
        new_design = design
        if self.tag is not None:
            new_design, psi_flags = update_psi(design, self.event, state, self.adj, self.covariates_raw)
            flags += psi_flags
        return params, new_design, flags

    # -- VE step ---------------------------------------------------------------

    def ve_step(self, params: SbmParams, design: Optional[SamplingDesign],
                state: VariationalState, rounds: int) -> VariationalState:
        tau = np.array(state.tau)
        nu = np.array(state.nu) if state.nu is not None else None
        n, q = tau.shape
        log_alpha = safe_log(params.alpha)
        static = tau_static_terms(design, self.event, n) if design is not None else None
        pair_logs = tau_pairwise_logs(design) if design is not None else None
        plain = params.variant == "plain"
        if plain:
            la = safe_log(params.pi)
            lb = np.log1p(-clamp_prob(params.pi))
            cov_effect = None
        else:
            cov_effect = dyad_covariate_effect(params, self.sbm_covariates)

        for _ in range(rounds):
            y = self.adj.filled(nu) if self.mnar else self.adj.filled(0.0)
            m1 = self.w * y
            for i in range(n):
                if plain:
                    u1 = m1[i] @ tau
                    uw = self.w[i] @ tau
                    s = log_alpha + la @ u1 + lb @ (uw - u1)
                    if self.directed:
                        u1c = m1[:, i] @ tau
                        uwc = self.w[:, i] @ tau
                        s = s + la.T @ u1c + lb.T @ (uwc - u1c)
                else:
                    s = log_alpha + self._covariate_row_terms(params, cov_effect, tau, m1, i)
                if pair_logs is not None:
                    lpsi, lpsic = pair_logs
                    ur = self.r[i] @ tau
                    uoff = self.off[i] @ tau
                    s = s + lpsi @ ur + lpsic @ (uoff - ur)
                    if self.directed:
                        urc = self.r[:, i] @ tau
                        uoffc = self.off[:, i] @ tau
                        s = s + lpsi.T @ urc + lpsic.T @ (uoffc - urc)
                if static is not None:
                    s = s + static[i]
                if not np.isfinite(s).all():
                    raise NumericalError(f"non-finite membership update at node {i}")
                s -= s.max()
                e = np.exp(s)
                tau[i] = e / e.sum()
            if self.mnar and self.mi.size:
                nu = self._nu_update(params, design, tau, nu, cov_effect)
        return VariationalState(tau=tau, nu=nu)

    def _covariate_row_terms(self, params, cov_effect, tau, m1, i):
        # eta[q, l, j] = gamma[q, l] + beta . x_ij, row i against all nodes j
        q = params.q
        eta = params.gamma[:, :, None] + cov_effect[i][None, None, :]
        loga = log_expit(eta)
        logb = log_expit(-eta)
        p1 = tau.T * m1[i][None, :]                       # (q, n): tau_jl * w_ij y_ij
        p0 = tau.T * (self.w[i] - m1[i])[None, :]
        s = np.tensordot(loga, p1, axes=([1, 2], [0, 1])) + np.tensordot(logb, p0, axes=([1, 2], [0, 1]))
        if self.directed:
            eta_in = params.gamma.T[:, :, None] + cov_effect[:, i][None, None, :]
            p1c = tau.T * m1[:, i][None, :]
            p0c = tau.T * (self.w[:, i] - m1[:, i])[None, :]
            s = s + np.tensordot(log_expit(eta_in), p1c, axes=([1, 2], [0, 1])) \
                + np.tensordot(log_expit(-eta_in), p0c, axes=([1, 2], [0, 1]))
        return s

    def _nu_update(self, params, design, tau, nu, cov_effect):
        mi, mj = self.mi, self.mj
        if params.variant == "plain":
            base = ((tau[mi] @ safe_logit(params.pi)) * tau[mj]).sum(axis=1)
        else:
            base = ((tau[mi] @ params.gamma) * tau[mj]).sum(axis=1) + cov_effect[mi, mj]
        corr = nu_logit_correction(design, self.event, self.adj, nu)
        proposed = logistic(base + corr)
        if design.tag != "degree":
            return proposed
        # Degree sampling couples the missing dyads through the expected
        # degrees; accept the fixed-point proposal only if it does not lower
        # the nu-dependent part of the bound.
        current = self._nu_objective(base, nu, design)
        step = 1.0
        for _ in range(6):
            cand = nu + step * (proposed - nu)
            if self._nu_objective(base, cand, design) >= current - 1e-12:
                return cand
            step *= 0.5
        return nu

    def _nu_objective(self, base, nu, design) -> float:
        from .network import degrees as _degrees

        a, b = design.psi
        d = _degrees(self.adj, impute=nu)
        g = clamp_prob(logistic(a + b * d))
        v = self.event.nodes
        value = float(base @ nu)
        value += float(np.sum(v * np.log(g) + (1.0 - v) * np.log1p(-g)))
        value += float(-(xlogy(nu, nu) + xlogy(1.0 - nu, 1.0 - nu)).sum())
        return value

    # -- objective --------------------------------------------------------------

    def elbo_parts(self, params: SbmParams, design: Optional[SamplingDesign],
                   state: VariationalState) -> tuple[float, float, float]:
        """(elbo, SBM expectation, sampling expectation)."""
        sbm_state = state if self.mnar else VariationalState(tau=state.tau, nu=None)
        vexpec = expected_loglik_sbm(params, self.adj, sbm_state, self.sbm_covariates)
        s_ll = 0.0
        if design is not None:
            s_ll = sampling_loglik(design, self.event, state, self.adj, self.covariates_raw)
        ent = float(-xlogy(state.tau, state.tau).sum())
        if self.mnar and state.nu is not None and state.nu.size:
            nu = state.nu
            ent += float(-(xlogy(nu, nu) + xlogy(1.0 - nu, 1.0 - nu)).sum())
        return vexpec + s_ll + ent, vexpec, s_ll


# ---------------------------------------------------------------------------
# Public spec surface for single steps
# ---------------------------------------------------------------------------

def _engine_for(adj, design, covariates, use_cov):
    tag = design.tag if isinstance(design, SamplingDesign) else design
    return _Engine(adj, tag, covariates, use_cov)


def ve_step(adj: PartialAdjacency, design: Optional[SamplingDesign], params: SbmParams,
            state: VariationalState, covariates: Optional[CovariateSet] = None,
            fix_point_iter: int = 3) -> VariationalState:
    """Fixed-point update of (tau, nu) at fixed model parameters."""
    eng = _engine_for(adj, design, covariates, params.variant == "covariate")
    return eng.ve_step(params, design, state, fix_point_iter)


def m_step(adj: PartialAdjacency, design: Optional[SamplingDesign], state: VariationalState,
           covariates: Optional[CovariateSet] = None, use_cov: bool = False,
           prev_params: Optional[SbmParams] = None):
    """Maximize the bound in (theta, psi) at a fixed variational state.

    Returns (SbmParams, SamplingDesign, flags); flags name any component that
    was kept for lack of mass.
    """
    eng = _engine_for(adj, design, covariates, use_cov)
    return eng.m_step(state, prev_params, design)


def elbo(adj: PartialAdjacency, design: Optional[SamplingDesign], params: SbmParams,
         state: VariationalState, covariates: Optional[CovariateSet] = None) -> float:
    """Variational lower bound: expected complete log-likelihood plus entropies."""
    eng = _engine_for(adj, design, covariates, params.variant == "covariate")
    return eng.elbo_parts(params, design, state)[0]


# ---------------------------------------------------------------------------
# Fit containers
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    """One fitted model at a fixed number of blocks."""

    q: int
    adj: PartialAdjacency
    design: Optional[SamplingDesign]
    params: SbmParams
    state: VariationalState
    covariates: Optional[CovariateSet]
    use_cov: bool
    elbo: float
    vexpec: float
    sampling_ll: float
    penalty: float
    icl: float
    elbo_trace: list[float]
    vexpec_trace: list[float]
    monitoring: list[MonitorRow]
    converged: bool

    @property
    def memberships(self) -> np.ndarray:
        return self.state.memberships()

    def imputed_network(self) -> np.ndarray:
        return impute(self)

    def to_json(self) -> dict:
        def real(x):
            return float(x) if math.isfinite(x) else None

        design_json = None
        if self.design is not None:
            design_json = {"tag": self.design.tag, "psi": np.atleast_1d(self.design.psi).tolist()}
            if self.design.tag == "snowball":
                design_json["waves"] = self.design.waves
        sbm = {"alpha": self.params.alpha.tolist()}
        if self.params.variant == "plain":
            sbm["pi"] = self.params.pi.tolist()
        else:
            sbm["gamma"] = self.params.gamma.tolist()
            sbm["beta"] = self.params.beta.tolist()
        return {
            "Q": self.q,
            "directed": self.adj.directed,
            "use_cov": self.use_cov,
            "design": design_json,
            "sbm": sbm,
            "memberships": (self.memberships + 1).tolist(),
            "tau": self.state.tau.tolist(),
            "icl": real(self.icl),
            "penalty": real(self.penalty),
            "vexpec": real(self.vexpec),
            "sampling_loglik": real(self.sampling_ll),
            "elbo_trace": [real(v) for v in self.elbo_trace],
            "monitoring": [
                {"iter": row.iter, "elbo": real(row.elbo), "delta": real(row.delta)}
                for row in self.monitoring
            ],
            "converged": self.converged,
        }


@dataclass
class FitCollection:
    """Fits over a range of block counts, ordered by Q."""

    models: list[FitResult]
    adj: PartialAdjacency
    sampling: Optional[str]
    covariates: Optional[CovariateSet]
    control: ControlOptions

    @property
    def v_blocks(self) -> list[int]:
        return [fit.q for fit in self.models]

    @property
    def icl(self) -> np.ndarray:
        return np.array([fit.icl for fit in self.models])

    @property
    def best_model(self) -> FitResult:
        icl = self.icl
        return self.models[int(np.argmin(icl))]  # argmin takes the first (smallest Q) on ties

    def model_for(self, q: int) -> FitResult:
        for fit in self.models:
            if fit.q == q:
                return fit
        raise InputError(f"no model with {q} blocks in the collection")

    def optimization_status(self) -> list[dict]:
        rows = []
        for fit in self.models:
            for row in fit.monitoring:
                rows.append({"iter": row.iter, "Q": fit.q, "elbo": row.elbo, "delta": row.delta})
        return rows

    def to_json(self) -> dict:
        return {
            "sampling": self.sampling,
            "vBlocks": self.v_blocks,
            "ICL": [float(v) for v in self.icl],
            "bestQ": self.best_model.q,
            "models": [fit.to_json() for fit in self.models],
        }


# ---------------------------------------------------------------------------
# Single fit
# ---------------------------------------------------------------------------

def _param_delta(prev: SbmParams, new: SbmParams) -> float:
    if new.variant == "plain":
        return float(np.max(np.abs(new.pi - prev.pi)))
    return max(float(np.max(np.abs(new.gamma - prev.gamma))),
               float(np.max(np.abs(new.beta - prev.beta))))


def fit_single(adj: PartialAdjacency, q: int, sampling,
               covariates: Optional[CovariateSet] = None,
               init: Optional[Partition] = None,
               control: Optional[ControlOptions] = None,
               waves: int = 1) -> FitResult:
    """Fit one SBM with q blocks under a sampling design.

    ``sampling`` is a design tag, a SamplingDesign providing starting
    parameters, or None for a pure SBM fit on the observed dyads.  VE and M
    steps alternate until both the bound and the connection parameters move
    less than the threshold.  Deterministic given the control seed.
    """
    control = control or ControlOptions()
    if q < 1:
        raise InputError("block count must be >= 1")
    start_design = None
    if isinstance(sampling, SamplingDesign):
        tag, start_design, waves = sampling.tag, sampling, sampling.waves
    else:
        tag = sampling
    eng = _Engine(adj, tag, covariates, control.use_cov)
    if init is None:
        init = spectral_init(adj, q, derive_seed(control.rng_seed, q, 0))
    if init.n != adj.n:
        raise InputError("initial partition does not match the node count")
    if init.q > q:
        raise InputError("initial partition has more blocks than requested")
    init = Partition(labels=init.labels, q=q)

    try:
        state = eng.initial_state(init, q)
        if start_design is None and tag is not None:
            n_cov = 0
            if tag == "covar-node":
                n_cov = covariates.m_nodal
            elif tag == "covar-dyad":
                n_cov = eng.covariates.m
            start_design = make_default_design(tag, q, n_covariates=n_cov, waves=waves)
        params, design, flags = eng.m_step(state, None, start_design)
        current, vexpec, s_ll = eng.elbo_parts(params, design, state)
        monitoring = [MonitorRow(0, current, math.inf, flags)]
        elbo_trace, vexpec_trace = [current], [vexpec]
        converged = False
        for it in range(1, control.max_iter + 1):
            state = eng.ve_step(params, design, state, control.fix_point_iter)
            new_params, design, flags = eng.m_step(state, params, design)
            delta = _param_delta(params, new_params)
            params = new_params
            value, vexpec, s_ll = eng.elbo_parts(params, design, state)
            monitoring.append(MonitorRow(it, value, delta, flags))
            elbo_trace.append(value)
            vexpec_trace.append(vexpec)
            if not math.isfinite(value):
                raise NumericalError(f"bound diverged at iteration {it}")
            if control.trace:
                print(f"[fit q={q}] iter {it}: elbo={value:.6f} delta={delta:.3g}")
            if abs(value - current) < control.threshold and delta < control.threshold:
                current = value
                converged = True
                break
            current = value
    except NumericalError as exc:
        raise NumericalError(f"Q={q}: {exc}") from exc

    if tag is not None:
        k = design_df(design, q, directed=adj.directed)
        centering_kind = centering(tag)
    else:
        k = 0
        centering_kind = "dyad-centered"
    n_cov_pen = eng.covariates.m if control.use_cov else 0
    penalty = icl_penalty(q, k, adj.n, centering_kind, adj.directed, n_cov_pen)
    icl = -2.0 * (vexpec + s_ll) + penalty
    return FitResult(
        q=q, adj=adj, design=design, params=params, state=state,
        covariates=covariates, use_cov=control.use_cov,
        elbo=current, vexpec=vexpec, sampling_ll=s_ll,
        penalty=penalty, icl=icl,
        elbo_trace=elbo_trace, vexpec_trace=vexpec_trace,
        monitoring=monitoring, converged=converged,
    )


def icl(fit: FitResult) -> float:
    """Recompute the ICL of a fitted model from its stored pieces."""
    return -2.0 * (fit.vexpec + fit.sampling_ll) + fit.penalty


def fit_from_json(adj: PartialAdjacency, data: dict,
                  covariates: Optional[CovariateSet] = None) -> FitResult:
    """Rebuild a FitResult from its JSON form and the network it was fitted on.

    The imputation means are not serialized; for MNAR fits they are
    recomputed at their fixed point given the stored tau and parameters.
    """
    try:
        sbm = dict(data["sbm"])
        q = int(data["Q"])
        directed = bool(data.get("directed", False))
        use_cov = bool(data.get("use_cov", False))
        if "pi" in sbm:
            params = SbmParams(alpha=np.array(sbm["alpha"]), pi=np.array(sbm["pi"]),
                               directed=directed)
        else:
            params = SbmParams(alpha=np.array(sbm["alpha"]), gamma=np.array(sbm["gamma"]),
                               beta=np.array(sbm["beta"]), directed=directed)
        design = None
        if data.get("design") is not None:
            tag = data["design"]["tag"]
            psi = np.array(data["design"]["psi"], dtype=float)
            if tag in ("dyad", "node", "snowball"):
                psi = psi.reshape(-1)[0]
            design = SamplingDesign(tag, psi, waves=int(data["design"].get("waves", 1)))
        tau = np.array(data["tau"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed fit JSON: {exc}") from None
    if tau.shape != (adj.n, q):
        raise InputError("fit JSON does not match the network dimensions")
    eng = _Engine(adj, design.tag if design is not None else None, covariates, use_cov)
    nu = None
    if eng.mnar:
        nu = np.full(adj.n_missing, float(clamp_prob(adj.observed_density)))
        cov_effect = None
        if params.variant == "covariate":
            cov_effect = dyad_covariate_effect(params, eng.sbm_covariates)
        for _ in range(25):
            new = eng._nu_update(params, design, tau, nu, cov_effect)
            moved = float(np.max(np.abs(new - nu))) if nu.size else 0.0
            nu = new
            if moved < 1e-12:
                break
    state = VariationalState(tau=tau, nu=nu)
    value, vexpec, s_ll = eng.elbo_parts(params, design, state)
    penalty = float(data.get("penalty", 0.0))
    icl_value = float(data.get("icl", -2.0 * (vexpec + s_ll) + penalty))
    return FitResult(
        q=q, adj=adj, design=design, params=params, state=state,
        covariates=covariates, use_cov=use_cov,
        elbo=value, vexpec=vexpec, sampling_ll=s_ll,
        penalty=penalty, icl=icl_value,
        elbo_trace=[value], vexpec_trace=[vexpec],
        monitoring=[MonitorRow(0, value, math.inf)], converged=bool(data.get("converged", True)),
    )


# ---------------------------------------------------------------------------
# Imputation
# ---------------------------------------------------------------------------

def impute(fit: FitResult) -> np.ndarray:
    """Dense real matrix: observed dyads copied, missing ones imputed.

    MNAR fits carry the imputation means directly; MAR fits fill in the
    model's predicted connection probabilities post hoc.  Diagonal is 0.
    """
    out = np.array(fit.adj.matrix)
    np.fill_diagonal(out, 0.0)
    mi, mj = fit.adj.missing_pairs
    if mi.size:
        if fit.state.nu is not None:
            values = fit.state.nu
        else:
            pred = predict_probabilities(fit.params, fit.state,
                                         fit.covariates if fit.use_cov else None)
            values = pred[mi, mj]
        out[mi, mj] = values
        if not fit.adj.directed:
            out[mj, mi] = values
    return out


# ---------------------------------------------------------------------------
# Estimation over a range of block counts, with exploration
# ---------------------------------------------------------------------------

def _fit_task(args):
    adj, q, sampling, covariates, init, control, waves = args
    return fit_single(adj, q, sampling, covariates=covariates, init=init,
                      control=control, waves=waves)


def estimate_miss_sbm(adj: PartialAdjacency, v_blocks: Sequence[int], sampling,
                      covariates: Optional[CovariateSet] = None,
                      control: Optional[ControlOptions] = None,
                      inits: Optional[Sequence[Partition]] = None,
                      waves: int = 1) -> FitCollection:
    """Fit the SBM for every block count in ``v_blocks`` and explore.

    Each block count starts from spectral clustering (or a user-supplied
    partition), then split/merge exploration reinitializes neighbors per the
    control options and keeps every improvement in ICL.  Fits for different
    block counts may run in parallel workers; results are byte-identical
    regardless of the worker count because every fit seeds from
    (rng_seed, Q).
    """
    control = control or ControlOptions()
    qs = sorted(set(int(q) for q in v_blocks))
    if not qs:
        raise InputError("vBlocks must not be empty")
    if qs[0] < 1:
        raise InputError("block counts must be >= 1")
    if inits is not None and len(inits) != len(qs):
        raise InputError("one initial partition per block count is required")
    tasks = [
        (adj, q, sampling, covariates, None if inits is None else inits[idx], control, waves)
        for idx, q in enumerate(qs)
    ]
    if control.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=control.workers) as pool:
            models = list(pool.map(_fit_task, tasks))
    else:
        models = [_fit_task(t) for t in tasks]
    tag = sampling.tag if isinstance(sampling, SamplingDesign) else sampling
    collection = FitCollection(models=models, adj=adj, sampling=tag,
                               covariates=covariates, control=control)
    if control.exploration != "none" and len(qs) > 1:
        for _ in range(control.iterates):
            if control.exploration in ("forward", "both"):
                collection = explore(collection, "forward", control)
            if control.exploration in ("backward", "both"):
                collection = explore(collection, "backward", control)
    return collection


def explore(collection: FitCollection, direction: str,
            control: Optional[ControlOptions] = None) -> FitCollection:
    """One split (forward) or merge (backward) pass over the collection.

    Forward walks the block counts upward, refitting each from every
    single-block split of its (Q-1)-neighbor; backward walks downward with
    every pairwise merge of the (Q+1)-neighbor, closest connectivity rows
    first.  The best ICL always wins, so no entry can get worse.
    """
    control = control or collection.control
    if direction not in ("forward", "backward"):
        raise InputError("direction must be 'forward' or 'backward'")
    models = {fit.q: fit for fit in collection.models}
    qs = sorted(models)
    order = qs if direction == "forward" else list(reversed(qs))
    for q in order:
        neighbor = q - 1 if direction == "forward" else q + 1
        if neighbor not in models or q < 1 or (direction == "forward" and q < 2):
            continue
        base = models[neighbor]
        candidates = (_split_candidates(base, q, control) if direction == "forward"
                      else _merge_candidates(base, q))
        for labels in candidates:
            candidate = fit_single(collection.adj, q, collection.sampling,
                                   covariates=collection.covariates,
                                   init=Partition(labels=labels, q=q),
                                   control=control)
            if candidate.icl < models[q].icl:
                models[q] = candidate
    return FitCollection(models=[models[q] for q in qs], adj=collection.adj,
                         sampling=collection.sampling, covariates=collection.covariates,
                         control=collection.control)


def _split_candidates(base: FitResult, q_target: int, control: ControlOptions):
    """Split each block of the (q_target-1)-fit in two, by 2-means on the
    block's rows of the imputed adjacency restricted to the block's columns."""
    z = base.memberships
    imputed = base.imputed_network()
    for block in range(base.q):
        members = np.nonzero(z == block)[0]
        if members.size < 2:
            continue
        sub = imputed[np.ix_(members, members)]
        if np.allclose(sub, sub[0]):
            halves = np.arange(members.size) % 2
        else:
            rng = np.random.default_rng(derive_seed(control.rng_seed, q_target, 17, block))
            halves = kmeans(sub, 2, rng)
            if len(np.unique(halves)) < 2:
                halves = np.arange(members.size) % 2
        labels = np.array(z)
        labels[members[halves == 1]] = q_target - 1
        yield labels


def _merge_candidates(base: FitResult, q_target: int):
    """Merge each block pair of the (q_target+1)-fit, closest rows first."""
    z = base.memberships
    conn = base.params.connectivity
    pairs = []
    for a in range(base.q):
        for b in range(a + 1, base.q):
            dist = float(np.linalg.norm(conn[a] - conn[b]))
            pairs.append((dist, a, b))
    pairs.sort()
    for _, a, b in pairs:
        labels = np.array(z)
        labels[labels == b] = a
        labels[labels > b] -= 1
        yield labels
