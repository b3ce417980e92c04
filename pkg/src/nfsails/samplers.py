"""Sampling from a trained flow: naive push-forward and latent-space MCMC.

Naive sampling pushes latent Gaussian draws through the map and inherits all
the mass the flow puts on low-density bridges between modes. The latent-space
sampler (NF-SAILS) instead runs a Markov chain on the pullback density
q~_Z = q_Z / |det J_f|, mixing two kernels:

- a Riemannian-manifold MALA kernel whose metric is driven by the flow
  Jacobian (local exploration; Girolami & Calderhead, 2011, give the general
  construction), and
- an independent Metropolis-Hastings kernel proposing from q_Z, whose
  acceptance ratio reduces to a ratio of Jacobian determinants (global jumps
  between modes).

All densities and ratios are handled in log space, and non-finite proposals
count as rejections: exploding Jacobians are expected behaviour near the
frontiers between latent mode cells, not errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import LOG_TWO_PI, FlowModel, NonFiniteFlowError
from .rng import stream

__all__ = [
    "ChainState",
    "RunDiagnostics",
    "SamplerConfig",
    "imh_log_accept",
    "imh_step",
    "make_state",
    "naive_sample",
    "nf_sails",
    "rmmala_log_kernel",
    "rmmala_propose",
    "rmmala_step",
]


@dataclass
class SamplerConfig:
    eps: float = 0.1
    p: float = 0.9  # probability of the local (RMMALA) kernel per step
    n_samples: int = 1000
    burn_in: int = 1000
    proposal_mode: str = "approx"  # "approx" (first-order) or "exact"
    seed: int = 0
    adapt_eps: bool = False  # Robbins-Monro step-size tuning, burn-in only
    chain: int = 0

    def validate(self) -> None:
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.proposal_mode not in ("approx", "exact"):
            raise ValueError(f"unknown proposal_mode {self.proposal_mode!r}")


@dataclass
class ChainState:
    """Current latent point with every cache the kernels need.

    All caches are re-derivable from ``z`` under the model; they exist so each
    accept/reject decision costs one new-state evaluation, not several.
    """

    z: np.ndarray
    x: np.ndarray
    log_det: float
    score: np.ndarray
    log_qtilde: float
    jac: np.ndarray

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.z))
            and np.all(np.isfinite(self.x))
            and math.isfinite(self.log_det)
            and np.all(np.isfinite(self.score))
            and math.isfinite(self.log_qtilde)
            and np.all(np.isfinite(self.jac))
        )


@dataclass
class RunDiagnostics:
    rmmala_proposed: int = 0
    rmmala_accepted: int = 0
    imh_proposed: int = 0
    imh_accepted: int = 0
    eps_final: float = float("nan")
    notes: dict = field(default_factory=dict)

    @property
    def rmmala_rate(self) -> float:
        return self.rmmala_accepted / self.rmmala_proposed if self.rmmala_proposed else 0.0

    @property
    def imh_rate(self) -> float:
        return self.imh_accepted / self.imh_proposed if self.imh_proposed else 0.0

    def to_dict(self) -> dict:
        return {
            "rmmala_proposed": self.rmmala_proposed,
            "rmmala_accepted": self.rmmala_accepted,
            "rmmala_rate": self.rmmala_rate,
            "imh_proposed": self.imh_proposed,
            "imh_accepted": self.imh_accepted,
            "imh_rate": self.imh_rate,
            "eps_final": self.eps_final,
        }


def make_state(model: FlowModel, z: np.ndarray) -> ChainState:
    """Populate all caches for a latent point; may hold non-finite entries."""
    z = np.asarray(z, dtype=np.float64)
    x, log_det = model.forward(z)
    log_qz = -0.5 * model.dim * LOG_TWO_PI - 0.5 * float(z @ z)
    return ChainState(
        z=z,
        x=x,
        log_det=float(log_det),
        score=model.latent_score(z),
        log_qtilde=log_qz - float(log_det),
        jac=model.jacobian_matrix(z),
    )


def naive_sample(model: FlowModel, n: int, seed: int) -> np.ndarray:
    """Push n i.i.d. latent Gaussian draws through the flow."""
    rng = stream(seed, "naive")
    z = rng.standard_normal((n, model.dim))
    x, _ = model.forward(z)
    return x


def rmmala_propose(
    model: FlowModel,
    state: ChainState,
    eps: float,
    mode: str,
    xi: np.ndarray,
) -> ChainState | None:
    """Candidate state from the Langevin proposal, or None when non-finite.

    Exact mode samples the proposal Gaussian itself, mean
    z + (eps^2/2) J^-1 s and covariance eps^2 J^-1 J^-T, via the explicit
    factor eps J^-1. Approx mode replaces the noise term by a first-order
    expansion of the inverse map, f^-1(f(z) + eps xi), which only needs the
    backward transform. Both modes coincide for affine flows.
    """
    drift = 0.5 * eps * eps * np.linalg.solve(state.jac, state.score)
    if mode == "exact":
        z_new = state.z + drift + eps * np.linalg.solve(state.jac, xi)
    elif mode == "approx":
        try:
            z_base, _ = model.inverse(state.x + eps * xi)
        except NonFiniteFlowError:
            return None
        z_new = z_base + drift
    else:
        raise ValueError(f"unknown proposal mode {mode!r}")
    if not np.all(np.isfinite(z_new)):
        return None
    try:
        candidate = make_state(model, z_new)
    except NonFiniteFlowError:
        return None
    return candidate if candidate.is_finite() else None


def rmmala_log_kernel(
    model: FlowModel, from_state: ChainState, to_z: np.ndarray, eps: float
) -> float:
    """Log-density of the Langevin proposal kernel g(to_z | from_state).

    This is the Gaussian above evaluated without ever forming J^-1: the
    normalisation contributes log |det J| - d log eps, and the quadratic form
    telescopes to ||J (to - from) - (eps^2/2) s||^2 / (2 eps^2).
    """
    d = model.dim
    resid = from_state.jac @ (np.asarray(to_z) - from_state.z) - (
        0.5 * eps * eps
    ) * from_state.score
    return (
        from_state.log_det
        - d * math.log(eps)
        - 0.5 * d * LOG_TWO_PI
        - float(resid @ resid) / (2.0 * eps * eps)
    )


def _log_uniform(rng: np.random.Generator) -> float:
    u = rng.random()
    return math.log(u) if u > 0.0 else -math.inf


def rmmala_step(
    model: FlowModel,
    state: ChainState,
    config: SamplerConfig,
    rng: np.random.Generator,
    eps_override: float | None = None,
) -> tuple[ChainState, bool]:
    """One Metropolis-adjusted Langevin transition; rejections keep the state."""
    eps = config.eps if eps_override is None else eps_override
    xi = rng.standard_normal(model.dim)
    candidate = rmmala_propose(model, state, eps, config.proposal_mode, xi)
    if candidate is None:
        return state, False
    log_alpha = min(
        0.0,
        candidate.log_qtilde
        + rmmala_log_kernel(model, candidate, state.z, eps)
        - state.log_qtilde
        - rmmala_log_kernel(model, state, candidate.z, eps),
    )
    if math.isnan(log_alpha):
        return state, False
    if _log_uniform(rng) < log_alpha:
        return candidate, True
    return state, False


def imh_log_accept(log_det_current: float, log_det_candidate: float) -> float:
    """Log acceptance probability of the independent kernel.

    With target q~_Z and proposal q_Z everything cancels except the Jacobian
    determinants: alpha = min(1, |J(z_current)| / |J(z_candidate)|).
    """
    return min(0.0, log_det_current - log_det_candidate)


def imh_step(
    model: FlowModel,
    state: ChainState,
    rng: np.random.Generator,
) -> tuple[ChainState, bool]:
    """One independent Metropolis-Hastings transition proposing from q_Z."""
    z_new = rng.standard_normal(model.dim)
    try:
        _, log_det_new = model.forward(z_new)
    except NonFiniteFlowError:
        return state, False
    if not math.isfinite(log_det_new):
        return state, False
    log_alpha = imh_log_accept(state.log_det, float(log_det_new))
    if _log_uniform(rng) < log_alpha:
        try:
            candidate = make_state(model, z_new)
        except NonFiniteFlowError:
            return state, False
        if not candidate.is_finite():
            return state, False
        return candidate, True
    return state, False


def nf_sails(
    model: FlowModel, config: SamplerConfig
) -> tuple[np.ndarray, np.ndarray, RunDiagnostics]:
    """Latent-space MCMC mixing the local and independent kernels.

    Starts from z0 ~ N(0, I); each step runs the RMMALA kernel with
    probability ``config.p`` and the independent kernel otherwise. The first
    ``burn_in`` states are discarded; the retained chain and its push-forward
    images are returned together with per-kernel acceptance diagnostics.

    With ``adapt_eps`` the step size follows a Robbins-Monro recursion toward
    a 57% local acceptance rate during burn-in only, so the retained chain
    always uses a fixed kernel.
    """
    config.validate()
    rng = stream(config.seed, f"chain-{config.chain}")
    state = make_state(model, rng.standard_normal(model.dim))
    if not state.is_finite():
        raise NonFiniteFlowError(0, "chain initialisation")
    diag = RunDiagnostics()
    eps = config.eps
    adapt_count = 0
    total = config.burn_in + config.n_samples
    latent = np.empty((config.n_samples, model.dim))
    pushed = np.empty((config.n_samples, model.dim))
    for k in range(total):
        if rng.random() < config.p:
            diag.rmmala_proposed += 1
            state, accepted = rmmala_step(model, state, config, rng, eps_override=eps)
            diag.rmmala_accepted += accepted
            if config.adapt_eps and k < config.burn_in:
                adapt_count += 1
                gain = 0.5 * adapt_count**-0.6
                eps = math.exp(math.log(eps) + gain * (float(accepted) - 0.574))
        else:
            diag.imh_proposed += 1
            state, accepted = imh_step(model, state, rng)
            diag.imh_accepted += accepted
        if k >= config.burn_in:
            latent[k - config.burn_in] = state.z
            pushed[k - config.burn_in] = state.x
    diag.eps_final = eps
    return latent, pushed, diag


def sails_chain(
    model: FlowModel, config: SamplerConfig, chain: int
) -> tuple[np.ndarray, np.ndarray, RunDiagnostics]:
    """Run chain number ``chain`` on its own named stream (for parallel use)."""
    return nf_sails(model, replace(config, chain=chain))
