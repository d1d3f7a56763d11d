"""Posterior refinement of decay precisions from test outcomes.

The spatial precision ``tau`` (shared by both axes) and temporal precision
``tau_t`` get Gamma priors; each tested person's outcome is a Bernoulli draw
whose success probability is their trajectory risk.  The posterior is sampled
with random-walk Metropolis-Hastings on the log precisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InconsistentObservationError, ParameterDomainError
from .grid_map import DEFAULT_EPS, GridSpec, RiskMap, _reduce, build_risk_map
from .risk_model import (
    DEFAULT_P0,
    PresenceCell,
    RiskParams,
    Trajectory,
    cells_to_array,
    log_complement,
)


@dataclass(frozen=True)
class PriorHyperparams:
    """Gamma(shape, rate) priors on ``tau`` (1/m^2) and ``tau_t`` (1/s^2)."""

    alpha: float = 2.0
    beta: float = 2.0
    alpha_t: float = 2.0
    beta_t: float = 2.0 * 100.0**2

    def __post_init__(self):
        if not all(v > 0 for v in (self.alpha, self.beta, self.alpha_t, self.beta_t)):
            raise ParameterDomainError("all prior hyperparameters must be positive")

    @classmethod
    def centered_on(cls, params: RiskParams, shape: float = 2.0) -> "PriorHyperparams":
        """Priors whose means are the nominal precisions ``1/sigma^2``."""
        return cls(shape, shape * params.sigma_x**2, shape, shape * params.sigma_t**2)

    @property
    def mean(self) -> tuple[float, float]:
        return self.alpha / self.beta, self.alpha_t / self.beta_t

    def log_density(self, tau: float, tau_t: float) -> float:
        return (_gamma_logpdf(tau, self.alpha, self.beta)
                + _gamma_logpdf(tau_t, self.alpha_t, self.beta_t))

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        return (float(rng.gamma(self.alpha, 1.0 / self.beta)),
                float(rng.gamma(self.alpha_t, 1.0 / self.beta_t)))


def _gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - float(gammaln(shape)) + (shape - 1) * math.log(x) - rate * x


@dataclass(frozen=True)
class TestObservation:
    trajectory: Trajectory
    outcome: bool

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if len(self.trajectory) == 0:
            raise ValueError("observation trajectory must be non-empty")
        object.__setattr__(self, "outcome", bool(self.outcome))


@dataclass(frozen=True)
class PosteriorSample:
    tau: float
    tau_t: float
    log_posterior: float
    iteration: int = -1


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 10_000
    burn_in: int = 1_000
    thin: int = 5
    proposal_scale: tuple[float, float] = (0.3, 0.3)
    adapt: bool = True
    adapt_interval: int = 100
    target_acceptance: tuple[float, float] = (0.2, 0.5)
    max_init_tries: int = 100

    def __post_init__(self):
        if self.n_iter <= 0 or self.thin <= 0 or not 0 <= self.burn_in < self.n_iter:
            raise ParameterDomainError("need n_iter > burn_in >= 0 and thin > 0")
        if min(self.proposal_scale) <= 0:
            raise ParameterDomainError("proposal scales must be positive")


@dataclass
class McmcResult:
    samples: list[PosteriorSample]
    acceptance_rate: float
    proposal_scale: tuple[float, float]
    initial: tuple[float, float] = field(default=(math.nan, math.nan))

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([s.tau for s in self.samples]), np.array([s.tau_t for s in self.samples]))

    def summary(self, level: float = 0.9) -> dict:
        tau, tau_t = self.arrays()
        lo, hi = (1 - level) / 2 * 100, (1 + level) / 2 * 100
        out = {"n_samples": len(tau), "acceptance_rate": self.acceptance_rate,
               "proposal_scale": list(self.proposal_scale), "credible_level": level}
        for name, x in (("tau", tau), ("tau_t", tau_t)):
            out[name] = {
                "mean": float(x.mean()),
                "sd": float(x.std(ddof=1)) if len(x) > 1 else 0.0,
                "mcse": monte_carlo_se(x),
                "interval": [float(np.percentile(x, lo)), float(np.percentile(x, hi))],
            }
        return out


def monte_carlo_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Batch-means standard error of the mean of a correlated chain."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    if size < 2:
        return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


class ExposureTable:
    """Squared offsets of every causal (person cell, patient cell) pair, flattened.

    Pairs where the person is there before the patient contribute exactly zero
    for every parameter value and are dropped up front.
    """

    def __init__(self, observations: Sequence[TestObservation], patients: Sequence[PresenceCell] | np.ndarray):
        pat = patients if isinstance(patients, np.ndarray) else cells_to_array(patients)
        pat = pat.reshape(-1, 3)
        d2, dt2, owner = [], [], []
        for n, obs in enumerate(observations):
            u = obs.trajectory.as_array()
            dx = u[:, None, 0] - pat[None, :, 0]
            dy = u[:, None, 1] - pat[None, :, 1]
            dt = u[:, None, 2] - pat[None, :, 2]
            causal = dt >= 0
            d2.append((dx * dx + dy * dy)[causal])
            dt2.append((dt * dt)[causal])
            owner.append(np.full(int(causal.sum()), n))
        self.n_obs = len(observations)
        self.outcome = np.array([o.outcome for o in observations], dtype=bool)
        rows = np.stack([np.concatenate(owner), np.concatenate(d2), np.concatenate(dt2)], axis=1) \
            if owner else np.empty((0, 3))
        # identical (owner, d2, dt2) pairs collapse into one weighted term
        rows, mult = np.unique(rows, axis=0, return_counts=True)
        self.owner = rows[:, 0].astype(np.intp)
        self.d2 = rows[:, 1]
        self.dt2 = rows[:, 2]
        self.weight = mult.astype(float)

    def log_complements(self, tau: float, tau_t: float, p0: float) -> np.ndarray:
        """Per-observation ``log(1 - P(C=1|s))``."""
        p = p0 * np.exp(-tau * self.d2 - tau_t * self.dt2)
        return np.bincount(self.owner, weights=self.weight * log_complement(p), minlength=self.n_obs)

    def risks(self, tau: float, tau_t: float, p0: float) -> np.ndarray:
        return 0.0 - np.expm1(self.log_complements(tau, tau_t, p0))

    def log_likelihood(self, tau: float, tau_t: float, p0: float) -> float:
        if self.n_obs == 0:
            return 0.0
        lq = self.log_complements(tau, tau_t, p0)
        pos = lq[self.outcome]
        with np.errstate(divide="ignore"):
            ll_pos = np.log(-np.expm1(pos)).sum() if len(pos) else 0.0
        return float(ll_pos + lq[~self.outcome].sum())


def likelihood(obs: TestObservation, patients: Sequence[PresenceCell], tau: float, tau_t: float,
               p0: float = DEFAULT_P0) -> float:
    """``P^T (1 - P)^(1 - T)`` for one tested person, with ``P`` their trajectory risk."""
    if not (tau > 0 and tau_t > 0):
        raise ParameterDomainError("precisions must be positive")
    return math.exp(ExposureTable([obs], patients).log_likelihood(tau, tau_t, p0))


def log_posterior(tau: float, tau_t: float, observations: Sequence[TestObservation] | ExposureTable,
                  patients: Sequence[PresenceCell] | None, prior: PriorHyperparams,
                  p0: float = DEFAULT_P0) -> float:
    """Unnormalized log posterior of ``(tau, tau_t)``; ``-inf`` outside the support."""
    if not (tau > 0 and tau_t > 0):
        return -math.inf
    table = observations if isinstance(observations, ExposureTable) else ExposureTable(observations, patients)
    return prior.log_density(tau, tau_t) + table.log_likelihood(tau, tau_t, p0)


def sample_posterior(observations: Sequence[TestObservation], patients: Sequence[PresenceCell],
                     prior: PriorHyperparams, p0: float = DEFAULT_P0, mcmc: McmcConfig | None = None,
                     rng: np.random.Generator | int | None = None) -> McmcResult:
    """Random-walk Metropolis-Hastings over ``(log tau, log tau_t)``.

    Proposal scales are tuned during burn-in toward the target acceptance band
    and frozen afterwards.  The returned samples are post-burn-in and thinned.
    """
    mcmc = mcmc or McmcConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    table = ExposureTable(observations, patients)

    def target(theta: np.ndarray) -> tuple[float, float]:
        tau, tau_t = math.exp(theta[0]), math.exp(theta[1])
        lp = log_posterior(tau, tau_t, table, None, prior, p0)
        # Jacobian of the log transform
        return lp + theta[0] + theta[1], lp

    start = prior.mean
    theta = np.log(np.array(start))
    cur, cur_lp = target(theta)
    tries = 0
    while not math.isfinite(cur):
        if tries >= mcmc.max_init_tries:
            raise InconsistentObservationError(
                "observations have zero probability at every tried starting point")
        start = prior.sample(rng)
        theta = np.log(np.array(start))
        cur, cur_lp = target(theta)
        tries += 1

    scale = np.array(mcmc.proposal_scale, dtype=float)
    lo_acc, hi_acc = mcmc.target_acceptance
    samples = []
    accepted = window_acc = 0
    for it in range(mcmc.n_iter):
        prop = theta + scale * rng.standard_normal(2)
        new, new_lp = target(prop)
        if math.log(rng.random()) < new - cur:
            theta, cur, cur_lp = prop, new, new_lp
            window_acc += 1
            if it >= mcmc.burn_in:
                accepted += 1
        if it < mcmc.burn_in and mcmc.adapt and (it + 1) % mcmc.adapt_interval == 0:
            rate = window_acc / mcmc.adapt_interval
            if rate < lo_acc:
                scale *= 0.7
            elif rate > hi_acc:
                scale *= 1.3
            window_acc = 0
        if it >= mcmc.burn_in and (it - mcmc.burn_in) % mcmc.thin == 0:
            samples.append(PosteriorSample(math.exp(theta[0]), math.exp(theta[1]), cur_lp, it))
    rate = accepted / (mcmc.n_iter - mcmc.burn_in)
    return McmcResult(samples, rate, (float(scale[0]), float(scale[1])), (float(start[0]), float(start[1])))


def refined_risk_map(posterior: Sequence[PosteriorSample], patients: Sequence[Trajectory],
                     spec: GridSpec | None = None, p0: float = DEFAULT_P0,
                     eps: float = DEFAULT_EPS) -> RiskMap:
    """Posterior-predictive map: per-cell risk averaged over posterior samples.

    Repeated parameter points (common in Metropolis chains) are built once and
    weighted by multiplicity.  Cells whose mean risk falls below ``eps`` are
    dropped.  The stored parameters are the posterior-mean precisions.
    """
    posterior = list(posterior)
    if not posterior:
        raise ValueError("posterior sample is empty")
    spec = spec or GridSpec()
    counts: dict[tuple[float, float], int] = {}
    for s in posterior:
        counts[(s.tau, s.tau_t)] = counts.get((s.tau, s.tau_t), 0) + 1
    idx_parts, risk_parts = [], []
    for (tau, tau_t), c in counts.items():
        m = build_risk_map(patients, RiskParams.from_precisions(tau, tau_t, p0), spec, eps)
        idx_parts.append(m.indices)
        risk_parts.append(c * m.risks())
    idx, total = _reduce(np.concatenate(idx_parts), np.concatenate(risk_parts))
    mean = total / len(posterior)
    keep = mean >= eps
    tau_bar = float(np.mean([s.tau for s in posterior]))
    tau_t_bar = float(np.mean([s.tau_t for s in posterior]))
    params = RiskParams.from_precisions(tau_bar, tau_t_bar, p0)
    return RiskMap(spec, params, eps, idx[keep], np.log1p(-mean[keep]))


def simulate_outcomes(trajectories: Sequence[Trajectory], patients: Sequence[PresenceCell], tau: float,
                      tau_t: float, p0: float, rng: np.random.Generator) -> list[TestObservation]:
    """Draw test outcomes for the given trajectories at known precisions."""
    obs = [TestObservation(t, False) for t in trajectories]
    risk = ExposureTable(obs, patients).risks(tau, tau_t, p0)
    hits = rng.random(len(obs)) < risk
    return [TestObservation(t, bool(h)) for t, h in zip(trajectories, hits)]
