"""Markov transitions that move the population of proposal means.

Every kernel leaves ``prod_n pi(mu_n)`` invariant. Target values at the
current means are cached on :class:`MeanPopulation` so that each kernel
performs exactly its documented number of fresh target evaluations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ConfigError, MaisError, normalize_log_weights, normalize_weights
from .weighting import ProposalComponent, cholesky_factor

VARIANTS = ("parallel_mh", "block_mh", "smh", "mh_within_gibbs", "pmc_resample", "none")


class DegenerateInverseWeights(MaisError):
    pass


class CountingTarget:
    """Wraps a target and counts every point at which it is evaluated."""

    def __init__(self, target):
        self.target = target
        self.dim = target.dim
        self.name = target.name
        self.count = 0

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        self.count += 1 if x.ndim == 1 else x.shape[0]
        return self.target.log_density(x)

    __call__ = log_density


def _clean(lp):
    lp = np.asarray(lp, dtype=float)
    return np.where(np.isnan(lp) | np.isposinf(lp), -np.inf, lp)


class RandomWalkKernel:
    """Gaussian random-walk proposal ``phi(mu' | mu) = N(mu'; mu, Lambda)``.

    The kernel is symmetric, so the proposal ratio in the MH acceptance is
    one and is skipped.
    """

    symmetric = True

    def __init__(self, cov):
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.chol = cholesky_factor(self.cov)
        self._q = ProposalComponent(np.zeros(self.cov.shape[0]), self.cov)

    @classmethod
    def isotropic(cls, scale: float, dim: int) -> "RandomWalkKernel":
        return cls(scale ** 2 * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def propose(self, mu, rng: np.random.Generator) -> np.ndarray:
        return mu + self.chol @ rng.standard_normal(self.dim)

    def log_pdf(self, to, frm) -> float:
        return float(self._q.log_pdf(np.asarray(to) - np.asarray(frm)))


class IdentityKernel:
    """Zero-variance kernel: always proposes the current point."""

    symmetric = True

    def __init__(self, dim: int):
        self.dim = dim

    def propose(self, mu, rng: np.random.Generator) -> np.ndarray:
        rng.standard_normal(self.dim)  # keep the stream aligned with RandomWalkKernel
        return np.array(mu, dtype=float)


@dataclass
class MeanPopulation:
    """Means ``mu_1..mu_N`` with cached ``log pi(mu_n)``."""

    means: np.ndarray
    log_pi: np.ndarray

    @classmethod
    def evaluate(cls, means, target) -> "MeanPopulation":
        means = np.atleast_2d(np.asarray(means, dtype=float)).copy()
        return cls(means, _clean(target.log_density(means)))

    @property
    def size(self) -> int:
        return self.means.shape[0]

    def copy(self) -> "MeanPopulation":
        return MeanPopulation(self.means.copy(), self.log_pi.copy())


def _log_alpha(lp_new, lp_old, kernel, mu, cand) -> float:
    if lp_new == -np.inf:
        return -np.inf
    if lp_old == -np.inf:
        return 0.0
    if getattr(kernel, "symmetric", False):
        return lp_new - lp_old
    return lp_new - lp_old + kernel.log_pdf(mu, cand) - kernel.log_pdf(cand, mu)


def mh_transition(mu, log_pi, kernel: RandomWalkKernel, target, rng: np.random.Generator):
    """One Metropolis-Hastings step from ``mu`` (whose ``log pi`` is cached).

    Draws the candidate, then one uniform. Exactly one target evaluation.

    Returns
    -------
    (new_mu, new_log_pi, accepted)
    """
    mu = np.asarray(mu, dtype=float)
    cand = kernel.propose(mu, rng)
    lp_cand = float(_clean(target.log_density(cand)))
    la = _log_alpha(lp_cand, log_pi, kernel, mu, cand)
    u = rng.random()
    if np.log(u) < la:
        return cand, lp_cand, True
    return mu, log_pi, False


def parallel_mh_step(population: MeanPopulation, kernels: Sequence[RandomWalkKernel], target,
                     rngs: Sequence[np.random.Generator]):
    """N independent MH steps, chain ``n`` using ``rngs[n]``.

    Each chain draws its candidate then its uniform from its own stream, so
    the result for chain ``n`` equals :func:`mh_transition` run alone. The N
    candidates are evaluated in one vectorized call (N evaluations).
    """
    N, D = population.means.shape
    cands = np.empty((N, D))
    for n in range(N):
        cands[n] = kernels[n].propose(population.means[n], rngs[n])
    lp_cand = _clean(target.log_density(cands))
    new = population.copy()
    accepted = np.zeros(N, dtype=bool)
    for n in range(N):
        mu = population.means[n]
        la = _log_alpha(lp_cand[n], population.log_pi[n], kernels[n], mu, cands[n])
        if np.log(rngs[n].random()) < la:
            new.means[n] = cands[n]
            new.log_pi[n] = lp_cand[n]
            accepted[n] = True
    return new, accepted


def _step(kernel, z):
    chol = getattr(kernel, "chol", None)
    return np.zeros_like(z) if chol is None else chol @ z


def block_mh_transition(population: MeanPopulation, kernels: Sequence[RandomWalkKernel], target,
                        rng: np.random.Generator):
    """Joint MH move of all N means under the product of the kernels.

    The whole block is accepted or rejected with the product-target ratio.
    N target evaluations per call.
    """
    N, D = population.means.shape
    z = rng.standard_normal((N, D))
    cands = np.array([population.means[n] + _step(kernels[n], z[n]) for n in range(N)])
    lp_cand = _clean(target.log_density(cands))
    if np.any(np.isneginf(lp_cand)):
        la = -np.inf
    elif np.any(np.isneginf(population.log_pi)):
        la = 0.0
    else:
        la = float(lp_cand.sum() - population.log_pi.sum())
        for n in range(N):
            if not getattr(kernels[n], "symmetric", False):
                la += (kernels[n].log_pdf(population.means[n], cands[n])
                       - kernels[n].log_pdf(cands[n], population.means[n]))
    u = rng.random()
    if np.log(u) < la:
        return MeanPopulation(cands, lp_cand), True
    return population.copy(), False


def smh_acceptance(log_inv_pop, log_inv_candidate) -> float:
    """Acceptance probability of a Sample Metropolis-Hastings swap.

    ``alpha = sum_{n>=1} r_n / (sum_{i>=0} r_i - min_i r_i)`` with ``r`` the
    inverse importance weights ``phi/pi`` and index 0 the candidate. Inputs
    are ``log r``.
    """
    lr = np.concatenate([[float(log_inv_candidate)], np.asarray(log_inv_pop, dtype=float)])
    if np.isposinf(lr[0]):
        return 0.0
    if np.any(np.isposinf(lr[1:])):
        return 1.0
    top = lr.max()
    if np.isneginf(top):
        raise DegenerateInverseWeights("all inverse weights are zero")
    e = np.exp(lr - top)
    k = int(np.argmin(e))
    num = e[1:].sum()
    den = np.delete(e, k).sum()
    if den <= 0.0:
        return 1.0
    return float(min(1.0, num / den))


def smh_transition(population: MeanPopulation, log_inv: np.ndarray, proposal: ProposalComponent,
                   target, rng: np.random.Generator):
    """One SMH step; ``log_inv`` caches ``log phi(mu_n) - log pi(mu_n)``.

    Draws the candidate, selects a member with probability proportional to
    its inverse weight, then accepts the swap with :func:`smh_acceptance`.
    One target evaluation per call.

    Returns
    -------
    (population, log_inv, replaced_index or None)
    """
    cand = proposal.sample(rng, 1)[0]
    lp_cand = float(_clean(target.log_density(cand)))
    lr_cand = np.inf if lp_cand == -np.inf else float(proposal.log_pdf(cand)) - lp_cand

    log_inv = np.asarray(log_inv, dtype=float)
    if np.all(np.isneginf(log_inv) | np.isnan(log_inv)):
        raise DegenerateInverseWeights("every inverse weight is zero or undefined")
    inf_mask = np.isposinf(log_inv)
    if inf_mask.any():
        probs = inf_mask / inf_mask.sum()
    else:
        probs = normalize_log_weights(log_inv)
    k = int(rng.choice(population.size, p=probs))
    alpha = smh_acceptance(log_inv, lr_cand)
    u = rng.random()
    if u < alpha:
        new = population.copy()
        new.means[k] = cand
        new.log_pi[k] = lp_cand
        new_inv = log_inv.copy()
        new_inv[k] = lr_cand
        return new, new_inv, k
    return population, log_inv, None


def smh_log_inverse_weights(population: MeanPopulation, proposal: ProposalComponent) -> np.ndarray:
    lphi = proposal.log_pdf(population.means)
    return np.where(np.isneginf(population.log_pi), np.inf, lphi - population.log_pi)


def mh_within_gibbs_sweep(population: MeanPopulation, kernels: Sequence[RandomWalkKernel], target,
                          rng: np.random.Generator) -> MeanPopulation:
    """Thread one MH chain through the population.

    The chain starts at the last member ``mu_N`` of the previous population;
    step ``n`` proposes from ``kernels[n]`` around the state after step
    ``n - 1`` and its result becomes the new ``mu_n``. N evaluations.
    """
    N, D = population.means.shape
    new = MeanPopulation(np.empty((N, D)), np.empty(N))
    mu, lp = population.means[-1], float(population.log_pi[-1])
    for n in range(N):
        mu, lp, _ = mh_transition(mu, lp, kernels[n], target, rng)
        new.means[n] = mu
        new.log_pi[n] = lp
    return new


def pmc_resample(X, weights, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Multinomial resampling of the weighted set ``X`` (``size`` draws, default ``len(X)``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    size = X.shape[0] if size is None else size
    if X.shape[0] == 1:
        return np.repeat(X, size, axis=0)
    p = normalize_weights(weights)
    idx = rng.choice(X.shape[0], size=size, p=p)
    return X[idx]


def pmc_resample_log(X, log_w, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """As :func:`pmc_resample` but from log weights (robust to underflow)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    size = X.shape[0] if size is None else size
    if X.shape[0] == 1:
        return np.repeat(X, size, axis=0)
    p = normalize_log_weights(log_w)
    idx = rng.choice(X.shape[0], size=size, p=p)
    return X[idx]


@dataclass
class AdaptationKernel:
    """How the means move between iterations.

    ``scales`` gives the random-walk standard deviations: a scalar for
    ``lambda^2 I``, or an ``(N, D)`` array of per-chain diagonal scales.
    ``smh_mean`` / ``smh_scale`` define the independent SMH proposal.
    """

    variant: str = "parallel_mh"
    scales: object = 10.0
    smh_mean: Optional[Sequence[float]] = None
    smh_scale: float = 10.0

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown adaptation {self.variant!r}; choose from {VARIANTS}")

    def random_walks(self, N: int, dim: int) -> list:
        s = np.asarray(self.scales, dtype=float)
        if s.ndim == 0:
            if s <= 0:
                raise ConfigError("adaptation scale must be positive")
            k = RandomWalkKernel.isotropic(float(s), dim)
            return [k] * N
        s = np.broadcast_to(s, (N, dim))
        return [RandomWalkKernel(np.diag(row ** 2)) for row in s]

    def smh_proposal(self, dim: int) -> ProposalComponent:
        mean = np.zeros(dim) if self.smh_mean is None else np.asarray(self.smh_mean, float)
        return ProposalComponent(mean, self.smh_scale ** 2 * np.eye(dim))
