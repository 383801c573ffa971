"""Complete samplers built from the weighting, estimation and adaptation layers.

Every population algorithm runs through one engine:

    for t in 1..T:
        adapt the means           (MH family / SMH; skipped for static MIS)
        draw M samples per chain  (lower level)
        weight them               (chosen denominator)
        update the estimators
        resample the means        (PMC only)

Random streams: chain ``c`` (global index ``first_chain + n``) owns an
initialization stream, an adaptation stream and a sampling stream; the
population-level kernels (block MH, SMH, MH-within-Gibbs, resampling) use
one shared population stream. Means therefore never depend on the
sampling stream, except for PMC where resampling uses the weights by design.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .adaptation import (
    AdaptationKernel,
    CountingTarget,
    MeanPopulation,
    block_mh_transition,
    mh_within_gibbs_sweep,
    parallel_mh_step,
    pmc_resample_log,
    smh_log_inverse_weights,
    smh_transition,
)
from .core import (
    ADAPT_STREAM,
    INIT_STREAM,
    POPULATION_STREAM,
    SAMPLE_STREAM,
    AllZeroWeights,
    ConfigError,
    MaisError,
    log_sum_exp,
    make_rng,
)
from .estimation import RunningEstimator
from .targets import TargetModel
from .weighting import (
    LOG_2PI,
    DenominatorScheme,
    NonPositiveDefinite,
    cholesky_factor,
    gaussian_log_pdf_matrix,
    gaussian_log_pdf_rows,
    log_mixture_pdf,
    log_weights,
)

ALGORITHMS = ("static", "rwis", "population", "gamis", "pmc", "parallel_mh")

INITIALIZERS = {
    "In1": (-4.0, 4.0),
    "In2": (-20.0, 20.0),
}

_MH_FAMILY = ("parallel_mh", "block_mh", "mh_within_gibbs")


class MemoryCapExceeded(MaisError):
    pass


class _Unavailable:
    """Marker for a quantity an algorithm cannot estimate."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Unavailable"

    def __bool__(self):
        return False

    def __float__(self):
        raise TypeError("this estimate is unavailable for the algorithm")


Unavailable = _Unavailable()


@dataclass
class SamplerConfig:
    """Everything that defines one run.

    Parameters
    ----------
    sigma :
        Lower-level proposal scale: a scalar (``sigma^2 I``), the string
        ``"random"`` (diagonal scales drawn per chain from
        ``U(sigma_bounds)``), or an ``(N, D)`` array of diagonal scales.
        ``covariances`` (``(N, D, D)``) overrides it.
    init :
        Initializer for the means when ``initial_means`` is not given: a
        preset name (``"In1"``, ``"In2"``) or a ``(low, high)`` box, either
        scalars (same bounds in every dimension) or per-dimension arrays.
    sample_seed :
        Seed of the lower (sampling) level; defaults to ``master_seed``.
    first_chain :
        Global index of chain 0; lets a single-chain run reuse the streams
        of chain ``n`` in a larger run.
    """

    target: TargetModel
    N: int = 100
    M: int = 19
    T: int = 100
    algorithm: str = "population"
    denominator: DenominatorScheme = field(default_factory=DenominatorScheme)
    adaptation: AdaptationKernel = field(default_factory=AdaptationKernel)
    sigma: Union[float, str, np.ndarray] = 10.0
    sigma_bounds: tuple = (1.0, 10.0)
    covariances: Optional[np.ndarray] = None
    initial_means: Optional[np.ndarray] = None
    init: Union[str, tuple] = "In1"
    master_seed: int = 0
    sample_seed: Optional[int] = None
    first_chain: int = 0
    history_cap: int = 20_000_000
    trace: bool = False
    store_samples: bool = False

    def __post_init__(self):
        if isinstance(self.denominator, str):
            self.denominator = DenominatorScheme(self.denominator)
        if isinstance(self.adaptation, str):
            self.adaptation = AdaptationKernel(self.adaptation)
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        for name in ("N", "M", "T"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            setattr(self, name, int(v))
        if self.initial_means is None:
            low, high = self.box()
            if np.any(low >= high):
                raise ConfigError("initializer bounds must satisfy low < high")
        else:
            m = np.atleast_2d(np.asarray(self.initial_means, dtype=float))
            if m.shape != (self.N, self.target.dim):
                raise ConfigError(f"initial_means must have shape {(self.N, self.target.dim)}")
        if isinstance(self.sigma, str) and self.sigma != "random":
            raise ConfigError("sigma must be a number, an array or 'random'")
        if not isinstance(self.sigma, str) and np.any(np.asarray(self.sigma, dtype=float) <= 0):
            raise NonPositiveDefinite("lower-level proposal scales must be positive")

    @property
    def dim(self) -> int:
        return self.target.dim

    def box(self):
        init = self.init
        if isinstance(init, str):
            if init not in INITIALIZERS:
                raise ConfigError(f"unknown initializer {init!r}; presets are {sorted(INITIALIZERS)}")
            init = INITIALIZERS[init]
        low, high = init
        return (np.broadcast_to(np.asarray(low, float), (self.dim,)),
                np.broadcast_to(np.asarray(high, float), (self.dim,)))

    def chain_ids(self) -> range:
        return range(self.first_chain, self.first_chain + self.N)

    def derived(self, **changes) -> "SamplerConfig":
        return replace(self, **changes)


@dataclass
class RunResult:
    """Output of a run.

    ``eval_count`` counts the target evaluations of the iterations (it
    equals :func:`eval_budget`); ``init_eval_count`` the evaluations of the
    initial means needed to seed the Markov kernels.
    """

    I_hat: np.ndarray
    Z_hat: object
    eval_count: int
    init_eval_count: int
    wall_time: float
    final_means: np.ndarray
    trace: Optional[list] = None
    mean_trajectory: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# set-up helpers

def initial_means(cfg: SamplerConfig, rngs) -> np.ndarray:
    if cfg.initial_means is not None:
        return np.atleast_2d(np.asarray(cfg.initial_means, dtype=float)).copy()
    low, high = cfg.box()
    return np.array([rng.uniform(low, high) for rng in rngs])


def proposal_covariances(cfg: SamplerConfig, rngs) -> np.ndarray:
    N, D = cfg.N, cfg.dim
    if cfg.covariances is not None:
        covs = np.asarray(cfg.covariances, dtype=float)
        covs = np.broadcast_to(covs, (N, D, D)).copy()
    elif isinstance(cfg.sigma, str):
        lo, hi = cfg.sigma_bounds
        if not 0 < lo <= hi:
            raise ConfigError("sigma_bounds must satisfy 0 < low <= high")
        covs = np.array([np.diag(rng.uniform(lo, hi, size=D) ** 2) for rng in rngs])
    else:
        s = np.broadcast_to(np.asarray(cfg.sigma, dtype=float), (N, D))
        covs = np.array([np.diag(row ** 2) for row in s])
    for c in covs:
        cholesky_factor(c)
    return covs


def eval_budget(cfg: SamplerConfig) -> int:
    """Exact number of fresh target evaluations made by the iterations of a run."""
    N, M, T = cfg.N, cfg.M, cfg.T
    alg, variant = cfg.algorithm, cfg.adaptation.variant
    if alg == "parallel_mh":
        return N * T
    if alg in ("static", "pmc"):
        return N * M * T
    if variant in _MH_FAMILY:
        return N * M * T + N * T
    if variant == "smh":
        return N * M * T + T
    return N * M * T


def iterations_for_budget(E: int, N: int, M: int, variant: str = "parallel_mh") -> int:
    """Largest T whose budget does not exceed ``E`` (floor division)."""
    per_iter = {"smh": N * M + 1}.get(variant, N * (M + 1) if variant in _MH_FAMILY else N * M)
    return max(1, E // per_iter)


# ---------------------------------------------------------------------------
# the engine

class _History:
    """Samples kept for re-weighting under a growing mixture denominator.

    For each stored sample the log of ``sum_j c_j q_j(x)`` over the members
    of its group seen so far is kept, so each iteration only adds the new
    components' contributions.
    """

    def __init__(self, scheme: DenominatorScheme, dim: int, cap: int):
        self.scheme = scheme
        self.cap = cap
        self.X = np.empty((0, dim))
        self.log_pi = np.empty(0)
        self.group = np.empty(0, dtype=int)
        self.log_S = np.empty(0)
        self.group_ids: dict = {}
        self.members: list = []      # per group: list of component rows
        self.mass: list = []         # per group: total sample count c
        self.means = np.empty((0, dim))
        self.chol_inv = np.empty((0, dim, dim))
        self.log_norm = np.empty(0)
        self.log_count = np.empty(0)

    def _gid(self, key) -> int:
        if key not in self.group_ids:
            self.group_ids[key] = len(self.members)
            self.members.append([])
            self.mass.append(0.0)
        return self.group_ids[key]

    def _log_mix(self, X, rows) -> np.ndarray:
        rows = np.asarray(rows)
        lq = gaussian_log_pdf_matrix(X, self.means[rows], self.chol_inv[rows], self.log_norm[rows])
        return log_sum_exp(lq + self.log_count[rows], axis=1)

    def add(self, t: int, means, chol_inv, log_norm, M: int, X, log_pi, chain_of_row):
        N = means.shape[0]
        if self.X.shape[0] + X.shape[0] > self.cap:
            raise MemoryCapExceeded(
                f"history of {self.X.shape[0] + X.shape[0]} samples exceeds the cap of {self.cap}")
        base = self.means.shape[0]
        self.means = np.concatenate([self.means, means])
        self.chol_inv = np.concatenate([self.chol_inv, chol_inv])
        self.log_norm = np.concatenate([self.log_norm, log_norm])
        self.log_count = np.concatenate([self.log_count, np.full(N, math.log(M))])

        new_by_group: dict = {}
        comp_group = np.empty(N, dtype=int)
        for n in range(N):
            g = self._gid(self.scheme.group_key(n, t))
            comp_group[n] = g
            self.members[g].append(base + n)
            self.mass[g] += M
            new_by_group.setdefault(g, []).append(base + n)

        # existing samples: add the new members of their group
        for g, rows in new_by_group.items():
            idx = np.nonzero(self.group == g)[0]
            if idx.size:
                self.log_S[idx] = np.logaddexp(self.log_S[idx], self._log_mix(self.X[idx], rows))

        # new samples: every member of their group seen so far
        sample_group = comp_group[chain_of_row]
        log_S_new = np.empty(X.shape[0])
        for g in np.unique(sample_group):
            idx = np.nonzero(sample_group == g)[0]
            log_S_new[idx] = self._log_mix(X[idx], self.members[g])

        self.X = np.concatenate([self.X, X])
        self.log_pi = np.concatenate([self.log_pi, log_pi])
        self.group = np.concatenate([self.group, sample_group])
        self.log_S = np.concatenate([self.log_S, log_S_new])

    def log_weights(self) -> np.ndarray:
        log_mass = np.log(np.asarray(self.mass))[self.group]
        return log_weights(self.log_pi, self.log_S - log_mass)


def _chain_rngs(seed: int, cfg: SamplerConfig, purpose: int):
    return [make_rng(seed, c, purpose) for c in cfg.chain_ids()]


def _engine(cfg: SamplerConfig) -> RunResult:
    start = time.perf_counter()
    target = CountingTarget(cfg.target)
    N, M, T, D = cfg.N, cfg.M, cfg.T, cfg.dim
    variant = "none" if cfg.algorithm == "static" else cfg.adaptation.variant
    if cfg.algorithm == "pmc":
        variant = "pmc_resample"
    scheme = cfg.denominator
    sample_seed = cfg.master_seed if cfg.sample_seed is None else cfg.sample_seed

    init_rngs = _chain_rngs(cfg.master_seed, cfg, INIT_STREAM)
    means0 = initial_means(cfg, init_rngs)
    covs = proposal_covariances(cfg, init_rngs)
    chol = np.array([cholesky_factor(c) for c in covs])
    chol_inv = np.array([np.linalg.inv(L) for L in chol])
    log_norm = np.array([-np.log(np.diag(L)).sum() - 0.5 * D * LOG_2PI for L in chol])

    adapt_rngs = _chain_rngs(cfg.master_seed, cfg, ADAPT_STREAM)
    sample_rngs = _chain_rngs(sample_seed, cfg, SAMPLE_STREAM)
    pop_rng = make_rng(cfg.master_seed, cfg.first_chain, POPULATION_STREAM)

    kernels = cfg.adaptation.random_walks(N, D) if variant in _MH_FAMILY else None
    if variant in _MH_FAMILY or variant == "smh":
        population = MeanPopulation.evaluate(means0, target)
    else:
        population = MeanPopulation(means0.copy(), np.full(N, np.nan))
    if variant == "smh":
        smh_q = cfg.adaptation.smh_proposal(D)
        log_inv = smh_log_inverse_weights(population, smh_q)
    init_count = target.count
    target.count = 0

    history = _History(scheme, D, cfg.history_cap) if scheme.needs_history else None
    if scheme.variant == "partition":
        for t in range(T):
            for n in range(N):
                scheme.group_key(n, t)  # raises if the partition does not cover (n, t)
    est = RunningEstimator(N * M)
    keep_X, keep_w = [], []
    trace = [] if cfg.trace else None
    trajectory = np.empty((T, N, D))
    chain_of_row = np.repeat(np.arange(N), M)
    Z = np.empty((N, M, D))

    for t in range(T):
        # upper level
        if variant == "parallel_mh":
            population, _ = parallel_mh_step(population, kernels, target, adapt_rngs)
        elif variant == "block_mh":
            population, _ = block_mh_transition(population, kernels, target, pop_rng)
        elif variant == "mh_within_gibbs":
            population = mh_within_gibbs_sweep(population, kernels, target, pop_rng)
        elif variant == "smh":
            population, log_inv, _ = smh_transition(population, log_inv, smh_q, target, pop_rng)
        means = population.means
        trajectory[t] = means

        # lower level
        for n in range(N):
            sample_rngs[n].standard_normal(out=Z[n])
        X = (means[:, None, :] + np.einsum("nmb,nab->nma", Z, chol)).reshape(N * M, D)
        log_pi = np.asarray(target.log_density(X), dtype=float)
        log_pi = np.where(np.isnan(log_pi), -np.inf, log_pi)

        if history is not None:
            history.add(t, means.copy(), chol_inv, log_norm, M, X, log_pi, chain_of_row)
            lw_all = history.log_weights()
            w_all = np.exp(lw_all)
            H = float(w_all.sum())
            est.H = H
            est.t = t + 1
            est.total_samples = w_all.size
            est.I_hat = (w_all @ history.X) / H if H > 0 else np.zeros(D)
            lw = lw_all[-N * M:]
        else:
            if scheme.variant == "standard":
                log_phi = gaussian_log_pdf_rows(X, chain_of_row, means, chol_inv, log_norm)
            else:
                log_phi = log_mixture_pdf(X, means, chol_inv, log_norm)
            lw = log_weights(log_pi, log_phi)
            w = np.exp(lw)
            est.update(X, w)
            if cfg.store_samples:
                keep_X.append(X)
                keep_w.append(w)
        if trace is not None:
            trace.append((t + 1, np.array(est.I_hat, dtype=float), est.Z_hat))

        if variant == "pmc_resample":
            population = MeanPopulation(pmc_resample_log(X, lw, pop_rng, size=N), np.full(N, np.nan))

    if est.H <= 0.0:
        raise AllZeroWeights("every importance weight of the run is zero")
    if history is not None and cfg.store_samples:
        samples, weights = history.X, np.exp(history.log_weights())
    elif cfg.store_samples:
        samples, weights = np.concatenate(keep_X), np.concatenate(keep_w)
    else:
        samples = weights = None
    return RunResult(
        I_hat=np.asarray(est.I_hat, dtype=float),
        Z_hat=est.Z_hat,
        eval_count=target.count,
        init_eval_count=init_count,
        wall_time=time.perf_counter() - start,
        final_means=population.means.copy(),
        trace=trace,
        mean_trajectory=trajectory,
        samples=samples,
        weights=weights,
    )


# ---------------------------------------------------------------------------
# public runners

def run_static_mis(cfg: SamplerConfig) -> RunResult:
    """Static MIS: N fixed proposals, M samples each per round, T rounds."""
    if cfg.algorithm != "static":
        cfg = cfg.derived(algorithm="static")
    return _engine(cfg)


def run_rwis(cfg: SamplerConfig) -> RunResult:
    """Random-walk importance sampling: a single MH-driven proposal."""
    if cfg.N != 1:
        raise ConfigError("RWIS uses a single chain (N = 1)")
    if cfg.adaptation.variant != "parallel_mh":
        raise ConfigError("RWIS adapts its mean with a random-walk MH step")
    return _engine(cfg.derived(algorithm="rwis"))


def run_population_mais(cfg: SamplerConfig) -> RunResult:
    """PI-MAIS (parallel MH) and the interacting variants (block MH, SMH, MH-within-Gibbs)."""
    if cfg.adaptation.variant not in _MH_FAMILY + ("smh",):
        raise ConfigError(f"population MAIS needs a Markov adaptation, got {cfg.adaptation.variant!r}")
    return _engine(cfg.derived(algorithm="population"))


def run_gamis(cfg: SamplerConfig) -> RunResult:
    """Generic adaptive MIS: any denominator and any adaptation.

    Temporal, full and partition denominators re-weight every stored sample
    against the mixture of all proposals seen so far in its group.
    """
    return _engine(cfg.derived(algorithm="gamis"))


def run_standard_pmc(cfg: SamplerConfig) -> RunResult:
    """Population Monte Carlo: draw, weight, resample the means multinomially."""
    if cfg.denominator.variant not in ("standard", "spatial"):
        raise ConfigError("PMC uses the standard or spatial denominator")
    return _engine(cfg.derived(algorithm="pmc"))


def run_parallel_mh_baseline(cfg: SamplerConfig) -> RunResult:
    """N independent random-walk MH chains of length T; no importance sampling.

    The estimate is the pooled mean of all ``N T`` states after each
    transition. The normalizing constant is :data:`Unavailable`.
    """
    start = time.perf_counter()
    cfg = cfg.derived(algorithm="parallel_mh")
    target = CountingTarget(cfg.target)
    N, T, D = cfg.N, cfg.T, cfg.dim
    means0 = initial_means(cfg, _chain_rngs(cfg.master_seed, cfg, INIT_STREAM))
    kernels = cfg.adaptation.random_walks(N, D)
    rngs = _chain_rngs(cfg.master_seed, cfg, ADAPT_STREAM)
    population = MeanPopulation.evaluate(means0, target)
    init_count = target.count
    target.count = 0
    total = np.zeros(D)
    trace = [] if cfg.trace else None
    trajectory = np.empty((T, N, D))
    for t in range(T):
        population, _ = parallel_mh_step(population, kernels, target, rngs)
        trajectory[t] = population.means
        total += population.means.sum(axis=0)
        if trace is not None:
            trace.append((t + 1, total / (N * (t + 1)), Unavailable))
    return RunResult(total / (N * T), Unavailable, target.count, init_count,
                     time.perf_counter() - start, population.means.copy(), trace, trajectory)


_RUNNERS = {
    "static": run_static_mis,
    "rwis": run_rwis,
    "population": run_population_mais,
    "gamis": run_gamis,
    "pmc": run_standard_pmc,
    "parallel_mh": run_parallel_mh_baseline,
}


def run(cfg: SamplerConfig) -> RunResult:
    """Dispatch on ``cfg.algorithm``."""
    return _RUNNERS[cfg.algorithm](cfg)


# ---------------------------------------------------------------------------
# diagnostics of the hierarchical interpretation

def silverman_bandwidth(J: int, std: float = 1.0) -> float:
    """Rule-of-thumb kernel width ``1.06 std J^(-1/5)``."""
    return 1.06 * std * J ** (-0.2)


def _grid_points(grid):
    if isinstance(grid, tuple):
        xs, ys = (np.asarray(g, dtype=float) for g in grid)
        XX, YY = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([XX.ravel(), YY.ravel()]), (xs[1] - xs[0]) * (ys[1] - ys[0])
    xs = np.asarray(grid, dtype=float)
    return xs[:, None], xs[1] - xs[0]


def equivalent_mixture_check(means, bandwidth, target, ladder: Sequence[int], grid) -> np.ndarray:
    """Grid-L1 distance between the kernel mixture of the first J means and the target.

    ``psi_J(x) = (1/J) sum_j N(x; mu_j, h_J^2 I)`` for each J in ``ladder``.

    Parameters
    ----------
    means : (K, D) array with ``K >= max(ladder)``
    bandwidth : float, or callable ``J -> h``
    target : TargetModel (normalized on the grid) or callable giving the normalized log density
    grid : 1-D array of points, or ``(xs, ys)`` for a 2-D tensor grid
    """
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    pts, cell = _grid_points(grid)
    D = pts.shape[1]
    if callable(getattr(target, "log_density", None)):
        dens = np.exp(target.log_density(pts))
        dens = dens / (dens.sum() * cell)
    else:
        dens = np.exp(target(pts))
    out = []
    for J in ladder:
        if J > means.shape[0]:
            raise ConfigError(f"need at least {J} means, got {means.shape[0]}")
        h = bandwidth(J) if callable(bandwidth) else float(bandwidth)
        z = (pts[:, None, :] - means[None, :J, :]) / h
        logk = -0.5 * np.sum(z * z, axis=2) - D * math.log(h) - 0.5 * D * LOG_2PI
        psi = np.exp(log_sum_exp(logk, axis=1) - math.log(J))
        out.append(float(np.abs(psi - dens).sum() * cell))
    return np.array(out)


def pmc_one_step_draws(target, N: int, proposal_mean: float, proposal_std: float, draws: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Draws from the one-step PMC kernel on a 1-D target.

    Each draw samples ``N`` points from ``N(proposal_mean, proposal_std^2)``,
    weights them by ``pi/q`` and returns one point picked multinomially. The
    density of these draws approaches the target as ``N`` grows.
    """
    X = proposal_mean + proposal_std * rng.standard_normal((draws, N))
    log_q = -0.5 * ((X - proposal_mean) / proposal_std) ** 2
    log_pi = target.log_density(X.reshape(-1, 1)).reshape(draws, N)
    lw = log_weights(log_pi, log_q)
    lw = lw - lw.max(axis=1, keepdims=True)
    p = np.exp(lw)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(draws) * cdf[:, -1]
    pick = (cdf < u[:, None]).sum(axis=1)
    return X[np.arange(draws), np.minimum(pick, N - 1)]


def histogram_tv(samples, target, bins: int, range_: tuple) -> float:
    """Total-variation distance between a histogram of ``samples`` and the target's bin masses.

    Bin masses of the target come from a fine midpoint rule and are
    normalized over ``range_``.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    edges = np.linspace(range_[0], range_[1], bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / samples.size
    sub = 50
    fine = np.linspace(range_[0], range_[1], bins * sub + 1)
    mid = 0.5 * (fine[1:] + fine[:-1])
    dens = np.exp(target.log_density(mid[:, None]))
    mass = dens.reshape(bins, sub).sum(axis=1)
    mass = mass / mass.sum()
    return 0.5 * float(np.abs(emp - mass).sum())
