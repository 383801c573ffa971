"""Gaussian proposals and the mixture denominators used in MIS weights.

A weight is ``pi(x) / Phi_{n,t}(x)``, where ``Phi_{n,t}`` is one of

* ``standard``  - the proposal that produced the sample, ``q_{n,t}``
* ``spatial``   - mean of the N proposals of iteration ``t``
* ``temporal``  - mean over the iterations of chain ``n``
* ``full``      - mean of every proposal
* ``partition`` - mean over the group of a user supplied partition

All mixtures are evaluated with log-sum-exp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ConfigError, DimensionMismatch, MaisError, log_sum_exp

LOG_2PI = math.log(2.0 * math.pi)

VARIANTS = ("standard", "spatial", "temporal", "full", "partition")


class NonPositiveDefinite(ConfigError):
    pass


class UnknownIndex(MaisError, KeyError):
    pass


class PartitionNotCovering(ConfigError):
    pass


def cholesky_factor(cov) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise NonPositiveDefinite("covariance must be square")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise NonPositiveDefinite("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite("covariance is not positive definite") from None


class ProposalComponent:
    """Gaussian ``q(x | mean, cov)``; the Cholesky factor is validated at construction."""

    family = "gaussian"

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatch("covariance shape does not match the mean")
        self.chol = cholesky_factor(self.cov)
        self.chol_inv = np.linalg.inv(self.chol)
        self.log_norm = -np.log(np.diag(self.chol)).sum() - 0.5 * self.mean.size * LOG_2PI

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {x.shape[-1]}")
        z = (x - self.mean) @ self.chol_inv.T
        return self.log_norm - 0.5 * np.sum(z * z, axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + rng.standard_normal((size, self.dim)) @ self.chol.T


def proposal_log_pdf(component: ProposalComponent, x) -> float:
    return float(component.log_pdf(np.asarray(x, dtype=float)))


def _log_pdf_jk(X, means, chol_inv, log_norm) -> np.ndarray:
    J, D, _ = chol_inv.shape
    # laid out as (D, J, K) so the reductions run over contiguous blocks
    A = np.ascontiguousarray(chol_inv.transpose(1, 0, 2)).reshape(D * J, D)
    z = (A @ X.T).reshape(D, J, X.shape[0])
    z -= np.einsum("jab,jb->aj", chol_inv, means)[:, :, None]
    z *= z
    return log_norm[:, None] - 0.5 * z.sum(axis=0)


def gaussian_log_pdf_matrix(X, means, chol_inv, log_norm) -> np.ndarray:
    """``log q_j(x_k)`` for all points and components, shape ``(K, J)``.

    ``chol_inv`` holds the inverse Cholesky factors, shape ``(J, D, D)``;
    ``log_norm`` the log normalizers, shape ``(J,)``.
    """
    return _log_pdf_jk(np.asarray(X, dtype=float), means, chol_inv, log_norm).T


def gaussian_log_pdf_rows(X, rows, means, chol_inv, log_norm) -> np.ndarray:
    """``log q_{rows[k]}(x_k)``: each point against its own component only."""
    X = np.asarray(X, dtype=float)
    z = np.einsum("kab,kb->ka", chol_inv[rows], X - means[rows])
    return log_norm[rows] - 0.5 * np.einsum("ka,ka->k", z, z)


def log_mixture_pdf(X, means, chol_inv, log_norm, log_mix=None, chunk: int = 4_000_000) -> np.ndarray:
    """``log sum_j a_j q_j(x_k)`` for every point, evaluated in row blocks.

    ``log_mix`` holds ``log a_j`` (uniform when ``None``). Blocks keep the
    intermediate ``(K, J, D)`` array below ``chunk`` entries.
    """
    X = np.asarray(X, dtype=float)
    J, D, _ = chol_inv.shape
    if log_mix is None:
        log_mix = np.full(J, -math.log(J))
    step = max(1, chunk // (J * D))
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], step):
        lq = _log_pdf_jk(X[lo:lo + step], means, chol_inv, log_norm)
        lq += log_mix[:, None]
        out[lo:lo + step] = log_sum_exp(lq, axis=0)
    return out


class ProposalSet:
    """Proposals indexed by ``(n, t)`` pairs, with optional sample counts."""

    def __init__(self, components: dict, counts: Optional[dict] = None):
        if not components:
            raise ConfigError("empty proposal set")
        self.index = list(components)
        self.position = {key: j for j, key in enumerate(self.index)}
        comps = [components[k] for k in self.index]
        self.dim = comps[0].dim
        self.means = np.array([c.mean for c in comps])
        self.chol_inv = np.array([c.chol_inv for c in comps])
        self.log_norm = np.array([c.log_norm for c in comps])
        self.components = components
        if counts is None:
            self.counts = np.ones(len(comps))
        else:
            self.counts = np.array([counts[k] for k in self.index], dtype=float)
            if np.any(self.counts < 1):
                raise ConfigError("sample counts must be >= 1")

    @classmethod
    def from_grid(cls, means, covs, counts=None):
        """Build from arrays indexed ``[t][n]`` (means) and ``[n]`` (covariances)."""
        means = np.asarray(means, dtype=float)
        if means.ndim == 2:
            means = means[None]
        T, N, _ = means.shape
        comps = {(n, t): ProposalComponent(means[t, n], covs[n]) for t in range(T) for n in range(N)}
        cnt = None
        if counts is not None:
            counts = np.broadcast_to(np.asarray(counts), (T, N))
            cnt = {(n, t): counts[t, n] for t in range(T) for n in range(N)}
        return cls(comps, cnt)

    def __len__(self):
        return len(self.index)

    def __getitem__(self, key) -> ProposalComponent:
        try:
            return self.components[key]
        except KeyError:
            raise UnknownIndex(key) from None

    def log_pdf_matrix(self, X) -> np.ndarray:
        return gaussian_log_pdf_matrix(X, self.means, self.chol_inv, self.log_norm)


@dataclass
class DenominatorScheme:
    """Which mixture divides the weight of a sample from ``q_{n,t}``.

    ``partition`` is a list of groups, each an iterable of ``(n, t)`` pairs.
    """

    variant: str = "spatial"
    partition: Optional[Sequence[Iterable]] = None

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown denominator {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "partition":
            if not self.partition:
                raise ConfigError("partition denominator needs a list of groups")
            self.partition = [frozenset(tuple(p) for p in g) for g in self.partition]
            seen = set()
            for g in self.partition:
                if seen & g:
                    raise ConfigError("partition groups must be disjoint")
                seen |= g
            self._group_of = {key: i for i, g in enumerate(self.partition) for key in g}

    @property
    def needs_history(self) -> bool:
        """True when past samples must be re-weighted as proposals accumulate."""
        return self.variant in ("temporal", "full", "partition")

    def group_key(self, n: int, t: int):
        """Label of the mixture group containing ``(n, t)``."""
        v = self.variant
        if v == "standard":
            return (n, t)
        if v == "spatial":
            return t
        if v == "temporal":
            return n
        if v == "full":
            return 0
        try:
            return self._group_of[(n, t)]
        except KeyError:
            raise PartitionNotCovering(f"index {(n, t)} is not covered by the partition") from None

    def members(self, proposals: ProposalSet, index) -> list:
        """Indices of ``proposals`` that form the mixture for ``index``."""
        if index not in proposals.position:
            raise UnknownIndex(index)
        key = self.group_key(*index)
        members = [k for k in proposals.index if self.group_key(*k) == key]
        return members

    def check_covers(self, proposals: ProposalSet) -> None:
        if self.variant == "partition":
            missing = [k for k in proposals.index if k not in self._group_of]
            if missing:
                raise PartitionNotCovering(f"{len(missing)} proposals not covered, e.g. {missing[0]}")


def _log_mixture_weights(proposals: ProposalSet, members) -> np.ndarray:
    cols = [proposals.position[k] for k in members]
    c = proposals.counts[cols]
    return np.asarray(cols), np.log(c / c.sum())


def denominator_log_value(scheme: DenominatorScheme, proposals: ProposalSet, index, x) -> float:
    """``log Phi_{n,t}(x)`` for the proposal with index ``(n, t)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != proposals.dim:
        raise DimensionMismatch(f"expected dimension {proposals.dim}")
    members = scheme.members(proposals, tuple(index))
    cols, logw = _log_mixture_weights(proposals, members)
    logq = gaussian_log_pdf_matrix(x, proposals.means[cols], proposals.chol_inv[cols],
                                   proposals.log_norm[cols])
    if scheme.variant == "standard":
        return float(logq[0, 0])
    return float(log_sum_exp(logq[0] + logw))


def log_denominators(scheme: DenominatorScheme, proposals: ProposalSet, X, indices) -> np.ndarray:
    """Vectorized ``log Phi`` for samples ``X`` with generating indices ``indices``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    indices = [tuple(i) for i in indices]
    scheme.check_covers(proposals)
    out = np.empty(len(indices))
    groups: dict = {}
    for k, idx in enumerate(indices):
        if idx not in proposals.position:
            raise UnknownIndex(idx)
        groups.setdefault(scheme.group_key(*idx) if scheme.variant != "standard" else idx, []).append(k)
    for key, rows in groups.items():
        members = scheme.members(proposals, indices[rows[0]])
        cols, logw = _log_mixture_weights(proposals, members)
        logq = gaussian_log_pdf_matrix(X[rows], proposals.means[cols], proposals.chol_inv[cols],
                                       proposals.log_norm[cols])
        out[rows] = logq[:, 0] if scheme.variant == "standard" else log_sum_exp(logq + logw, axis=1)
    return out


def log_weights(log_pi, log_phi) -> np.ndarray:
    """``log pi - log Phi`` with the convention that ``pi = 0`` gives ``-inf``."""
    log_pi = np.asarray(log_pi, dtype=float)
    log_phi = np.asarray(log_phi, dtype=float)
    with np.errstate(invalid="ignore"):
        lw = log_pi - log_phi
    return np.where(np.isneginf(log_pi) | np.isnan(lw), -np.inf, lw)


def compute_weights(X, indices, target, scheme: DenominatorScheme, proposals: ProposalSet) -> np.ndarray:
    """Raw weights ``pi(x) / Phi_{n,t}(x)``; zero where ``pi(x) = 0``, never NaN."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lw = log_weights(target.log_density(X), log_denominators(scheme, proposals, X, indices))
    return np.exp(lw)
