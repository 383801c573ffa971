"""Importance-sampling estimators: batch, recursive and combined."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import AllZeroWeights, MaisError, NonFiniteWeight, normalize_weights


class AllZeroPartials(MaisError):
    pass


def _identity(X):
    return X


def _apply(f, X) -> np.ndarray:
    fx = np.asarray(f(np.atleast_2d(X)), dtype=float)
    return fx[:, None] if fx.ndim == 1 else fx


def batch_estimate(X, weights, f: Callable = _identity):
    """Self-normalized estimate of ``E[f(X)]`` and the mean raw weight.

    Parameters
    ----------
    X : (K, D) array
    weights : (K,) raw weights
    f : callable mapping ``(K, D)`` to ``(K, P)`` (identity by default)

    Returns
    -------
    I_hat : (P,) array
    Z_hat : float
    """
    w = np.asarray(weights, dtype=float)
    rho = normalize_weights(w)
    return rho @ _apply(f, X), float(w.mean())


@dataclass
class RunningEstimator:
    """Accumulators ``H_t``, ``I_t`` and ``Z_t`` of an iterative sampler.

    ``samples_per_iteration`` is ``N * M``; ``Z_hat = H / (N M t)``.
    """

    samples_per_iteration: int
    H: float = 0.0
    I_hat: Optional[np.ndarray] = None
    t: int = 0
    total_samples: int = 0

    @property
    def Z_hat(self) -> float:
        if self.t == 0:
            return 0.0
        return self.H / (self.samples_per_iteration * self.t)

    def update(self, X, weights, f: Callable = _identity) -> "RunningEstimator":
        """Fold one iteration's batch in; returns ``self``."""
        w = np.asarray(weights, dtype=float)
        if not np.all(np.isfinite(w)):
            raise NonFiniteWeight("batch weights must be finite")
        fx = _apply(f, X)
        S = float(w.sum())
        H_new = self.H + S
        if self.I_hat is None:
            self.I_hat = np.zeros(fx.shape[1])
        if S > 0.0:
            A = (w @ fx) / S
            self.I_hat = (self.H / H_new) * self.I_hat + (S / H_new) * A
        self.H = H_new
        self.t += 1
        self.total_samples += w.size
        return self

    def copy(self) -> "RunningEstimator":
        return RunningEstimator(self.samples_per_iteration, self.H,
                                None if self.I_hat is None else self.I_hat.copy(),
                                self.t, self.total_samples)


def recursive_update(state: RunningEstimator, X, weights, f: Callable = _identity) -> RunningEstimator:
    """Pure version of :meth:`RunningEstimator.update`.

    Raises :class:`AllZeroWeights` if the cumulative weight is still zero
    after the batch.
    """
    new = state.copy().update(X, weights, f)
    if new.H <= 0.0:
        raise AllZeroWeights("cumulative weight is still zero")
    return new


def combine_partial_estimators(I_hats, Z_hats, counts: Optional[Sequence[float]] = None):
    """Convex combination of partial estimators.

    ``I = sum_n c_n Z_n I_n / sum_n c_n Z_n`` and ``Z = sum_n c_n Z_n / sum_n c_n``
    where ``c_n`` are the sample counts (all equal by default).
    """
    I_hats = np.atleast_2d(np.asarray(I_hats, dtype=float))
    if I_hats.shape[0] == 1 and np.ndim(Z_hats) == 1 and len(Z_hats) > 1:
        I_hats = I_hats.T
    Z = np.asarray(Z_hats, dtype=float)
    c = np.ones_like(Z) if counts is None else np.asarray(counts, dtype=float)
    mass = c * Z
    if not np.any(mass > 0):
        raise AllZeroPartials("every partial estimator has zero mass")
    I = (mass / mass.sum()) @ I_hats
    return I, float(mass.sum() / c.sum())


@dataclass
class ParticleApproximation:
    support: np.ndarray
    probabilities: np.ndarray

    def mean(self) -> np.ndarray:
        return self.probabilities @ self.support


def particle_approximation(X, weights) -> ParticleApproximation:
    return ParticleApproximation(np.atleast_2d(np.asarray(X, dtype=float)), normalize_weights(weights))
