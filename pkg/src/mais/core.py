"""Shared types, weight normalization and the seeding contract.

Every sampler in the package works in log space; raw weights only appear
when they are normalized or summed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaisError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MaisError, ValueError):
    """Invalid sampler or experiment configuration."""


class DimensionMismatch(MaisError, ValueError):
    pass


class AllZeroWeights(MaisError):
    """Every weight in a batch is zero (total proposal/target mismatch)."""


class NonFiniteWeight(MaisError, ValueError):
    pass


class NoReference(MaisError):
    pass


# Purposes used as the last element of a stream key. Keeping these distinct
# makes the lower (sampling) level reproducible independently of the upper
# (adaptation) level.
INIT_STREAM = 0
ADAPT_STREAM = 1
SAMPLE_STREAM = 2
POPULATION_STREAM = 3


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(master_seed, stream_id)``.

    The child seed is derived with :class:`numpy.random.SeedSequence`, using
    ``stream_id`` (plus an optional purpose tag) as the spawn key, so distinct
    ids give statistically independent PCG64 streams.
    """

    master_seed: int
    stream_id: int
    purpose: int = 0

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.master_seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream_id), int(self.purpose)),
        )

    def child_seed(self) -> int:
        """64-bit integer seed for this stream (used for replications)."""
        return int(self.seed_sequence().generate_state(1, dtype=np.uint64)[0])

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def make_rng(master_seed: int, stream_id: int, purpose: int = 0) -> np.random.Generator:
    return RngStream(master_seed, stream_id, purpose).generator()


@dataclass(frozen=True)
class WeightedSample:
    """One weighted draw; ``n`` chain, ``t`` iteration, ``m`` replica index."""

    x: np.ndarray
    raw_weight: float
    n: int
    t: int
    m: int


def log_sum_exp(log_values, axis=None):
    """Return ``log(sum(exp(log_values)))`` computed with a max shift.

    ``-inf`` entries are allowed; an all ``-inf`` input gives ``-inf``.
    ``+inf`` propagates as ``+inf``.
    """
    v = np.asarray(log_values, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sum(np.exp(v - shift), axis=axis, keepdims=True)
        out = np.log(s) + shift
    out = np.where(np.isposinf(vmax), np.inf, out)
    out = np.where(np.isneginf(vmax), -np.inf, out)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def normalize_weights(weights) -> np.ndarray:
    """Normalize nonnegative raw weights so they sum to one.

    Raises
    ------
    NonFiniteWeight
        If any weight is NaN or infinite.
    AllZeroWeights
        If every weight is zero.
    """
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeight("weights contain NaN or inf")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise AllZeroWeights("all weights are zero")
    return w / total


def normalize_log_weights(log_weights) -> np.ndarray:
    """Normalized probabilities from log weights (``-inf`` means weight 0)."""
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)) or np.any(np.isposinf(lw)):
        raise NonFiniteWeight("log weights contain NaN or +inf")
    top = lw.max()
    if np.isneginf(top):
        raise AllZeroWeights("all weights are zero")
    p = np.exp(lw - top)
    return p / p.sum()
