"""Benchmark targets.

Each target exposes an unnormalized, vectorized log-density: a single point
of shape ``(D,)`` maps to a float, a batch of shape ``(K, D)`` to ``(K,)``.
Regions where the density is zero return ``-inf``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DimensionMismatch, MaisError, NoReference, log_sum_exp

LOG_2PI = math.log(2.0 * math.pi)


class SingularGeometry(MaisError, ValueError):
    """The emitter sits exactly on a sensor (log of zero distance)."""


class StaleReference(NoReference):
    """A cached reference was computed for a different target definition."""


class TargetModel:
    """Unnormalized target density with optional reference values.

    Parameters
    ----------
    name : str
    dim : int
    log_density : callable
        Vectorized ``log pi``; receives an array of shape ``(K, dim)`` and
        returns shape ``(K,)``.
    reference_mean, reference_Z : optional
        Known moments; ``None`` when unknown.
    """

    def __init__(self, name: str, dim: int, log_density: Callable[[np.ndarray], np.ndarray],
                 reference_mean=None, reference_Z: Optional[float] = None,
                 description: str = "", spec: Optional[dict] = None):
        self.name = name
        self.dim = int(dim)
        self._log_density = log_density
        self.reference_mean = None if reference_mean is None else np.asarray(reference_mean, float)
        self.reference_Z = reference_Z
        self.description = description
        self.spec = spec or {"name": name, "dim": dim}

    def log_density(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionMismatch(f"{self.name}: expected dimension {self.dim}, got shape {x.shape}")
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.asarray(self._log_density(X), dtype=float)
        out = np.where(np.isnan(out), -np.inf, out)
        return float(out[0]) if single else out

    __call__ = log_density

    def spec_hash(self) -> str:
        blob = json.dumps(self.spec, sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        return f"TargetModel({self.name!r}, dim={self.dim})"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


def log_target(model: TargetModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"expected shape ({model.dim},), got {x.shape}")
    return model.log_density(x)


def true_moments(model: TargetModel):
    """Return ``(mean, Z)``; ``Z`` is ``None`` when unknown."""
    if model.reference_mean is None:
        raise NoReference(f"target {model.name!r} has no stored reference values")
    return model.reference_mean.copy(), model.reference_Z


# ---------------------------------------------------------------------------
# Gaussian mixtures


@dataclass
class GaussianMixtureSpec:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        self.means = np.atleast_2d(np.asarray(self.means, float))
        self.covariances = np.asarray(self.covariances, float)
        K, D = self.means.shape
        if self.covariances.shape != (K, D, D):
            raise ValueError("covariances must have shape (K, D, D)")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be a probability vector")
        for S in self.covariances:
            if not np.allclose(S, S.T):
                raise ValueError("covariance not symmetric")
        chol = np.linalg.cholesky(self.covariances)
        self._chol_inv = np.linalg.inv(chol)
        self._log_norm = -np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(1) - 0.5 * D * LOG_2PI

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def component_log_pdfs(self, X: np.ndarray) -> np.ndarray:
        """Per-component log densities, shape ``(K_points, n_components)``."""
        out = np.empty((X.shape[0], len(self.weights)))
        for k, mu in enumerate(self.means):
            z = (X - mu) @ self._chol_inv[k].T
            out[:, k] = self._log_norm[k] - 0.5 * np.sum(z * z, axis=1)
        return out

    def log_pdf(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return log_sum_exp(self.component_log_pdfs(X) + np.log(self.weights), axis=1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        out = np.empty((size, self.means.shape[1]))
        for k in range(len(self.weights)):
            idx = np.flatnonzero(comp == k)
            if idx.size:
                out[idx] = rng.multivariate_normal(self.means[k], self.covariances[k], size=idx.size)
        return out


def gaussian_mixture_target(name: str, spec: GaussianMixtureSpec, description: str = "") -> TargetModel:
    return TargetModel(
        name, spec.means.shape[1], spec.log_pdf,
        reference_mean=spec.mean, reference_Z=1.0, description=description,
        spec={"name": name, "weights": spec.weights, "means": spec.means, "covs": spec.covariances},
    )


FIVE_MODE_SPEC = GaussianMixtureSpec(
    weights=np.full(5, 0.2),
    means=[[-10, -10], [0, 16], [13, 8], [-9, 7], [14, -14]],
    covariances=[
        [[2, 0.6], [0.6, 1]],
        [[2, -0.4], [-0.4, 2]],
        [[2, 0.8], [0.8, 2]],
        [[3, 0], [0, 0.5]],
        [[2, -0.1], [-0.1, 2]],
    ],
)


def five_mode_mixture() -> TargetModel:
    return gaussian_mixture_target("mixture5", FIVE_MODE_SPEC,
                                   "bivariate mixture of five Gaussians, Z=1, mean [1.6, 1.4]")


def high_dim_mixture(dim: int = 10) -> TargetModel:
    """Equal-weight mixture of three isotropic Gaussians (std 8) in ``dim`` dimensions.

    Centres sit at -5, 6 and 3 in every coordinate, so each coordinate of the
    mean is 4/3.
    """
    centres = np.array([-5.0, 6.0, 3.0])
    var = 64.0
    log_w = math.log(1.0 / 3.0)
    norm = -0.5 * dim * (LOG_2PI + math.log(var))

    def logpdf(X):
        sq = np.stack([np.sum((X - c) ** 2, axis=1) for c in centres], axis=1)
        return log_sum_exp(log_w + norm - 0.5 * sq / var, axis=1)

    return TargetModel(f"mixture-hd{dim}", dim, logpdf, reference_mean=np.full(dim, 4.0 / 3.0),
                       reference_Z=1.0,
                       description=f"three isotropic Gaussians in {dim} dimensions, mean 4/3",
                       spec={"name": "mixture-hd", "dim": dim, "centres": centres, "var": var})


def gaussian_1d(scale: float = 1.0) -> TargetModel:
    """``pi(x) = exp(-x^2 / (2 scale^2))`` with ``Z = scale * sqrt(2 pi)``."""
    s2 = scale * scale
    return TargetModel(
        "gauss1d", 1, lambda X: -0.5 * X[:, 0] ** 2 / s2,
        reference_mean=np.zeros(1), reference_Z=scale * math.sqrt(2.0 * math.pi),
        description="unnormalized 1-D Gaussian exp(-x^2/2), Z = sqrt(2 pi)",
        spec={"name": "gauss1d", "scale": scale},
    )


BIMODAL_1D_SPEC = GaussianMixtureSpec(
    weights=[0.5, 0.5], means=[[-3.0], [3.0]], covariances=[[[1.0]], [[1.0]]],
)


def bimodal_1d() -> TargetModel:
    return gaussian_mixture_target("bimodal1d", BIMODAL_1D_SPEC,
                                   "1-D equal mixture of N(-3,1) and N(3,1)")


# ---------------------------------------------------------------------------
# Banana


@dataclass(frozen=True)
class BananaSpec:
    B: float = 10.0
    eta1: float = 4.0
    eta2: float = 5.0
    eta3: float = 5.0

    def __post_init__(self):
        if min(self.B, self.eta1, self.eta2, self.eta3) <= 0:
            raise ValueError("banana parameters must be strictly positive")

    def log_pdf(self, X):
        x1, x2 = X[:, 0], X[:, 1]
        return (-(4.0 - self.B * x1 - x2 ** 2) ** 2 / (2 * self.eta1 ** 2)
                - x1 ** 2 / (2 * self.eta2 ** 2) - x2 ** 2 / (2 * self.eta3 ** 2))


def banana(spec: BananaSpec = BananaSpec()) -> TargetModel:
    model = TargetModel("banana", 2, spec.log_pdf, description="2-D banana-shaped density",
                        spec={"name": "banana", **spec.__dict__})
    _attach_cached_reference(model)
    return model


def banana_quadrature(spec: BananaSpec = BananaSpec(), n1: int = 8001, n2: int = 6001,
                      box=((-40.0, 4.0), (-30.0, 30.0))):
    """Mean and Z of the banana density by trapezoid-free Riemann sum on a fine grid."""
    x1 = np.linspace(*box[0], n1)
    x2 = np.linspace(*box[1], n2)
    d = (x1[1] - x1[0]) * (x2[1] - x2[0])
    total = 0.0
    m1 = 0.0
    m2 = 0.0
    for chunk in np.array_split(np.arange(n1), 16):
        X1, X2 = np.meshgrid(x1[chunk], x2, indexing="ij")
        p = np.exp(spec.log_pdf(np.column_stack([X1.ravel(), X2.ravel()])))
        total += p.sum()
        m1 += (p * X1.ravel()).sum()
        m2 += (p * X2.ravel()).sum()
    return np.array([m1 / total, m2 / total]), total * d


# ---------------------------------------------------------------------------
# Sensor network localization


SENSORS = np.array([[-10.0, 2.0], [8.0, 8.0], [-20.0, -18.0]])
SENSOR_DATA_SEED = 20150601
SENSOR_TRUE_PARAMS = (3.0, 3.0, -20.0, 5.0)


@dataclass
class SensorNetworkSpec:
    sensor_positions: np.ndarray = field(default_factory=lambda: SENSORS.copy())
    observations: np.ndarray = field(default_factory=lambda: np.empty(0))
    sensor_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    # priors are N(0, 25) read as variance 25
    prior_std_x: float = 5.0
    prior_std_a: float = 5.0
    prior_std_omega: float = 5.0
    truncate_omega: bool = True
    reference_distance: float = 0.3

    def __post_init__(self):
        self.sensor_positions = np.asarray(self.sensor_positions, float)
        self.observations = np.asarray(self.observations, float)
        self.sensor_index = np.asarray(self.sensor_index, int)
        if self.observations.size % len(self.sensor_positions):
            raise ValueError("number of observations must be divisible by the number of sensors")

    def log_gains(self, X):
        """``log(||x - h_j|| / 0.3)`` for each observation, shape ``(K, D_y)``."""
        h = self.sensor_positions[self.sensor_index]
        dist = np.sqrt(((X[:, None, :2] - h[None]) ** 2).sum(-1))
        with np.errstate(divide="ignore"):
            return np.log(dist / self.reference_distance)

    def log_pdf(self, X):
        a = X[:, 2]
        w = X[:, 3]
        g = self.log_gains(X)
        n = self.observations.size
        resid = self.observations[None, :] - a[:, None] * g
        with np.errstate(divide="ignore", invalid="ignore"):
            loglik = -0.5 * np.sum(resid ** 2, axis=1) / w ** 2 - n * np.log(np.abs(w)) - 0.5 * n * LOG_2PI
        lp = (loglik
              + _norm_logpdf(X[:, 0], self.prior_std_x) + _norm_logpdf(X[:, 1], self.prior_std_x)
              + _norm_logpdf(a, self.prior_std_a) + _norm_logpdf(w, self.prior_std_omega))
        if self.truncate_omega:
            lp = np.where(w > 0, lp, -np.inf)
        return np.where(np.isfinite(g).all(axis=1), lp, -np.inf)


def _norm_logpdf(x, std):
    return -0.5 * (x / std) ** 2 - math.log(std) - 0.5 * LOG_2PI


def simulate_sensor_data(spec: SensorNetworkSpec, true_params, count_per_sensor: int,
                         rng: np.random.Generator):
    """Draw ``Y = a log(||x - h_j|| / 0.3) + omega * noise`` for every sensor.

    Returns ``(sensor_index, values)`` with sensors in blocks of ``count_per_sensor``.
    """
    x1, x2, a, omega = (float(v) for v in true_params)
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    x = np.array([x1, x2])
    dist = np.linalg.norm(spec.sensor_positions - x, axis=1)
    if np.any(dist == 0.0):
        raise SingularGeometry("emitter position coincides with a sensor")
    idx = np.repeat(np.arange(len(spec.sensor_positions)), count_per_sensor)
    mean = a * np.log(dist[idx] / spec.reference_distance)
    return idx, mean + omega * rng.standard_normal(idx.size)


def write_sensor_data(path, sensor_index, values) -> None:
    with open(path, "w") as fh:
        for j, y in zip(sensor_index, values):
            fh.write(f"{int(j)} {float(y):.17g}\n")


def read_sensor_data(path):
    idx, vals = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'sensor_index value'")
            idx.append(int(parts[0]))
            vals.append(float(parts[1]))
    return np.array(idx, dtype=int), np.array(vals)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("mais") / "data" / name))


def frozen_sensor_spec(**overrides) -> SensorNetworkSpec:
    idx, vals = read_sensor_data(_data_path("sensor_observations.txt"))
    return SensorNetworkSpec(observations=vals, sensor_index=idx, **overrides)


def sensor_network(spec: Optional[SensorNetworkSpec] = None) -> TargetModel:
    spec = spec or frozen_sensor_spec()
    model = TargetModel(
        "sensor", 4, spec.log_pdf,
        description="posterior over (x1, x2, a, omega) from range measurements of 3 sensors",
        spec={"name": "sensor", "h": spec.sensor_positions, "y": spec.observations,
              "j": spec.sensor_index, "sx": spec.prior_std_x, "sa": spec.prior_std_a,
              "sw": spec.prior_std_omega, "trunc": spec.truncate_omega},
    )
    model.sensor_spec = spec
    _attach_cached_reference(model)
    return model


def sensor_quadrature(spec: SensorNetworkSpec, n_xy: int = 161, n_w: int = 161,
                      coarse: int = 81):
    """Posterior mean and Z of the sensor target by grid quadrature.

    The amplitude ``a`` enters the likelihood linearly with a Gaussian prior,
    so it is integrated in closed form; the grid covers ``(x1, x2, omega)``.
    A coarse pass over a wide box locates the posterior mass, a fine pass
    integrates over a box of +-8 posterior standard deviations around it.
    """
    y = spec.observations
    n = y.size
    sa2 = spec.prior_std_a ** 2

    def integrand(x1, x2, w):
        # x1, x2: (P,), w: (Q,) -> log marginal (P, Q) and E[a | x, w]
        X = np.column_stack([x1, x2])
        g = spec.log_gains(X)
        G = (g * g).sum(1)[:, None]
        Gy = (g @ y)[:, None]
        Y = float(y @ y)
        w2 = (w * w)[None, :]
        G = np.where(np.isfinite(G), G, 0.0)
        Gy = np.where(np.isfinite(Gy), Gy, 0.0)
        prec = G / w2 + 1.0 / sa2
        m = (Gy / w2) / prec
        logm = (-0.5 * n * (LOG_2PI + np.log(w2)) - 0.5 * np.log(sa2 * prec)
                - 0.5 * Y / w2 + 0.5 * m * m * prec)
        logm = logm + (_norm_logpdf(x1, spec.prior_std_x) + _norm_logpdf(x2, spec.prior_std_x))[:, None]
        logm = logm + _norm_logpdf(w, spec.prior_std_omega)[None, :]
        logm = np.where(np.isfinite(g).all(1)[:, None], logm, -np.inf)
        return logm, m

    def run(b1, b2, bw, n1, nw):
        g1 = np.linspace(*b1, n1)
        g2 = np.linspace(*b2, n1)
        gw = np.linspace(*bw, nw)
        X1, X2 = np.meshgrid(g1, g2, indexing="ij")
        x1, x2 = X1.ravel(), X2.ravel()
        logm, m = integrand(x1, x2, gw)
        top = logm.max()
        p = np.exp(logm - top)
        s = p.sum()
        mom = np.array([
            (p * x1[:, None]).sum(), (p * x2[:, None]).sum(),
            (p * m).sum(), (p * gw[None, :]).sum(),
        ]) / s
        sq = np.array([
            (p * x1[:, None] ** 2).sum(), (p * x2[:, None] ** 2).sum(),
            (p * gw[None, :] ** 2).sum(),
        ]) / s
        cell = (g1[1] - g1[0]) * (g2[1] - g2[0]) * (gw[1] - gw[0])
        logZ = top + math.log(s * cell)
        std = np.sqrt(np.maximum(sq - mom[[0, 1, 3]] ** 2, 1e-12))
        return mom, std, logZ

    mom, std, _ = run((-40.0, 40.0), (-40.0, 40.0), (1e-3, 40.0), coarse, coarse)
    half = 8.0 * np.maximum(std, 0.05)
    b1 = (mom[0] - half[0], mom[0] + half[0])
    b2 = (mom[1] - half[1], mom[1] + half[1])
    bw = (max(mom[3] - half[2], 1e-6), mom[3] + half[2])
    mom, _, logZ = run(b1, b2, bw, n_xy, n_w)
    return mom, math.exp(logZ)


# ---------------------------------------------------------------------------
# Reference cache


REFERENCE_FILE = "references.json"


def _attach_cached_reference(model: TargetModel) -> None:
    path = _data_path(REFERENCE_FILE)
    if not path.exists():
        return
    entry = json.loads(path.read_text()).get(model.name)
    if entry is None or entry.get("hash") != model.spec_hash():
        return
    model.reference_mean = np.asarray(entry["mean"], float)
    model.reference_Z = entry.get("Z")


def checked_reference(model: TargetModel, path=None):
    """Load a reference from a cache file, refusing entries with a stale hash."""
    path = Path(path) if path is not None else _data_path(REFERENCE_FILE)
    if not path.exists():
        raise NoReference(f"no reference cache at {path}")
    entry = json.loads(path.read_text()).get(model.name)
    if entry is None:
        raise NoReference(f"no cached reference for {model.name!r} in {path}")
    if entry.get("hash") != model.spec_hash():
        raise StaleReference(f"cached reference for {model.name!r} was computed for another target definition")
    return np.asarray(entry["mean"], float), entry.get("Z")


def compute_reference(model: TargetModel):
    """Run the quadrature matching ``model`` and return ``(mean, Z)``."""
    if model.name == "banana":
        return banana_quadrature(BananaSpec(**{k: v for k, v in model.spec.items() if k != "name"}))
    if model.name == "sensor":
        return sensor_quadrature(model.sensor_spec)
    if model.reference_mean is not None:
        return model.reference_mean.copy(), model.reference_Z
    raise NoReference(f"no quadrature available for {model.name!r}")


def write_reference(model: TargetModel, mean, Z, path) -> None:
    path = Path(path)
    data = json.loads(path.read_text()) if path.exists() else {}
    data[model.name] = {
        "hash": model.spec_hash(),
        "mean": [float(v) for v in np.atleast_1d(mean)],
        "Z": None if Z is None else float(Z),
    }
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Registry


_REGISTRY: dict[str, Callable[..., TargetModel]] = {
    "gauss1d": gaussian_1d,
    "bimodal1d": bimodal_1d,
    "mixture5": five_mode_mixture,
    "banana": banana,
    "mixture-hd": high_dim_mixture,
    "sensor": sensor_network,
}


def target_names() -> Sequence[str]:
    return list(_REGISTRY)


def get_target(name: str, **kwargs) -> TargetModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown target {name!r}; known: {', '.join(_REGISTRY)}") from None
    return factory(**kwargs)
