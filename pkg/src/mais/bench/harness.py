"""Replicated experiments, MSE against references and CSV export."""
from __future__ import annotations

import csv
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..adaptation import AdaptationKernel
from ..core import ConfigError, NoReference, RngStream
from ..samplers import SamplerConfig, Unavailable, iterations_for_budget, run
from ..targets import TargetModel, checked_reference, get_target
from ..weighting import DenominatorScheme

REFERENCE_SOURCES = ("analytic", "quadrature", "frozen")

# Keys accepted in the algorithm section / sweeps, with their parsers.
PARAM_KEYS = (
    "algorithm", "N", "M", "T", "budget", "sigma", "sigma_bounds", "lambda",
    "adaptation", "denominator", "init", "smh_mean", "smh_scale", "history_cap",
)

FIXED_COLUMNS = ("experiment", "algorithm", "target", "N", "M", "T", "sigma", "lambda",
                 "scheme", "adaptation", "replication", "seed")
TAIL_COLUMNS = ("Z_hat", "E", "wall_time_s")


@dataclass
class ExperimentSpec:
    """A replicated experiment over the cartesian product of ``sweep``.

    ``params`` holds the algorithm settings (see :data:`PARAM_KEYS`); a
    ``budget`` entry fixes the number of iterations by floor division of the
    evaluation budget.
    """

    name: str
    target: str
    target_kwargs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    replications: int = 1
    master_seed: int = 0
    reference: str = "analytic"
    jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.reference not in REFERENCE_SOURCES:
            raise ConfigError(f"reference must be one of {REFERENCE_SOURCES}")
        for k in list(self.params) + list(self.sweep):
            if k not in PARAM_KEYS:
                raise ConfigError(f"unknown parameter {k!r}")

    def points(self) -> list[dict]:
        keys = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            p = dict(self.params)
            p.update(zip(keys, combo))
            out.append(p)
        return out

    def replication_seed(self, r: int) -> int:
        return RngStream(self.master_seed, r).child_seed()

    def target_model(self) -> TargetModel:
        return _target(self.target, tuple(sorted(self.target_kwargs.items())))

    def build_config(self, point: dict, seed: int) -> SamplerConfig:
        return build_config(self.target_model(), point, seed)


@lru_cache(maxsize=None)
def _target(name: str, kwargs: tuple) -> TargetModel:
    return get_target(name, **dict(kwargs))


def build_config(target: TargetModel, point: dict, seed: int) -> SamplerConfig:
    """Turn one sweep point into a :class:`SamplerConfig`."""
    p = dict(point)
    algorithm = p.get("algorithm", "population")
    variant = p.get("adaptation", "pmc_resample" if algorithm == "pmc" else
                    "none" if algorithm == "static" else "parallel_mh")
    adaptation = AdaptationKernel(
        variant,
        scales=p.get("lambda", 10.0),
        smh_mean=p.get("smh_mean"),
        smh_scale=p.get("smh_scale", p.get("lambda", 10.0)),
    )
    N, M = int(p.get("N", 100)), int(p.get("M", 19 if algorithm != "pmc" else 1))
    if "budget" in p:
        if algorithm == "parallel_mh":
            T = max(1, int(p["budget"]) // N)
        elif algorithm in ("static", "pmc"):
            T = max(1, int(p["budget"]) // (N * M))
        else:
            T = iterations_for_budget(int(p["budget"]), N, M, variant)
    else:
        T = int(p.get("T", 100))
    kw = {}
    if "history_cap" in p:
        kw["history_cap"] = int(p["history_cap"])
    if "sigma_bounds" in p:
        kw["sigma_bounds"] = tuple(p["sigma_bounds"])
    return SamplerConfig(
        target=target, N=N, M=M, T=T, algorithm=algorithm,
        denominator=DenominatorScheme(p.get("denominator", "spatial")),
        adaptation=adaptation,
        sigma=p.get("sigma", 10.0),
        init=p.get("init", "In1"),
        master_seed=seed,
        **kw,
    )


@dataclass(frozen=True)
class ResultRecord:
    experiment: str
    algorithm: str
    target: str
    N: int
    M: int
    T: int
    sigma: object
    lam: object
    scheme: str
    adaptation: str
    replication: int
    seed: int
    I_hat: tuple
    Z_hat: Optional[float]
    E: int
    wall_time_s: float

    def point_key(self) -> tuple:
        return (self.algorithm, self.N, self.M, self.T, str(self.sigma), str(self.lam),
                self.scheme, self.adaptation)


def _task(args) -> ResultRecord:
    spec_name, target_name, target_kwargs, point, seed, replication = args
    target = _target(target_name, target_kwargs)
    cfg = build_config(target, point, seed)
    res = run(cfg)
    Z = None if res.Z_hat is Unavailable else float(res.Z_hat)
    return ResultRecord(
        experiment=spec_name,
        algorithm=cfg.algorithm,
        target=target.name,
        N=cfg.N, M=cfg.M, T=cfg.T,
        sigma=cfg.sigma if isinstance(cfg.sigma, str) else float(np.asarray(cfg.sigma).flat[0]),
        lam=float(np.asarray(cfg.adaptation.scales).flat[0]) if cfg.adaptation.variant != "smh"
        else float(cfg.adaptation.smh_scale),
        scheme=cfg.denominator.variant,
        adaptation="none" if cfg.algorithm == "static" else
        ("pmc_resample" if cfg.algorithm == "pmc" else cfg.adaptation.variant),
        replication=replication,
        seed=seed,
        I_hat=tuple(float(v) for v in res.I_hat),
        Z_hat=Z,
        E=int(res.eval_count),
        wall_time_s=float(res.wall_time),
    )


def run_experiment(spec: ExperimentSpec, jobs: Optional[int] = None) -> list[ResultRecord]:
    """Run every (sweep point, replication) pair; records are returned in that order.

    Replication ``r`` uses the seed derived from ``(master_seed, r)`` at
    every sweep point, so results do not depend on ``jobs``.
    """
    jobs = spec.jobs if jobs is None else jobs
    kwargs = tuple(sorted(spec.target_kwargs.items()))
    spec.target_model()  # fail early on unknown targets
    tasks = [(spec.name, spec.target, kwargs, point, spec.replication_seed(r), r)
             for point in spec.points() for r in range(spec.replications)]
    if jobs <= 1 or len(tasks) <= 1:
        records = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return records


def reference_values(spec: ExperimentSpec):
    """Reference ``(mean, Z)`` for the experiment's target."""
    target = spec.target_model()
    if spec.reference == "analytic":
        if target.reference_mean is None:
            raise NoReference(f"target {target.name!r} has no analytic reference")
        return target.reference_mean, target.reference_Z
    return checked_reference(target)


@dataclass
class MseSummary:
    mse: np.ndarray
    mse_Z: Optional[float]
    count: int

    @property
    def mean_mse(self) -> float:
        """MSE averaged over the components of the mean."""
        return float(np.mean(self.mse))


def compute_mse(records: Sequence[ResultRecord], reference_mean=None,
                reference_Z: Optional[float] = None) -> MseSummary:
    """Per-component MSE of ``I_hat`` and the MSE of ``Z_hat``.

    Records without a ``Z_hat`` (e.g. plain MCMC) are left out of the Z term.
    """
    if not records:
        raise ValueError("compute_mse needs at least one record")
    if reference_mean is None and reference_Z is None:
        raise NoReference("no reference given")
    mse = np.full(len(records[0].I_hat), np.nan)
    if reference_mean is not None:
        # sorted so the floating-point sum does not depend on record order
        I = np.array(sorted(r.I_hat for r in records))
        mse = np.mean((I - np.asarray(reference_mean, float)) ** 2, axis=0)
    mse_Z = None
    if reference_Z is not None:
        Z = np.array(sorted(r.Z_hat for r in records if r.Z_hat is not None))
        if Z.size:
            mse_Z = float(np.mean((Z - reference_Z) ** 2))
    return MseSummary(mse, mse_Z, len(records))


def group_by_point(records: Sequence[ResultRecord]) -> dict:
    groups: dict = {}
    for r in records:
        groups.setdefault(r.point_key(), []).append(r)
    return groups


# ---------------------------------------------------------------------------
# CSV

def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def csv_header(dim: int) -> list[str]:
    return list(FIXED_COLUMNS) + [f"I_hat_{d + 1}" for d in range(dim)] + list(TAIL_COLUMNS)


def write_csv(records: Sequence[ResultRecord], fh, dim: Optional[int] = None) -> None:
    """Write records to an open text stream (see :func:`export_csv`)."""
    if dim is None:
        dim = len(records[0].I_hat) if records else 1
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(csv_header(dim))
    for r in records:
        if len(r.I_hat) != dim:
            raise ValueError("records of different dimensions cannot share a CSV")
        w.writerow([_fmt(v) for v in (
            r.experiment, r.algorithm, r.target, r.N, r.M, r.T, r.sigma, r.lam,
            r.scheme, r.adaptation, r.replication, r.seed)]
            + [_fmt(v) for v in r.I_hat]
            + [_fmt(r.Z_hat), _fmt(r.E), _fmt(r.wall_time_s)])


def export_csv(records: Sequence[ResultRecord], path, dim: Optional[int] = None) -> None:
    """Write a header row and one row per record (floats with 17 significant digits).

    ``dim`` sets the number of ``I_hat`` columns for an empty record set.
    """
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            write_csv(records, fh, dim)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _num_or_str(s: str):
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path) -> list[ResultRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_fixed, n_tail = len(FIXED_COLUMNS), len(TAIL_COLUMNS)
    dim = len(header) - n_fixed - n_tail
    out = []
    for row in body:
        if len(row) != len(header):
            raise ValueError(f"{path}: row has {len(row)} fields, header has {len(header)}")
        f = dict(zip(header, row))
        out.append(ResultRecord(
            experiment=f["experiment"], algorithm=f["algorithm"], target=f["target"],
            N=int(f["N"]), M=int(f["M"]), T=int(f["T"]),
            sigma=_num_or_str(f["sigma"]), lam=_num_or_str(f["lambda"]),
            scheme=f["scheme"], adaptation=f["adaptation"],
            replication=int(f["replication"]), seed=int(f["seed"]),
            I_hat=tuple(float(row[n_fixed + d]) for d in range(dim)),
            Z_hat=None if f["Z_hat"] == "NA" else float(f["Z_hat"]),
            E=int(f["E"]), wall_time_s=float(f["wall_time_s"]),
        ))
    return out
