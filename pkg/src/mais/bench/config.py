"""INI experiment files.

Four sections::

    [target]
    name = mixture5            ; registry name, other keys are factory arguments

    [algorithm]
    algorithm = population     ; static | rwis | population | gamis | pmc | parallel_mh
    adaptation = parallel_mh   ; parallel_mh | block_mh | smh | mh_within_gibbs | pmc_resample | none
    denominator = spatial      ; standard | spatial | temporal | full
    N = 100
    M = 19
    T = 100                    ; or: budget = 200000 (T derived by floor division)
    sigma = 10                 ; number or "random" (with sigma_bounds = 1, 10)
    lambda = 10
    init = In1                 ; In1 | In2 | "low, high" | init_low / init_high per dimension

    [sweep]
    sigma = 0.5, 1, 2, 5, 10, 70   ; comma-separated lists; cartesian product

    [harness]
    experiment = mixture-pimais
    replications = 100
    seed = 1
    jobs = 1
    reference = analytic       ; analytic | quadrature | frozen

Errors carry the file, line and field that caused them.
"""
from __future__ import annotations

import configparser
import re
from pathlib import Path
from typing import Optional

from ..core import ConfigError
from ..targets import target_names
from .harness import PARAM_KEYS, ExperimentSpec

SECTIONS = ("target", "algorithm", "sweep", "harness")
HARNESS_KEYS = ("experiment", "replications", "seed", "jobs", "reference")
_STRING_KEYS = ("algorithm", "adaptation", "denominator")
_INT_KEYS = ("N", "M", "T", "budget", "history_cap")


class ConfigParseError(ConfigError):
    def __init__(self, message: str, source: str = "<string>", line: Optional[int] = None,
                 field: Optional[str] = None):
        self.source, self.line, self.field = source, line, field
        where = source if line is None else f"{source}:{line}"
        if field:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")


def _locate(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if k.lower() == key.lower():
                return i
    return None


def _scalar(value: str):
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def _list(value: str) -> list:
    return [_scalar(v) for v in value.split(",") if v.strip()]


def _param(key: str, value: str):
    if key in _STRING_KEYS:
        return value.strip().lower()
    if key in _INT_KEYS:
        v = _scalar(value)
        if not isinstance(v, int):
            raise ValueError(f"expected an integer, got {value.strip()!r}")
        return v
    if key in ("sigma_bounds", "smh_mean"):
        return [float(v) for v in _list(value)]
    if key == "init":
        parts = _list(value)
        if len(parts) == 1 and isinstance(parts[0], str):
            return parts[0]
        if len(parts) == 2 and all(isinstance(p, (int, float)) for p in parts):
            return (float(parts[0]), float(parts[1]))
        raise ValueError("init must be a preset name or 'low, high'")
    v = _scalar(value)
    if key == "sigma" and isinstance(v, str) and v != "random":
        raise ValueError("sigma must be a number or 'random'")
    if key in ("lambda", "smh_scale") and not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    return float(v) if isinstance(v, int) and key in ("sigma", "lambda", "smh_scale") else v


def parse_experiment(text: str, source: str = "<string>") -> ExperimentSpec:
    """Parse the text of an experiment file into an :class:`ExperimentSpec`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep N / M / T case
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigParseError(str(exc).splitlines()[0], source, getattr(exc, "lineno", None)) from None

    def fail(msg, section, key=None):
        raise ConfigParseError(msg, source, _locate(text, section, key),
                               f"{section}.{key}" if key else section)

    for s in cp.sections():
        if s not in SECTIONS:
            fail(f"unknown section; expected one of {', '.join(SECTIONS)}", s)
    if not cp.has_section("target") or "name" not in cp["target"]:
        raise ConfigParseError("missing [target] name", source, _locate(text, "target"), "target.name")
    target = cp["target"]["name"].strip()
    if target not in target_names():
        fail(f"unknown target {target!r}; known: {', '.join(target_names())}", "target", "name")
    target_kwargs = {k: _scalar(v) for k, v in cp["target"].items() if k != "name"}

    params: dict = {}
    low = high = None
    if cp.has_section("algorithm"):
        for k, v in cp["algorithm"].items():
            if k in ("init_low", "init_high"):
                try:
                    vals = [float(x) for x in _list(v)]
                except (TypeError, ValueError):
                    fail("expected a comma-separated list of numbers", "algorithm", k)
                low, high = (vals, high) if k == "init_low" else (low, vals)
                continue
            if k not in PARAM_KEYS:
                fail(f"unknown key; expected one of {', '.join(PARAM_KEYS)}", "algorithm", k)
            try:
                params[k] = _param(k, v)
            except ValueError as exc:
                fail(str(exc), "algorithm", k)
    if (low is None) != (high is None):
        fail("init_low and init_high must be given together", "algorithm", "init_low")
    if low is not None:
        params["init"] = (low, high)

    sweep: dict = {}
    if cp.has_section("sweep"):
        for k, v in cp["sweep"].items():
            if k not in PARAM_KEYS:
                fail(f"unknown key; expected one of {', '.join(PARAM_KEYS)}", "sweep", k)
            try:
                values = [_param(k, x) for x in v.split(",") if x.strip()]
            except ValueError as exc:
                fail(str(exc), "sweep", k)
            if not values:
                fail("empty sweep list", "sweep", k)
            sweep[k] = values

    h = cp["harness"] if cp.has_section("harness") else {}
    for k in h:
        if k not in HARNESS_KEYS:
            fail(f"unknown key; expected one of {', '.join(HARNESS_KEYS)}", "harness", k)
    ints = {}
    for k, default in (("replications", 1), ("seed", 0), ("jobs", 1)):
        v = _scalar(h.get(k, str(default)))
        if not isinstance(v, int):
            fail("expected an integer", "harness", k)
        ints[k] = v
    name = h.get("experiment", Path(source).stem).strip()
    try:
        spec = ExperimentSpec(
            name=name, target=target, target_kwargs=target_kwargs, params=params, sweep=sweep,
            replications=ints["replications"], master_seed=ints["seed"],
            reference=h.get("reference", "analytic").strip(), jobs=ints["jobs"],
        )
        for point in spec.points():
            spec.build_config(point, 0)
    except ConfigParseError:
        raise
    except (ConfigError, ValueError) as exc:
        raise ConfigParseError(str(exc), source) from None
    return spec


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read file: {exc.strerror}", str(path)) from None
    return parse_experiment(text, str(path))
