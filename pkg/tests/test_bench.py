import io
from importlib import resources

import numpy as np
import pytest

from mais.bench import (
    ConfigParseError,
    ExperimentSpec,
    ResultRecord,
    compute_mse,
    export_csv,
    load_experiment,
    parse_experiment,
    read_csv,
    run_experiment,
)
from mais.bench.cli import main
from mais.core import NoReference
from mais.samplers import eval_budget, run

SMALL = """
[target]
name = gauss1d

[algorithm]
algorithm = population
N = 3
M = 2
T = 5
sigma = 1.5
lambda = 1

[sweep]
denominator = spatial, temporal

[harness]
experiment = small
replications = 3
seed = 7
"""


def record(I, Z=1.0, **kw):
    base = dict(experiment="x", algorithm="population", target="gauss1d", N=1, M=1, T=1,
                sigma=1.0, lam=1.0, scheme="spatial", adaptation="parallel_mh", replication=0,
                seed=0, I_hat=tuple(I), Z_hat=Z, E=2, wall_time_s=0.1)
    base.update(kw)
    return ResultRecord(**base)


# --- MSE ----------------------------------------------------------------------

def test_mse_examples():
    assert compute_mse([record([0.0])], [0.0], 1.0).mse[0] == 0.0
    s = compute_mse([record([1.0], Z=2.0)], [0.0], 1.0)
    assert s.mse[0] == 1.0 and s.mse_Z == 1.0
    assert compute_mse([record([1.0]), record([-1.0])], [0.0]).mean_mse == 1.0


def test_mse_order_invariant():
    rng = np.random.default_rng(0)
    recs = [record(rng.normal(size=3), Z=rng.exponential()) for _ in range(50)]
    a = compute_mse(recs, np.zeros(3), 1.0)
    b = compute_mse(recs[::-1], np.zeros(3), 1.0)
    np.testing.assert_array_equal(a.mse, b.mse)
    assert a.mse_Z == b.mse_Z


def test_mse_skips_unavailable_Z():
    s = compute_mse([record([0.0], Z=None)], [0.0], 1.0)
    assert s.mse_Z is None


def test_mse_errors():
    with pytest.raises(ValueError):
        compute_mse([], [0.0])
    with pytest.raises(NoReference):
        compute_mse([record([0.0])])


# --- CSV -----------------------------------------------------------------------

def test_csv_header_only(tmp_path):
    p = tmp_path / "empty.csv"
    export_csv([], p, dim=2)
    lines = p.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].split(",")[-5:] == ["I_hat_1", "I_hat_2", "Z_hat", "E", "wall_time_s"]
    assert read_csv(p) == []


def test_csv_round_trip(tmp_path):
    recs = [record([0.1 + 1e-17, -2.0 / 3.0], Z=1 / 3), record([1.0, 2.0], Z=None, replication=1)]
    p = tmp_path / "r.csv"
    export_csv(recs, p)
    back = read_csv(p)
    assert back == recs
    header = p.read_text().splitlines()[0].split(",")
    assert all(len(line.split(",")) == len(header) for line in p.read_text().splitlines())
    assert "lambda" in header and "NA" in p.read_text()


def test_csv_rejects_mixed_dimensions(tmp_path):
    with pytest.raises(ValueError):
        export_csv([record([0.0]), record([0.0, 1.0])], tmp_path / "bad.csv")


def test_csv_unwritable(tmp_path):
    with pytest.raises(OSError):
        export_csv([record([0.0])], tmp_path / "missing" / "x.csv")


# --- harness --------------------------------------------------------------------

def test_single_replication_equals_direct_call():
    spec = parse_experiment(SMALL.replace("replications = 3", "replications = 1"))
    recs = run_experiment(spec)
    assert len(recs) == 2
    for rec, point in zip(recs, spec.points()):
        res = run(spec.build_config(point, spec.replication_seed(0)))
        assert rec.I_hat == tuple(res.I_hat)
        assert rec.Z_hat == res.Z_hat
        assert rec.E == res.eval_count == eval_budget(spec.build_config(point, 0))


def test_records_do_not_depend_on_jobs():
    spec = parse_experiment(SMALL)
    strip = lambda recs: [r.__dict__ | {"wall_time_s": 0} for r in recs]  # noqa: E731
    a = run_experiment(spec, jobs=1)
    b = run_experiment(spec, jobs=4)
    assert strip(a) == strip(b)
    assert [(r.scheme, r.replication) for r in a] == [
        (s, r) for s in ("spatial", "temporal") for r in range(3)]


def test_replications_differ():
    recs = run_experiment(parse_experiment(SMALL))
    assert len({r.I_hat for r in recs}) == len(recs)
    assert len({r.seed for r in recs[:3]}) == 3


def test_budget_key_sets_T():
    spec = parse_experiment(SMALL.replace("T = 5", "budget = 100"))
    cfg = spec.build_config(spec.points()[0], 0)
    assert cfg.T == 100 // (3 * 3)
    assert eval_budget(cfg) <= 100


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("x", "gauss1d", replications=0)
    with pytest.raises(ValueError):
        ExperimentSpec("x", "gauss1d", reference="oracle")


# --- config files -----------------------------------------------------------------

@pytest.mark.parametrize("text,line,field", [
    (SMALL.replace("N = 3", "N = three"), 7, "algorithm.N"),
    (SMALL.replace("lambda = 1", "lamda = 1"), 11, "algorithm.lamda"),
    (SMALL.replace("name = gauss1d", "name = nowhere"), 3, "target.name"),
    (SMALL.replace("sigma = 1.5", "sigma = wide"), 10, "algorithm.sigma"),
    (SMALL.replace("[harness]", "[output]"), 16, "output"),
    (SMALL.replace("seed = 7", "seed = 7.5"), 19, "harness.seed"),
], ids=["int", "unknown-key", "target", "sigma", "section", "seed"])
def test_parse_errors_locate_field(text, line, field):
    with pytest.raises(ConfigParseError) as info:
        parse_experiment(text, "exp.ini")
    assert info.value.line == line
    assert info.value.field == field
    assert f"exp.ini:{line}" in str(info.value)


def test_semantic_config_error():
    with pytest.raises(ConfigParseError):
        parse_experiment(SMALL.replace("sigma = 1.5", "sigma = 0"))
    with pytest.raises(ConfigParseError):
        parse_experiment(SMALL.replace("algorithm = population", "algorithm = mcmc"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigParseError):
        load_experiment(tmp_path / "nope.ini")


def test_bundled_configs_parse():
    files = sorted(p for p in resources.files("mais").joinpath("data/configs").iterdir()
                   if p.name.endswith(".ini"))
    assert len(files) >= 5
    for p in files:
        spec = parse_experiment(p.read_text(), p.name)
        assert spec.points()


# --- CLI ----------------------------------------------------------------------------

def test_cli_run(tmp_path, capsys):
    cfgp = tmp_path / "small.ini"
    cfgp.write_text(SMALL)
    out = tmp_path / "out.csv"
    assert main(["run", "--config", str(cfgp), "--out", str(out), "--reps", "2"]) == 0
    recs = read_csv(out)
    assert len(recs) == 4
    err = capsys.readouterr().err
    assert "MSE=" in err


def test_cli_run_stdout(tmp_path, capsys):
    cfgp = tmp_path / "small.ini"
    cfgp.write_text(SMALL)
    assert main(["run", "--config", str(cfgp), "--reps", "1", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("experiment,algorithm")
    assert len(lines) == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL.replace("N = 3", "N = -1"))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["quadrature", "--target", "nowhere", "--out", str(tmp_path / "q.json")]) == 2
    ok = tmp_path / "ok.ini"
    ok.write_text(SMALL)
    assert main(["run", "--config", str(ok), "--out", str(tmp_path / "no" / "x.csv")]) == 3


def test_cli_list_targets(capsys):
    assert main(["list-targets"]) == 0
    out = capsys.readouterr().out
    for name in ("mixture5", "banana", "gauss1d", "sensor"):
        assert name in out


def test_cli_budget(tmp_path, capsys):
    cfgp = tmp_path / "small.ini"
    cfgp.write_text(SMALL)
    assert main(["budget", "--config", str(cfgp)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2 and all(line.endswith("E=45") for line in out)
