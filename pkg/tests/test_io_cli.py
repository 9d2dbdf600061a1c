import json
import subprocess
import sys

import numpy as np
import pytest

from exposure_ssm import cli, io
from exposure_ssm.statespace import MeasurementSeries, NumericalError, PriorSpec
from exposure_ssm.stochastics import make_rng


def test_simulate_defaults():
    one = io.simulate_dataset("one-zone", rng=make_rng(0))
    assert one.n == 100 and one.truth[0, 0] == 1.0 and one.times[0] == 0.0
    two = io.simulate_dataset("two-zone", rng=make_rng(0))
    np.testing.assert_array_equal(two.truth[0], [0.0, 0.5])
    assert np.all(two.values > 0)
    eddy = io.simulate_dataset("eddy", rng=make_rng(0))
    assert eddy.values.size == 500 and eddy.dim == 5


@pytest.mark.parametrize("kind,noise", [
    ("one-zone", {"sigma": 0.0}),
    ("two-zone", {"Sigma_nu": 0.0}),
    ("eddy", {"sigma2": 0.0, "nugget": 0.0}),
])
def test_zero_noise_measurements_equal_truth(kind, noise):
    s = io.simulate_dataset(kind, noise=noise, rng=make_rng(1))
    np.testing.assert_array_equal(s.values, s.truth)


def test_simulate_rejects_bad_noise():
    with pytest.raises(ValueError):
        io.simulate_dataset("one-zone", noise={"sigma": -1.0})
    with pytest.raises(ValueError):
        io.simulate_dataset("two-zone", noise={"Sigma_nu": [[1.0, 2.0], [2.0, 1.0]]})
    with pytest.raises(ValueError):
        io.simulate_dataset("eddy", noise={"phi": 0.0})
    with pytest.raises(ValueError):
        io.simulate_dataset("one-zone", grid=[0.0])


def test_log_scale_noise_is_positive():
    s = io.simulate_dataset("two-zone", noise={"scale": "log"}, rng=make_rng(2))
    assert np.all(s.values > 0)


@pytest.mark.parametrize("kind", ["one-zone", "two-zone", "eddy"])
def test_series_round_trip_full_precision(tmp_path, kind):
    s = io.simulate_dataset(kind, rng=make_rng(3))
    path = tmp_path / "s.csv"
    io.write_series(s, path)
    back = io.read_series(path)
    assert back.kind == kind
    np.testing.assert_array_equal(back.values, s.values)
    np.testing.assert_array_equal(back.truth, s.truth)
    np.testing.assert_array_equal(back.times, s.times)


def test_read_series_validation(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,value\n0,1\n2,1\n1,1\n")
    with pytest.raises(io.ConfigError) as exc:
        io.read_series(p)
    assert exc.value.field == "data" and "increasing" in str(exc.value)
    p.write_text("when,what\n0,1\n")
    with pytest.raises(io.ConfigError):
        io.read_series(p)
    p.write_text("time,value\n0,1\n1,\n")
    with pytest.raises(io.ConfigError):
        io.read_series(p)
    p.write_text("time,value\n0,1\n1,2\n")
    with pytest.raises(io.ConfigError):
        io.read_series(p, "two-zone")


def test_chamber_style_ingest(tmp_path):
    # chamber files carry measurements only; no truth columns
    p = tmp_path / "chamber.csv"
    p.write_text("time,near,far\n0,0.01,0.02\n1,3.5,1.1\n2,6.25,2.0\n3,8.0,2.9\n")
    s = io.read_series(p)
    assert s.kind == "two-zone" and s.truth is None and s.values.shape == (4, 2)
    pr = io.RunConfig(model="two-zone", provenance="chamber").priors()
    assert pr.bounds == PriorSpec.defaults("two-zone", "chamber").bounds
    assert pr.bounds["G"] == (30.0, 150.0) and pr.bounds["beta"] == (0.0, 5.0)
    assert io.RunConfig(model="eddy", provenance="chamber").priors().bounds["G"] == (1104.0, 1650.0)


def test_samples_round_trip(tmp_path):
    from exposure_ssm.gaussian import GaussianSSMSpec, gibbs_fit_gaussian
    from exposure_ssm.statespace import ModelSetup

    data = io.simulate_dataset("two-zone", grid=np.arange(0.0, 10.0), rng=make_rng(4))
    s = gibbs_fit_gaussian(GaussianSSMSpec(ModelSetup("two-zone")), data, 30, 10, rng=make_rng(5))
    path = tmp_path / "samples.csv"
    io.write_samples(s, path)
    back = io.read_samples(path)
    assert set(back.draws) == set(s.draws)
    for k in s.draws:
        np.testing.assert_array_equal(back.draws[k], s.draws[k])
    assert back.engine == s.engine and back.options == s.options
    header = path.read_text().splitlines()[0]
    assert header == "chain,iteration,name,value"
    assert "state[3,1]" in path.read_text()


@pytest.mark.parametrize("overrides,field_name", [
    ({"bounds": {"G": [400.0, 300.0]}}, "bounds.G"),
    ({"V": -1.0}, "V"),
    ({"model": "two-zone", "V_N": 5.0}, "V_N"),
    ({"burnin": 50, "iters": 50}, "burnin"),
    ({"thin": 0}, "thin"),
    ({"ssm": "bnlr"}, "ssm"),
    ({"spatial": "gaussian"}, "spatial"),
    ({"delta_t": 0.0}, "delta_t"),
])
def test_config_validation_names_the_field(overrides, field_name):
    with pytest.raises(io.ConfigError) as exc:
        io.RunConfig(**overrides).validate()
    assert exc.value.field == field_name


def test_config_rejects_unknown_keys():
    with pytest.raises(io.ConfigError) as exc:
        io.RunConfig.from_dict({"iterations": 5})
    assert exc.value.field == "iterations"


# --- command line ---------------------------------------------------------------


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def sim_csv(tmp_path, capsys):
    code, out, _ = _run(["simulate", "--model", "one-zone", "--n", "30", "--seed", "3", "--out", str(tmp_path)], capsys)
    assert code == 0
    return tmp_path / "sim-one-zone.csv"


def test_cli_fit_assess_summary(tmp_path, sim_csv, capsys):
    out_dir = tmp_path / "fit"
    argv = ["fit", "--model", "one-zone", "--ssm", "nongaussian", "--data", str(sim_csv),
            "--iters", "300", "--burnin", "100", "--thin", "2", "--seed", "7", "--out", str(out_dir)]
    code, out, err = _run(argv, capsys)
    assert code == 0, err
    for name in ("samples.csv", "samples.csv.meta.json", "report.json", "plot.csv", "manifest.json"):
        assert (out_dir / name).exists()
    report = json.loads((out_dir / "report.json").read_text())
    assert {"D", "G", "P", "MSE", "params", "diagnostics"} <= set(report)
    assert report["D"] == pytest.approx(report["G"] + report["P"])
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["iters"] == 300
    assert manifest["inputs"]["data"] == io.sha256_file(sim_csv)
    plot_header = (out_dir / "plot.csv").read_text().splitlines()[0].split(",")
    assert {"observed", "posterior_mean", "smoothed", "truth"} <= set(plot_header)

    code, out, err = _run(["assess", "--fit", str(out_dir / "samples.csv"), "--data", str(sim_csv),
                           "--truth", str(sim_csv), "--true", "G=351.5", "--true", "Q=13.8", "--seed", "7"], capsys)
    assert code == 0, err
    rep = json.loads(out)
    assert rep["params"]["G"]["covered"] in (True, False)
    assert rep["D"] == pytest.approx(rep["G"] + rep["P"])
    # assess reproduces the report written by fit
    assert rep["D"] == report["D"] and rep["MSE"] == report["MSE"]

    code, out, err = _run(["summary", "--fit", str(out_dir / "samples.csv"), "--format", "csv"], capsys)
    assert code == 0 and out.startswith("key,value\n") and "params.G.median" in out


def test_cli_reruns_are_byte_identical(tmp_path, sim_csv, capsys):
    hashes = []
    for name in ("a", "b"):
        argv = ["fit", "--model", "one-zone", "--data", str(sim_csv), "--iters", "200", "--burnin", "50",
                "--chains", "2", "--seed", "11", "--out", str(tmp_path / name)]
        assert _run(argv, capsys)[0] == 0
        hashes.append(json.loads((tmp_path / name / "manifest.json").read_text())["outputs"])
    assert hashes[0] == hashes[1]
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()


def test_cli_concurrent_chains_match_sequential(tmp_path, sim_csv, capsys):
    for name, threads in (("seq", "1"), ("par", "3")):
        argv = ["fit", "--model", "one-zone", "--data", str(sim_csv), "--iters", "200", "--burnin", "50",
                "--chains", "3", "--threads", threads, "--seed", "5", "--out", str(tmp_path / name)]
        assert _run(argv, capsys)[0] == 0
    assert (tmp_path / "seq" / "samples.csv").read_bytes() == (tmp_path / "par" / "samples.csv").read_bytes()


def test_cli_config_file_and_env_output(tmp_path, sim_csv, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "one-zone", "ssm": "gaussian", "iters": 100, "burnin": 20,
                               "data": str(sim_csv), "format": "csv"}))
    monkeypatch.setenv(io.OUTPUT_ENV, str(tmp_path / "env_out"))
    code, _, err = _run(["fit", "--config", str(cfg)], capsys)
    assert code == 0, err
    assert (tmp_path / "env_out" / "report.csv").exists()
    manifest = json.loads((tmp_path / "env_out" / "manifest.json").read_text())
    assert manifest["config"]["ssm"] == "gaussian"


@pytest.mark.parametrize("argv_tail,field_name", [
    (["--bounds", "G=500,300"], "bounds.G"),
    (["--iters", "10", "--burnin", "20"], "burnin"),
    (["--delta-t", "-1"], "delta_t"),
])
def test_cli_validation_errors_exit_2_with_json(tmp_path, sim_csv, capsys, argv_tail, field_name):
    argv = ["fit", "--model", "one-zone", "--data", str(sim_csv), "--out", str(tmp_path / "x")] + argv_tail
    code, _, err = _run(argv, capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "validation" and payload["field"] == field_name


def test_cli_other_invalid_inputs_exit_2(tmp_path, capsys):
    assert _run(["fit", "--model", "one-zone", "--data", str(tmp_path / "missing.csv")], capsys)[0] == 2
    assert _run(["simulate", "--model", "nowhere"], capsys)[0] == 2
    assert _run(["summary", "--fit", str(tmp_path / "none.csv")], capsys)[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n0,1\n1,-2\n2,3\n")
    code, _, err = _run(["fit", "--model", "one-zone", "--data", str(bad), "--iters", "20", "--burnin", "5",
                         "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "positive" in json.loads(err)["message"]


def test_cli_numerical_failure_exit_3(tmp_path, sim_csv, capsys, monkeypatch):
    def boom(config):
        raise NumericalError("divergent trajectory", {"iteration": 4})

    monkeypatch.setattr(io, "run", boom)
    code, _, err = _run(["fit", "--model", "one-zone", "--data", str(sim_csv)], capsys)
    assert code == 3
    payload = json.loads(err)
    assert payload["error"] == "numerical" and payload["diagnostics"] == {"iteration": 4}


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "exposure_ssm", "simulate", "--model", "eddy", "--n", "5",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    s = io.read_series(tmp_path / "sim-eddy.csv")
    assert s.values.shape == (5, 5)
