import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from entropic.cli import main
from entropic.data import generate_sample, ingest_sample, write_frequencies
from entropic.errors import ConfigError, EmptySample, FrequencySumError, UnmatchedSupportPoint
from entropic.manifest import ModelSpec, load_manifest
from entropic.model import PotentialSet, SupportGrid, discretize_continuous, normalize

MANIFESTS = Path(__file__).resolve().parent.parent / "manifests"

DN_SIMPLE = """
task = "check"
seed = 7
[model]
catalog = "dnorm_simple"
grid = { lo = -5, hi = 5, m = 11 }
[sample]
generate = { true_lambda = [-0.42, 0.7], n = 0 }
"""


def _write(tmp_path, text, name="m.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _run(args, tmp_path):
    return main([*args, "--out-dir", str(tmp_path)])


def _report(tmp_path, stem="m"):
    return json.loads((tmp_path / f"{stem}.report.json").read_text())


def test_check_dnorm_simple(tmp_path, capsys):
    assert _run(["check", str(_write(tmp_path, DN_SIMPLE))], tmp_path) == 0
    rep = _report(tmp_path)
    assert rep["schema_version"] == "1.0" and rep["seed"] == 7
    assert rep["results"]["identity_check"] == "pass"
    assert rep["results"]["max_lambda_discrepancy"] <= 1e-8
    assert json.loads(capsys.readouterr().out) == rep


def test_minimaxent_matches_ml(tmp_path):
    assert _run(["run", str(MANIFESTS / "dn_minimaxent.toml")], tmp_path) == 0
    res = _report(tmp_path, "dn_minimaxent")["results"]
    assert abs(res["solve"]["alpha_hat"][0] - res["ml"]["alpha_hat"][0]) <= 1e-6


def test_me_uniform_sample(tmp_path):
    text = """
task = "me"
[model]
points = [0, 1, 2, 3]
potentials = ["x", "x^2"]
[sample]
freq = [0.25, 0.25, 0.25, 0.25]
"""
    assert _run(["run", str(_write(tmp_path, text))], tmp_path) == 0
    solve = _report(tmp_path)["results"]["solve"]
    assert max(abs(v) for v in solve["lambda_hat"]) <= 1e-12
    assert solve["entropy"] == pytest.approx(math.log(4), abs=1e-12)


def test_reproducible_report(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", str(MANIFESTS / "dn_check.toml"), "--out-dir", str(out)]) == 0

    def strip(path):
        rep = json.loads(path.read_text())
        rep.pop("timestamp")
        return json.dumps(rep, sort_keys=True)

    assert strip(a / "dn_check.report.json") == strip(b / "dn_check.report.json")


def test_sweep_writes_csv(tmp_path, capsys):
    code = _run(["sweep", str(MANIFESTS / "dn_sweep.toml"), "--grid=-1:1:5", "--format", "csv"], tmp_path)
    assert code == 0
    csv_text = (tmp_path / "dn_sweep.sweep.csv").read_bytes().decode()
    assert csv_text.startswith("alpha1,lambda1,entropy,loglik,feasible,tv_uniform\r\n")
    assert csv_text.count("\r\n") == 6
    assert capsys.readouterr().out.replace("\r\n", "\n") == csv_text.replace("\r\n", "\n")


def test_batch_directory(tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    _write(src, DN_SIMPLE, "one.toml")
    _write(src, DN_SIMPLE.replace("seed = 7", "seed = 8"), "two.toml")
    assert main(["run", str(src), "--out-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "one" / "one.report.json").exists()
    assert (tmp_path / "out" / "two" / "two.report.json").exists()


def test_seed_and_tol_overrides(tmp_path):
    assert _run(["check", str(_write(tmp_path, DN_SIMPLE)), "--seed", "11", "--tol", "1e-9"], tmp_path) == 0
    rep = _report(tmp_path)
    assert rep["seed"] == 11
    assert rep["manifest"]["config"]["tol"] == 1e-9


@pytest.mark.parametrize("text, code", [
    ("task = 'me'\n[model]\npoints = [0, 1]\npotentials = ['x +* 1']\n[sample]\nfreq = [0.5, 0.5]\n", 2),
    ("task = 'me'\n[model]\npoints = [0, 1, 2]\npotentials = ['x']\n[sample]\nfreq = [1.0, 0, 0]\n", 4),
    ("task = 'fly'\n[model]\npoints = [0, 1]\npotentials = ['x']\n[sample]\nfreq = [0.5, 0.5]\n", 2),
    ("task = 'me'\n[model]\npoints = [0, 1]\npotentials = ['x']\n[sample]\nfreq = [0.5, 0.6]\n", 2),
    ("task = 'me'\n[model]\npoints = [0, 1]\npotentials = ['x']\nbogus = 1\n[sample]\nfreq = [0.5, 0.5]\n", 2),
    ("task = 'minimaxent'\n[model]\npoints = [0, 1, 2]\npotentials = ['x']\n[sample]\nfreq = [0.2, 0.3, 0.5]\n", 2),
    ("task = 'ml'\n[model]\npoints = [0, 1, 2]\npotentials = ['x']\n[sample]\nfreq = [0.2, 0.3, 0.5]\n"
     "[config]\nmax_iter = 1\n", 3),
    ("this is = not toml [", 2),
])
def test_exit_codes(tmp_path, capsys, text, code):
    assert _run(["run", str(_write(tmp_path, text))], tmp_path) == code
    err = capsys.readouterr().err
    assert err.startswith("error: ") and "Traceback" not in err
    rep = json.loads((tmp_path / "m.error.json").read_text())
    assert rep["error"]["exit_code"] == code


def test_missing_manifest(tmp_path):
    assert _run(["run", str(tmp_path / "nope.toml")], tmp_path) == 2


def test_config_error_names_field(tmp_path):
    path = _write(tmp_path, "[model]\npoints = [0, 1]\npotentials = ['x']\n[sample]\nfreq = [0.5]\n")
    with pytest.raises(ConfigError) as info:
        load_manifest(path)
    assert info.value.field == "sample.freq" and str(path) in str(info.value)


def test_console_script_runs(tmp_path):
    out = subprocess.run([sys.executable, "-m", "entropic.cli", "run", str(MANIFESTS / "two_point_me.toml"),
                          "--out-dir", str(tmp_path), "--format", "csv"], capture_output=True, text=True)
    assert out.returncode == 0
    header, row = out.stdout.strip().splitlines()
    assert header == "lambda1,entropy,loglik,converged"
    assert float(row.split(",")[0]) == pytest.approx(math.log(3), abs=1e-10)


def test_gen_and_ingest_round_trip(tmp_path):
    manifest = _write(tmp_path, DN_SIMPLE.replace("n = 0", "n = 500"))
    out = tmp_path / "sample.csv"
    assert main(["gen", str(manifest), "-o", str(out)]) == 0
    support, pots = discretize_continuous("dnorm_simple", (-5, 5, 11))
    sample = ingest_sample(out, support)
    again = generate_sample(normalize(support, pots, [-0.42, 0.7]), 500, 7)
    np.testing.assert_allclose(sample.freq, again.freq, rtol=1e-15)
    # a manifest pointing at the file reproduces the same frequencies
    text = DN_SIMPLE.replace("generate = { true_lambda = [-0.42, 0.7], n = 0 }", 'file = "sample.csv"')
    assert _run(["check", str(_write(tmp_path, text, "f.toml"))], tmp_path) == 0
    np.testing.assert_allclose(_report(tmp_path, "f")["sample"]["freq"], sample.freq, rtol=1e-15)


def test_ingest_frequency_file(tmp_path):
    s = SupportGrid([0.0, 0.5, 1.0])
    path = tmp_path / "f.csv"
    path.write_text("x,freq\n0.0,0.25\n0.5,0.25\n1.0,0.5\n")
    np.testing.assert_array_equal(ingest_sample(path, s).freq, [0.25, 0.25, 0.5])
    path.write_text("x,freq\n0.0,0.25\n0.500001,0.25\n1.0,0.5\n")
    with pytest.raises(UnmatchedSupportPoint):
        ingest_sample(path, s)
    path.write_text("x,freq\n0.0,0.25\n0.5,0.25\n1.0,0.6\n")
    with pytest.raises(FrequencySumError):
        ingest_sample(path, s)
    path.write_text("x,freq\n")
    with pytest.raises(EmptySample):
        ingest_sample(path, s)


def test_ingest_raw_observations(tmp_path):
    s = SupportGrid([0.0, 1.0, 2.0])
    path = tmp_path / "raw.csv"
    path.write_text("x\n0\n1\n1\n2\n")
    sample = ingest_sample(path, s)
    np.testing.assert_array_equal(sample.freq, [0.25, 0.5, 0.25])
    assert sample.n == 4 and sample.binning_error == 0.0
    path.write_text("x\n0.4\n0.6\n2.7\n-1\n")
    sample = ingest_sample(path, s)
    np.testing.assert_array_equal(sample.freq, [0.5, 0.25, 0.25])
    assert sample.binning_error == pytest.approx(1.0)


def test_write_frequencies_is_rfc4180(tmp_path):
    s = SupportGrid([0.0, 1.0])
    from entropic.model import EmpiricalSample
    write_frequencies(tmp_path / "o.csv", s, EmpiricalSample([0.75, 0.25]))
    assert (tmp_path / "o.csv").read_bytes() == b"x,freq\r\n0.0,0.75\r\n1.0,0.25\r\n"


def test_generate_sample_properties():
    support, pots = discretize_continuous("dnorm_general", (-5, 5, 11))
    model = normalize(support, pots, [1.0], [0.0])
    exact = generate_sample(model, 0, 0)
    assert np.max(np.abs(exact.freq - model.probs)) <= 1e-15
    n = 10 ** 6
    big = generate_sample(model, n, 2024)
    p = model.probs
    assert np.all(np.abs(big.freq - p) <= 3 * np.sqrt(p * (1 - p) / n))
    a, b = generate_sample(model, 1000, 5), generate_sample(model, 1000, 5)
    np.testing.assert_array_equal(a.freq, b.freq)


@pytest.mark.parametrize("spec", [
    {"catalog": "dnorm_general", "grid": {"lo": -5, "hi": 5, "m": 11}},
    {"catalog": "logistic", "grid": {"lo": -10, "hi": 10, "m": 41}},
    {"points": [0.0, 1.5, 2.0], "potentials": ["x", "ln(1 + exp(-(x - a1)/a2))"], "num_params": 2},
    {"grid": {"lo": 0.5, "hi": 3, "m": 6}, "weights": "unit", "potentials": ["abs(x - a1)^3"], "num_params": 1},
])
def test_model_spec_round_trip(spec):
    support, pots = ModelSpec.from_dict(dict(spec)).build()
    if support.unit_weights:
        again = ModelSpec.from_dict(ModelSpec.from_types(support, pots).to_dict())
    else:
        again = ModelSpec.from_dict(ModelSpec(**spec).to_dict())
    s2, p2 = again.build()
    assert s2 == support
    assert [e.ast for e in p2.exprs] == [e.ast for e in pots.exprs]
    assert p2.num_params == pots.num_params


def test_all_shipped_manifests_load():
    for path in sorted(MANIFESTS.glob("*.toml")):
        load_manifest(path)
