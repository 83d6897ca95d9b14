import csv
import json
import time

import pytest

from dysonflow import cli, interaction, selftest
from dysonflow.runspec import SEED_ENV, RunSpec, RunSpecError, from_dict

QUICK = {"T": 0.05, "dt": 0.001, "replicas": 2}


def write_spec(tmp_path, name, d):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(d))
    return str(path)


def run(tmp_path, spec, out="out", extra=()):
    out_dir = tmp_path / out
    code = cli.main(["run", write_spec(tmp_path, out, spec), "--out-dir", str(out_dir), *extra])
    return code, out_dir


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- validation

def test_defaults_and_round_trip():
    spec = from_dict({"experiment": "simulate"}, env={})
    assert spec == RunSpec(experiment="simulate")
    assert from_dict(spec.to_dict(), env={}) == spec


def test_validation_reports_every_field():
    with pytest.raises(RunSpecError) as info:
        from_dict({"experiment": "nope", "beta": 0.5, "dt": -1, "replicas": "many", "colour": 1}, env={})
    fields = {f for f, _ in info.value.errors}
    assert {"experiment", "beta", "dt", "replicas", "colour"} <= fields
    report = info.value.report()
    assert report["status"] == "error" and report["kind"] == "validation"


def test_experiment_specific_checks():
    with pytest.raises(RunSpecError) as info:
        from_dict({"experiment": "membership", "alpha": 0.5, "N": 512}, env={})
    assert [f for f, _ in info.value.errors] == ["alpha"]
    with pytest.raises(RunSpecError):
        from_dict({"experiment": "converge", "ladder": [8, 4.5]}, env={})
    with pytest.raises(RunSpecError) as info:
        from_dict({"experiment": "oracle", "oracle": "sine", "N": 100, "sine_window": 16}, env={})
    assert [f for f, _ in info.value.errors] == ["N"]


def test_seed_environment_override():
    assert from_dict({"experiment": "simulate", "seed": 3}, env={SEED_ENV: "17"}).seed == 17
    with pytest.raises(RunSpecError):
        from_dict({"experiment": "simulate"}, env={SEED_ENV: "x"})


def test_invalid_spec_exit_code(tmp_path, capsys):
    code, out_dir = run(tmp_path, {"experiment": "simulate", "beta": 0.1, "T": -1.0})
    assert code == cli.EXIT_INVALID
    err = json.loads(capsys.readouterr().err)
    assert {e["field"] for e in err["errors"]} == {"beta", "T"}
    assert not out_dir.exists()


# ---------------------------------------------------------------- runs

def test_simulate_table_shape(tmp_path):
    code, out = run(tmp_path, {"experiment": "simulate", **QUICK})
    assert code == cli.EXIT_OK
    rows = read_csv(out / "paths.csv")
    assert rows[0] == ["replica", "time"] + [f"x[{i}]" for i in range(-4, 5)]
    assert len(rows) == 1 + 2 * 51
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["artifacts"]["paths.csv"]["rows"] == 102
    assert "threads" not in manifest["spec"]


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    spec = {"experiment": "simulate", "N": 12, "replicas": 20, "T": 0.05, "seed": 8}
    _, a = run(tmp_path, spec, "a")
    _, b = run(tmp_path, spec, "b", ["--threads", "3"])
    _, c = run(tmp_path, spec, "c")
    for name in ("paths.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_converge_rows_per_replica(tmp_path):
    code, out = run(tmp_path, {"experiment": "converge", "ladder": [4, 8, 16], **QUICK})
    assert code == cli.EXIT_OK
    rows = read_csv(out / "errors.csv")[1:]
    assert len(rows) == 3 * 2
    assert all(float(r[-1]) == 0.0 for r in rows if r[0] == "16")


@pytest.mark.parametrize("extra", [
    {"experiment": "iterate", "window": 8, "stages": 2},
    {"experiment": "diagnose", "window": 16},
    {"experiment": "density", "window": 32, "k": 2},
    {"experiment": "spacing", "window": 32, "m_values": [4, 8]},
    {"experiment": "oracle", "oracle": "matrix", "N": 4, "dt": 0.01},
    {"experiment": "oracle", "oracle": "bessel", "samples": 1000, "n_steps": 50, "target": 0.5},
    {"experiment": "oracle", "oracle": "sine", "sine_window": 16, "N": 256},
    {"experiment": "membership", "sine_window": 32, "m_max": 8, "N": 512},
])
def test_every_experiment_runs(tmp_path, extra):
    code, out = run(tmp_path, {**QUICK, **extra})
    assert code == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["artifacts"]
    for name, info in manifest["artifacts"].items():
        assert len(read_csv(out / name)) == info["rows"] + 1


def test_runtime_error_exit_code(tmp_path, capsys):
    # the tamed scheme without refinement breaks down on tight gaps and a huge step
    spec = {"experiment": "simulate", "scheme": "tamed-explicit", "dt": 0.5, "T": 5.0, "rho": 0.01,
            "substep_floor": 0.0, "max_substep_depth": 0, "replicas": 16}
    code, out_dir = run(tmp_path, spec)
    assert code == cli.EXIT_RUNTIME
    assert not (out_dir / "manifest.json").exists()
    assert json.loads(capsys.readouterr().err)["status"] == "error"


# ---------------------------------------------------------------- selftest

def test_selftest_passes_quickly(capsys):
    t0 = time.perf_counter()
    assert cli.main(["selftest"]) == cli.EXIT_OK
    assert time.perf_counter() - t0 <= 60
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == len(selftest.SUITES)
    assert all(line.startswith("PASS") for line in lines)


def test_selftest_catches_a_sign_mutation(monkeypatch):
    real = interaction.psi_a
    monkeypatch.setattr(interaction, "psi_a", lambda *a, **k: -real(*a, **k))
    res = selftest.suite_resum1(cases=50)
    assert not res.passed
    assert res.line().startswith("FAIL")
