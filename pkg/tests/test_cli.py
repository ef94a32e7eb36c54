import json
import subprocess
import sys

import pytest
import yaml

from sdelimits.cli import SchemaError, load_config, main, run


def write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def base(model="ou", experiment="verify", **extra):
    cfg = {"model": {"name": model}, "experiment": experiment,
           "grid": {"dt": 1e-2, "horizon": 2.0}, "ensemble": {"nPaths": 20, "seed": 1}}
    cfg.update(extra)
    return cfg


def report(out):
    return json.loads((out / "report.json").read_text())


def test_verify_ou_passes(tmp_path):
    code, _ = run(write(tmp_path, base()), tmp_path / "o")
    assert code == 0
    r = report(tmp_path / "o")
    assert r["exitCode"] == 0 and r["checks"]["verify.allPassed"]
    assert r["softwareVersion"] and r["config"]["model"]["name"] == "ou"


def test_transform_reports_alpha(tmp_path):
    code, _ = run(write(tmp_path, base("piecewise_example", "transform")), tmp_path / "o")
    assert code == 0
    r = report(tmp_path / "o")
    assert r["results"]["transform"]["alpha"] == pytest.approx([8 / 3, 8 / 3])
    assert r["results"]["transform"]["delta"] == pytest.approx(3 / 1024)
    assert "transform.json" in r["artifacts"]


def test_missing_dt_is_schema_error_with_path(tmp_path, capsys):
    cfg = base()
    del cfg["grid"]["dt"]
    code, rep = run(write(tmp_path, cfg), tmp_path / "o")
    assert code == 2 and rep["fieldPath"] == "grid"
    assert "'dt' is a required property" in capsys.readouterr().err


def test_schema_rejects_bad_values(tmp_path):
    for cfg in (base(experiment="nope"), {**base(), "extra": 1},
                base(ensemble={"nPaths": 0, "seed": 1}), base(experiment="lln"),
                base("double_well", regime="piecewise")):
        with pytest.raises(SchemaError):
            load_config(write(tmp_path, cfg))


def test_strict_verifier_failure_and_lenient(tmp_path):
    p = write(tmp_path, base("double_well"))
    code, rep = run(p, tmp_path / "s")
    assert code == 3 and "witness" in rep["error"]
    code, _ = run(p, tmp_path / "l", strict=False)
    assert code == 1  # the failed check is still reported
    assert report(tmp_path / "l")["checks"]["verify.allPassed"] is False


def test_monotone_testfn(tmp_path):
    cfg = base(regime="monotone_lyapunov", experiment="testfn", testfn={"nGrid": 512})
    code, _ = run(write(tmp_path, cfg), tmp_path / "o")
    r = report(tmp_path / "o")
    assert code == 0 and r["checks"]["testfn.certified"]
    assert (tmp_path / "o" / "testfn.csv").exists()


def test_lln_run_writes_artifacts(tmp_path):
    cfg = base(experiment="lln", observable={"name": "identity"}, x0=1.0,
               invariant={"nPaths": 50, "horizon": 20.0, "thin": 1.0},
               lln={"tPoints": [1.0, 2.0, 4.0, 8.0, 16.0], "nPaths": 32})
    code, _ = run(write(tmp_path, cfg), tmp_path / "o")
    r = report(tmp_path / "o")
    assert code in (0, 1) and "lln" in r["results"]
    assert {"lln.csv", "invariant_points.csv"} <= set(r["artifacts"])


def _strip(r):
    r = dict(r)
    r.pop("wallClock")
    return r


def test_reruns_are_identical(tmp_path):
    cfg = base(experiment="contraction", coupling={"y0": 1.0, "yHat0": -1.0, "recordEvery": 20})
    p = write(tmp_path, cfg)
    run(p, tmp_path / "a")
    run(p, tmp_path / "b", threads=2)
    assert _strip(report(tmp_path / "a")) == _strip(report(tmp_path / "b"))
    for name in ("contraction.csv", "coupled_pairs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run(p, tmp_path / "c", seed=2)
    assert (tmp_path / "a" / "coupled_pairs.csv").read_bytes() != \
        (tmp_path / "c" / "coupled_pairs.csv").read_bytes()


def test_main_and_module_entry(tmp_path, capsys):
    assert main(["list-builtins"]) == 0
    names = {b["name"] for b in json.loads(capsys.readouterr().out)}
    assert {"ou", "double_well", "piecewise_example"} <= names
    p = write(tmp_path, base())
    out = subprocess.run([sys.executable, "-m", "sdelimits", "--out", str(tmp_path / "m"),
                          "run", str(p)], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["exitCode"] == 0
