import csv
import json
import shutil
import subprocess

import pytest

from retrialpsa import NanDerivativeError, cli

from conftest import FROZEN_EN2_SINGLE

SCEN = "scenarios/single_exp.json"


@pytest.fixture(autouse=True)
def _root(monkeypatch, request):
    monkeypatch.chdir(request.config.rootpath)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_analyze_csv(tmp_path):
    out = tmp_path / "a.csv"
    assert cli.main(["analyze", "--model", SCEN, "--out", str(out), "--xi-grid", "0.02,0.05,0.1"]) == 0
    rows = _read(out)
    assert list(rows[0]) == cli.ANALYZE_COLUMNS
    for r in rows:
        assert float(r["EN2"]) == pytest.approx(FROZEN_EN2_SINGLE[float(r["xi"])], rel=1e-3)
    assert float(rows[0]["p_busy"]) == pytest.approx(0.64)
    coef = _read(tmp_path / "a.coefficients.csv")
    assert len(coef) == 10
    man = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert man["command"] == "analyze" and len(man["model_hash"]) == 40


def test_analyze_json(tmp_path):
    out = tmp_path / "a.json"
    assert cli.main(["analyze", "--model", SCEN, "--out", str(out), "--xi-grid", "0:0.1:0.05"]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["rows"]) == 3
    assert doc["stability"]["stable"]


def test_sweep_empty_grid(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["sweep", "--model", SCEN, "--out", str(out), "--param", "lambda2", "--grid", ""]) == 0
    assert out.read_text().strip().split(",") == cli.SWEEP_COLUMNS


def test_sweep_orders_and_unstable_point(tmp_path):
    out = tmp_path / "s.csv"
    code = cli.main(["sweep", "--model", SCEN, "--out", str(out), "--param", "lambda2",
                     "--grid", "1.0,9.0", "--orders", "2,8", "--engines", "psa,pade,oracle",
                     "--caps", "120,120", "--jobs", "2"])
    assert code == 0
    rows = _read(out)
    first = [r for r in rows if float(r["grid_value"]) == 1.0]
    assert {r["engine"] for r in first} == {"psa[M=2]", "psa[M=8]", "pade[7/2]", "oracle"}
    bad = [r for r in rows if float(r["grid_value"]) == 9.0]
    assert bad and all(r["error"] for r in bad)


def test_validate_pass(tmp_path):
    out = tmp_path / "v.csv"
    code = cli.main(["validate", "--model", SCEN, "--out", str(out), "--xi-grid", "0.1",
                     "--engines", "psa,oracle", "--caps", "200,200"])
    assert code == 0
    assert _read(out)[0]["pass"] == "True"


def test_validate_failure_exit(tmp_path):
    # at xi = 0.9 the truncated series is far off the chain
    code = cli.main(["validate", "--model", SCEN, "--out", str(tmp_path / "v.csv"), "--xi-grid", "0.9",
                     "--engines", "psa,oracle", "--caps", "200,200"])
    assert code == cli.EXIT_ACCEPT


def test_unstable_exit(tmp_path):
    bad = tmp_path / "bad.json"
    doc = json.loads(open(SCEN).read())
    doc["rates"]["lambda2"] = 9.0
    bad.write_text(json.dumps(doc))
    assert cli.main(["analyze", "--model", str(bad)]) == cli.EXIT_MODEL


def test_malformed_model_exit(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"variant": "NOPE"}))
    assert cli.main(["analyze", "--model", str(bad)]) == cli.EXIT_MODEL


def test_numeric_exit(monkeypatch):
    def boom(*a, **k):
        raise NanDerivativeError("forced")

    monkeypatch.setattr(cli, "_psa_series", boom)
    assert cli.main(["analyze", "--model", SCEN]) == cli.EXIT_NUMERIC


def test_parse_grid():
    assert cli.parse_grid("0:0.3:0.1") == pytest.approx((0.0, 0.1, 0.2, 0.3))
    assert cli.parse_grid("1,2") == (1.0, 2.0)
    assert cli.parse_grid("") == ()


@pytest.mark.skipif(shutil.which("retrialpsa") is None, reason="console script not installed")
def test_console_script(tmp_path):
    out = tmp_path / "a.csv"
    proc = subprocess.run(["retrialpsa", "analyze", "--model", SCEN, "--out", str(out),
                           "--xi-grid", "0.1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "rho" in proc.stderr
