import json

import pytest

from lqmroute import verify
from lqmroute.cli import main
from lqmroute.simenv import load_pool


@pytest.fixture
def pool_path(tmp_path):
    assert main(["make-pool", "--means", "0.643,0.520,0.123", "--queries", "2000", "--out-dir", str(tmp_path)]) == 0
    return str(tmp_path / "pool.json")


def test_make_pool_validates(pool_path):
    pool = load_pool(pool_path)
    assert pool.K == 3 and len(pool.table) == 2000
    assert pool.validate() == []


def test_make_pool_single_arm_and_malformed(tmp_path):
    assert main(["make-pool", "--means", "0.5", "--out-dir", str(tmp_path / "one")]) == 0
    assert load_pool(tmp_path / "one" / "pool.json").K == 1
    assert main(["make-pool", "--means", "0.5,x", "--out-dir", str(tmp_path)]) == 2
    assert main(["make-pool", "--means", "1.5", "--out-dir", str(tmp_path)]) == 2
    assert main(["make-pool", "--means", "", "--out-dir", str(tmp_path)]) == 2


def test_run_writes_rows_deterministically(pool_path, tmp_path, capsys):
    args = ["run", "--config", pool_path, "--policies", "lqm-cr,sw-ucb", "--patterns", "step",
            "--seeds", "5", "--rounds", "200", "--jobs", "1"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    out = capsys.readouterr().out
    assert "lqm-cr" in out and "sw-ucb" in out and "sla_frac" in out
    assert main(args[:-2] + ["--jobs", "2", "--out", str(tmp_path / "b.csv")]) == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0].startswith("# version=") and "config=" in lines[0]
    assert len(lines) == 2 + 10


def test_run_json_and_env_defaults(pool_path, tmp_path, monkeypatch):
    monkeypatch.setenv("LQMROUTE_ROUNDS", "30")
    monkeypatch.setenv("LQMROUTE_SEEDS", "2")
    monkeypatch.setenv("LQMROUTE_JOBS", "1")
    out = tmp_path / "r.json"
    assert main(["run", "--config", pool_path, "--policies", "static:0", "--patterns", "spike",
                 "--format", "json", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data["rows"]) == 2 and data["meta"]["rounds"] == 30


def test_run_errors(pool_path, tmp_path, capsys):
    assert main(["run", "--config", pool_path, "--policies", "bogus", "--jobs", "1"]) == 2
    assert "valid names" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--config", pool_path, "--patterns", "sideways", "--jobs", "1"]) == 2
    assert main(["run", "--config", pool_path, "--seeds", "0"]) == 2
    bad = json.loads(open(pool_path).read())
    bad["additive_params"]["alpha"] = 1.2
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["run", "--config", str(path), "--jobs", "1"]) == 2
    assert "additive_params.alpha" in capsys.readouterr().err


def test_sweep(pool_path, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", pool_path, "--axis", "l_ref", "--values", "750,1500,3000",
                 "--policies", "lqm-cr", "--patterns", "step", "--seeds", "2", "--rounds", "50",
                 "--jobs", "1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("== l_ref") == 3
    rows = out.read_text().splitlines()
    assert len(rows) == 4 and rows[0].startswith("axis,value,policy")
    assert main(["sweep", "--config", pool_path, "--axis", "l_ref", "--values", ""]) == 2


def test_report(pool_path, tmp_path, capsys):
    res = tmp_path / "r.csv"
    main(["run", "--config", pool_path, "--policies", "round-robin", "--patterns", "step,spike",
          "--seeds", "3", "--rounds", "20", "--jobs", "1", "--out", str(res)])
    capsys.readouterr()
    out = tmp_path / "s.csv"
    assert main(["report", "--results", str(res), "--group-by", "pattern", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert main(["report", "--results", str(tmp_path / "nope.csv")]) == 2


def test_verify_exit_codes(monkeypatch, capsys):
    assert main(["verify", "separation"]) == 0
    assert "PASS" in capsys.readouterr().out
    monkeypatch.setitem(verify.SUITES, "separation", [("forced_failure", lambda: (False, "fixture"))])
    assert main(["verify", "separation"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "forced_failure" in out
    assert main(["verify", "nonsense"]) == 2
