import csv
import json
import subprocess
import sys

import pytest

from stochfsi.cli import main, parse_config
from stochfsi.montecarlo import ConfigError


def _write(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def test_parse_config_examples(tmp_path):
    assert parse_config(_write(tmp_path, {})).to_dict() == parse_config(None).to_dict()
    with pytest.raises(ConfigError, match="^N"):
        parse_config(_write(tmp_path, {"N": 0}))
    c = parse_config(_write(tmp_path, {"pressure_in": {"kind": "constant", "value": 2.0}}))
    assert c.pressure_in(0.3) == 2.0
    c = parse_config(_write(tmp_path, {"N": 4}), {"N": 8, "seed": 3, "threads": None})
    assert (c.N, c.seed, c.threads) == (8, 3, 1)


def test_parse_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(str(tmp_path / "nope.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(str(bad))
    with pytest.raises(ConfigError):
        parse_config(_write(tmp_path, [1, 2]))
    with pytest.raises(ConfigError, match="mu"):
        parse_config(None, {"mu": 2.0})


@pytest.mark.parametrize("payload", [{"N": 0}, {"colour": "red"}, {"L": "long"}])
def test_config_errors_exit_2(tmp_path, capsys, payload):
    assert main(["run", "--config", _write(tmp_path, payload), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_writes_report_and_ledger(tmp_path, capsys):
    cfg = _write(tmp_path, {"nz": 4, "nr": 4, "N": 8, "noise_amplitude": 0.0})
    assert main(["run", "--config", cfg, "--paths", "3", "--out", str(tmp_path / "o")]) == 0
    assert "trivially zero trajectory" in capsys.readouterr().out
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["schema_version"] == "1.0" and rep["config"]["n_paths"] == 3
    lines = (tmp_path / "o" / "ledger.csv").read_text().splitlines()
    assert lines[0].startswith("# schema_version") and lines[1].startswith("# config")
    assert next(csv.reader(lines[2:3])) == ["n", "stage", "E", "D", "norm_v", "norm_grad_eta",
                                            "norm_u", "dW"]


def test_verify_defaults(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    body = [ln for ln in out.splitlines() if " PASS " in ln or " FAIL " in ln]
    assert len(body) >= 10 and all(" PASS " in ln for ln in body)
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["passed"] and len(rep["checks"]) >= 10


def test_verify_failure_exits_1(tmp_path, monkeypatch):
    from stochfsi import verify
    monkeypatch.setattr(verify.Suite, "korn_equality",
                        lambda self: (False, 1.0, 1e-12, "forced failure"))
    cfg = _write(tmp_path, {"nz": 2, "nr": 2, "N": 4, "n_paths": 20})
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_converge_table(tmp_path, capsys):
    cfg = _write(tmp_path, {"nz": 4, "nr": 4, "N": 4, "n_paths": 8})
    assert main(["converge", "--config", cfg, "--levels", "3", "--out", str(tmp_path)]) == 0
    rows = [r for r in (tmp_path / "convergence.csv").read_text().splitlines()
            if not r.startswith("#")]
    assert len(rows) == 1 + 3
    assert main(["converge", "--config", cfg, "--levels", "1", "--out", str(tmp_path)]) == 2


def test_path_dump(tmp_path):
    assert main(["path-dump", "--steps", "4", "--seed", "5", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "path.csv").read_text().splitlines()))
    assert rows[0] == ["n", "t", "W"] and len(rows) == 6 and float(rows[1][2]) == 0.0


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "stochfsi", "path-dump", "--steps", "2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "path.csv").exists()
