from __future__ import annotations

import json
import subprocess
import sys

import pytest

from shadowlab.cli import main

# zero field, jump of 0.1 at t = 0.5
JUMP = {"t0": -1.0, "dt": 0.5, "nodes": [[0.0]] * 3 + [[0.1]] * 3, "field": [{"type": "real", "rate": 0.0}]}


def run(tmp_path, *argv, name="out.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def strip_timestamp(text: str) -> str:
    obj = json.loads(text)
    obj.pop("timestamp")
    return json.dumps(obj, sort_keys=True)


def test_envelope_keys(tmp_path):
    code, obj = run(tmp_path, "transversality", "--system", "ntrans3d")
    assert code == 0
    assert set(obj) == {"tool", "version", "command", "config", "seed", "timestamp", "result"}
    assert obj["result"]["classifier"]["verdict"] == "nontransversal"


def test_usage_errors(tmp_path, capsys):
    assert main(["no-such-command"]) == 1
    assert main(["spiral-cert", "--kind", "spiral2d", "--a", "-1", "--b", "1", "--eps", "0.5", "--L", "1"]) == 1
    assert main(["spiral-cert", "--kind", "spiral2d", "--a", "1", "--eps", "0.5", "--L", "1"]) == 1
    assert main(["transversality", "--system", "missing_fixture"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["transversality", "--system", str(bad)]) == 1
    assert main(["nosubset", "--eps", "10", "--xgrid", "4", "--hsamples", "2"]) == 1
    assert "condition 1 violated" in capsys.readouterr().err


def test_spiral_cert_exit_zero(tmp_path):
    code, obj = run(tmp_path, "spiral-cert", "--kind", "line1d", "--a", "1", "--eps", "0.5", "--L", "1", "--trials", "500")
    assert code == 0 and obj["result"]["passed"]
    assert obj["result"]["certificate"]["worst"] < 0.5


def test_reproducible_modulo_timestamp(tmp_path):
    argv = ["spiral-cert", "--kind", "spiral2d", "--a", "1", "--b", "1", "--eps", "0.785", "--L", "2", "--trials", "300"]
    main([*argv, "--out", str(tmp_path / "a.json")])
    main([*argv, "--out", str(tmp_path / "b.json")])
    a, b = (tmp_path / "a.json").read_text(), (tmp_path / "b.json").read_text()
    assert strip_timestamp(a) == strip_timestamp(b)
    # everything but the timestamp line is byte-identical
    drop = lambda s: [ln for ln in s.splitlines() if '"timestamp"' not in ln]
    assert drop(a) == drop(b)


def test_defect_exact_and_jump(tmp_path):
    code, obj = run(tmp_path, "defect", "--system", "ntrans3d", "--exact")
    assert code == 0 and obj["result"]["d_hat"] <= 1e-9
    pseudo = tmp_path / "g.json"
    pseudo.write_text(json.dumps(JUMP))
    code, obj = run(tmp_path, "defect", "--pseudo", str(pseudo), name="d.json")
    assert code == 0 and obj["result"]["d_hat"] == pytest.approx(0.1)


def test_shadow_search_target(tmp_path):
    pseudo = tmp_path / "g.json"
    pseudo.write_text(json.dumps(JUMP))
    base = ["shadow-search", "--pseudo", str(pseudo), "--class-a", "0.2", "--starts", "2", "--budget", "300"]
    code, obj = run(tmp_path, *base, "--target", "0.06")
    assert code == 0 and obj["result"]["best_eps"] == pytest.approx(0.05, abs=1e-6)
    code, _ = run(tmp_path, *base, "--target", "0.01", name="b.json")
    assert code == 2


def test_counterexample_csv(tmp_path):
    code, obj = run(
        tmp_path, "counterexample", "--system", "trans3d", "--L", "1", "--d", "1e-2",
        "--starts", "1", "--budget", "50", "--expect", "lipfail",
    )
    # a transversal system can never reproduce the lipfail claim
    assert code == 2
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0].startswith("# shadowlab ") and "seed=0" in lines[0]
    assert lines[1] == "L,d,best_eps,ratio,class_a,verdict,obstruction_verdict"
    assert len(lines) == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "shadowlab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "spiral-cert" in proc.stdout
