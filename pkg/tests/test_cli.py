import json
import os

import pytest

from patchrepro import cli
from tests.conftest import MODELS, SCENARIOS


def _run_cli(kernel_repo, tmp_path, script="success.json", profile="baseline",
             subdir="run", scenario="crash_uaf.json"):
    out = str(tmp_path / subdir)
    code = cli.main([
        "run",
        "--commit", kernel_repo["fix"],
        "--repo", kernel_repo["repo"],
        "--profile", profile,
        "--model", "scripted:%s" % os.path.join(MODELS, script),
        "--budget-hours", "0.1",
        "--out", out,
        "--scenario", os.path.join(SCENARIOS, scenario),
        "--workdir", str(tmp_path / "envs"),
        "--case-id", os.path.basename(out),
        "--price-in", "2", "--price-out", "8",
    ])
    return code, out


def test_run_success(kernel_repo, tmp_path, capsys):
    code, out = _run_cli(kernel_repo, tmp_path)
    assert code == 0
    stdout = capsys.readouterr().out
    assert "success=True" in stdout
    v = json.load(open(os.path.join(out, "verdict.json")))
    assert v["success"] and v["crash"]["class"] == "UAF"


def test_run_cheat_fails(kernel_repo, tmp_path):
    code, out = _run_cli(kernel_repo, tmp_path, script="cheat.json",
                         subdir="cheat")
    assert code == 1
    v = json.load(open(os.path.join(out, "verdict.json")))
    assert v["reason"] == "cheat"


def test_run_rejects_external_model(kernel_repo, tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["run", "--commit", kernel_repo["fix"],
                  "--repo", kernel_repo["repo"],
                  "--model", "external:http://localhost:1",
                  "--out", str(tmp_path / "x"),
                  "--scenario", os.path.join(SCENARIOS, "crash_uaf.json"),
                  "--workdir", str(tmp_path / "envs")])


def test_analyze_tsv_and_json(kernel_repo, tmp_path, capsys):
    runs = tmp_path / "runs"
    runs.mkdir()
    for i, (script, scenario) in enumerate(
            [("success.json", "crash_uaf.json"),
             ("no_crash.json", "no_crash.json")]):
        _run_cli(kernel_repo, tmp_path, script=script, scenario=scenario,
                 subdir=os.path.join("runs", "case-%d" % i))
    meta = {
        "case-0": {"case_id": "case-0", "subsystem": "net", "is_race": False,
                   "vuln_type": "UAF", "submit_time": "2024-05-01"},
        "case-1": {"case_id": "case-1", "subsystem": "bpf", "is_race": True,
                   "vuln_type": "OOB", "submit_time": "2024-11-01"},
    }
    meta_path = tmp_path / "meta.json"
    meta_path.write_text(json.dumps(meta))
    capsys.readouterr()

    code = cli.main(["analyze", str(runs), "--metadata", str(meta_path),
                     "--tables", "overall,subsystem,cutoff,race",
                     "--cutoff-date", "2024-09-30", "--format", "json"])
    assert code == 0
    tables = json.loads(capsys.readouterr().out)
    assert tables["overall"][0]["n"] == 2
    assert tables["overall"][0]["successes"] == 1
    assert set(t["subsystem"] for t in tables["subsystem"]) == {"net", "bpf"}
    assert tables["cutoff"]["a"] == 1 and tables["cutoff"]["c"] == 0

    code = cli.main(["analyze", str(runs), "--metadata", str(meta_path),
                     "--tables", "overall", "--format", "tsv"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("## overall")
    assert "n=2" in out
