import json
import subprocess
import sys

import pytest

from sade.cli import incident_from_json, incident_to_json, main
from sade.faultlib import make_incident


@pytest.fixture
def incident_file(tmp_path):
    topo = tmp_path / "topo.json"
    assert main(["generate", "clos_bgp", "small", "--seed", "0", "-o", str(topo)]) == 0
    inc = tmp_path / "inc.json"
    assert main(["inject", str(topo), "bgp_acl_block", "spine_router_1_1", "-o", str(inc)]) == 0
    return inc


def test_incident_file_round_trip():
    inc = make_incident("isp_static", "small", 0, "link_down", "client_1")
    back = incident_from_json(incident_to_json(inc))
    assert back.incident_id == inc.incident_id and back.truth == inc.truth
    assert back.topology.to_dict() == inc.topology.to_dict()


def test_verify_and_diagnose(incident_file, tmp_path, capsys):
    assert main(["verify", str(incident_file)]) == 0
    capsys.readouterr()
    log = tmp_path / "trace.log"
    assert main(["diagnose", str(incident_file), "--trace", str(log)]) == 0
    sub = json.loads(capsys.readouterr().out)
    assert sub["labels"] == ["bgp_acl_block"] and sub["devices"] == ["spine_router_1_1"]
    assert "SUBMIT" in log.read_text()
    assert json.loads(log.with_suffix(".json").read_text())["outcome"] == "submitted"


def test_starved_budget_reports_no_submission(incident_file, capsys):
    assert main(["diagnose", str(incident_file), "--budget", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["outcome"] == "no_submission"


def test_verify_fails_on_unmanifested_fault(tmp_path, capsys):
    topo = tmp_path / "topo.json"
    main(["generate", "clos_bgp", "small", "-o", str(topo)])
    inc = tmp_path / "inc.json"
    main(["inject", str(topo), "link_down", "client_1", "-o", str(inc)])
    body = json.loads(inc.read_text())
    body["topology"] = json.loads(topo.read_text())
    inc.write_text(json.dumps(body))
    assert main(["verify", str(inc)]) == 1


def test_bench_check_and_report(tmp_path, capsys):
    out = tmp_path / "bench"
    code = main(["bench", "--filter", "scenario=clos_bgp", "--filter", "size=small", "--filter", "family=acl",
                 "--check", "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0 and "check: ok" in text
    assert (out / "metrics.json").exists() and any((out / "traces").iterdir())


def test_score_command(tmp_path, capsys):
    truths = tmp_path / "t.jsonl"
    subs = tmp_path / "s.jsonl"
    truths.write_text(
        json.dumps({"incident_id": "a", "truth": {"is_anomaly": True, "labels": ["bgp_acl_block"], "devices": ["x"]}})
        + "\n" + json.dumps({"incident_id": "b", "truth": {"is_anomaly": False, "labels": [], "devices": []}}) + "\n")
    subs.write_text(json.dumps({"incident_id": "a", "is_anomaly": True, "labels": ["bgp_acl_block", "ospf_acl_block"],
                                "devices": ["x"]}) + "\n")
    assert main(["score", str(subs), str(truths)]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["mean_rca_f1"] == pytest.approx(2 / 3)
    assert m["no_submission_rate"] == 0.5


def test_bad_input_exit_code(tmp_path, capsys):
    assert main(["diagnose", str(tmp_path / "missing.json")]) == 2
    assert main(["bench", "--filter", "colour=red"]) == 2
    with pytest.raises(SystemExit):
        main(["generate", "mesh", "small"])


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sade.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bench" in proc.stdout
