import csv
import json

import pytest
import yaml

from robotledger import cli
from robotledger.identity import Certificate, verify_certificate, verify_certificate_bytes
from robotledger.report import BENCH_COLUMNS, LATENCY_COLUMNS, TRAJECTORY_COLUMNS, VISITS_COLUMNS
from robotledger.scenario import two_task_scenario


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "two_tasks.yaml"
    path.write_text(two_task_scenario().dump())
    return path


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def summary(out):
    return dict(line.split(": ", 1) for line in (out / "summary.txt").read_text().splitlines())


def test_run_gated_writes_everything(scenario_file, tmp_path, capsys):
    out = tmp_path / "on"
    assert cli.main(["run", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    for name in ("trajectory.csv", "latency.csv", "visits.csv", "blocks.log", "summary.txt",
                 "trajectory.png", "yaw.png", "latency.png"):
        assert (out / name).stat().st_size > 0, name
    assert header(out / "trajectory.csv") == TRAJECTORY_COLUMNS == \
        ["t_ms", "robot", "x", "y", "theta", "publisher_of_last_cmd"]
    assert header(out / "latency.csv") == LATENCY_COLUMNS == ["tx_id", "publish_ms", "commit_ms", "latency_ms"]
    assert header(out / "visits.csv") == VISITS_COLUMNS == ["task", "waypoint_index", "t_ms", "error_m"]
    s = summary(out)
    assert s["waypoint_order"].startswith("PASS")
    assert "yaw_rate_variance[turtlebot4]" in s and "delivered_hz[turtlebot4]" in s
    assert "latency_ms[turtlebot4] p50/p95/p99" in s
    first = json.loads((out / "blocks.log").read_text().splitlines()[0])
    assert first["function"] == "setup" and first["status"] == "committed"
    assert "waypoint_order: PASS" in capsys.readouterr().out


def test_run_gating_override(scenario_file, tmp_path):
    out = tmp_path / "off"
    assert cli.main(["run", "--scenario", str(scenario_file), "--out", str(out), "--gating", "off",
                     "--no-figures"]) == 0
    s = summary(out)
    assert s["gating"] == "off"
    assert s["waypoint_order"].startswith("VIOLATED")
    assert not (out / "trajectory.png").exists()


def test_run_seed_override(scenario_file, tmp_path):
    out = tmp_path / "seeded"
    assert cli.main(["run", "--scenario", str(scenario_file), "--out", str(out), "--seed", "11",
                     "--no-figures"]) == 0
    assert summary(out)["seed"] == "11"


def test_run_missing_robot_exit_2(tmp_path, capsys):
    d = two_task_scenario().to_dict()
    d["robots"] = [r for r in d["robots"] if r["name"] != "turtlebot4"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(d))
    assert cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "tasks[0].robot" in err and "'turtlebot4'" in err


def test_run_yaml_syntax_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("seed: 0\nusers: [\n")
    assert cli.main(["run", "--scenario", str(path)]) == 2
    assert "line " in capsys.readouterr().err


def test_run_missing_file_exit_2(tmp_path):
    assert cli.main(["run", "--scenario", str(tmp_path / "nope.yaml")]) == 2


def test_run_runtime_error_exit_1(scenario_file, tmp_path, monkeypatch):
    def explode(_):
        raise RuntimeError("simulated fault")
    monkeypatch.setattr(cli, "run_scenario", explode)
    assert cli.main(["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "x")]) == 1


def test_bad_gating_flag_is_usage_error(scenario_file):
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--scenario", str(scenario_file), "--gating", "maybe"])
    assert info.value.code == 2


def test_issue_writes_verifiable_cert(tmp_path, capsys):
    out = tmp_path / "ws"
    assert cli.main(["issue", "Org1", "salma", "turtlebot4,husky,optitrack", "--out", str(out)]) == 0
    blob = (out / "certs" / "salma.cert").read_bytes()
    key = bytes.fromhex((out / "cas" / "Org1.pub").read_text().strip())
    assert verify_certificate_bytes(blob, key)
    text_cert = Certificate.from_text((out / "certs" / "salma.txt").read_text())
    assert text_cert.attributes == {"turtlebot4", "husky", "optitrack"}
    assert verify_certificate(text_cert, key)
    assert cli.main(["issue", "Org1", "farhad", "turtlebot4", "--out", str(out)]) == 0
    assert Certificate.from_bytes((out / "certs" / "farhad.cert").read_bytes()).attributes == {"turtlebot4"}


def test_issue_unknown_org_exit_2(tmp_path):
    assert cli.main(["issue", "BadOrg", "u", "a", "--out", str(tmp_path)]) == 2


def test_issue_bad_attribute_exit_2(tmp_path):
    assert cli.main(["issue", "Org1", "u", "Not Valid", "--out", str(tmp_path)]) == 2


def test_workspace_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKSPACE_ENV, str(tmp_path / "env-ws"))
    assert cli.main(["issue", "Org2", "svc", "optitrack-publisher"]) == 0
    assert (tmp_path / "env-ws" / "certs" / "svc.cert").exists()


def test_issue_is_seed_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        cli.main(["issue", "Org1", "salma", "husky", "--seed", "5", "--out", str(out)])
    assert (a / "certs" / "salma.cert").read_bytes() == (b / "certs" / "salma.cert").read_bytes()


def test_bench_csv(tmp_path, capsys):
    out = tmp_path / "bench"
    assert cli.main(["bench", "--profile", "1", "--profile", "50", "--profile", "100/2:off",
                     "--duration", "10", "--out", str(out)]) == 0
    with open(out / "bench.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == BENCH_COLUMNS
    assert [r["offered_hz"] for r in rows] == ["1.00", "50.00", "100.00"]
    assert float(rows[0]["delivered_hz"]) == pytest.approx(1.0)
    assert abs(float(rows[1]["delivered_hz"]) - 50.0) <= 2.5
    assert abs(float(rows[2]["delivered_hz"]) - 70.0) <= 5.0
    assert (out / "bench.png").stat().st_size > 0


def test_bench_bad_profile_exit_2(tmp_path):
    assert cli.main(["bench", "--profile", "lots", "--out", str(tmp_path)]) == 2


def test_inspect_blocks(scenario_file, tmp_path, capsys):
    out = tmp_path / "run"
    cli.main(["run", "--scenario", str(scenario_file), "--out", str(out), "--no-figures"])
    capsys.readouterr()
    assert cli.main(["inspect-blocks", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("blocks: ")
    assert "acquire" in text and "release" in text
    assert cli.main(["inspect-blocks", str(out / "blocks.log"), "--status", "committed"]) == 0
    assert cli.main(["inspect-blocks", str(tmp_path / "missing.log")]) == 2


def test_module_entry_point(scenario_file, tmp_path):
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "robotledger", "issue", "Org1", "x", "husky",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
