import json

import pytest

from evpay.cli import main

from corpus import CANONICAL


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "canonical.toml"
    path.write_text(CANONICAL)
    return path


@pytest.fixture
def run_dir(tmp_path, scenario_file):
    out = tmp_path / "out"
    assert main(["run", str(scenario_file), "--out", str(out)]) == 0
    return out


def test_run_writes_artifacts(run_dir):
    assert {p.name for p in run_dir.iterdir()} == {"events.jsonl", "ledger.jsonl", "report.json"}
    report = json.loads((run_dir / "report.json").read_text())
    assert report["sessions"][0]["total_cost"] == 400000


def test_verify_exit_codes(run_dir, capsys):
    events, ledger = run_dir / "events.jsonl", run_dir / "ledger.jsonl"
    assert main(["verify", "--events", str(events), "--ledger", str(ledger)]) == 0
    lines = ledger.read_text().splitlines(keepends=True)
    ledger.write_text("".join(lines[:1] + lines[2:]))
    capsys.readouterr()
    assert main(["verify", "--events", str(events), "--ledger", str(ledger)]) == 1
    out = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert "UnknownReference" in {f["kind"] for f in out}


def test_replay_exit_codes(run_dir, scenario_file):
    events = str(run_dir / "events.jsonl")
    assert main(["replay", "--events", events, str(scenario_file)]) == 0
    assert main(["replay", "--events", events, "--seed", "43", str(scenario_file)]) == 1


def test_inspect(run_dir, capsys):
    events = run_dir / "events.jsonl"
    cid = json.loads((run_dir / "report.json").read_text())["sessions"][0]["channel_id"]
    capsys.readouterr()
    assert main(["inspect", "--channel", cid, "--events", str(events)]) == 0
    assert json.loads(capsys.readouterr().out)["channel_id"] == cid
    assert main(["inspect", "--channel", "ff" * 32, "--events", str(events)]) == 1


def test_seed_override_changes_output(tmp_path, scenario_file, run_dir):
    other = tmp_path / "other"
    assert main(["run", str(scenario_file), "--seed", "7", "--out", str(other)]) == 0
    assert (other / "events.jsonl").read_text() != (run_dir / "events.jsonl").read_text()


def test_tick_limit_is_a_finding_but_still_writes(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text(CANONICAL.replace("ticks = 200", "ticks = 5"))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
    assert (tmp_path / "o" / "events.jsonl").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["verify", "--events", "x"],
    ["run", "/nonexistent/scenario.toml"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(main(argv))
    assert info.value.code == 2


def test_parse_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [")
    assert main(["run", str(bad)]) == 2
    junk = tmp_path / "junk.jsonl"
    junk.write_text("nope\n")
    assert main(["verify", "--events", str(junk), "--ledger", str(junk)]) == 2
