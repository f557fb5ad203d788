import json

import pytest

from noncollision.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


def run(*argv):
    with pytest.raises(SystemExit) as exc:
        main(list(argv))
    return exc.value.code


def test_verify_kepler_passes_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("verify", "kepler", "--out", str(a), "--seed", "3") == EXIT_OK
    assert run("verify", "kepler", "--out", str(b), "--seed", "3") == EXIT_OK
    ra = (a / "verify_kepler.json").read_bytes()
    rb = (b / "verify_kepler.json").read_bytes()
    assert ra == rb
    recs = json.loads(ra)
    assert all(r["passed"] for r in recs)
    assert all("runtime" not in r for r in recs)


def test_verify_gerver_passes(tmp_path):
    assert run("verify", "gerver", "--out", str(tmp_path)) == EXIT_OK


def test_verify_hyperbolicity_reports_the_red_records(tmp_path):
    assert run("verify", "hyperbolicity", "--out", str(tmp_path)) == EXIT_FAIL
    recs = json.loads((tmp_path / "verify_hyperbolicity.json").read_text())
    assert any(not r["passed"] for r in recs)
    assert {r["provenance"] for r in recs} <= {"PAPER", "DERIVED", "TRIVIAL"}


@pytest.mark.parametrize("argv", [
    ("verify", "nonsense"),
    ("verify", "kepler", "--eps0", "0.9"),
    ("verify", "kepler", "--kappa", "0.2"),
    ("simulate", "local", "--mu", "0.5"),
    ("study", "convergence", "--mu-list", ""),
    ("study", "convergence", "--mu-list", "1e-3,abc"),
    ("study", "convergence", "--mu-list", "1e-3,1e-4", "--chi-list", "1e4"),
    ("simulate", "kepler", "--G", "1.5"),
])
def test_usage_errors(tmp_path, argv):
    assert run(*argv, "--out", str(tmp_path)) == EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"periods": 2, "G": 0.5, "out": str(tmp_path / "from_file")}))
    assert run("simulate", "kepler", "--config", str(cfg), "--G", "0.6", "--json") == EXIT_OK
    summary = json.loads((tmp_path / "from_file" / "summary.json").read_text())
    # two periods give two pericenter passages after the start
    assert summary["sections"] == 2
    assert summary["energy_drift"] <= 1e-10

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert run("verify", "kepler", "--config", str(bad)) == EXIT_USAGE
    assert run("verify", "kepler", "--config", str(tmp_path / "missing.json")) == EXIT_USAGE


def test_simulate_kepler_outputs(tmp_path):
    assert run("simulate", "kepler", "--periods", "3", "--every", "4", "--out", str(tmp_path)) == EXIT_OK
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert rows[0].startswith("t,")
    assert len(rows) > 10
    events = [json.loads(line) for line in (tmp_path / "events.jsonl").read_text().splitlines()]
    assert len(events) == 3
    assert all(e["section"] == events[0]["section"] for e in events)


def test_help_exits_cleanly():
    assert run("--help") == EXIT_OK
