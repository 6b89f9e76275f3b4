import json

import pytest

from gsonnav.cli import main


def test_run_generated_scenario(tmp_path, capsys):
    assert main(["run", "--scenario", "empty:2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "success=True" in out
    assert len(list(tmp_path.glob("*.jsonl"))) == 1


def test_scenario_file_then_run_and_replay(tmp_path, capsys):
    scen = tmp_path / "walk.json"
    assert main(["scenario", "walking", "--seed", "3", "--out", str(scen)]) == 0
    data = json.loads(scen.read_text())
    data["time_limit"] = 3.0
    scen.write_text(json.dumps(data))
    assert main(["run", "--scenario", str(scen), "--seed", "7", "--stack", "baseline", "--out", str(tmp_path)]) == 0
    (log,) = tmp_path.glob("*.jsonl")
    assert "s7" in log.name
    assert main(["replay", "--log", str(log)]) == 0
    assert "identical" in capsys.readouterr().out


def test_batch_from_manifest(tmp_path, capsys):
    scen = tmp_path / "e.json"
    main(["scenario", "empty", "--out", str(scen)])
    data = json.loads(scen.read_text())
    data["time_limit"] = 1.0
    scen.write_text(json.dumps(data))
    manifest = {"scenarios": ["e.json"], "seeds": [0, 1], "stacks": ["gson", "baseline"], "out": "results"}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    assert main(["batch", "--manifest", str(tmp_path / "m.json")]) == 0
    assert (tmp_path / "results" / "episodes.csv").exists()
    assert (tmp_path / "results" / "aggregate.csv").exists()


def test_errors_give_nonzero_exit(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "wings": 2}')
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "unknown keys" in capsys.readouterr().err
    (tmp_path / "m.json").write_text('{"archetypes": ["queue"], "seeds": [0], "typo": 1}')
    assert main(["batch", "--manifest", str(tmp_path / "m.json")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "empty", "--estimator", "psychic"])
