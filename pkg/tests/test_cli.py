import json

from mirrorboard.cli import main
from mirrorboard.session import RoleKind, load_session_config


def test_lesson_subcommand(tmp_path, capsys):
    out = tmp_path / "lesson.json"
    assert main(["lesson", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert rec["version"] == 1
    assert any(a["kind"] == "pan" for a in rec["actions"])


def test_run_replay_analyze_pipeline(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--out", str(out), "--time-scale", "40", "--seed", "5"]) == 0
    assert main(["replay", str(out)]) == 0
    metrics_out = tmp_path / "m.json"
    assert main(["analyze", "--log", str(out / "session.jsonl"), "--out", str(metrics_out)]) == 0
    assert json.loads(metrics_out.read_text()) == json.loads((out / "metrics.json").read_text())


def test_run_with_scenario_file(tmp_path):
    out1 = tmp_path / "a"
    assert main(["run", "--out", str(out1), "--time-scale", "40"]) == 0
    # The echoed scenario re-runs to identical artifacts.
    out2 = tmp_path / "b"
    assert main(["run", "--scenario", str(out1 / "scenario.json"), "--out", str(out2)]) == 0
    assert (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()
    assert (out1 / "boards" / "P.board.txt").read_bytes() == (out2 / "boards" / "P.board.txt").read_bytes()


def test_replay_fails_on_tamper(tmp_path):
    out = tmp_path / "run"
    main(["run", "--out", str(out), "--time-scale", "40"])
    metrics = out / "metrics.json"
    rec = json.loads(metrics.read_text())
    rec["eye_contact_total"] += 1
    metrics.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    assert main(["replay", str(out)]) == 1


def test_session_config_loader(tmp_path):
    cfg = tmp_path / "session.json"
    cfg.write_text(
        json.dumps(
            {
                "board": {"origin": [0, 0, 0], "normal": [0, 0, 2], "extents": [3.0, 2.0]},
                "participants": [
                    {"name": "P", "role": "PRESENTER"},
                    {"name": "A", "role": "AUDIENCE"},
                ],
                "open_join": False,
            }
        )
    )
    state = load_session_config(cfg)
    assert state.board.extents == (3.0, 2.0)
    assert state.board.normal == (0.0, 0.0, 1.0)  # normalized
    assert state.participants["P"].role is RoleKind.PRESENTER
    assert state.open_join is False
