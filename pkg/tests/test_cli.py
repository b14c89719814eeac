import csv
import json

import numpy as np
import pytest

from berthtrack.cli import load_commands, main
from berthtrack.env import Termination, read_trace
from berthtrack.scenario import load_trajectory

SMALL = ["--set", "train.hidden=[16,16]", "--set", "train.batch_size=8", "--set", "train.warmup=20",
         "--set", "train.eval_episodes=2", "--set", "train.dtype=float64", "--set", "task.traj_duration=100"]


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    for tag, extra in (("obst", []), ("abl", ["--ablation"])):
        assert main(["train", "--out", str(root / tag), "--seed", "2", "--budget", "100", "--eval-every", "100",
                     *extra, *SMALL]) == 0
    return root


def test_gen_scenario_is_deterministic_and_writes_config(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-scenario", "--out", str(tmp_path / d), "--seed", "4", "--duration", "60"]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert set(a) == {"trajectory.csv", "commands.csv", "obstacles.json", "effective_config.json"}
    cfg = json.loads(a["effective_config.json"])
    assert cfg["seed"] == 4
    traj = load_trajectory(tmp_path / "a" / "trajectory.csv")
    assert traj.dt == 5.0 and len(traj) == 13


def test_gen_scenario_harbor_obstacles_are_dummy(tmp_path):
    assert main(["gen-scenario", "--variant", "harbor", "--out", str(tmp_path), "--duration", "60"]) == 0
    assert json.loads((tmp_path / "obstacles.json").read_text())["dummy"] is True


def test_gen_scenario_berthing_variant(tmp_path):
    assert main(["gen-scenario", "--variant", "berthing", "--out", str(tmp_path)]) == 0
    assert {"trajectory.csv", "quay.json", "obstacles.json"} <= set(_files(tmp_path))


def test_gen_scenario_rejects_duration_below_dt(tmp_path, capsys):
    assert main(["gen-scenario", "--out", str(tmp_path), "--duration", "1", "--dt", "5"]) == 2
    assert "--duration" in capsys.readouterr().err


def test_bad_override_is_a_usage_error(tmp_path, capsys):
    assert main(["gen-scenario", "--out", str(tmp_path), "--set", "episode.no_such_key=1"]) == 2
    assert "error" in capsys.readouterr().err


def test_train_writes_checkpoints_and_config(trained):
    obst = sorted(p.name for p in (trained / "obst").glob("*.btck"))
    assert obst == ["checkpoint_000000000000.btck", "checkpoint_000000000100.btck"]
    cfg = json.loads((trained / "abl" / "effective_config.json").read_text())
    assert cfg["episode"]["ablation"] is True
    assert cfg["train"]["budget"] == 100


def test_train_budget_zero_writes_one_checkpoint(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--budget", "0", *SMALL]) == 0
    assert [p.name for p in tmp_path.glob("*.btck")] == ["checkpoint_000000000000.btck"]


def test_train_resume_continues_and_checks_width(trained, tmp_path):
    ck = trained / "obst" / "checkpoint_000000000100.btck"
    assert main(["train", "--out", str(tmp_path / "r"), "--resume", str(ck), "--budget", "100", *SMALL]) == 0
    assert (tmp_path / "r" / "checkpoint_000000000200.btck").exists()
    assert main(["train", "--out", str(tmp_path / "bad"), "--resume", str(ck), "--ablation", *SMALL]) == 2
    assert main(["train", "--out", str(tmp_path / "gone"), "--resume", str(tmp_path / "nope.btck"), *SMALL]) == 2


EVAL = ["--trials", "2", "--horizon", "20", "--wind-speeds", "0", "0.5"]


def test_evaluate_single_checkpoint(trained, tmp_path, capsys):
    ck = trained / "obst" / "checkpoint_000000000100.btck"
    assert main(["evaluate", "--out", str(tmp_path), "--checkpoint", str(ck), *EVAL, "--traces", "1"]) == 0
    with open(tmp_path / "report_a.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4  # two winds, two ellipses
    assert all(int(r["trials"]) == 2 for r in rows)
    manifest = json.loads((tmp_path / "traces" / "manifest.json").read_text())
    assert len(manifest["episodes"]) == 4
    assert "berth" in capsys.readouterr().out


def test_evaluate_two_checkpoints_gives_paired_table(trained, tmp_path):
    a = trained / "obst" / "checkpoint_000000000100.btck"
    b = trained / "abl" / "checkpoint_000000000100.btck"
    assert main(["evaluate", "--out", str(tmp_path), "--checkpoint", str(a), "--checkpoint", str(b), *EVAL]) == 0
    table = (tmp_path / "table.txt").read_text().splitlines()
    assert len(table) == 3 and "(" in table[1]
    assert (tmp_path / "paired.csv").exists()


def test_evaluate_is_deterministic_across_workers(trained, tmp_path):
    ck = trained / "obst" / "checkpoint_000000000100.btck"
    for d, w in (("w1", "1"), ("w2", "2")):
        assert main(["evaluate", "--out", str(tmp_path / d), "--checkpoint", str(ck), "--workers", w,
                     "--traces", "1", *EVAL]) == 0
    assert _files(tmp_path / "w1") == _files(tmp_path / "w2")


def test_evaluate_missing_checkpoint(tmp_path, capsys):
    assert main(["evaluate", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "none.btck")]) == 2
    assert "not found" in capsys.readouterr().err


def test_simulate_replay_reproduces_the_scenario(tmp_path):
    scene = tmp_path / "scene"
    assert main(["gen-scenario", "--out", str(scene), "--seed", "8", "--duration", "100"]) == 0
    assert main(["simulate", "--out", str(tmp_path / "sim"), "--scene", str(scene), "--policy", "replay",
                 "--no-noise", "--no-init-error"]) == 0
    summary = json.loads((tmp_path / "sim" / "summary.json").read_text())
    assert summary["termination"] == "horizon"
    assert summary["max_e_bow"] < 1e-9 and summary["max_e_stern"] < 1e-9
    traj = load_trajectory(scene / "trajectory.csv")
    rows = read_trace(tmp_path / "sim" / "trace.csv")
    got = np.array([[r["x0"], r["y0"]] for r in rows])
    np.testing.assert_allclose(got, traj.poses[:, :2], atol=1e-9)
    cmds, interval = load_commands(scene / "commands.csv")
    assert interval == 5.0 and len(cmds) == 20


def test_simulate_random_policy_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / d), "--seed", "3", "--horizon", "200"]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    summary = json.loads(a["summary.json"])
    # random actuation drifts off the path well before the horizon
    assert summary["termination"] in {t.value for t in Termination if t is not Termination.HORIZON}
    assert 1 <= summary["steps"] and summary["t_end"] < 200


def test_simulate_checkpoint_and_usage_errors(trained, tmp_path):
    ck = trained / "abl" / "checkpoint_000000000100.btck"
    assert main(["simulate", "--out", str(tmp_path / "p"), "--policy", "checkpoint", "--checkpoint", str(ck),
                 "--deployment", "--horizon", "10"]) == 0
    assert main(["simulate", "--out", str(tmp_path / "x"), "--policy", "checkpoint"]) == 2
    assert main(["simulate", "--out", str(tmp_path / "y"), "--policy", "replay"]) == 2


def test_workers_must_be_positive(tmp_path):
    with pytest.raises(SystemExit):
        main(["gen-scenario", "--out", str(tmp_path), "--workers", "0"])
