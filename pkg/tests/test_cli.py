import json

import pytest

from specwalk import cli, gait_net


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_help_exits_zero(capsys):
    assert _run("--help") == 0
    assert "synth-data" in capsys.readouterr().out
    assert _run("demo", "--help") == 0


@pytest.mark.parametrize("argv", [
    ["synth-data", "--bogus", "1", "--out", "x"],
    ["frobnicate"],
    [],
    ["demo", "sideways", "--out", "x"],
])
def test_usage_errors_exit_two(argv):
    assert _run(*argv) == 2


def test_missing_inputs_exit_two(tmp_path):
    assert _run("train-gait", "--data", tmp_path / "nope.csv", "--out", tmp_path / "o") == 2
    assert _run("train-policy", "--gait", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    assert _run("demo", "velocity", "--out", tmp_path / "o") == 2
    assert _run("report", "table3", "--results", f"a={tmp_path / 'missing'}", "--out", tmp_path / "o") == 2
    assert _run("synth-data", "--config", tmp_path / "none.yaml", "--out", tmp_path / "o") == 2


def test_malformed_corpus_exit_two(tmp_path):
    bad = tmp_path / "cycles.csv"
    bad.write_text("not,a,corpus\n1,2,3\n")
    assert _run("train-gait", "--data", bad, "--out", tmp_path / "o") == 2


def test_synth_data_deterministic(tmp_path):
    for d in ("a", "b"):
        assert _run("synth-data", "--subjects", 2, "--trials-per-subject", 2, "--seed", 4, "--out", tmp_path / d) == 0
    for name in ("cycles.csv", "spectral.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["command"] == "synth-data" and man["seed"] == 4
    assert man["config"]["subjects"] == 2 and "numpy" in man["versions"]


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("subjects: 1\nseed: 9\ntrials-per-subject: 1\n")
    assert _run("synth-data", "--config", cfg, "--seed", 3, "--out", tmp_path / "o") == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert man["subjects"] == 1 and man["trials_per_subject"] == 1 and man["seed"] == 3


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("colour: blue\n")
    assert _run("synth-data", "--config", cfg, "--out", tmp_path / "o") == 2


def test_config_file_satisfies_required(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"subjects: 1\ntrials_per_subject: 1\nout: {tmp_path / 'from_cfg'}\n")
    assert _run("synth-data", "--config", cfg) == 0
    assert (tmp_path / "from_cfg" / "cycles.csv").is_file()


def test_oracle_demos(tmp_path):
    assert _run("demo", "velocity", "--oracle", "teleport", "--speeds", "0.5,1.0", "--episode-seconds", 2,
                "--out", tmp_path / "tele") == 0
    agg = json.loads((tmp_path / "tele" / "velocity_comparison.json").read_text())["aggregates"]
    assert agg["mse"] < 1e-20
    assert _run("demo", "rotation", "--oracle", "alive", "--angles=-3,3", "--speeds", "1.0",
                "--episode-seconds", 1, "--out", tmp_path / "alive") == 0
    assert _run("report", "table3", "--results", f"teleport={tmp_path / 'tele'}", f"alive={tmp_path / 'alive'}",
                "--out", tmp_path / "table") == 0
    lines = (tmp_path / "table" / "table3.csv").read_text().splitlines()
    assert lines[0].startswith("configuration,MSE") and len(lines) == 3


def test_end_to_end_pipeline(tmp_path):
    data, gait, pol, demo = (tmp_path / k for k in ("data", "gait", "policy", "demo"))
    assert _run("synth-data", "--subjects", 2, "--trials-per-subject", 2, "--out", data) == 0
    assert _run("train-gait", "--data", data / "cycles.csv", "--out", gait, "--epochs", 5, "--hidden", 16,
                "--lr", "1e-3", "--batch-size", 8) == 0
    params = gait_net.load_params(gait / "gait_net.json")
    summary = json.loads((gait / "summary.json").read_text())
    assert summary["digest"] == params.digest() and summary["epochs_run"] == 5
    assert _run("train-policy", "--gait", gait / "gait_net.json", "--out", pol, "--total-steps", 128,
                "--n-steps", 64, "--minibatch", 64, "--epochs", 1, "--episode-seconds", 0.3) == 0
    assert (pol / "checkpoint_final.npz").is_file() and (pol / "train_log.csv").is_file()
    man = json.loads((pol / "manifest.json").read_text())
    assert str(gait / "gait_net.json") in man["inputs"]
    assert _run("train-policy", "--gait", gait / "gait_net.json", "--out", pol / "more",
                "--resume", pol / "checkpoint_0001.npz") == 0
    assert _run("demo", "velocity", "--checkpoint", pol / "checkpoint_final.npz", "--gait", gait / "gait_net.json",
                "--speeds", "0.5,1.0", "--episode-seconds", 0.5, "--out", demo / "policy") == 0
    assert _run("demo", "tracking", "--oracle", "random", "--gait", gait / "gait_net.json",
                "--out", demo / "random") == 0
    assert _run("report", "table3", "--results", f"policy={demo / 'policy'}", "--out", demo / "table") == 0
    assert "n/a" in (demo / "table" / "table3.txt").read_text()
