"""End-to-end command line behavior: config resolution, exit codes,
manifest reproducibility, and the chained pipeline on a tiny run."""

import json
import subprocess

import pytest

from mo2lab import cli
from mo2lab.config import config_from_manifest


def tiny_args(tmp_path, sub, *extra, env="two_corridor"):
    """Small-footprint settings so each stage finishes in seconds."""
    return [
        sub,
        "--out", str(tmp_path),
        "--set", f"env={env}",
        "--set", "data.n_transitions=600",
        "--set", "mo2.sequence_length=20",
        "--set", "mo2.batch_size=4",
        "--set", "policy.hidden=[16,16]",
        "--set", "model.hidden=[16,16]",
        "--set", "offline.steps=30",
        "--set", "offline.model_warmup=5",
        "--set", "offline.eval_every=10",
        "--set", "transfer.episodes=2",
        "--set", "transfer.hidden=[16,16]",
        "--set", "transfer.warmup_tuples=64",
        "--set", "transfer.batch_size=32",
        "--set", "transfer.eval_every=2",
        "--set", "transfer.eval_episodes=1",
        *extra,
    ]


def read_manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_gen_data_is_digest_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(tiny_args(a, "gen-data", "--seed", "5")) == 0
    assert cli.main(tiny_args(b, "gen-data", "--seed", "5")) == 0
    da = read_manifest(a)["artifacts"]["dataset"]["sha256"]
    db = read_manifest(b)["artifacts"]["dataset"]["sha256"]
    assert da == db
    c = tmp_path / "c"
    assert cli.main(tiny_args(c, "gen-data", "--seed", "6")) == 0
    assert read_manifest(c)["artifacts"]["dataset"]["sha256"] != da


def test_invalid_config_exits_2(tmp_path, capsys):
    rc = cli.main(["gen-data", "--out", str(tmp_path),
                   "--set", "mo2.sequence_length=1"])
    assert rc == 2
    assert "mo2.sequence_length" in capsys.readouterr().err
    rc = cli.main(["gen-data", "--out", str(tmp_path),
                   "--set", "no.such.key=1"])
    assert rc == 2


def test_missing_dataset_exits_2(tmp_path, capsys):
    rc = cli.main(tiny_args(tmp_path, "train-offline",
                            "--dataset", str(tmp_path / "nope.jsonl")))
    assert rc == 2
    assert "dataset" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("not a checkpoint\n")
    rc = cli.main(tiny_args(tmp_path, "transfer", "--policy", str(bad)))
    assert rc == 1


def test_unknown_env_exits_2(tmp_path, capsys):
    rc = cli.main(["gen-data", "--out", str(tmp_path), "--set", "env=atari"])
    assert rc == 2
    assert "env" in capsys.readouterr().err


def test_preset_and_overrides_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"mo2.alpha": 0.5}))
    args = cli.build_parser().parse_args(
        ["train-offline", "--config", str(cfg_file), "--preset", "mo2",
         "--set", "mo2.alpha=0.25", "--seed", "9", "--out", str(tmp_path)])
    cfg = cli.resolve_config(args)
    assert cfg.mo2.alpha == 0.25  # --set beats both the file and the preset
    assert cfg.preset == "mo2"
    assert cfg.seed == 9
    assert cfg.out_dir == str(tmp_path)


def test_pipeline_end_to_end(tmp_path, capsys):
    data_dir = tmp_path / "data"
    off_dir = tmp_path / "offline"
    tr_dir = tmp_path / "transfer"
    ev_dir = tmp_path / "eval"
    tx_dir = tmp_path / "traces"

    assert cli.main(tiny_args(data_dir, "gen-data", "--seed", "3")) == 0
    dataset = data_dir / "dataset.jsonl"
    assert dataset.is_file()

    rc = cli.main(tiny_args(off_dir, "train-offline", "--seed", "3",
                            "--preset", "ho2-offline",
                            "--dataset", str(dataset)))
    assert rc == 0
    manifest = read_manifest(off_dir)
    assert manifest["config"]["preset"] == "ho2-offline"
    assert manifest["config"]["mo2.alpha"] == 0.0
    roles = set(manifest["artifacts"])
    assert {"dataset", "policy_checkpoint", "model_checkpoint",
            "offline_metrics"} <= roles
    # the manifest alone rebuilds the exact resolved config
    cfg = config_from_manifest(off_dir / "manifest.json")
    assert cfg.preset == "ho2-offline" and cfg.offline.steps == 30

    policy = off_dir / "policy.ckpt"
    model = off_dir / "model.ckpt"

    rc = cli.main(tiny_args(tr_dir, "transfer", "--seed", "3",
                            "--policy", str(policy)))
    assert rc == 0
    assert (tr_dir / "transfer_rows.csv").is_file()

    rc = cli.main(tiny_args(ev_dir, "eval", "--seed", "3",
                            "--policy", str(policy), "--model", str(model),
                            "--dataset", str(dataset), "--episodes", "2"))
    assert rc == 0
    out = capsys.readouterr().out
    assert "prediction_ce" in out and "switch_rate_expected" in out
    assert (ev_dir / "eval_metrics.csv").is_file()

    rc = cli.main(tiny_args(tx_dir, "export-traces", "--seed", "3",
                            "--policy", str(policy), "--episodes", "2"))
    assert rc == 0
    header = json.loads((tx_dir / "traces.jsonl").read_text().splitlines()[0])
    assert header["episodes"] == 2


def test_verify_prints_a_suite_table(monkeypatch, capsys):
    def fake_run(cmd, **kw):
        return subprocess.CompletedProcess(cmd, 0, stdout="", stderr="")

    monkeypatch.setattr(cli.subprocess, "run", fake_run)
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == len(cli.VERIFY_SUITES)
    assert f"{len(cli.VERIFY_SUITES)}/{len(cli.VERIFY_SUITES)} suites passed" in out

    def fake_fail(cmd, **kw):
        return subprocess.CompletedProcess(cmd, 1, stdout="boom", stderr="")

    monkeypatch.setattr(cli.subprocess, "run", fake_fail)
    assert cli.main(["verify"]) == 1
