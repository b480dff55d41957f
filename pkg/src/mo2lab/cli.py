"""Command line entry point tying the pipeline together.

Subcommands: gen-data, train-offline, transfer, eval, export-traces, and
verify (the oracle/property suites).  Every run resolves one RunConfig from
an optional JSON file plus command-line overrides, and leaves a manifest
recording the resolved config and a digest of every file it read or wrote,
so a run is reproducible from the manifest alone.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import config as cfglib
from . import evaluate
from . import transfer as transferlib
from .config import ConfigError, RunConfig, derive_seed
from .envs import (generate_point_to_point_budget, load_layout, read_dataset,
                   write_dataset)
from .offline import load_model, load_policy, train_offline

ENV_LAYOUTS = {
    "maze2d": "maze2d_modified",
    "fourrooms": "gridworld_fourrooms",
    "two_corridor": "two_corridor_synthetic",
}


def layout_for_env(name: str):
    if name not in ENV_LAYOUTS:
        raise ConfigError("env", f"unknown env {name!r}; choose from "
                          f"{sorted(ENV_LAYOUTS)}")
    return load_layout(ENV_LAYOUTS[name])


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", default=None, help="flat JSON config file")
    sp.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE", help="override a dotted config key")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--preset", default=None, choices=sorted(cfglib.PRESETS),
                    help="apply a baseline preset before --set overrides")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mo2lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="generate an offline dataset")
    _add_common(sp)

    sp = sub.add_parser("train-offline", help="run the offline stage")
    _add_common(sp)
    sp.add_argument("--dataset", default=None, help="dataset JSONL path")

    sp = sub.add_parser("transfer", help="online transfer over frozen options")
    _add_common(sp)
    sp.add_argument("--policy", required=True, help="option-policy checkpoint")

    sp = sub.add_parser("eval", help="compute metrics for a trained pair")
    _add_common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", default=None,
                    help="logged data for switch-rate and BC metrics")
    sp.add_argument("--episodes", type=int, default=10,
                    help="rollout episodes for CE and alignment")

    sp = sub.add_parser("export-traces", help="write rollout traces as JSONL")
    _add_common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--episodes", type=int, default=8)
    sp.add_argument("--deterministic", action="store_true",
                    help="mean actions instead of sampled ones")

    sp = sub.add_parser("verify", help="run the oracle and property suites")
    _add_common(sp)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then preset flag, then --set, then scalar flags."""
    cfg = cfglib.load_config(args.config)
    if args.preset is not None:
        cfglib.apply_preset(cfg, args.preset)
    cfglib.apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    cfglib.validate(cfg)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(role: str, path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(role, f"file not found: {p}")
    return p


def cmd_gen_data(cfg: RunConfig) -> int:
    layout = layout_for_env(cfg.env)
    episodes = generate_point_to_point_budget(
        layout, derive_seed(cfg.seed, "dataset"), cfg.data.n_transitions,
        noise_std=cfg.data.noise_std)
    out = _out_dir(cfg)
    path = Path(cfg.dataset) if cfg.dataset else out / "dataset.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(path, cfg.env, cfg.seed, episodes)
    cfg.dataset = str(path)
    entry = cfglib.write_manifest(out / "manifest.json", cfg, {"dataset": path})
    n = sum(ep.actions.shape[0] for ep in episodes)
    print(f"wrote {len(episodes)} episodes ({n} transitions) to {path}")
    print(f"dataset sha256 {entry['artifacts']['dataset']['sha256']}")
    return 0


def cmd_train_offline(cfg: RunConfig, dataset_flag) -> int:
    path = _require_file("dataset", dataset_flag or cfg.dataset or
                         Path(cfg.out_dir) / "dataset.jsonl")
    cfg.dataset = str(path)
    _, episodes = read_dataset(path)
    out = _out_dir(cfg)

    def progress(row: dict) -> None:
        hold = row["holdout_bc"]
        hold_txt = f" holdout={hold:.3f}" if np.isfinite(hold) else ""
        print(f"[{row['step']:5d}] bc={row['o_bc']:.3f} "
              f"switch={row['switch_rate']:.3f} tran={row['o_tran']:.2f}"
              f"{hold_txt}")

    art = train_offline(episodes, cfg, out_dir=out, progress=progress)
    cfglib.write_manifest(out / "manifest.json", cfg, {
        "dataset": path,
        "policy_checkpoint": art.policy_path,
        "model_checkpoint": art.model_path,
        "offline_metrics": art.metrics_path,
    })
    print(f"checkpoints and metrics under {out} (preset {cfg.preset})")
    return 0


def cmd_transfer(cfg: RunConfig, policy_flag) -> int:
    ckpt = _require_file("policy", policy_flag)
    policy = load_policy(ckpt)
    layout = layout_for_env(cfg.env)
    out = _out_dir(cfg)
    art = transferlib.train_transfer(layout, policy, cfg, out_dir=out)
    cfglib.write_manifest(out / "manifest.json", cfg, {
        "policy_checkpoint": ckpt,
        "episode_rows": art.rows_path,
        "eval_rows": art.evals_path,
    })
    last = art.evals[-1] if art.evals else None
    tail = (f"final eval success {last['success_rate']:.2f}" if last
            else "no eval block ran")
    print(f"{len(art.rows)} episodes, {art.env_steps} env steps, "
          f"{art.grad_steps} gradient steps, {tail}")
    if art.alarm_batches:
        print(f"warning: {art.alarm_batches} batches tripped the "
              "value-divergence alarm")
    return 0


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    policy = load_policy(_require_file("policy", args.policy))
    model = load_model(_require_file("model", args.model))
    layout = layout_for_env(cfg.env)
    out = _out_dir(cfg)
    window = cfg.mo2.sequence_length

    reports = []
    dataset = args.dataset or cfg.dataset
    artifacts = {"policy_checkpoint": Path(args.policy),
                 "model_checkpoint": Path(args.model)}
    if dataset:
        path = _require_file("dataset", dataset)
        artifacts["dataset"] = path
        _, episodes = read_dataset(path)
        rng = np.random.default_rng(derive_seed(cfg.seed, "eval-sampled-switch"))
        reports.append(evaluate.metric_report(
            "switch_rate_expected",
            [evaluate.average_switch_rate(episodes, policy, window=window)]))
        reports.append(evaluate.metric_report(
            "switch_rate_sampled",
            [evaluate.average_switch_rate(episodes, policy, mode="sampled",
                                          window=window, rng=rng)]))
        reports.append(evaluate.metric_report(
            "bc_nats", [evaluate.expected_bc_score(episodes, policy,
                                                   window=window)]))

    ce = evaluate.cumulative_prediction_error(
        layout, policy, model, n_episodes=args.episodes,
        seed=derive_seed(cfg.seed, "eval-rollouts"))
    reports.append(evaluate.metric_report("prediction_ce", [ce]))

    traces_path = out / "eval_traces.jsonl"
    evaluate.export_rollout_traces(layout, policy, args.episodes, traces_path,
                                   seed=derive_seed(cfg.seed, "eval-traces"))
    traces = evaluate.read_rollout_traces(traces_path)
    align = evaluate.bottleneck_alignment(traces, layout)
    if align is not None:
        reports.append(evaluate.metric_report("bottleneck_alignment", [align]))
    reports.append(evaluate.metric_report(
        "alignment_chance_floor", [evaluate.alignment_chance_floor(layout)]))

    metrics_path = evaluate.write_metric_reports(out / "eval_metrics.csv", reports)
    artifacts["eval_metrics"] = metrics_path
    artifacts["eval_traces"] = traces_path
    cfglib.write_manifest(out / "manifest.json", cfg, artifacts)
    for r in reports:
        print(f"{r.name:26s} {r.mean:.6f}")
    return 0


def cmd_export_traces(cfg: RunConfig, args: argparse.Namespace) -> int:
    policy = load_policy(_require_file("policy", args.policy))
    layout = layout_for_env(cfg.env)
    out = _out_dir(cfg)
    path = out / "traces.jsonl"
    evaluate.export_rollout_traces(
        layout, policy, args.episodes, path,
        seed=derive_seed(cfg.seed, "trace-export"),
        stochastic=not args.deterministic)
    cfglib.write_manifest(out / "manifest.json", cfg, {
        "policy_checkpoint": Path(args.policy), "traces": path})
    print(f"wrote {args.episodes} rollout traces to {path}")
    return 0


# suites runnable on a source checkout; name -> test file
VERIFY_SUITES = (
    ("reverse-mode gradients", "test_autodiff.py"),
    ("network blocks", "test_nets.py"),
    ("forward-algorithm oracle", "test_options.py"),
    ("objective gradients", "test_objectives.py"),
    ("tabular identities", "test_tabular.py"),
    ("transition model", "test_transition.py"),
    ("config plumbing", "test_config.py"),
    ("environments", "test_envs.py"),
    ("offline stage", "test_offline.py"),
    ("evaluation metrics", "test_evaluate.py"),
    ("transfer stage", "test_transfer.py"),
)


def cmd_verify() -> int:
    tests_dir = Path(__file__).resolve().parents[2] / "tests"
    if not tests_dir.is_dir():
        print("error: test suites not found (verify needs a source checkout)",
              file=sys.stderr)
        return 1
    results = []
    for name, fname in VERIFY_SUITES:
        target = tests_dir / fname
        proc = subprocess.run(
            [sys.executable, "-m", "pytest", "-q", "--no-header", str(target)],
            capture_output=True, text=True, cwd=tests_dir.parent)
        ok = proc.returncode == 0
        results.append((name, ok))
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            print(proc.stdout[-2000:], file=sys.stderr)
    failed = [name for name, ok in results if not ok]
    print(f"\n{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify()
    try:
        cfg = resolve_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-offline":
            return cmd_train_offline(cfg, args.dataset)
        if args.command == "transfer":
            return cmd_transfer(cfg, args.policy)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "export-traces":
            return cmd_export_traces(cfg, args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
