"""Desk-scale maze pipeline: offline discovery, evaluation, online transfer.

Stage `offline` builds one demonstration dataset per seed (shared across
presets), trains each preset on it, and scores the result: switch rate,
junction concentration of the termination mass, held-out clone score,
switch alignment of live rollouts against the junction chance floor, and
cumulative jumpy-model prediction error.  Stage `transfer` reloads the
full-objective policy per seed, freezes it, and trains the option-level
critic online once per replay mode; the jumpy replay should both reach the
goal reliably and carry a smaller running value-estimate bias than the
flat one.

Run from the repository root:

    python3 scripts/maze2d_pipeline.py --seeds 0 1 2
    python3 scripts/maze2d_pipeline.py --stages transfer --seeds 0

Each run writes checkpoints, metric rows, and traces under --out, plus
cross-seed summary CSVs at the top level.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from mo2lab import evaluate, transfer
from mo2lab.cli import layout_for_env
from mo2lab.config import derive_seed, load_config
from mo2lab.envs import generate_point_to_point_budget
from mo2lab.offline import load_policy, train_offline

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "maze2d_desk.json"


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    p.add_argument("--out", type=Path, default=Path("runs/maze2d"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--presets", nargs="+",
                   default=["mo2", "ho2-lim", "ho2-offline"])
    p.add_argument("--stages", nargs="+", default=["offline", "transfer"],
                   choices=["offline", "transfer"])
    p.add_argument("--modes", nargs="+", default=["semi", "mdp"],
                   help="replay modes for the transfer stage")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="extra config overrides")
    p.add_argument("--traces", type=int, default=20,
                   help="rollout traces per offline run")
    p.add_argument("--align-radius", type=float, default=0.75)
    return p.parse_args()


def _dataset(cfg, layout, cache: dict):
    if cfg.seed not in cache:
        cache[cfg.seed] = generate_point_to_point_budget(
            layout, derive_seed(cfg.seed, "dataset"), cfg.data.n_transitions,
            noise_std=cfg.data.noise_std)
    return cache[cfg.seed]


def offline_one(preset: str, seed: int, args, cache: dict) -> dict:
    overrides = [f"preset={preset}", f"seed={seed}", *args.overrides]
    cfg = load_config(args.config, overrides)
    layout = layout_for_env(cfg.env)
    episodes = _dataset(cfg, layout, cache)
    out_dir = args.out / preset / f"seed{seed}"

    t0 = time.time()
    art = train_offline(episodes, cfg, out_dir=out_dir)
    elapsed = time.time() - t0

    window = cfg.mo2.sequence_length
    mass = evaluate.switch_mass_by_cell(episodes[:400], art.policy, window=window)
    conc = evaluate.junction_concentration(mass, layout)
    rate = evaluate.average_switch_rate(episodes[:200], art.policy, window=window)

    trace_path = out_dir / "traces.jsonl"
    evaluate.export_rollout_traces(layout, art.policy, args.traces, trace_path,
                                   seed=derive_seed(cfg.seed, "trace-export"))
    traces = evaluate.read_rollout_traces(trace_path)
    align = evaluate.bottleneck_alignment(traces, layout, radius=args.align_radius)
    ce = evaluate.cumulative_prediction_error(
        layout, art.policy, art.model, 10, seed=derive_seed(cfg.seed, "pred-error"))

    row = {
        "preset": preset, "seed": seed, "switch_rate": rate,
        "junction_ratio": conc["ratio"], "alignment": align,
        "prediction_ce": ce, "holdout_bc": art.metrics[-1]["holdout_bc"],
        "seconds": elapsed,
    }
    print(f"  {preset:12s} seed={seed} switch={rate:.4f} "
          f"ratio={conc['ratio']:.1f} align={align:.3f} ce={ce:.1f} "
          f"holdout={row['holdout_bc']:.3f} ({elapsed:.0f}s)", flush=True)
    return row


def transfer_one(mode: str, seed: int, args) -> dict:
    overrides = [f"seed={seed}", f"transfer.mode={mode}", *args.overrides]
    cfg = load_config(args.config, overrides)
    layout = layout_for_env(cfg.env)
    policy = load_policy(args.out / "mo2" / f"seed{seed}" / "policy.ckpt")

    out_dir = args.out / "transfer" / mode / f"seed{seed}"
    t0 = time.time()
    art = transfer.train_transfer(layout, policy, cfg, out_dir=out_dir)
    elapsed = time.time() - t0

    final = art.evals[-1] if art.evals else {"success_rate": 0.0, "mean_return": 0.0}
    bias = transfer.time_averaged_value_bias(art.rows, final["mean_return"])
    row = {
        "mode": mode, "seed": seed, "env_steps": art.env_steps,
        "success_rate": final["success_rate"], "value_bias": bias,
        "seconds": elapsed,
    }
    print(f"  {mode:4s} seed={seed} steps={art.env_steps} "
          f"success={final['success_rate']:.2f} bias={bias:.3f} "
          f"({elapsed:.0f}s)", flush=True)
    return row


def main():
    args = parse_args()
    print(f"config={args.config} stages={args.stages} seeds={args.seeds}", flush=True)

    if "offline" in args.stages:
        cache: dict = {}
        rows = [offline_one(p, s, args, cache)
                for p in args.presets for s in args.seeds]
        reports = []
        floor = evaluate.alignment_chance_floor(
            layout_for_env(load_config(args.config, []).env),
            radius=args.align_radius)
        for preset in args.presets:
            sub = [r for r in rows if r["preset"] == preset]
            for key in ("switch_rate", "junction_ratio", "alignment",
                        "prediction_ce", "holdout_bc"):
                ref = floor if key == "alignment" else None
                reports.append(evaluate.metric_report(
                    f"{key}/{preset}", [r[key] for r in sub], reference=ref))
        path = evaluate.write_metric_reports(args.out / "offline_summary.csv", reports)
        print(f"offline summary written to {path}")

    if "transfer" in args.stages:
        rows = [transfer_one(m, s, args) for m in args.modes for s in args.seeds]
        reports = []
        for mode in args.modes:
            sub = [r for r in rows if r["mode"] == mode]
            for key in ("success_rate", "value_bias", "env_steps"):
                reports.append(evaluate.metric_report(
                    f"{key}/{mode}", [r[key] for r in sub]))
        path = evaluate.write_metric_reports(args.out / "transfer_summary.csv", reports)
        print(f"transfer summary written to {path}")


if __name__ == "__main__":
    main()
