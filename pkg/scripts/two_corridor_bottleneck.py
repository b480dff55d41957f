"""Does predictability pressure move termination mass onto the crossing?

Trains the offline stage on tip-to-tip corridor data once per preset and
seed, then reports where the learned termination coin spends its mass.
The interesting readout is the concentration table: with the full
objective the crossing cell should dominate by a wide margin, the plain
clone should stay diffuse, and the switch-cost ablation should sit in
between on rate without developing the same spatial structure.

Run from the repository root:

    python3 scripts/two_corridor_bottleneck.py --seeds 0 1 2

Artifacts (checkpoints, metric rows, rollout traces for the full
objective) land under --out, one subdirectory per preset and seed.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from mo2lab import evaluate
from mo2lab.cli import layout_for_env
from mo2lab.config import derive_seed, load_config
from mo2lab.envs import generate_point_to_point_budget
from mo2lab.offline import train_offline

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "two_corridor_desk.json"


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    p.add_argument("--out", type=Path, default=Path("runs/two_corridor"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--presets", nargs="+",
                   default=["mo2", "ho2-offline", "ho2-lim"])
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="extra config overrides")
    p.add_argument("--traces", type=int, default=20,
                   help="rollout traces to export for the first preset")
    return p.parse_args()


def run_one(preset: str, seed: int, args):
    overrides = [f"preset={preset}", f"seed={seed}", *args.overrides]
    cfg = load_config(args.config, overrides)
    layout = layout_for_env(cfg.env)
    episodes = generate_point_to_point_budget(
        layout, derive_seed(cfg.seed, "dataset"), cfg.data.n_transitions,
        noise_std=cfg.data.noise_std)

    out_dir = args.out / preset / f"seed{seed}"
    t0 = time.time()
    art = train_offline(episodes, cfg, out_dir=out_dir)
    elapsed = time.time() - t0

    window = cfg.mo2.sequence_length
    mass = evaluate.switch_mass_by_cell(episodes[:400], art.policy, window=window)
    conc = evaluate.junction_concentration(mass, layout)
    rate = evaluate.average_switch_rate(episodes[:200], art.policy, window=window)
    row = {
        "preset": preset,
        "seed": seed,
        "switch_rate": rate,
        "junction_mean": conc["junction_mean"],
        "other_mean": conc["other_mean"],
        "ratio": conc["ratio"],
        "argmax_cell": conc["argmax_cell"],
        "holdout_bc": art.metrics[-1]["holdout_bc"],
        "seconds": elapsed,
    }
    print(f"  {preset:12s} seed={seed} switch={rate:.4f} "
          f"junction={conc['junction_mean']:.4f} other={conc['other_mean']:.4f} "
          f"ratio={conc['ratio']:.1f} argmax={conc['argmax_cell']} "
          f"({elapsed:.0f}s)", flush=True)

    if preset == args.presets[0] and args.traces > 0:
        trace_path = out_dir / "traces.jsonl"
        evaluate.export_rollout_traces(
            layout, art.policy, args.traces, trace_path,
            seed=derive_seed(cfg.seed, "trace-export"))
        row["traces"] = str(trace_path)
    return row


def main():
    args = parse_args()
    rows = []
    print(f"config={args.config} seeds={args.seeds} presets={args.presets}", flush=True)
    for preset in args.presets:
        for seed in args.seeds:
            rows.append(run_one(preset, seed, args))

    print("\nswitch-rate ordering (mean over seeds):")
    reports = []
    for preset in args.presets:
        rates = [r["switch_rate"] for r in rows if r["preset"] == preset]
        ratios = [r["ratio"] for r in rows if r["preset"] == preset]
        reports.append(evaluate.metric_report(f"switch_rate/{preset}", rates))
        reports.append(evaluate.metric_report(f"junction_ratio/{preset}", ratios))
        print(f"  {preset:12s} rate={np.mean(rates):.4f} "
              f"(per seed: {', '.join(f'{v:.4f}' for v in rates)}) "
              f"junction ratio={np.mean(ratios):.1f}")
    summary = args.out / "summary.csv"
    evaluate.write_metric_reports(summary, reports)
    print(f"summary written to {summary}")


if __name__ == "__main__":
    main()
