#!/usr/bin/env python3
"""Run the full-scale directional experiment.

Generates the default 5000-sample dataset, trains all three variants for
100 epochs each, evaluates them on the held-out split, and writes metrics,
distance profiles, and a summary with the acceptance checks (rotation-error
ordering, loss balance, distance-profile trend). Several hours on a desktop
CPU; safe to re-run, finished stages are skipped.

Usage: python scripts/run_full_experiment.py [--root results/full_experiment]
       [--count 5000] [--epochs 100] [--seed 0]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from scipy import stats

from trusspose.evaluation import distance_profile, evaluate, render_distance_profile
from trusspose.scenegen import DatasetConfig, generate_dataset
from trusspose.training import TrainConfig, TrainLog, train

VARIANTS = ("plain", "branched", "parallel")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="results/full_experiment")
    parser.add_argument("--count", type=int, default=5000)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    root = Path(args.root)
    dataset = root / "dataset"
    if not (dataset / "manifest.json").exists():
        print(f"generating {args.count} samples ...", flush=True)
        started = time.time()
        generate_dataset(
            DatasetConfig(count=args.count, seed=args.seed),
            dataset,
            progress=lambda done, total: (
                print(f"  {done}/{total}", flush=True) if done % 500 == 0 else None
            ),
        )
        print(f"dataset done in {time.time() - started:.0f}s", flush=True)
    else:
        print(f"dataset already present at {dataset}", flush=True)

    summary = {"variants": {}, "config": vars(args)}
    for variant in VARIANTS:
        run_dir = root / variant
        if not (run_dir / "checkpoint.tpck").exists():
            print(f"training {variant} ({args.epochs} epochs) ...", flush=True)
            config = TrainConfig(
                dataset=str(dataset), variant=variant, epochs=args.epochs,
                batch_size=32, seed=args.seed,
            )
            started = time.time()
            train(
                config, run_dir,
                progress=lambda e, n, r: print(
                    f"  {variant} epoch {e}/{n}: L_T={r.mean_translation_loss:.4f} "
                    f"L_R={r.mean_rotation_loss:.4f} ({r.wall_time_s:.0f}s)",
                    flush=True,
                ) if e % 5 == 0 or e == n else None,
            )
            print(f"{variant} trained in {(time.time() - started) / 60:.1f} min", flush=True)
        else:
            print(f"{variant}: checkpoint already present", flush=True)

        report = evaluate(run_dir / "checkpoint.tpck", dataset)
        report.save_json(run_dir / "metrics.json")
        report.save_csv(run_dir / "metrics.csv")
        log = TrainLog.load_csv(run_dir / "train_log.csv")
        last = log.records[-1]
        profile = distance_profile(report, bin_width=0.1)
        profile.save_json(run_dir / "profile.json")
        render_distance_profile(profile, run_dir / "profile.png",
                                title=f"{variant} pose error vs distance")
        summary["variants"][variant] = {
            "mean_rotation_error_deg": report.mean_rotation_error_deg,
            "median_rotation_error_deg": report.median_rotation_error_deg,
            "mean_translation_error_m": report.mean_translation_error_m,
            "final_train_L_T": last.mean_translation_loss,
            "final_train_L_R": last.mean_rotation_loss,
            "loss_balance": last.mean_translation_loss
            / max(10.0 * last.mean_rotation_loss, 1e-12),
        }
        print(
            f"{variant}: rot {report.mean_rotation_error_deg:.2f} deg "
            f"(median {report.median_rotation_error_deg:.2f}), "
            f"trans {report.mean_translation_error_m:.4f} m",
            flush=True,
        )

    rot = {v: summary["variants"][v]["mean_rotation_error_deg"] for v in VARIANTS}
    ordering = rot["parallel"] <= rot["branched"] <= rot["plain"]
    balances = {v: summary["variants"][v]["loss_balance"] for v in VARIANTS}
    balance_ok = all(0.1 <= b <= 10.0 for b in balances.values())

    parallel_report = evaluate(root / "parallel" / "checkpoint.tpck", dataset)
    profile = distance_profile(parallel_report, bin_width=0.1)
    valid = [(i, m) for i, m in enumerate(profile.means) if profile.counts[i] > 0]
    rho = float(stats.spearmanr([i for i, _ in valid], [m for _, m in valid]).statistic)

    summary["checks"] = {
        "rotation_ordering_parallel_branched_plain": ordering,
        "loss_balance_in_range": balance_ok,
        "loss_balances": balances,
        "distance_profile_spearman": rho,
        "distance_profile_trend_positive": rho > 0,
    }
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    print()
    print(f"ordering parallel <= branched <= plain: {ordering} "
          f"({rot['parallel']:.2f} / {rot['branched']:.2f} / {rot['plain']:.2f} deg)")
    print(f"loss balance in [0.1, 10]: {balance_ok} ({balances})")
    print(f"distance-profile Spearman rho: {rho:.3f} (want > 0)")
    print(f"summary written to {root / 'summary.json'}")
    return 0 if ordering else 1


if __name__ == "__main__":
    sys.exit(main())
