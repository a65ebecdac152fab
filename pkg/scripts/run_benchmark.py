#!/usr/bin/env python3
"""Run the default synthetic benchmark end to end.

Baseline labelled-fraction sweep, then the teacher-student chain sweep with
the baseline's best mean as the chart reference, into <out>/baseline and
<out>/chain. The printed table compares the teacher with the best selected
chain iteration per fraction.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from distillchain import ExperimentConfig, SyntheticSpec, run_baseline_sweep, run_chain_experiment
from distillchain.reports import read_runs_csv, read_traces_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results", help="output root (default: results)")
    parser.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel cells (default: 1)")
    parser.add_argument(
        "--fast", action="store_true", help="smoke-scale benchmark (smaller dataset, fewer runs)"
    )
    args = parser.parse_args()

    out = Path(args.out)
    common = dict(seed=args.seed, jobs=args.jobs)
    if args.fast:
        common.update(
            source=SyntheticSpec(classes=4, per_class=100, dim=8, spread=0.9),
            fractions=(0.05, 0.2, 1.0),
            runs=2,
            early_stop_fraction=0.05,
        )

    t0 = time.perf_counter()
    base_cfg = ExperimentConfig(out_dir=str(out / "baseline"), **common)
    run_baseline_sweep(base_cfg)
    print(f"baseline sweep: {time.perf_counter() - t0:.0f}s -> {out / 'baseline'}")

    t1 = time.perf_counter()
    chain_cfg = ExperimentConfig(out_dir=str(out / "chain"), **common)
    run_chain_experiment(chain_cfg, baseline_summary=out / "baseline" / "summary.csv")
    print(f"chain sweep:    {time.perf_counter() - t1:.0f}s -> {out / 'chain'}")

    traces = read_traces_csv(out / "chain" / "traces.csv")
    best = {}
    for row in read_runs_csv(out / "chain" / "runs.csv"):
        if row.mode == "chain_best" and row.ok:
            best.setdefault(row.fraction, []).append(row.test_accuracy)
    print("\nfraction  teacher-test  best-chain-test  gap")
    for fraction in sorted(best):
        teacher = [t.test_accuracy for t in traces if t.fraction == fraction and t.iteration == 0]
        t_mean, b_mean = float(np.mean(teacher)), float(np.mean(best[fraction]))
        print(f"{fraction:8g}  {t_mean:12.4f}  {b_mean:15.4f}  {b_mean - t_mean:+.4f}")


if __name__ == "__main__":
    main()
