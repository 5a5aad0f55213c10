"""
Benchmarking two optimizers and reading the statistics
======================================================

The harness runs seeded, resumable experiments and reduces them with the
standard protocol: per-problem mean/std, convergence curves, rank-sum
verdicts, and an aggregated indicator against random search. Budgets
here are tiny so the whole script runs in seconds.
"""

import os
import tempfile

from decontrol import harness

FIDS = (1, 8, 15)
COMMON = dict(fids=FIDS, dim=5, n_pop=20, max_evals=1200, runs=12)

# Three algorithms on the same seeded instances. Seeds derive from
# (seed_base, fid, run), so any experiment re-runs bit-identically.
de_cfg = harness.ExperimentConfig(algorithm="vanilla-de", **COMMON)
ra_cfg = harness.ExperimentConfig(algorithm="random-action", **COMMON)
rs_cfg = harness.ExperimentConfig(algorithm="random-search", **COMMON)

out = tempfile.mkdtemp()
de_dir = os.path.join(out, "vanilla")
de_records = harness.run_experiment(de_cfg, out_dir=de_dir)
ra_records = harness.run_experiment(ra_cfg)
rs_records = harness.run_experiment(rs_cfg)
print(f"{len(de_records)} runs each; persisted: {sorted(os.listdir(de_dir))}")

# Per-problem mean and standard deviation of the final best values.
print("\nfinal best, mean +- std")
for name, stats in harness.aggregate(de_records).items():
    print(f"  {name:>4} vanilla-de    {stats['mean']:.3e} +- {stats['std']:.1e}")
for name, stats in harness.aggregate(ra_records).items():
    print(f"  {name:>4} random-action {stats['mean']:.3e} +- {stats['std']:.1e}")

# Rank-sum verdicts per problem, with the +/-/= convention: + means the
# first algorithm is significantly better on that problem.
result = harness.compare(de_records, ra_records)
print()
print(harness.format_comparison(result, "vanilla-de", "random-action"))

# The aggregated indicator: per problem, invert the finals, standardize
# against a baseline's mean/std, exponentiate, average. Higher is
# better; the baseline itself scores exactly 1. The canonical baseline
# is random search, but at these toy budgets evolution beats sampling
# by so many orders of magnitude that exp(Z) saturates, so use the
# random-action finals as the yardstick instead; any per-problem
# finals dict works.
base = harness.finals_by_problem(ra_records)
for label, recs in (("vanilla-de", de_records), ("random-action", ra_records),
                    ("random-search", rs_records)):
    print(f"AEI {label:>13}: {harness.aei(harness.finals_by_problem(recs), base):.3f}")

# Convergence curves: median and quartiles of best-so-far at each
# evaluation milestone, one row per (problem, algorithm, milestone).
rows = harness.curves(de_records + ra_records)
csv_path = os.path.join(out, "curves.csv")
harness.write_curves_csv(csv_path, rows)
print(f"\n{len(rows)} curve rows -> {csv_path}")
f15 = [r for r in rows if r["problem"] == "f15" and r["algorithm"] == "vanilla-de"]
for row in f15[::5] + [f15[-1]]:
    print(f"  f15 @ {row['evals']:>5} evals: median {row['median']:.2f}"
          f"  [{row['q25']:.2f}, {row['q75']:.2f}]")
