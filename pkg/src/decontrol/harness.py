"""Benchmark orchestration: seeded multi-run experiments and their statistics.

An experiment runs one algorithm over a set of problem instances for a
fixed number of independent seeded runs, recording the best-so-far value
at a grid of evaluation-count milestones. Records persist as JSON lines
(one line per completed run, so a crash loses at most the run in flight)
next to an echo of the resolved configuration; re-running from that echo
reproduces every record bit for bit.

Downstream statistics follow the benchmarking protocol: sample mean/std
tables, two-sided Mann-Whitney rank-sum comparisons at the 0.05 level,
aggregated evaluation indicator (AEI) scores against a random-search
reference, and median/interquartile convergence curves as CSV.
"""

import csv
import dataclasses
import json
import math
import os
import time

import numpy as np

from . import de, nd, policy, problems, training

ALGORITHMS = ("rlde-afl", "random-action", "vanilla-de", "random-search")

# Classic DE defaults for the vanilla baseline: rand/1/bin, F=0.5, Cr=0.9.
VANILLA_F = 0.5
VANILLA_CR = 0.9


def default_milestones(max_evals, points=20):
    """Evenly spaced evaluation counts ending exactly at the budget."""
    return tuple(int(round(max_evals * (i + 1) / points)) for i in range(points))


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one benchmarking experiment."""

    algorithm: str
    fids: tuple
    dim: int = 10
    n_pop: int = 100
    max_evals: int = 20000
    runs: int = 51
    seed_base: int = 0
    instance_seed: int = 1000
    milestones: tuple = ()
    checkpoint: str = None

    def resolved_milestones(self):
        return tuple(self.milestones) or default_milestones(self.max_evals)

    @property
    def horizon(self):
        return max(1, self.max_evals // self.n_pop)


@dataclasses.dataclass
class RunRecord:
    """One independent run: milestone series plus final outcome."""

    algorithm: str
    problem: str
    fid: int
    run_index: int
    seed: tuple
    milestones: tuple
    best_at: tuple
    final_best: float
    evals: int
    wall_time: float

    def to_json(self):
        d = dataclasses.asdict(self)
        for key in ("seed", "milestones", "best_at"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_json(cls, d):
        return cls(
            **{
                **d,
                "seed": tuple(d["seed"]),
                "milestones": tuple(d["milestones"]),
                "best_at": tuple(d["best_at"]),
            }
        )


class MilestoneTracker:
    """Best-so-far capture at exact evaluation counts.

    ``push`` consumes fitness values in evaluation order, one at a time,
    so a milestone falling inside a batch is recorded at precisely that
    evaluation, not at the batch boundary.
    """

    def __init__(self, milestones):
        if list(milestones) != sorted(set(milestones)):
            raise ValueError("milestones must be strictly increasing")
        self.milestones = tuple(milestones)
        self.values = []
        self.best = math.inf
        self.count = 0

    def push(self, batch):
        nxt = len(self.values)
        for y in np.asarray(batch, dtype=np.float64).ravel():
            self.count += 1
            if y < self.best:
                self.best = float(y)
            if nxt < len(self.milestones) and self.count == self.milestones[nxt]:
                self.values.append(self.best)
                nxt += 1

    def finalize(self):
        """Pad milestones beyond the evaluations actually spent."""
        while len(self.values) < len(self.milestones):
            self.values.append(self.best)
        return tuple(self.values)


def random_actions(n, rng):
    """Uniform operator indices and uniform [0,1] parameters."""
    op_m = rng.integers(1, de.N_MUTATION_OPS + 1, size=n)
    op_x = rng.integers(1, de.N_CROSSOVER_OPS + 1, size=n)
    params_m = rng.uniform(size=(n, 3))
    params_x = rng.uniform(size=(n, 2))
    return [
        de.IndividualAction(int(op_m[i]), int(op_x[i]), params_m[i], params_x[i])
        for i in range(n)
    ]


def vanilla_actions(n):
    return [
        de.IndividualAction(1, 1, np.array([VANILLA_F, 0.0, 0.0]), np.array([VANILLA_CR, 0.0]))
        for _ in range(n)
    ]


def load_policy_bundle(path):
    if path is None:
        raise ValueError("algorithm 'rlde-afl' requires a checkpoint")
    return policy.load_checkpoint(path)


def run_single(config, problem, run_index, rng, bundle=None):
    """One seeded run of the configured algorithm on one instance.

    The rng splits into an engine stream (child 0: initialization and
    operator draws) and an action stream (child 1: policy sampling or
    random actions), so algorithm code paths stay comparable.
    """
    tracker = MilestoneTracker(config.resolved_milestones())
    engine_rng = rng.spawn(0)
    action_rng = rng.spawn(1)
    started = time.perf_counter()

    if config.algorithm == "random-search":
        evals = 0
        while evals < config.max_evals:
            k = min(config.n_pop, config.max_evals - evals)
            X = engine_rng.uniform(problem.lower, problem.upper, size=(k, config.dim))
            tracker.push(problems.evaluate(problem, X))
            evals += k
    elif config.algorithm == "rlde-afl":
        pc, weights = bundle
        tc = training.TrainerConfig(
            n_pop=config.n_pop, max_evals=config.max_evals, horizon=config.horizon
        )
        env = training.DeEnv(problem, pc, tc, engine_rng)
        env.reset()
        tracker.push(env.pop.Y)
        while not env.done:
            sample = policy.act(pc, weights, env.obs, action_rng)
            env.step(sample.actions())
            tracker.push(env.last_report.trial_fitness)
    else:
        pop = de.initialize(config.n_pop, problem, engine_rng, max_evals=config.max_evals)
        arch = de.Archives(config.n_pop)
        tracker.push(pop.Y)
        while not pop.exhausted and pop.gen < config.horizon:
            if config.algorithm == "random-action":
                actions = random_actions(config.n_pop, action_rng)
            else:
                actions = vanilla_actions(config.n_pop)
            report = de.step(pop, arch, actions, problem, engine_rng)
            tracker.push(report.trial_fitness)

    return RunRecord(
        algorithm=config.algorithm,
        problem=problem.name,
        fid=problem.fid,
        run_index=run_index,
        seed=(config.seed_base, problem.fid, run_index),
        milestones=tracker.milestones,
        best_at=tracker.finalize(),
        final_best=tracker.best,
        evals=tracker.count,
        wall_time=time.perf_counter() - started,
    )


def run_experiment(config, out_dir=None):
    """All runs of one experiment; optionally persisted incrementally.

    With ``out_dir`` set, writes ``config_echo.json`` up front and appends
    each completed record to ``records.jsonl`` as it finishes.
    """
    if config.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {config.algorithm!r}; choose from {ALGORITHMS}")
    bundle = None
    if config.algorithm == "rlde-afl":
        bundle = load_policy_bundle(config.checkpoint)

    records_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config_echo.json"), "w") as fh:
            json.dump(config_to_json(config), fh, sort_keys=True, indent=2)
            fh.write("\n")
        records_path = os.path.join(out_dir, "records.jsonl")

    root = nd.Rng(config.seed_base)
    records = []
    for fid in config.fids:
        problem = problems.make_instance(fid, config.dim, seed=config.instance_seed)
        for run in range(config.runs):
            record = run_single(config, problem, run, root.spawn(fid, run), bundle=bundle)
            records.append(record)
            if records_path is not None:
                with open(records_path, "a") as fh:
                    fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    return records


def config_to_json(config):
    d = dataclasses.asdict(config)
    d["fids"] = list(config.fids)
    d["milestones"] = list(config.resolved_milestones())
    return d


def config_from_json(d):
    d = dict(d)
    d["fids"] = tuple(d["fids"])
    d["milestones"] = tuple(d["milestones"])
    return ExperimentConfig(**d)


def load_records(path):
    with open(path) as fh:
        return [RunRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def aggregate(records):
    """Per-problem sample mean and sample (ddof=1) standard deviation."""
    finals = {}
    for rec in records:
        finals.setdefault(rec.problem, []).append(rec.final_best)
    out = {}
    for name in sorted(finals, key=lambda p: int(p[1:])):
        vals = np.asarray(finals[name])
        if len(vals) < 2:
            raise ValueError(f"problem {name} has {len(vals)} run(s); need at least 2")
        out[name] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)),
            "n": len(vals),
        }
    return out


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_sum_details(a, b):
    """Mann-Whitney U with tie-corrected normal approximation.

    Returns (U of the first sample, z, two-sided p). Requires both
    samples in the approximation regime (n >= 10).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if min(n1, n2) < 10:
        raise ValueError("rank-sum test requires at least 10 samples per side")
    combined = np.concatenate([a, b])
    ranks = _average_ranks(combined)
    u1 = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    n = n1 + n2
    _, counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    sigma_sq = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0.0:
        return float(u1), 0.0, 1.0
    z = (u1 - n1 * n2 / 2.0) / math.sqrt(sigma_sq)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return float(u1), float(z), float(p)


def rank_sum_test(a, b, alpha=0.05):
    """Two-sided comparison verdict for minimization: is ``a`` better?"""
    _, _, p = rank_sum_details(a, b)
    if p >= alpha:
        return "no-difference"
    med_a, med_b = float(np.median(a)), float(np.median(b))
    if med_a < med_b:
        return "better"
    if med_a > med_b:
        return "worse"
    return "no-difference"


def aei(subject, baseline, guard=1e-12):
    """Aggregated evaluation indicator against a baseline (usually random search).

    Both inputs map problem key -> array of per-run final best values.
    Values invert through 1/max(v, guard); per problem the baseline's
    mean/std standardize the subject's mean inverted value, and the AEI is
    the mean of exp(Z) over problems. A subject identical to the baseline
    scores exactly 1.
    """
    if set(subject) != set(baseline):
        raise ValueError("subject and baseline must cover the same problems")
    if not subject:
        raise ValueError("empty AEI input")
    scores = []
    n_runs = None
    for key in sorted(subject):
        v_s = np.asarray(subject[key], dtype=np.float64)
        v_b = np.asarray(baseline[key], dtype=np.float64)
        if n_runs is None:
            n_runs = len(v_s)
        if len(v_s) != n_runs or len(v_b) != n_runs:
            raise ValueError("all problems must have the same number of runs")
        u_s = 1.0 / np.maximum(v_s, guard)
        u_b = 1.0 / np.maximum(v_b, guard)
        mu = u_b.mean()
        sigma = max(float(u_b.std()), guard)
        # An astronomically better subject overflows to inf by design.
        with np.errstate(over="ignore"):
            scores.append(float(np.exp((u_s.mean() - mu) / sigma)))
    return float(np.mean(scores))


def finals_by_problem(records):
    """Records -> {problem: array of final bests}, run-index order."""
    grouped = {}
    for rec in sorted(records, key=lambda r: (r.fid, r.run_index)):
        grouped.setdefault(rec.problem, []).append(rec.final_best)
    return {k: np.asarray(v) for k, v in grouped.items()}


def curves(records, milestones=None):
    """Median and interquartile band of best-so-far per milestone.

    Returns one row dict per (problem, algorithm, milestone). The
    requested milestones must be recorded in every input record.
    """
    if milestones is not None:
        milestones = tuple(milestones)
    rows = []
    grouped = {}
    for rec in records:
        grouped.setdefault((rec.fid, rec.problem, rec.algorithm), []).append(rec)
    for (fid, name, algorithm) in sorted(grouped):
        group = grouped[(fid, name, algorithm)]
        wanted = milestones if milestones is not None else group[0].milestones
        series = []
        for rec in group:
            index = {m: v for m, v in zip(rec.milestones, rec.best_at)}
            missing = [m for m in wanted if m not in index]
            if missing:
                raise ValueError(f"milestone {missing[0]} not recorded for {name}")
            series.append([index[m] for m in wanted])
        series = np.asarray(series)
        for j, m in enumerate(wanted):
            q25, q50, q75 = np.percentile(series[:, j], [25.0, 50.0, 75.0])
            rows.append(
                {
                    "problem": name,
                    "algorithm": algorithm,
                    "evals": int(m),
                    "median": float(q50),
                    "q25": float(q25),
                    "q75": float(q75),
                }
            )
    return rows


CURVE_FIELDS = ("problem", "algorithm", "evals", "median", "q25", "q75")


def write_curves_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def compare(records_a, records_b, alpha=0.05):
    """Per-problem rank-sum verdicts of A vs B plus +/-/= counts."""
    finals_a = finals_by_problem(records_a)
    finals_b = finals_by_problem(records_b)
    common = sorted(set(finals_a) & set(finals_b), key=lambda p: int(p[1:]))
    if not common:
        raise ValueError("no common problems to compare")
    verdicts = {}
    for name in common:
        verdicts[name] = rank_sum_test(finals_a[name], finals_b[name], alpha=alpha)
    counts = {
        "better": sum(v == "better" for v in verdicts.values()),
        "worse": sum(v == "worse" for v in verdicts.values()),
        "no-difference": sum(v == "no-difference" for v in verdicts.values()),
    }
    return {"per_problem": verdicts, "counts": counts}


MARKS = {"better": "+", "worse": "-", "no-difference": "="}


def format_comparison(result, label_a="A", label_b="B"):
    """Readable text table mirroring the +/-/= summary row convention."""
    lines = [f"{label_a} vs {label_b} (rank-sum, two-sided, alpha=0.05)"]
    for name, verdict in result["per_problem"].items():
        lines.append(f"  {name:>5}: {MARKS[verdict]} ({verdict})")
    c = result["counts"]
    lines.append(f"  +/-/=: {c['better']}/{c['worse']}/{c['no-difference']}")
    return "\n".join(lines)
