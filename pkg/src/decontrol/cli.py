"""Command-line front end: training, evaluation, baselines, statistics.

Subcommands::

    decontrol train     --config cfg.json --out runs/policy [--seed 0]
    decontrol evaluate  --checkpoint ckpt.json --out runs/eval [...]
    decontrol baseline  --algorithm vanilla-de --out runs/vde [...]
    decontrol aei       --subject records.jsonl --baseline records.jsonl
    decontrol curves    --records a.jsonl [b.jsonl ...] --out curves.csv
    decontrol compare   --a a.jsonl --b b.jsonl [--label-a X --label-b Y]

The optional JSON config file holds one flat object; every key has a
default and command-line flags override it. Keys:

    algorithm          evaluate/baseline algorithm name
    problems           list of function ids, or "train" / "test"
    dim                problem dimension
    n_pop              population size N
    max_evals          evaluation budget MaxFE
    horizon            generations T (default max_evals // n_pop)
    eta                exponent compression of the fitness encoding
    no_time, minmax_fitness, mlp_extractor   ablation flags
    epochs, n_steps, update_passes, gamma, learning_rate,
    clip_ratio, value_coef, entropy_coef     PPO hyperparameters
    runs, seed_base, instance_seed, milestones   protocol settings

Every run writes an echo of its resolved configuration next to its
records.
"""

import argparse
import json
import os
import sys

from . import harness, policy, problems, training

CONFIG_DEFAULTS = {
    "algorithm": "rlde-afl",
    "problems": "train",
    "dim": 10,
    "n_pop": 100,
    "max_evals": 20000,
    "horizon": None,
    "eta": 10.0,
    "no_time": False,
    "minmax_fitness": False,
    "mlp_extractor": False,
    "epochs": 100,
    "n_steps": 10,
    "update_passes": 3,
    "gamma": 0.99,
    "learning_rate": 1e-3,
    "clip_ratio": 0.2,
    "value_coef": 0.5,
    "entropy_coef": 0.01,
    "runs": 51,
    "seed_base": 0,
    "instance_seed": 1000,
    "milestones": None,
}


class CliError(Exception):
    pass


def load_config(path):
    cfg = dict(CONFIG_DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise CliError(f"cannot read config {path}: {err}") from err
        if not isinstance(user, dict):
            raise CliError(f"config {path} must hold a JSON object")
        unknown = set(user) - set(CONFIG_DEFAULTS)
        if unknown:
            raise CliError(f"unknown config key {sorted(unknown)[0]!r}")
        cfg.update(user)
    return cfg


def resolve_problems(spec):
    if spec == "train":
        return problems.TRAIN_IDS
    if spec == "test":
        return problems.TEST_IDS
    if isinstance(spec, (list, tuple)) and spec and all(isinstance(f, int) for f in spec):
        return tuple(spec)
    raise CliError(f"problems must be 'train', 'test', or a list of ids, got {spec!r}")


def apply_overrides(cfg, args):
    for key in ("runs", "dim", "max_evals", "seed_base"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def policy_config_from(cfg):
    return policy.PolicyConfig(
        eta=cfg["eta"],
        no_time=cfg["no_time"],
        minmax_fitness=cfg["minmax_fitness"],
        mlp_extractor=cfg["mlp_extractor"],
    )


def horizon_of(cfg):
    if cfg["horizon"] is not None:
        return cfg["horizon"]
    return max(1, cfg["max_evals"] // cfg["n_pop"])


def cmd_train(args):
    cfg = apply_overrides(load_config(args.config), args)
    fids = resolve_problems(cfg["problems"])
    pc = policy_config_from(cfg)
    tc = training.TrainerConfig(
        epochs=cfg["epochs"],
        n_steps=cfg["n_steps"],
        update_passes=cfg["update_passes"],
        gamma=cfg["gamma"],
        learning_rate=cfg["learning_rate"],
        clip_ratio=cfg["clip_ratio"],
        value_coef=cfg["value_coef"],
        entropy_coef=cfg["entropy_coef"],
        n_pop=cfg["n_pop"],
        max_evals=cfg["max_evals"],
        horizon=horizon_of(cfg),
    )
    instances = [
        problems.make_instance(fid, cfg["dim"], seed=cfg["instance_seed"]) for fid in fids
    ]
    os.makedirs(args.out, exist_ok=True)
    resolved = dict(cfg, problems=list(fids), horizon=tc.horizon, seed=args.seed)
    with open(os.path.join(args.out, "config_echo.json"), "w") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2)
        fh.write("\n")
    training.train(
        tc,
        pc,
        instances,
        seed=args.seed,
        log_path=os.path.join(args.out, "training_log.csv"),
        checkpoint_dir=args.out,
        checkpoint_every=args.checkpoint_every,
    )
    final = os.path.join(args.out, "final.json")
    print(f"trained {tc.epochs} epochs on {len(instances)} problems -> {final}")
    return 0


def experiment_config_from(cfg, algorithm, checkpoint=None):
    return harness.ExperimentConfig(
        algorithm=algorithm,
        fids=resolve_problems(cfg["problems"]),
        dim=cfg["dim"],
        n_pop=cfg["n_pop"],
        max_evals=cfg["max_evals"],
        runs=cfg["runs"],
        seed_base=cfg["seed_base"],
        instance_seed=cfg["instance_seed"],
        milestones=tuple(cfg["milestones"] or ()),
        checkpoint=checkpoint,
    )


def print_aggregate(records):
    table = harness.aggregate(records)
    print(f"{'problem':>8} {'mean':>14} {'std':>14} {'runs':>5}   (sample std, ddof=1)")
    for name, row in table.items():
        print(f"{name:>8} {row['mean']:>14.6e} {row['std']:>14.6e} {row['n']:>5}")


def cmd_evaluate(args):
    cfg = apply_overrides(load_config(args.config), args)
    exp = experiment_config_from(cfg, "rlde-afl", checkpoint=args.checkpoint)
    records = harness.run_experiment(exp, out_dir=args.out)
    print_aggregate(records)
    return 0


def cmd_baseline(args):
    cfg = apply_overrides(load_config(args.config), args)
    algorithm = args.algorithm or cfg["algorithm"]
    if algorithm == "rlde-afl":
        raise CliError("use the evaluate subcommand for the learned policy")
    exp = experiment_config_from(cfg, algorithm)
    records = harness.run_experiment(exp, out_dir=args.out)
    print_aggregate(records)
    return 0


def _load_records(path):
    try:
        return harness.load_records(path)
    except OSError as err:
        raise CliError(f"cannot read records {path}: {err}") from err


def cmd_aei(args):
    subject = harness.finals_by_problem(_load_records(args.subject))
    baseline = harness.finals_by_problem(_load_records(args.baseline))
    print(f"AEI: {harness.aei(subject, baseline):.6g}")
    return 0


def cmd_curves(args):
    records = []
    for path in args.records:
        records.extend(_load_records(path))
    milestones = tuple(args.milestones) if args.milestones else None
    rows = harness.curves(records, milestones=milestones)
    harness.write_curves_csv(args.out, rows)
    print(f"wrote {len(rows)} curve rows -> {args.out}")
    return 0


def cmd_compare(args):
    result = harness.compare(_load_records(args.a), _load_records(args.b), alpha=args.alpha)
    print(harness.format_comparison(result, label_a=args.label_a, label_b=args.label_b))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="decontrol",
        description="Learned per-individual control of differential evolution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def protocol_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--runs", type=int, help="independent runs per problem")
        p.add_argument("--dim", type=int, help="problem dimension")
        p.add_argument("--max-evals", type=int, dest="max_evals", help="evaluation budget")
        p.add_argument("--seed-base", type=int, dest="seed_base", help="root seed")

    p = sub.add_parser("train", help="train the control policy")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=10)
    p.add_argument("--runs", type=int, help=argparse.SUPPRESS)
    p.add_argument("--dim", type=int, help="problem dimension")
    p.add_argument("--max-evals", type=int, dest="max_evals", help="evaluation budget")
    p.add_argument("--seed-base", type=int, dest="seed_base", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="benchmark a trained policy")
    protocol_flags(p)
    p.add_argument("--checkpoint", required=True, help="policy checkpoint")
    p.add_argument("--out", help="directory for records + config echo")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="benchmark a non-learned baseline")
    protocol_flags(p)
    p.add_argument(
        "--algorithm", choices=("random-action", "vanilla-de", "random-search")
    )
    p.add_argument("--out", help="directory for records + config echo")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("aei", help="aggregated evaluation indicator")
    p.add_argument("--subject", required=True, help="subject records.jsonl")
    p.add_argument("--baseline", required=True, help="baseline records.jsonl")
    p.set_defaults(func=cmd_aei)

    p = sub.add_parser("curves", help="median/IQR convergence curves as CSV")
    p.add_argument("--records", nargs="+", required=True, help="records.jsonl files")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--milestones", nargs="*", type=int)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("compare", help="per-problem rank-sum comparison")
    p.add_argument("--a", required=True, help="first records.jsonl")
    p.add_argument("--b", required=True, help="second records.jsonl")
    p.add_argument("--label-a", default="A")
    p.add_argument("--label-b", default="B")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, policy.CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
