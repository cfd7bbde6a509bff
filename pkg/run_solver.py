#!/usr/bin/env python3

import argparse
import json
import sys
from pathlib import Path

from gaotour.batch import run_batch
from gaotour.engine import SolverEngine, load_config, setup_logging, stage, verify_artifacts
from gaotour.instance import FORMATS, RANDOM_KINDS, brute_force_opt, parse_instance, random_metric
from gaotour.lp import dump_solution, load_solution, solve_relaxation
from gaotour.models import SolverError, fraction_str


def load_instance(args, exact=False):
    """Instance from --instance or from --random/--n/--seed."""
    with stage("parse"):
        if args.instance:
            text = Path(args.instance).read_bytes()
            return parse_instance(text, fmt=args.format, s=args.s, t=args.t, exact=exact)
        return random_metric(args.seed, args.n, args.random, exact=exact)


def _dump(data, path=None):
    text = json.dumps(data, sort_keys=True, indent=2)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    else:
        print(text)


def cmd_solve(args, config):
    inst = load_instance(args, exact=config.exact)
    artifacts = args.artifacts or str(Path(config.report_dir) / inst.name)
    solution = None
    if args.lp:
        with stage("lp"):
            solution = load_solution(Path(args.lp).read_text(), inst.n)
    report = SolverEngine(config).solve(inst, artifact_dir=artifacts, solution=solution)
    _dump(report, args.report)
    print(f"{inst.name}: best {report['best_cost']}, ratio_lp {report['ratio_lp']:.6f}, "
          f"certificates {'pass' if report['pass'] else 'FAIL'}")
    return 0 if report["pass"] else 1


def cmd_verify(args, config):
    problems = verify_artifacts(args.artifacts, max_exact_r=config.max_exact_r)
    for problem in problems:
        print(f"FAIL: {problem}")
    if not problems:
        print(f"{args.artifacts}: pass")
    return 0 if not problems else 1


def parse_seeds(text):
    """Seed range from START:STOP (half-open) or a single seed S."""
    start, colon, stop = text.partition(":")
    try:
        start = int(start)
        stop = int(stop) if colon else start + 1
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed range {text!r}; expected START:STOP or SEED")
    return range(start, stop)


def cmd_batch(args, config):
    frame, summary = run_batch(config, args.seeds, kinds=args.kinds, n_values=args.n_values,
                               workers=args.workers, memory_limit_mb=args.memory_limit_mb,
                               out_dir=args.out or config.report_dir, plot=args.plot)
    _dump(summary, args.report)
    return 0 if summary["failures"] == 0 else 1


def cmd_brute(args, config):
    inst = load_instance(args, exact=config.exact)
    path = brute_force_opt(inst, max_n=config.max_brute_n)
    _dump({"instance": inst.name, "opt_cost": fraction_str(path.cost), "tour": path.order}, args.report)
    return 0


def cmd_lp(args, config):
    inst = load_instance(args, exact=config.exact)
    with stage("lp"):
        solution = solve_relaxation(inst, exact=True if config.exact else None,
                                    max_rounds=config.lp_max_rounds, tol=config.float_tolerance)
    data = json.loads(dump_solution(solution))
    data.update({"instance": inst.name, "exact": solution.exact, "rounds": solution.rounds})
    _dump(data, args.report)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(description="Best-of-many Christofides on reassembled tree ensembles "
                                                 "for the metric s-t-path TSP")
    parser.add_argument("--config", default="config.yaml")
    sub = parser.add_subparsers(dest="command", required=True)

    def instance_args(p):
        p.add_argument("--instance", help="instance file")
        p.add_argument("--format", choices=FORMATS, default="tsplib")
        p.add_argument("--random", choices=RANDOM_KINDS, default="euclidean")
        p.add_argument("--n", type=int, default=8)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--s", type=int)
        p.add_argument("--t", type=int)
        p.add_argument("--exact", action="store_true", default=None)
        p.add_argument("--max-brute-n", type=int)
        p.add_argument("--report", help="write JSON here instead of stdout")

    p = sub.add_parser("solve", help="full pipeline with certificates")
    instance_args(p)
    p.add_argument("--epsilon", help="rounding precision; 0 selects the exact ensemble")
    p.add_argument("--artifacts", help="artifact directory")
    p.add_argument("--lp", help="LP point (output of the lp command) to use instead of solving the LP")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-check a run from its artifacts")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("batch", help="random instances over a seed range")
    p.add_argument("--seeds", type=parse_seeds, default="0:10",
                   help="half-open range start:stop, or a single seed")
    p.add_argument("--kinds", nargs="+", choices=RANDOM_KINDS, default=None)
    p.add_argument("--n", dest="n_values", nargs="+", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--memory-limit-mb", type=int, default=None)
    p.add_argument("--epsilon")
    p.add_argument("--exact", action="store_true", default=None)
    p.add_argument("--max-brute-n", type=int)
    p.add_argument("--out", help="directory for batch.csv and batch.html")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--report")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("brute", help="exact OPT by subset dynamic programming")
    instance_args(p)
    p.set_defaults(func=cmd_brute)

    p = sub.add_parser("lp", help="solve the path LP only")
    instance_args(p)
    p.set_defaults(func=cmd_lp)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, epsilon=getattr(args, "epsilon", None), exact=getattr(args, "exact", None),
                             max_brute_n=getattr(args, "max_brute_n", None))
    except ValueError as e:
        parser.print_usage(sys.stderr)
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2
    setup_logging(config)

    if args.command == "batch":
        batch_cfg = config_section(args.config, "batch")
        args.workers = args.workers or batch_cfg.get("workers", 2)
        args.memory_limit_mb = args.memory_limit_mb or batch_cfg.get("memory_limit_mb")
        args.kinds = args.kinds or batch_cfg.get("kinds", ["euclidean"])
        args.n_values = args.n_values or batch_cfg.get("n_values", [8])
    try:
        return args.func(args, config)
    except SolverError as e:
        print(f"error in stage {e.stage}: {e}", file=sys.stderr)
        return 1


def config_section(path, name):
    import yaml
    if not Path(path).exists():
        return {}
    with open(path, "r") as f:
        return (yaml.safe_load(f) or {}).get(name) or {}


if __name__ == "__main__":
    sys.exit(main())
