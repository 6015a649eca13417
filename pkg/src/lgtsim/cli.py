"""Command-line front end.

Subcommands:
  gen       emit an instance or script file (lost-cow, script, layered)
  simulate  run an adversary script -> game trace
  traverse  run a layered instance -> traversal trace + costs
  certify   check a trace against the certificate suite
  bench     run an experiment family -> results table (csv or json)
"""

from __future__ import annotations

import argparse
import json
import sys

from .dynamics import GameTrace, IntegratorConfig, run_script
from .errors import SimulatorError
from .harness import (
    AdversaryScript,
    ExperimentConfig,
    baseline_greedy,
    gen_lost_cow,
    gen_random_layered_tree,
    gen_random_script,
    results_to_csv,
    results_to_json,
    run_experiment,
    script_from_trace,
)
from .layered import LayeredTree, binary_convert, sample_walk, traverse
from .potential import certificate_report, certified_bound, lineage_y


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _integrator_from(args) -> IntegratorConfig:
    cfg = IntegratorConfig()
    if args.max_step is not None:
        cfg = IntegratorConfig(max_relative_step=args.max_step)
    if args.tol is not None:
        cfg.conservation_tol = args.tol
    return cfg


def _cmd_gen(args) -> int:
    if args.family == "lost-cow":
        lengths = [int(s) for s in args.lengths.split(",")] if args.lengths else None
        if lengths is None:
            raise SystemExit("gen --family lost-cow needs --lengths, e.g. --lengths 1,8")
        instance = gen_lost_cow(args.k, lengths)
        _write(instance.to_json(indent=2), args.out)
    elif args.family == "script":
        script = gen_random_script(args.k, args.steps, args.seed, args.epsilon)
        script.validate()
        _write(script.to_json(), args.out)
    elif args.family == "layered":
        instance = gen_random_layered_tree(args.k, args.layers, args.unit_prob, args.seed)
        _write(instance.to_json(indent=2), args.out)
    return 0


def _cmd_simulate(args) -> int:
    with open(args.script) as fh:
        script = AdversaryScript.from_json(fh.read())
    script.validate()
    trace = run_script(script, _integrator_from(args))
    _write(trace.to_json(), args.out)
    print(
        f"simulated {len(trace.records)} steps: service {trace.ledger.service:.6f} "
        f"movement {trace.ledger.movement:.6f} total {trace.total_cost:.6f}",
        file=sys.stderr,
    )
    return 0


def _cmd_traverse(args) -> int:
    with open(args.instance) as fh:
        instance = LayeredTree.from_json(fh.read())
    converted = binary_convert(instance)
    result = traverse(converted, _integrator_from(args), args.epsilon)
    payload = result.to_dict()
    _, payload["greedy_cost"] = baseline_greedy(instance)
    if args.samples > 0:
        costs = [sample_walk(result, args.seed + i)[1] for i in range(args.samples)]
        payload["samples_mean"] = sum(costs) / len(costs)
    _write(json.dumps(payload), args.out)
    print(
        f"opt {result.opt}  fractional cost {result.frac_cost:.6f}  "
        f"tree cost {result.tree_cost:.6f}",
        file=sys.stderr,
    )
    return 0


def _cmd_certify(args) -> int:
    with open(args.trace) as fh:
        data = json.load(fh)
    if "game_trace" in data:  # a traversal file embeds its game trace
        trace = GameTrace.from_dict(data["game_trace"])
    else:
        trace = GameTrace.from_dict(data)
    if args.script:
        with open(args.script) as fh:
            script = AdversaryScript.from_json(fh.read())
    else:
        script = script_from_trace(trace)
    play = lineage_y(script)
    report = certificate_report(trace, play)
    bound = certified_bound(trace, play.opt)
    for line in report.summary_lines():
        print(line, file=sys.stderr)
    print(
        f"opt {play.opt:.6f}  cost {trace.total_cost:.6f}  bound {bound:.6f}  "
        f"max violation {report.max_violation:.3e}  "
        f"{'PASS' if report.all_passed and trace.total_cost <= bound else 'FAIL'}",
        file=sys.stderr,
    )
    if args.format == "json":
        _write(json.dumps(report.to_dict(), indent=2), args.out)
    else:
        lines = ["step_no,check,lhs,rhs,slack,tol,passed"]
        for e in report.entries:
            lines.append(
                f"{e.step_no},{e.check},{e.lhs!r},{e.rhs!r},{e.slack!r},{e.tol!r},{e.passed}"
            )
        _write("\n".join(lines) + "\n", args.out)
    return 0 if report.all_passed else 1


def _cmd_bench(args) -> int:
    cfg = ExperimentConfig(
        family=args.family.replace("-", "_"),
        k=args.k,
        count=args.count,
        seed=args.seed,
        epsilon=args.epsilon,
        n_steps=args.steps,
        n_layers=args.layers,
        unit_edge_prob=args.unit_prob,
        samples=args.samples,
        integrator=_integrator_from(args),
        output_format=args.format,
    )
    rows = run_experiment(cfg)
    text = results_to_json(rows) if args.format == "json" else results_to_csv(rows)
    _write(text, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgtsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seeded=True):
        p.add_argument("--k", type=int, default=3, help="width / depth bound (default 3)")
        p.add_argument("--epsilon", type=float, default=1.0, help="slack parameter (default 1)")
        if seeded:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output path (default stdout)")

    def integrator(p):
        p.add_argument("--tol", type=float, default=None, help="conservation tolerance")
        p.add_argument("--max-step", type=float, default=None,
                       help="max relative coordinate change per integrator step")

    p = sub.add_parser("gen", help="emit an instance or script file")
    p.add_argument("--family", choices=["lost-cow", "script", "layered"], required=True)
    common(p)
    p.add_argument("--lengths", default=None, help="lost-cow path lengths, e.g. 1,8")
    p.add_argument("--steps", type=int, default=60, help="script length")
    p.add_argument("--layers", type=int, default=12, help="layered instance layers")
    p.add_argument("--unit-prob", type=float, default=0.5)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("simulate", help="adversary script -> game trace")
    p.add_argument("--script", required=True)
    p.add_argument("--out", default=None)
    integrator(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("traverse", help="layered instance -> traversal trace")
    p.add_argument("--instance", required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=0, help="Monte-Carlo walks to draw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    integrator(p)
    p.set_defaults(func=_cmd_traverse)

    p = sub.add_parser("certify", help="trace (+ script) -> certificate report")
    p.add_argument("--trace", required=True)
    p.add_argument("--script", default=None, help="script file (default: embedded in trace)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("bench", help="experiment family -> results table")
    p.add_argument("--family", choices=["lost-cow", "script", "layered"], required=True)
    common(p)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--steps", type=int, default=60)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--unit-prob", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    integrator(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
