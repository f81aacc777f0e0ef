"""Command-line front end: scenario generation, demonstration corpora, training,
single-query planning, benchmarking, and path validation.

Exit codes: 0 success, 1 run-level failure (planning failed, gate not met,
validation failed), 2 usage or precondition error. The COMPNET_SEED environment
variable supplies the default for every --seed flag.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path as FilePath

import numpy as np

from . import bench, neural, scenario
from .errors import ContractError, CorpusError, InvalidQueryError, SchemaError, TrainingDivergedError
from .planner import PlannerParams, plan, smooth, validate_path
from .sampler import make_sampler

USAGE_ERROR = 2
RUN_ERROR = 1


def _default_seed(fallback: int = 0) -> int:
    try:
        return int(os.environ.get("COMPNET_SEED", fallback))
    except ValueError:
        return fallback


def _add_planner_flags(parser):
    g = parser.add_argument_group("planner")
    g.add_argument("--max-iterations", type=int, default=2000)
    g.add_argument("--step-fraction", type=float, default=0.05)
    g.add_argument("--step-cap", type=float, default=0.1)
    g.add_argument("--reach-radius", type=float, default=0.05)
    g.add_argument("--projection-iters", type=int, default=50)
    g.add_argument("--goal-mode", choices=("frontier", "query"), default="frontier",
                   help="pass the other tree's frontier (default) or its root to the sampler")


def _params_from(args, seed: int) -> PlannerParams:
    return PlannerParams(
        max_iterations=args.max_iterations,
        step_fraction=args.step_fraction,
        step_cap=args.step_cap,
        reach_radius=args.reach_radius,
        projection_iters=args.projection_iters,
        seed=seed,
        sampler_goal=args.goal_mode,
    )


def _parse_scenario_ref(ref: str):
    file_part, sep, sid = ref.partition("#")
    scenarios = scenario.load_scenarios(file_part)
    if sep:
        matches = [s for s in scenarios if s.id == sid]
        if not matches:
            raise ContractError(f"scenario {sid!r} not found in {file_part}")
        return matches[0]
    if len(scenarios) == 1:
        return scenarios[0]
    raise ContractError(f"{file_part} holds {len(scenarios)} scenarios; use FILE#id")


def cmd_gen(args) -> int:
    scenarios = scenario.generate_scenarios(
        seed=args.seed,
        count=args.count,
        template=args.template,
        test_fraction=args.test_fraction,
        solvability_probe=None if args.no_probe else args.probe_iterations,
    )
    scenario.save_scenarios(args.out, scenarios, seed=args.seed, template=args.template)
    n_test = sum(1 for s in scenarios if s.split == "test")
    print(f"wrote {len(scenarios)} scenarios ({len(scenarios) - n_test} train, {n_test} test) to {args.out}")
    return 0


def cmd_demos(args) -> int:
    scenarios = scenario.load_scenarios(args.scenarios)
    params = _params_from(args, args.seed)
    try:
        corpus = scenario.build_corpus(scenarios, params, oracle_seed=args.seed)
    except CorpusError as e:
        print(f"error: {e}", file=sys.stderr)
        return RUN_ERROR
    scenario.save_corpus(args.out, corpus)
    stats = corpus.oracle_stats
    print(
        f"oracle solved {stats['succeeded']}/{stats['attempted']} train scenarios "
        f"({stats['success_rate']:.1%}); {len(corpus.demos.demos)} demonstrations -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    corpus = scenario.load_corpus(args.corpus)
    if not corpus.demos.demos:
        print("error: corpus holds no demonstrations", file=sys.stderr)
        return RUN_ERROR
    grid_cells = corpus.demos.grids[corpus.demos.demos[0].scenario_id].size
    net = neural.create_network(
        grid_cells=grid_cells,
        vocab_size=corpus.demos.vocab_size,
        dof=corpus.demos.chain.dof,
        dropout_p=args.dropout,
        seed=args.seed,
    )
    cfg = neural.TrainingConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        holdout_fraction=args.holdout_fraction,
    )
    try:
        result = neural.train(net, corpus.demos, cfg)
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return RUN_ERROR
    neural.save_weights(net, args.out)
    loss_csv = args.loss_csv or str(FilePath(args.out).with_suffix(".losses.csv"))
    neural.write_loss_history(loss_csv, result.history)
    print(
        f"trained {cfg.epochs} epochs: loss {result.initial_loss:.4f} -> {result.final_loss:.4f}; "
        f"weights -> {args.out}, history -> {loss_csv}"
    )
    return 0


def cmd_plan(args) -> int:
    scn = _parse_scenario_ref(args.scenario)
    net = neural.load_weights(args.weights) if args.weights else None
    if args.sampler in ("neural", "hybrid") and net is None:
        raise ContractError(f"--sampler {args.sampler} requires --weights")
    params = _params_from(args, args.seed)
    sampler = make_sampler(args.sampler, net=net, exploit_budget=args.exploit_budget)
    ctx = scenario.query_context(scn, args.seed)
    try:
        result = plan(scn.constraint, scn.chain, scn.world, sampler, scn.c_init, scn.c_goal, params, ctx)
    except InvalidQueryError as e:
        print(f"invalid query: {e}", file=sys.stderr)
        return USAGE_ERROR
    if not result.success:
        print(f"no path found in {result.iterations} iterations")
        return RUN_ERROR
    path = result.path
    if args.smooth:
        path = smooth(scn.constraint, scn.chain, scn.world, path, params)
    if args.out:
        bench.save_path_file(args.out, path, scn.id, args.sampler, args.seed)
    print(
        f"solved {scn.id} in {result.iterations} iterations "
        f"({len(path)} waypoints, length {path.length():.2f} rad)"
        + (f" -> {args.out}" if args.out else "")
    )
    return 0


def cmd_bench(args) -> int:
    scenarios = scenario.load_scenarios(args.scenarios)
    kinds = [k.strip() for k in args.samplers.split(",") if k.strip()]
    for kind in kinds:
        if kind not in ("uniform", "neural", "hybrid"):
            raise ContractError(f"unknown sampler {kind!r}")
    net = neural.load_weights(args.weights) if args.weights else None
    if any(k in ("neural", "hybrid") for k in kinds) and net is None:
        raise ContractError("neural/hybrid samplers require --weights")
    params = _params_from(args, args.seed)
    records = bench.run_benchmark(
        scenarios,
        kinds,
        params,
        base_seed=args.seed,
        repeats=args.repeats,
        net=net,
        split=args.split,
        exploit_budget=args.exploit_budget,
    )
    if not records:
        print("error: no scenarios matched the split filter", file=sys.stderr)
        return RUN_ERROR
    bench.save_report(args.out, records, args.seed)
    csv_path = args.csv or str(FilePath(args.out).with_suffix(".csv"))
    bench.write_records_csv(csv_path, records)
    print(bench.format_table(bench.aggregate(records)))
    print(f"report -> {args.out}, raw records -> {csv_path}")
    return 0


def cmd_validate(args) -> int:
    scn = _parse_scenario_ref(args.scenario)
    path, sid = bench.load_path_file(args.path)
    if sid != scn.id:
        print(f"warning: path was planned for {sid!r}, validating against {scn.id!r}", file=sys.stderr)
    params = PlannerParams()
    report = validate_path(
        scn.constraint, scn.chain, scn.world, path, params, scn.c_init, scn.c_goal
    )
    if report.ok:
        print(f"path valid ({len(path)} waypoints)")
        return 0
    print(f"path invalid: {report.reason} violation at index {report.index}: {report.detail}")
    return RUN_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmplan",
        description="Constrained planar motion planning benchmark: generate scenarios, "
        "build demonstration corpora, train the sampler, plan, and compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a scenario file")
    p.add_argument("--template", choices=(*scenario.TEMPLATES, "mixed"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--probe-iterations", type=int, default=800)
    p.add_argument("--no-probe", action="store_true", help="skip the solvability probe")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("demos", help="build the oracle demonstration corpus")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_planner_flags(p)
    p.set_defaults(func=cmd_demos)

    p = sub.add_parser("train", help="train the neural sampler on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--holdout-fraction", type=float, default=0.125)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="solve one scenario query")
    p.add_argument("--scenario", required=True, metavar="FILE#id")
    p.add_argument("--sampler", choices=("uniform", "neural", "hybrid"), default="uniform")
    p.add_argument("--weights", default=None)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", default=None)
    p.add_argument("--smooth", action="store_true")
    p.add_argument("--exploit-budget", type=float, default=50)
    _add_planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="compare samplers over a scenario split")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--samplers", default="uniform,neural,hybrid")
    p.add_argument("--weights", default=None)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--exploit-budget", type=float, default=50)
    _add_planner_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="re-check a planned path against its scenario")
    p.add_argument("--path", required=True)
    p.add_argument("--scenario", required=True, metavar="FILE#id")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, SchemaError, InvalidQueryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (CorpusError, TrainingDivergedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
