"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 infeasibility refusal.
Results go to stdout and files; diagnostics go to stderr.
"""

import argparse
from collections.abc import Sequence
import json
from pathlib import Path
import sys
from typing import NoReturn

from loguru import logger
import pandas as pd
from pydantic import ValidationError

from app.config import (
    DEFAULT_OUTPUT_DIR,
    LOG_FILE,
    LOG_LEVEL,
    PRESETS,
    SolverOptions,
    Tolerances,
    configure_logging,
    default_jobs,
)
from app.core.experiments import (
    ExperimentConfig,
    ExperimentFamily,
    FailureMode,
    fairness_profile,
    protection_plan,
    run_experiment,
    simulate_failures,
    write_bundle,
)
from app.core.model import require_valid, solve_defender, write_allocation_csv
from app.core.mps import write_mps
from app.core.reform import build_duality_milp, build_kkt_milp, formulation_stats
from app.core.solve import Method, solve_bilevel
from app.core.topology import synthesize_instance
from app.exceptions import EdgeHardenError, InfeasibilityError, UsageError
from app.models import (
    AttackPlan,
    HardeningPlan,
    Instance,
    Provenance,
    Scheme,
    SchemeKind,
    SynthesisParams,
)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message: str) -> NoReturn:
        msg = f"{self.prog}: {message}"
        raise UsageError(msg)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        msg = f"expected comma-separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        msg = f"expected comma-separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _size_list(text: str) -> list[tuple[int, int]]:
    """Parse ``30x10,80x30`` into (M, N) pairs."""
    try:
        return [
            (int(m), int(n))
            for m, n in (item.lower().split("x") for item in text.split(",") if item.strip())
        ]
    except ValueError as e:
        msg = f"expected sizes like 30x10,80x30, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _labels_to_indices(labels: Sequence[int], n: int) -> tuple[int, ...]:
    """Convert 1-based EN labels to sorted 0-based indices."""
    bad = [j for j in labels if not 1 <= j <= n]
    if bad:
        msg = f"EN labels {bad} outside 1..{n}"
        raise UsageError(msg)
    return tuple(sorted({j - 1 for j in labels}))


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=LOG_LEVEL, help="stderr log level")
    common.add_argument("--log-file", default=LOG_FILE, help="rotating log file path")
    common.add_argument("--jobs", type=int, default=None, help="worker processes")
    common.add_argument("--tol-feas", type=float, default=None, help="LP feasibility tolerance")
    common.add_argument("--tol-verify", type=float, default=None, help="verification tolerance")
    common.add_argument("--enum-cap", type=int, default=None, help="max attack plans to enumerate")
    common.add_argument("--node-limit", type=int, default=None, help="branch-and-bound node limit")
    common.add_argument(
        "--omit-timing", action="store_true", help="write timing fields as null"
    )
    common.add_argument("-o", "--output", type=Path, default=None, help="output path")
    return common


def _instance_options() -> argparse.ArgumentParser:
    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("-i", "--instance", type=Path, help="instance JSON file")
    source.add_argument("--preset", choices=sorted(PRESETS), help="synthesise from a preset")
    source.add_argument("--seed", type=int, default=0, help="random seed")
    source.add_argument("--n-aps", type=int, default=None, help="number of access points")
    source.add_argument("--n-ens", type=int, default=None, help="number of edge nodes")
    source.add_argument("--n-nodes", type=int, default=None, help="topology size")
    source.add_argument("--beta", type=float, default=None, help="override fairness gap")
    source.add_argument("--theta", type=float, default=None, help="override unmet-ratio cap")
    source.add_argument("--gamma", type=float, default=None, help="override delay weight")
    return source


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    source = _instance_options()
    parser = _Parser(prog="edge-harden", description="Edge-node hardening planner")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen", parents=[common, source], help="synthesise an instance")

    p = sub.add_parser("solve-defender", parents=[common, source], help="defender LP optimum")
    p.add_argument("--attack", type=_int_list, default=[], help="1-based ENs destroyed, e.g. 1,3")
    p.add_argument("--no-fairness", action="store_true", help="drop fairness and theta rows")

    p = sub.add_parser("solve-ad", parents=[common, source], help="worst-case attack")
    p.add_argument("--k", type=int, required=True, help="attack budget")
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.DUALITY.value)
    p.add_argument("--protected", type=_int_list, default=[], help="1-based protected ENs")

    p = sub.add_parser("harden", parents=[common, source], help="protection plan per scheme")
    p.add_argument("--k", type=int, required=True, help="protection budget")
    p.add_argument("--scheme", choices=[s.value for s in SchemeKind], default=SchemeKind.PROPOSED.value)
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.DUALITY.value)

    p = sub.add_parser("simulate", parents=[common, source], help="random failure scenarios")
    p.add_argument("--k", type=int, default=0, help="protection budget")
    p.add_argument("--scheme", choices=[s.value for s in SchemeKind], default=SchemeKind.NONE.value)
    p.add_argument("--protected", type=_int_list, default=None, help="explicit 1-based protected ENs")
    p.add_argument("--q-failures", type=int, required=True, help="failures per scenario")
    p.add_argument("--scenarios", type=int, default=500, help="number of scenarios")
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.DUALITY.value)

    p = sub.add_parser("compare", parents=[common, source], help="hardening-scheme comparison")
    p.add_argument("--k-values", type=_int_list, default=[1, 2, 3, 4, 5, 6])
    p.add_argument("--scenarios", type=int, default=500)
    p.add_argument("--mode", choices=[m.value for m in FailureMode], default=FailureMode.RANDOM.value)
    p.add_argument("--draws", type=int, default=10, help="random-scheme protection draws")
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.DUALITY.value)

    p = sub.add_parser("sweep", parents=[common, source], help="beta or K-versus-Q sweeps")
    p.add_argument("--family", choices=["beta", "k-q"], default="beta")
    p.add_argument("--k-values", type=_int_list, default=[1, 2, 3, 4, 5, 6])
    p.add_argument("--q-values", type=_int_list, default=[2, 4, 6])
    p.add_argument("--beta-values", type=_float_list, default=[0.2, 0.8])
    p.add_argument("--scenarios", type=int, default=500)
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.DUALITY.value)

    p = sub.add_parser("stats", parents=[common, source], help="formulation sizes and times")
    p.add_argument("--k", type=int, default=1, help="attack budget")
    p.add_argument("--sizes", type=_size_list, default=None, help="timing table sizes, e.g. 30x10,80x30")
    p.add_argument("--size-seeds", type=_int_list, default=[0], help="seeds for the timing table")
    p.add_argument("--mps", action="store_true", help="also export both MILPs as MPS files")
    return parser


def _options(args: argparse.Namespace) -> SolverOptions:
    tol_update = {}
    if args.tol_feas is not None:
        tol_update["feasibility"] = args.tol_feas
    if args.tol_verify is not None:
        tol_update["verification"] = args.tol_verify
    opts: dict = {
        "jobs": args.jobs if args.jobs is not None else default_jobs(),
        "tolerances": Tolerances(**tol_update),
    }
    if args.enum_cap is not None:
        opts["enumeration_cap"] = args.enum_cap
    if args.node_limit is not None:
        opts["node_limit"] = args.node_limit
    return SolverOptions(**opts)


def _synthesis(args: argparse.Namespace) -> SynthesisParams:
    base = PRESETS[args.preset] if args.preset else SynthesisParams()
    update: dict = {"seed": args.seed}
    for field, value in (
        ("n_aps", args.n_aps),
        ("n_ens", args.n_ens),
        ("n_nodes", args.n_nodes),
        ("beta", args.beta),
        ("theta", args.theta),
        ("gamma", args.gamma),
    ):
        if value is not None:
            update[field] = value
    return SynthesisParams.model_validate(base.model_dump() | update)


def _load_instance(args: argparse.Namespace) -> Instance:
    if args.instance is None:
        if args.preset is None:
            msg = "give an instance file with -i or a preset with --preset"
            raise UsageError(msg)
        return synthesize_instance(_synthesis(args))
    if not args.instance.is_file():
        msg = f"instance file not found: {args.instance}"
        raise UsageError(msg)
    inst = Instance.load(args.instance)
    inst = inst.with_overrides(beta=args.beta, theta=args.theta, gamma=args.gamma)
    require_valid(inst)
    return inst


def _output_dir(args: argparse.Namespace, name: str) -> Path:
    return args.output if args.output is not None else DEFAULT_OUTPUT_DIR / name


def _cmd_gen(args: argparse.Namespace) -> None:
    inst = synthesize_instance(_synthesis(args))
    path = args.output if args.output is not None else DEFAULT_OUTPUT_DIR / "instance.json"
    inst.save(path)
    print(f"instance m={inst.m} n={inst.n} gamma={inst.gamma} theta={inst.theta} beta={inst.beta}")
    print(f"written {path}")


def _cmd_solve_defender(args: argparse.Namespace) -> None:
    inst = _load_instance(args)
    plan = AttackPlan.from_support(inst.n, _labels_to_indices(args.attack, inst.n))
    opts = _options(args)
    solved = solve_defender(inst, plan, fairness=not args.no_fairness, tol=opts.tolerances)
    if not solved.feasible or solved.allocation is None:
        msg = (
            f"defender LP is {solved.solution.status} under attack on ENs "
            f"{[j + 1 for j in plan.support]}"
        )
        raise InfeasibilityError(msg)
    write_allocation_csv(inst, solved.allocation, _output_dir(args, "defender"))
    print(f"cost {solved.cost:.10g}")


def _cmd_solve_ad(args: argparse.Namespace) -> None:
    inst = _load_instance(args)
    protected = _labels_to_indices(args.protected, inst.n)
    outcome = solve_bilevel(inst, args.k, args.method, protected=protected, opts=_options(args))
    result = outcome.to_result(omit_timing=args.omit_timing)
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
    print(f"worst_cost {result.worst_cost:.10g}")
    print(f"critical_set {result.critical_set}")


def _cmd_harden(args: argparse.Namespace) -> None:
    inst = _load_instance(args)
    scheme = Scheme(kind=SchemeKind(args.scheme), k=args.k, seed=args.seed)
    plan = protection_plan(inst, scheme, method=Method(args.method), opts=_options(args))
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(plan.model_dump_json(indent=2) + "\n", encoding="utf-8")
    print(f"protected {plan.labels()} ({plan.provenance})")


def _cmd_simulate(args: argparse.Namespace) -> None:
    inst = _load_instance(args)
    opts = _options(args)
    if args.protected is not None:
        chosen = _labels_to_indices(args.protected, inst.n)
        plan = HardeningPlan(protected=chosen, k=len(chosen), provenance=Provenance.NONE)
    else:
        scheme = Scheme(kind=SchemeKind(args.scheme), k=args.k, seed=args.seed)
        plan = protection_plan(inst, scheme, method=Method(args.method), opts=opts)
    report = simulate_failures(inst, plan, args.q_failures, args.scenarios, args.seed, opts=opts)
    directory = _output_dir(args, "simulate")
    directory.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "scenario": range(report.n_scenarios),
            "failed": [" ".join(str(j + 1) for j in f) for f in report.failures],
            "cost": report.costs,
            "flagged": [idx in set(report.flagged) for idx in range(report.n_scenarios)],
        }
    )
    frame.to_csv(directory / "scenarios.csv", index=False)
    (directory / "report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    if report.costs:
        profile = fairness_profile(report)
        (directory / "fairness.json").write_text(
            json.dumps(profile.model_dump(), indent=2) + "\n", encoding="utf-8"
        )
    print(f"mean {report.mean:.10g} worst {report.worst:.10g} flagged {report.flag_count}")


def _experiment(args: argparse.Namespace, family: ExperimentFamily, **fields: object) -> None:
    inst = None if family is ExperimentFamily.SIZE_AND_TIME_TABLE else _load_instance(args)
    config = ExperimentConfig(
        family=family,
        instance=inst,
        synthesis=_synthesis(args) if args.preset else None,
        seed=args.seed,
        omit_timing=args.omit_timing,
        options=_options(args),
        **fields,
    )
    bundle = run_experiment(config)
    directory = write_bundle(bundle, _output_dir(args, family.value))
    with pd.option_context("display.max_columns", None, "display.width", 200):
        print(bundle.frame().to_string(index=False))
    print(f"written {directory}")


def _cmd_compare(args: argparse.Namespace) -> None:
    _experiment(
        args,
        ExperimentFamily.SCHEME_COMPARISON,
        k_values=args.k_values,
        n_scenarios=args.scenarios,
        mode=FailureMode(args.mode),
        random_draws=args.draws,
        method=Method(args.method),
    )


def _cmd_sweep(args: argparse.Namespace) -> None:
    family = ExperimentFamily.BETA_SWEEP if args.family == "beta" else ExperimentFamily.K_VS_Q_GRID
    _experiment(
        args,
        family,
        k_values=args.k_values,
        q_values=args.q_values,
        beta_values=args.beta_values,
        n_scenarios=args.scenarios,
        method=Method(args.method),
    )


def _cmd_stats(args: argparse.Namespace) -> None:
    if args.sizes:
        _experiment(
            args,
            ExperimentFamily.SIZE_AND_TIME_TABLE,
            sizes=args.sizes,
            size_seeds=args.size_seeds,
            table_k=args.k,
        )
        return
    inst = _load_instance(args)
    rows = []
    for build in (build_duality_milp, build_kkt_milp):
        f = build(inst, args.k)
        rows.append(formulation_stats(f).model_dump(mode="json"))
        if args.mps:
            path = _output_dir(args, "stats") / f"{f.flavor}.mps"
            write_mps(f.problem, path, f.binaries)
    print(pd.DataFrame(rows).to_string(index=False))


COMMANDS = {
    "gen": _cmd_gen,
    "solve-defender": _cmd_solve_defender,
    "solve-ad": _cmd_solve_ad,
    "harden": _cmd_harden,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
    "stats": _cmd_stats,
}


def run_command(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level, args.log_file)
        COMMANDS[args.command](args)
    except EdgeHardenError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return UsageError.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return UsageError.exit_code
    except SystemExit as e:
        return int(e.code or 0)
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
