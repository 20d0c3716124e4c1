"""Hardening-scheme benchmarks, failure simulation and report bundles.

Bundle layout written by :func:`write_bundle`::

    <dir>/config.json                 ExperimentConfig
    <dir>/instance.json               instance used (absent for size tables)
    <dir>/results/<family>.csv        one row per result (columns below)
    <dir>/results/<family>.json       rows plus per-row details
    <dir>/flags.csv                   scenarios solved without fairness rows

CSV columns per family:

- ``scheme-comparison``: k, scheme, mode, q_failures, mean_cost, worst_cost,
  flagged, draws, protected
- ``k-vs-q-grid``: k, q_failures, mean_cost, worst_cost, flagged, protected
- ``beta-sweep``: beta, k, worst_cost, critical_set, attack_gap,
  sim_gap_mean, sim_gap_std, sim_gap_max, sim_flagged, nodes, wall_time_s
- ``size-and-time-table``: m, n, seed, flavor, status, n_rows, n_binary,
  n_continuous, table_rows, table_binary, table_continuous, delta_rows,
  delta_binary, delta_continuous, worst_cost, nodes, escalations,
  wall_time_s, rss_mb

EN labels in CSV/JSON output are 1-based and space separated.
"""

from dataclasses import dataclass
from enum import StrEnum
from functools import partial
import json
from pathlib import Path
from typing import Annotated, Any

from loguru import logger
import numpy as np
import pandas as pd
import psutil
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import BENCHMARK_PRESET, SolverOptions, Tolerances
from app.core.model import solve_defender, unmet_ratios
from app.core.reform import Flavor, build_duality_milp, build_kkt_milp, formulation_stats
from app.core.solve import Method, restricted_worst_case, solve_bilevel
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
from app.parallel import parallel_map

FLAG_COLUMNS = ["family", "key", "scenario", "failed"]


def _labels(ens: tuple[int, ...] | list[int]) -> str:
    return " ".join(str(j + 1) for j in ens)


def protection_plan(
    inst: Instance,
    scheme: Scheme,
    *,
    method: Method = Method.DUALITY,
    opts: SolverOptions | None = None,
    draw: int = 0,
) -> HardeningPlan:
    """Protected EN set chosen by ``scheme``.

    ``heuristic`` protects the ``k`` largest ENs (lowest index on ties),
    ``random`` a uniform ``k``-subset seeded by ``(scheme.seed, draw)`` and
    ``proposed`` the support of the optimal attack.

    Raises:
        UsageError: If ``scheme.k`` exceeds the EN count.

    """
    k = scheme.k
    if k > inst.n:
        msg = f"protection budget {k} exceeds the {inst.n} ENs"
        raise UsageError(msg)
    match scheme.kind:
        case SchemeKind.NONE:
            return HardeningPlan(protected=(), k=k, provenance=Provenance.NONE)
        case SchemeKind.HEURISTIC:
            order = sorted(range(inst.n), key=lambda j: (-inst.c[j], j))
            chosen = tuple(sorted(order[:k]))
            return HardeningPlan(protected=chosen, k=k, provenance=Provenance.HEURISTIC)
        case SchemeKind.RANDOM:
            rng = np.random.default_rng([scheme.seed, draw])
            chosen = tuple(sorted(int(j) for j in rng.choice(inst.n, size=k, replace=False)))
            return HardeningPlan(protected=chosen, k=k, provenance=Provenance.RANDOM)
        case SchemeKind.PROPOSED:
            if k == 0:
                return HardeningPlan(protected=(), k=0, provenance=Provenance.PROPOSED)
            outcome = solve_bilevel(inst, k, method, opts=opts)
            return outcome.hardening


class ScenarioReport(BaseModel):
    """Per-scenario costs and unmet ratios of a failure simulation."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    protected: list[int]
    q_failures: int
    n_scenarios: int
    seed: int
    costs: list[float]
    failures: list[list[int]]
    ratios: list[list[float]]
    flagged: list[int] = Field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs)) if self.costs else 0.0

    @property
    def worst(self) -> float:
        return float(np.max(self.costs)) if self.costs else 0.0

    @property
    def flag_count(self) -> int:
        return len(self.flagged)


@dataclass(frozen=True)
class _ScenarioOutcome:
    cost: float
    ratios: list[float]
    flagged: bool


def _run_scenario(inst: Instance, tol: Tolerances, failed: tuple[int, ...]) -> _ScenarioOutcome:
    plan = AttackPlan.from_support(inst.n, failed)
    solved = solve_defender(inst, plan, tol=tol)
    flagged = False
    if not solved.feasible:
        solved = solve_defender(inst, plan, fairness=False, tol=tol)
        flagged = True
    if solved.allocation is None:
        msg = f"defender LP without fairness rows failed for failures {list(failed)}"
        raise InfeasibilityError(msg)
    ratios = unmet_ratios(inst, solved.allocation).tolist()
    return _ScenarioOutcome(cost=solved.cost, ratios=ratios, flagged=flagged)


def scenario_failures(
    unprotected: list[int], q_failures: int, n_scenarios: int, seed: int
) -> list[tuple[int, ...]]:
    """Failed EN sets, scenario ``idx`` drawn from the stream ``(seed, idx)``."""
    draws = []
    for idx in range(n_scenarios):
        rng = np.random.default_rng([seed, idx])
        picked = rng.choice(len(unprotected), size=q_failures, replace=False)
        draws.append(tuple(sorted(unprotected[int(p)] for p in picked)))
    return draws


def simulate_failures(
    inst: Instance,
    plan: HardeningPlan,
    q_failures: int,
    n_scenarios: int = 500,
    seed: int = 0,
    *,
    opts: SolverOptions | None = None,
) -> ScenarioReport:
    """Solve the defender LP under random failures of unprotected ENs.

    Scenarios whose LP is infeasible are re-solved without the fairness and
    theta rows; their cost is kept and their index is flagged.

    Raises:
        UsageError: If ``q_failures`` exceeds the number of unprotected ENs.

    """
    opts = opts or SolverOptions()
    blocked = set(plan.protected)
    unprotected = [j for j in range(inst.n) if j not in blocked]
    if not 0 <= q_failures <= len(unprotected):
        msg = f"cannot fail {q_failures} ENs: only {len(unprotected)} are unprotected"
        raise UsageError(msg)
    failures = scenario_failures(unprotected, q_failures, n_scenarios, seed)
    outcomes = parallel_map(partial(_run_scenario, inst, opts.tolerances), failures, opts.jobs)
    flagged = [idx for idx, out in enumerate(outcomes) if out.flagged]
    if flagged:
        logger.warning(
            f"{len(flagged)} of {n_scenarios} scenarios needed the fairness fallback"
        )
    report = ScenarioReport(
        protected=list(plan.protected),
        q_failures=q_failures,
        n_scenarios=n_scenarios,
        seed=seed,
        costs=[out.cost for out in outcomes],
        failures=[list(f) for f in failures],
        ratios=[out.ratios for out in outcomes],
        flagged=flagged,
    )
    logger.info(
        f"Simulated {n_scenarios} scenarios (Q={q_failures}, protected "
        f"{_labels(plan.protected) or '-'}): mean {report.mean:.6g}, worst {report.worst:.6g}"
    )
    return report


class FairnessProfile(BaseModel):
    area_mean: list[float]
    area_max: list[float]
    gaps: list[float]
    gap_mean: float
    gap_std: float
    gap_max: float
    unflagged_gap_max: float


def fairness_profile(report: ScenarioReport) -> FairnessProfile:
    """Per-area unmet-ratio statistics and the largest pairwise gap per scenario.

    Raises:
        UsageError: If the report has no scenarios.

    """
    if not report.ratios:
        msg = "fairness profile needs at least one scenario"
        raise UsageError(msg)
    ratios = np.asarray(report.ratios, dtype=float)
    gaps = ratios.max(axis=1) - ratios.min(axis=1)
    keep = np.ones(len(gaps), dtype=bool)
    keep[report.flagged] = False
    return FairnessProfile(
        area_mean=ratios.mean(axis=0).tolist(),
        area_max=ratios.max(axis=0).tolist(),
        gaps=gaps.tolist(),
        gap_mean=float(gaps.mean()),
        gap_std=float(gaps.std()),
        gap_max=float(gaps.max()),
        unflagged_gap_max=float(gaps[keep].max(initial=0.0)),
    )


class ExperimentFamily(StrEnum):
    SCHEME_COMPARISON = "scheme-comparison"
    K_VS_Q_GRID = "k-vs-q-grid"
    BETA_SWEEP = "beta-sweep"
    SIZE_AND_TIME_TABLE = "size-and-time-table"


class FailureMode(StrEnum):
    RANDOM = "random"
    ADVERSARIAL = "adversarial"


class ExperimentConfig(BaseModel):
    """Inputs of one experiment family; seeds make every run reproducible."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    family: ExperimentFamily
    instance: Instance | None = None
    synthesis: SynthesisParams | None = None
    k_values: list[Annotated[int, Field(ge=0)]] = [1, 2, 3, 4, 5, 6]
    q_values: list[Annotated[int, Field(ge=0)]] = [2, 4, 6]
    beta_values: list[Annotated[float, Field(ge=0)]] = [0.2, 0.8]
    n_scenarios: Annotated[int, Field(ge=0)] = 500
    seed: int = 0
    method: Method = Method.DUALITY
    mode: FailureMode = FailureMode.RANDOM
    random_draws: Annotated[int, Field(ge=1)] = 10
    sizes: list[tuple[int, int]] = [(30, 10), (80, 30)]
    size_seeds: list[int] = [0]
    table_k: Annotated[int, Field(ge=0)] = 2
    omit_timing: bool = False
    options: SolverOptions = SolverOptions()

    @model_validator(mode="after")
    def _needs_instance(self) -> "ExperimentConfig":
        if self.family is not ExperimentFamily.SIZE_AND_TIME_TABLE and (
            self.instance is None and self.synthesis is None
        ):
            msg = f"{self.family} needs an instance or synthesis parameters"
            raise ValueError(msg)
        return self

    def resolve_instance(self) -> Instance | None:
        if self.instance is not None:
            return self.instance
        if self.synthesis is not None:
            return synthesize_instance(self.synthesis)
        return None


class ReportBundle(BaseModel):
    """Result rows, per-row details and fallback flags of one experiment."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    family: ExperimentFamily
    config: ExperimentConfig
    instance: Instance | None
    columns: list[str]
    rows: list[dict[str, Any]]
    details: list[dict[str, Any]] = Field(default_factory=list)
    flags: list[dict[str, Any]] = Field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)


def _flag_rows(family: str, key: str, report: ScenarioReport) -> list[dict[str, Any]]:
    return [
        {
            "family": family,
            "key": key,
            "scenario": idx,
            "failed": _labels(report.failures[idx]),
        }
        for idx in report.flagged
    ]


class _Runner:
    """Shared state of one experiment run: instance, options and plan cache."""

    def __init__(self, config: ExperimentConfig, inst: Instance | None) -> None:
        self.config = config
        self.inst = inst
        self.opts = config.options
        self.flags: list[dict[str, Any]] = []
        self.details: list[dict[str, Any]] = []
        self._proposed: dict[tuple[float, int], HardeningPlan] = {}

    def timing(self, seconds: float) -> float | None:
        return None if self.config.omit_timing else seconds

    def proposed(self, inst: Instance, k: int) -> HardeningPlan:
        key = (inst.beta, k)
        if key not in self._proposed:
            self._proposed[key] = protection_plan(
                inst,
                Scheme(kind=SchemeKind.PROPOSED, k=k),
                method=self.config.method,
                opts=self.opts,
            )
        return self._proposed[key]

    def plans_for(self, inst: Instance, kind: SchemeKind, k: int) -> list[HardeningPlan]:
        if kind is SchemeKind.PROPOSED:
            return [self.proposed(inst, k)]
        scheme = Scheme(kind=kind, k=k, seed=self.config.seed)
        draws = self.config.random_draws if kind is SchemeKind.RANDOM else 1
        return [protection_plan(inst, scheme, draw=d) for d in range(draws)]

    def evaluate(
        self, inst: Instance, plan: HardeningPlan, q_failures: int, key: str
    ) -> tuple[float, float, int]:
        """Return (mean, worst, flagged) for ``plan`` under ``q_failures``."""
        if self.config.mode is FailureMode.ADVERSARIAL:
            result = restricted_worst_case(inst, plan, q_failures, self.opts)
            for support in result.infeasible_plans:
                self.flags.append(
                    {"family": self.config.family.value, "key": key, "scenario": -1, "failed": _labels(support)}
                )
            return result.worst_cost, result.worst_cost, len(result.infeasible_plans)
        report = simulate_failures(
            inst,
            plan,
            q_failures,
            self.config.n_scenarios,
            self.config.seed,
            opts=self.opts,
        )
        self.flags.extend(_flag_rows(self.config.family.value, key, report))
        return report.mean, report.worst, report.flag_count

    # -- families -------------------------------------------------------

    def scheme_comparison(self) -> list[dict[str, Any]]:
        inst = self._require_instance()
        rows = []
        for k in self.config.k_values:
            for kind in (SchemeKind.NONE, SchemeKind.HEURISTIC, SchemeKind.RANDOM, SchemeKind.PROPOSED):
                plans = self.plans_for(inst, kind, k)
                results = [
                    self.evaluate(inst, plan, k, f"k={k} {kind} draw={d}")
                    for d, plan in enumerate(plans)
                ]
                rows.append(
                    {
                        "k": k,
                        "scheme": kind.value,
                        "mode": self.config.mode.value,
                        "q_failures": k,
                        "mean_cost": float(np.mean([r[0] for r in results])),
                        "worst_cost": float(np.mean([r[1] for r in results])),
                        "flagged": int(sum(r[2] for r in results)),
                        "draws": len(plans),
                        "protected": " | ".join(_labels(p.protected) for p in plans),
                    }
                )
                logger.info(f"scheme-comparison k={k} {kind}: worst {rows[-1]['worst_cost']:.6g}")
        return rows

    def k_vs_q_grid(self) -> list[dict[str, Any]]:
        inst = self._require_instance()
        rows = []
        for k in self.config.k_values:
            plan = self.proposed(inst, k)
            for q in self.config.q_values:
                mean, worst, flagged = self.evaluate(inst, plan, q, f"k={k} q={q}")
                rows.append(
                    {
                        "k": k,
                        "q_failures": q,
                        "mean_cost": mean,
                        "worst_cost": worst,
                        "flagged": flagged,
                        "protected": _labels(plan.protected),
                    }
                )
                logger.info(f"k-vs-q-grid K={k} Q={q}: mean {mean:.6g}")
        return rows

    def beta_sweep(self) -> list[dict[str, Any]]:
        base = self._require_instance()
        rows = []
        for beta in self.config.beta_values:
            inst = base.with_overrides(beta=beta)
            for k in self.config.k_values:
                outcome = solve_bilevel(inst, k, self.config.method, opts=self.opts)
                under_attack = solve_defender(inst, outcome.attack, tol=self.opts.tolerances)
                attack_ratios = (
                    unmet_ratios(inst, under_attack.allocation).tolist()
                    if under_attack.allocation is not None
                    else []
                )
                row: dict[str, Any] = {
                    "beta": beta,
                    "k": k,
                    "worst_cost": outcome.worst_cost,
                    "critical_set": _labels(outcome.attack.support),
                    "attack_gap": (max(attack_ratios) - min(attack_ratios)) if attack_ratios else None,
                    "sim_gap_mean": None,
                    "sim_gap_std": None,
                    "sim_gap_max": None,
                    "sim_flagged": None,
                    "nodes": outcome.nodes,
                    "wall_time_s": self.timing(outcome.wall_time_s),
                }
                detail: dict[str, Any] = {"beta": beta, "k": k, "attack_ratios": attack_ratios}
                if self.config.n_scenarios and k <= inst.n:
                    report = simulate_failures(
                        inst, HardeningPlan(), k, self.config.n_scenarios, self.config.seed, opts=self.opts
                    )
                    profile = fairness_profile(report)
                    row |= {
                        "sim_gap_mean": profile.gap_mean,
                        "sim_gap_std": profile.gap_std,
                        "sim_gap_max": profile.unflagged_gap_max,
                        "sim_flagged": report.flag_count,
                    }
                    detail["profile"] = profile.model_dump()
                    self.flags.extend(_flag_rows(self.config.family.value, f"beta={beta} k={k}", report))
                rows.append(row)
                self.details.append(detail)
                logger.info(f"beta-sweep beta={beta} k={k}: worst {outcome.worst_cost:.6g}")
        return rows

    def size_and_time_table(self) -> list[dict[str, Any]]:
        base = self.config.synthesis or BENCHMARK_PRESET
        k = self.config.table_k
        rows = []
        for m, n in self.config.sizes:
            for seed in self.config.size_seeds:
                params = base.model_copy(
                    update={"n_aps": m, "n_ens": n, "seed": seed, "n_nodes": max(base.n_nodes, m + n)}
                )
                inst = synthesize_instance(SynthesisParams.model_validate(params.model_dump()))
                for flavor in (Flavor.DUALITY, Flavor.KKT):
                    rows.append(self._size_row(inst, m, n, seed, flavor, k))
        return rows

    def _size_row(self, inst: Instance, m: int, n: int, seed: int, flavor: Flavor, k: int) -> dict[str, Any]:
        row: dict[str, Any] = {"m": m, "n": n, "seed": seed, "flavor": flavor.value}
        build = build_duality_milp if flavor is Flavor.DUALITY else build_kkt_milp
        try:
            stats = formulation_stats(build(inst, k))
            outcome = solve_bilevel(inst, k, Method(flavor.value), opts=self.opts)
        except EdgeHardenError as e:
            logger.warning(f"size table m={m} n={n} seed={seed} {flavor}: {e}")
            return row | {"status": type(e).__name__}
        rss = psutil.Process().memory_info().rss / 1024 / 1024
        logger.info(
            f"size table m={m} n={n} seed={seed} {flavor}: {outcome.wall_time_s:.2f}s, "
            f"{outcome.nodes} nodes"
        )
        return row | {
            "status": "ok",
            **stats.model_dump(exclude={"flavor", "m", "n"}),
            "worst_cost": outcome.worst_cost,
            "nodes": outcome.nodes,
            "escalations": outcome.escalations,
            "wall_time_s": self.timing(outcome.wall_time_s),
            "rss_mb": self.timing(rss),
        }

    def _require_instance(self) -> Instance:
        if self.inst is None:
            msg = f"{self.config.family} needs an instance"
            raise UsageError(msg)
        return self.inst


COLUMNS: dict[ExperimentFamily, list[str]] = {
    ExperimentFamily.SCHEME_COMPARISON: [
        "k", "scheme", "mode", "q_failures", "mean_cost", "worst_cost", "flagged", "draws", "protected",
    ],
    ExperimentFamily.K_VS_Q_GRID: ["k", "q_failures", "mean_cost", "worst_cost", "flagged", "protected"],
    ExperimentFamily.BETA_SWEEP: [
        "beta", "k", "worst_cost", "critical_set", "attack_gap", "sim_gap_mean",
        "sim_gap_std", "sim_gap_max", "sim_flagged", "nodes", "wall_time_s",
    ],
    ExperimentFamily.SIZE_AND_TIME_TABLE: [
        "m", "n", "seed", "flavor", "status", "n_rows", "n_binary", "n_continuous",
        "table_rows", "table_binary", "table_continuous", "delta_rows", "delta_binary",
        "delta_continuous", "worst_cost", "nodes", "escalations", "wall_time_s", "rss_mb",
    ],
}


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Run one experiment family end to end.

    Returns:
        ReportBundle: Identical for identical config when timing is omitted.

    Raises:
        UsageError: On an unknown family or missing instance.

    """
    family = ExperimentFamily(config.family)
    inst = config.resolve_instance()
    runner = _Runner(config, inst)
    logger.info(f"Running experiment {family}")
    match family:
        case ExperimentFamily.SCHEME_COMPARISON:
            rows = runner.scheme_comparison()
        case ExperimentFamily.K_VS_Q_GRID:
            rows = runner.k_vs_q_grid()
        case ExperimentFamily.BETA_SWEEP:
            rows = runner.beta_sweep()
        case ExperimentFamily.SIZE_AND_TIME_TABLE:
            rows = runner.size_and_time_table()
        case _:
            msg = f"unknown experiment family {family}"
            raise UsageError(msg)
    return ReportBundle(
        family=family,
        config=config,
        instance=inst,
        columns=COLUMNS[family],
        rows=rows,
        details=runner.details,
        flags=runner.flags,
    )


def write_bundle(bundle: ReportBundle, directory: Path) -> Path:
    """Write the bundle directory; returns its path."""
    results = directory / "results"
    results.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(
        bundle.config.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8"
    )
    if bundle.instance is not None:
        bundle.instance.save(directory / "instance.json")
    name = bundle.family.value
    bundle.frame().to_csv(results / f"{name}.csv", index=False)
    payload = json.loads(bundle.model_dump_json(include={"family", "rows", "details"}))
    (results / f"{name}.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    pd.DataFrame(bundle.flags, columns=FLAG_COLUMNS).to_csv(directory / "flags.csv", index=False)
    logger.info(f"Wrote {name} bundle to {directory}")
    return directory
