"""Exact attacker-defender solving: enumeration oracle, MILP driver and verification."""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from functools import partial
from itertools import combinations
import math
import time

from loguru import logger
import numpy as np

from app.config import SolverOptions, Tolerances
from app.core.bnb import MilpSolution, MilpStatus, solve_milp
from app.core.lp import LpStatus
from app.core.model import require_valid, solve_defender
from app.core.reform import (
    Flavor,
    binding_big_m_rows,
    build_duality_milp,
    build_kkt_milp,
    compute_big_m,
)
from app.exceptions import (
    BigMInsufficientError,
    EnumerationCapError,
    InfeasibilityError,
    SolverError,
    UsageError,
    VerificationError,
)
from app.models import (
    AttackPlan,
    AttackResult,
    HardeningPlan,
    Instance,
    Provenance,
    SolveResult,
)
from app.parallel import parallel_map


class Method(StrEnum):
    DUALITY = "duality"
    KKT = "kkt"
    ENUM = "enum"


def plan_key(support: Sequence[int]) -> str:
    """Key of a plan in ``AttackResult.per_plan``: 0-based EN indices joined by commas."""
    return ",".join(str(j) for j in support)


def _plan_cost(inst: Instance, tol: Tolerances, support: tuple[int, ...]) -> float | None:
    plan = AttackPlan.from_support(inst.n, support)
    solved = solve_defender(inst, plan, tol=tol)
    if solved.solution.status is LpStatus.SOLVER_FAILURE:
        msg = f"inner LP failed for attack {list(support)}: {solved.solution.message}"
        raise SolverError(msg)
    return solved.cost if solved.feasible else None


def count_plans(n_attackable: int, k: int) -> int:
    return sum(math.comb(n_attackable, s) for s in range(min(k, n_attackable) + 1))


def _pick_worst(
    costs: dict[tuple[int, ...], float], tie_tol: float
) -> tuple[tuple[int, ...], float] | None:
    """Highest cost; among ties the lexicographically smallest support."""
    if not costs:
        return None
    worst = max(costs.values())
    tied = [s for s, c in costs.items() if c >= worst - tie_tol]
    support = min(tied)
    return support, costs[support]


def enumerate_attacks(
    inst: Instance,
    k: int,
    *,
    protected: Sequence[int] = (),
    opts: SolverOptions | None = None,
) -> AttackResult:
    """Solve the defender LP for every attack of size at most ``k``.

    Plans are scanned by size, then lexicographically, over the ENs outside
    ``protected``. Plans that leave the defender infeasible are recorded, and
    sizes where every plan is infeasible are reported as outright wins.

    Raises:
        EnumerationCapError: If the plan count exceeds ``opts.enumeration_cap``.
        UsageError: On an out-of-range budget.

    """
    opts = opts or SolverOptions()
    require_valid(inst)
    if not 0 <= k <= inst.n:
        msg = f"attack budget k={k} must lie in [0, {inst.n}]"
        raise UsageError(msg)
    blocked = set(protected)
    attackable = [j for j in range(inst.n) if j not in blocked]
    total = count_plans(len(attackable), k)
    if total > opts.enumeration_cap:
        msg = (
            f"{total} attack plans exceed the enumeration cap {opts.enumeration_cap}; "
            "use the duality or kkt method"
        )
        raise EnumerationCapError(msg)

    supports = [
        support
        for size in range(min(k, len(attackable)) + 1)
        for support in combinations(attackable, size)
    ]
    logger.info(f"Enumerating {total} attack plans (k={k}, {len(blocked)} protected)")
    costs = parallel_map(partial(_plan_cost, inst, opts.tolerances), supports, opts.jobs)

    feasible = {s: c for s, c in zip(supports, costs, strict=True) if c is not None}
    infeasible = [s for s, c in zip(supports, costs, strict=True) if c is None]
    failed = set(infeasible)
    outright = sorted(
        size
        for size in {len(s) for s in supports}
        if all(s in failed for s in supports if len(s) == size)
    )
    picked = _pick_worst(feasible, opts.tolerances.bnb_gap)
    worst_plan = AttackPlan.from_support(inst.n, picked[0], k) if picked else None
    worst_cost = picked[1] if picked else np.inf
    if infeasible:
        logger.warning(f"{len(infeasible)} attack plans leave the defender infeasible")
    return AttackResult(
        worst_plan=worst_plan,
        worst_cost=worst_cost,
        plans_scanned=len(supports),
        infeasible_plans=infeasible,
        outright_sizes=outright,
        per_plan={plan_key(s): c for s, c in zip(supports, costs, strict=True)},
    )


@dataclass(frozen=True)
class Verdict:
    ok: bool
    claimed: float
    actual: float | None

    def describe(self) -> str:
        actual = "infeasible" if self.actual is None else f"{self.actual:.10g}"
        return f"inner LP re-solve gives {actual}, claimed {self.claimed:.10g}"


def verify_solution(
    inst: Instance,
    plan: AttackPlan,
    claimed_cost: float,
    *,
    rel_tol: float = 1e-6,
    tol: Tolerances | None = None,
) -> Verdict:
    """Re-solve the defender LP under ``plan`` and compare with ``claimed_cost``.

    Returns:
        Verdict: ``ok`` when the costs agree within ``rel_tol`` relative.

    """
    solved = solve_defender(inst, plan, tol=tol)
    if not solved.feasible:
        return Verdict(ok=False, claimed=claimed_cost, actual=None)
    actual = solved.cost
    ok = abs(actual - claimed_cost) <= rel_tol * max(1.0, abs(actual))
    return Verdict(ok=ok, claimed=claimed_cost, actual=actual)


@dataclass(frozen=True)
class BilevelOutcome:
    """Everything a bilevel solve produced, beyond the plan and its cost."""

    method: Method
    k: int
    attack: AttackPlan
    worst_cost: float
    nodes: int
    verified: bool
    escalations: int
    wall_time_s: float
    enumeration: AttackResult | None = None

    @property
    def hardening(self) -> HardeningPlan:
        return HardeningPlan(
            protected=self.attack.support, k=self.k, provenance=Provenance.PROPOSED
        )

    def to_result(self, *, omit_timing: bool = False) -> SolveResult:
        return SolveResult(
            method=str(self.method),
            k=self.k,
            worst_cost=self.worst_cost,
            critical_set=[j + 1 for j in self.attack.support],
            wall_time_s=None if omit_timing else self.wall_time_s,
            nodes=self.nodes,
            verified=self.verified,
            escalations=self.escalations,
        )


def _solve_by_enumeration(
    inst: Instance, k: int, protected: tuple[int, ...], opts: SolverOptions
) -> tuple[AttackResult, AttackPlan]:
    result = enumerate_attacks(inst, k, protected=protected, opts=opts)
    if result.attacker_wins_outright:
        msg = (
            f"attacker wins outright for attack sizes {result.outright_sizes}: "
            "every such attack leaves the defender infeasible"
        )
        raise InfeasibilityError(msg)
    if result.worst_plan is None:
        msg = "no feasible defender response for any attack"
        raise InfeasibilityError(msg)
    if result.infeasible_plans:
        shown = [[j + 1 for j in s] for s in result.infeasible_plans[:5]]
        logger.warning(
            f"worst feasible plan returned; {len(result.infeasible_plans)} attacks leave "
            f"the defender infeasible, first {shown}"
        )
    return result, result.worst_plan


def _incumbent_infeasible(inst: Instance, solution: MilpSolution, tol: Tolerances) -> bool:
    """True when the defender has no answer to the MILP's incumbent attack.

    Such an attack makes the dual side unbounded, so its objective keeps
    growing with every big-M doubling.
    """
    if solution.plan is None:
        return False
    return not solve_defender(inst, solution.plan, tol=tol).feasible


def _solve_by_milp(
    inst: Instance,
    k: int,
    flavor: Flavor,
    protected: tuple[int, ...],
    opts: SolverOptions,
) -> tuple[MilpSolution, int]:
    build = build_duality_milp if flavor is Flavor.DUALITY else build_kkt_milp
    bigm = compute_big_m(inst)
    escalations = 0
    previous: float | None = None
    while True:
        f = build(inst, k, bigm, protected=protected)
        solution = solve_milp(f, opts)
        if solution.status in {MilpStatus.INFEASIBLE, MilpStatus.UNBOUNDED}:
            msg = (
                f"{flavor} MILP is {solution.status}: some admissible attack leaves "
                "the defender infeasible; use the enumeration method"
            )
            raise InfeasibilityError(msg)
        if solution.status is MilpStatus.BUDGET_EXCEEDED or solution.x is None:
            msg = (
                f"{flavor} MILP stopped on its search budget after {solution.nodes} "
                f"nodes (incumbent {solution.objective:.6g})"
            )
            raise SolverError(msg)

        binding = binding_big_m_rows(f, solution.x, inst, opts.tolerances.verification)
        if not binding:
            return solution, escalations
        if _incumbent_infeasible(inst, solution, opts.tolerances):
            attacked = [j + 1 for j in solution.plan.support] if solution.plan else []
            msg = (
                f"attack on ENs {attacked} leaves the defender infeasible; "
                "use the enumeration method"
            )
            raise InfeasibilityError(msg)
        stable = previous is not None and abs(solution.objective - previous) <= (
            opts.tolerances.verification * max(1.0, abs(solution.objective))
        )
        if stable:
            logger.warning(
                f"big-M rows {binding[:3]} binding but objective unchanged after "
                f"doubling; accepting {solution.objective:.10g}"
            )
            return solution, escalations
        if escalations >= opts.max_escalations:
            logger.error(f"big-M still binding on {binding[0]} after {escalations} doublings")
            raise BigMInsufficientError(binding[0], escalations)
        previous = solution.objective
        escalations += 1
        bigm = bigm.doubled()
        logger.info(f"big-M binding on {binding[0]}; doubling (escalation {escalations})")


def solve_bilevel(
    inst: Instance,
    k: int,
    method: Method | str = Method.DUALITY,
    *,
    protected: Sequence[int] = (),
    opts: SolverOptions | None = None,
) -> BilevelOutcome:
    """Find the worst attack of size at most ``k`` and its defender cost.

    Every MILP answer is re-checked with :func:`verify_solution`.

    Raises:
        InfeasibilityError: Screen refusal or an attack the defender cannot absorb.
        VerificationError: If the claimed optimum fails the inner-LP re-solve.
        BigMInsufficientError: If escalation cannot loosen a binding big-M row.

    """
    opts = opts or SolverOptions()
    method = Method(method)
    blocked = tuple(sorted(set(protected)))
    start = time.perf_counter()
    enumeration = None
    if method is Method.ENUM:
        enumeration, attack = _solve_by_enumeration(inst, k, blocked, opts)
        cost = enumeration.worst_cost
        nodes = enumeration.plans_scanned
        escalations = 0
    else:
        flavor = Flavor.DUALITY if method is Method.DUALITY else Flavor.KKT
        solution, escalations = _solve_by_milp(inst, k, flavor, blocked, opts)
        if solution.plan is None:
            msg = f"{flavor} MILP returned no attack plan"
            raise SolverError(msg)
        attack = solution.plan
        cost = solution.objective
        nodes = solution.nodes

    verdict = verify_solution(
        inst, attack, cost, rel_tol=opts.tolerances.verification, tol=opts.tolerances
    )
    if not verdict.ok:
        logger.error(f"{method} answer failed verification: {verdict.describe()}")
        msg = f"{method} answer failed verification: {verdict.describe()}"
        raise VerificationError(msg)
    if verdict.actual is not None and method is not Method.ENUM:
        cost = verdict.actual
    elapsed = time.perf_counter() - start
    logger.info(
        f"{method} k={k}: worst cost {cost:.10g}, critical set "
        f"{[j + 1 for j in attack.support]} ({elapsed:.2f}s)"
    )
    return BilevelOutcome(
        method=method,
        k=k,
        attack=attack,
        worst_cost=cost,
        nodes=nodes,
        verified=verdict.ok,
        escalations=escalations,
        wall_time_s=elapsed,
        enumeration=enumeration,
    )


def solve_attacker_defender(
    inst: Instance,
    k: int,
    method: Method | str = Method.DUALITY,
    *,
    protected: Sequence[int] = (),
    opts: SolverOptions | None = None,
) -> tuple[HardeningPlan, float]:
    """Critical ENs to protect and the worst-case cost they face unprotected.

    Returns:
        tuple[HardeningPlan, float]: Support of the optimal attack as a
        proposed hardening plan, and the bilevel optimum.

    """
    outcome = solve_bilevel(inst, k, method, protected=protected, opts=opts)
    return outcome.hardening, outcome.worst_cost


def restricted_worst_case(
    inst: Instance, plan: HardeningPlan, k: int, opts: SolverOptions | None = None
) -> AttackResult:
    """Exact worst attack when the attacker cannot touch ``plan.protected``."""
    return enumerate_attacks(inst, k, protected=plan.protected, opts=opts)
