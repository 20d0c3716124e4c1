"""Instance validation and the defender's allocation LP.

The defender LP for a fixed attack plan has columns ``x[i,j]`` for every
eligible (area, EN) pair in row-major order followed by ``q[i]``, and rows in
this canonical order, each tagged with the dual symbol of the row:

=========  ========================================  ===========
symbol     row                                       sense
=========  ========================================  ===========
``pi``     sum_i x[i,j] <= C_j (1 - z_j)             ``<=``
``mu``     sum_j x[i,j] + q[i] = lambda_i            ``=``
``sigma``  x[i,j] <= C_j                             ``<=``
``eta``    q[i]/lambda_i - q[l]/lambda_l <= beta     ``<=``
``tau``    q[i]/lambda_i - q[l]/lambda_l >= -beta    ``>=``
``nu``     q[i]/lambda_i <= theta                    ``<=``
=========  ========================================  ===========

Fairness rows use unordered pairs ``i < l``.
"""

from dataclasses import dataclass
from itertools import combinations
import math
from pathlib import Path

from loguru import logger
import networkx as nx
import numpy as np
import pandas as pd
import scipy.sparse as sp

from app.config import Tolerances
from app.core.lp import LpProblem, LpSolution, RowSense, RowTag, solve_lp
from app.exceptions import InstanceValidationError
from app.models import (
    Allocation,
    AttackPlan,
    CostBreakdown,
    Instance,
    Residual,
    ScreenRow,
    ValidationReport,
)
SCREEN_TOL = 1e-9
# Attack plans checked one by one by the allocation flow before the screen
# settles for the capacity-sum bounds.
SCREEN_PLAN_LIMIT = 500


def _dimension_violations(inst: Instance) -> list[str]:
    found = []
    if inst.m < 1 or inst.n < 1:
        found.append(f"instance needs at least one area and one EN (m={inst.m}, n={inst.n})")
        return found
    vectors = (
        ("lambda", inst.lambda_, inst.m),
        ("phi", inst.phi, inst.m),
        ("c", inst.c, inst.n),
    )
    for name, values, size in vectors:
        if len(values) != size:
            found.append(f"{name} has length {len(values)}, expected {size}")
    for name, matrix in (("d", inst.d), ("a", inst.a)):
        if len(matrix) != inst.m or any(len(row) != inst.n for row in matrix):
            found.append(f"{name} must be {inst.m}x{inst.n}")
    return found


def _surviving(capacity: np.ndarray, usable: np.ndarray, attackable: np.ndarray, k: int) -> float:
    removable = np.sort(capacity[usable & attackable])[::-1]
    return float(capacity[usable].sum() - removable[:k].sum())


def _serving_flow(inst: Instance, need: np.ndarray, removed: tuple[int, ...]) -> float:
    """Largest guaranteed service flow with the ``removed`` ENs down.

    Source arcs carry ``need[i]`` into each area, eligible pairs are
    uncapacitated and EN arcs into the sink carry ``C_j``.
    """
    graph = nx.DiGraph()
    for i in range(inst.m):
        graph.add_edge("source", ("area", i), capacity=float(need[i]))
    for i, j in inst.eligible_pairs():
        graph.add_edge(("area", i), ("en", j))
    down = set(removed)
    for j in range(inst.n):
        graph.add_edge(("en", j), "sink", capacity=0.0 if j in down else float(inst.c[j]))
    return float(nx.maximum_flow_value(graph, "source", "sink"))


def _blocking_plan(
    inst: Instance, need: np.ndarray, attackable: list[int], k: int
) -> tuple[list[int] | None, bool]:
    """First size-``k`` plan whose survivors cannot carry ``need``.

    Plans smaller than ``k`` are covered since removing more ENs never
    helps the defender. Returns ``(None, False)`` when the plan count
    exceeds :data:`SCREEN_PLAN_LIMIT`.
    """
    size = min(k, len(attackable))
    if math.comb(len(attackable), size) > SCREEN_PLAN_LIMIT:
        return None, False
    total = float(need.sum())
    for removed in combinations(attackable, size):
        if _serving_flow(inst, need, removed) + SCREEN_TOL * max(1.0, total) < total:
            return list(removed), True
    return None, True


def capacity_screen(
    inst: Instance, k: int, protected: tuple[int, ...] | list[int] = ()
) -> ScreenRow:
    """Check whether every attack of size ``k`` leaves a feasible allocation.

    Surviving eligible capacity after removing the ``k`` largest attackable
    ENs must cover ``sum_i (1 - theta) lambda_i`` in aggregate and
    ``(1 - theta) lambda_i`` for every area on its own eligible ENs. When
    those bounds hold and the plans are few enough, a max-flow per plan
    checks that areas competing for the same ENs can all be served.
    Protected ENs cannot be removed.
    """
    capacity = inst.capacity
    eligible = inst.eligible == 1
    attackable = np.ones(inst.n, dtype=bool)
    attackable[list(protected)] = False
    need = (1.0 - inst.theta) * inst.demand
    surviving = _surviving(capacity, eligible.any(axis=0), attackable, k)
    required = float(max(need.sum(), 0.0))
    short = [
        i
        for i in range(inst.m)
        if _surviving(capacity, eligible[i], attackable, k) + SCREEN_TOL < need[i]
    ]
    passes = surviving + SCREEN_TOL >= required and not short
    blocking, flow_checked = None, True
    if passes:
        blocking, flow_checked = _blocking_plan(
            inst, need, [int(j) for j in np.flatnonzero(attackable)], k
        )
        passes = blocking is None
        if not flow_checked:
            logger.debug(f"Screen k={k}: too many plans for the flow check, bounds only")
    return ScreenRow(
        k=k,
        surviving_capacity=surviving,
        required=required,
        passes=passes,
        short_areas=short,
        blocking_plan=blocking,
        flow_checked=flow_checked,
    )


def validate_instance(inst: Instance, *, screen: bool = True) -> ValidationReport:
    """Collect every invariant breach plus, when ``screen``, the per-k capacity screen.

    Returns:
        ValidationReport: Never raises; findings are data.

    """
    violations = _dimension_violations(inst)
    if violations:
        return ValidationReport(violations=violations)

    if any(v <= 0 for v in inst.lambda_):
        violations.append("every area demand lambda_i must be positive")
    if any(v < 0 for v in inst.c):
        violations.append("EN capacities must be nonnegative")
    if any(v < 0 for v in inst.phi):
        violations.append("unmet-demand penalties must be nonnegative")
    d = inst.delay
    if not np.isfinite(d).all() or (d < 0).any():
        violations.append("delays must be finite and nonnegative")
    a = inst.eligible
    if not np.isin(a, (0, 1)).all():
        violations.append("eligibility entries must be 0 or 1")
    for i in np.flatnonzero(a.sum(axis=1) == 0):
        violations.append(f"area {i + 1} has no eligible EN")
    if not 0 <= inst.gamma <= 1:
        violations.append(f"gamma must lie in [0, 1], got {inst.gamma}")
    if not 0 <= inst.theta <= 1:
        violations.append(f"theta must lie in [0, 1], got {inst.theta}")
    if inst.beta < 0:
        violations.append(f"beta must be nonnegative, got {inst.beta}")
    if violations:
        return ValidationReport(violations=violations)

    if not screen:
        return ValidationReport(violations=[])
    rows = [capacity_screen(inst, k) for k in range(inst.n + 1)]
    return ValidationReport(violations=[], screen=rows)


def require_valid(inst: Instance) -> ValidationReport:
    """Validate and raise on any violation.

    Raises:
        InstanceValidationError: If the report carries violations.

    """
    report = validate_instance(inst, screen=False)
    if not report.ok:
        raise InstanceValidationError(report.violations)
    return report


def build_defender_lp(
    inst: Instance, plan: AttackPlan, *, fairness: bool = True
) -> LpProblem:
    """Assemble the defender LP for ``plan``; the zero plan gives the no-attack problem.

    Args:
        inst: Problem data.
        plan: Attack vector; attacked ENs get zero capacity.
        fairness: When False the fairness pair rows and theta rows are left out.

    Returns:
        LpProblem: Rows in canonical order, tagged with their dual symbols.

    """
    if len(plan.z) != inst.n:
        msg = f"attack vector has length {len(plan.z)}, instance has {inst.n} ENs"
        raise InstanceValidationError([msg])
    pairs = inst.eligible_pairs()
    n_x = len(pairs)
    q_col = n_x
    lam = inst.demand
    cap = inst.capacity
    d = inst.delay

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    senses: list[RowSense] = []
    rhs: list[float] = []
    tags: list[RowTag] = []

    def add_row(entries: list[tuple[int, float]], sense: RowSense, b: float, tag: RowTag) -> None:
        r = len(rhs)
        for col, val in entries:
            rows.append(r)
            cols.append(col)
            vals.append(val)
        senses.append(sense)
        rhs.append(b)
        tags.append(tag)

    by_en: dict[int, list[int]] = {j: [] for j in range(inst.n)}
    by_area: dict[int, list[int]] = {i: [] for i in range(inst.m)}
    for col, (i, j) in enumerate(pairs):
        by_en[j].append(col)
        by_area[i].append(col)

    for j in range(inst.n):
        add_row(
            [(col, 1.0) for col in by_en[j]],
            RowSense.LE,
            cap[j] * (1 - plan.z[j]),
            RowTag("pi", (j,)),
        )
    for i in range(inst.m):
        add_row(
            [(col, 1.0) for col in by_area[i]] + [(q_col + i, 1.0)],
            RowSense.EQ,
            lam[i],
            RowTag("mu", (i,)),
        )
    for col, (i, j) in enumerate(pairs):
        add_row([(col, 1.0)], RowSense.LE, cap[j], RowTag("sigma", (i, j)))
    if fairness:
        for i, l in combinations(range(inst.m), 2):
            diff = [(q_col + i, 1.0 / lam[i]), (q_col + l, -1.0 / lam[l])]
            add_row(diff, RowSense.LE, inst.beta, RowTag("eta", (i, l)))
            add_row(diff, RowSense.GE, -inst.beta, RowTag("tau", (i, l)))
        for i in range(inst.m):
            add_row(
                [(q_col + i, 1.0 / lam[i])], RowSense.LE, inst.theta, RowTag("nu", (i,))
            )

    n_cols = n_x + inst.m
    a = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n_cols))
    c = np.concatenate(
        [
            np.array([inst.gamma * d[i, j] for i, j in pairs]),
            (1 - inst.gamma) * inst.penalty,
        ]
    )
    names = tuple(f"x_{i}_{j}" for i, j in pairs) + tuple(f"q_{i}" for i in range(inst.m))
    support = "".join(str(v) for v in plan.z)
    return LpProblem(
        c=c,
        a=a,
        senses=tuple(senses),
        b=np.array(rhs),
        lo=np.zeros(n_cols),
        hi=np.full(n_cols, np.inf),
        row_tags=tuple(tags),
        col_names=names,
        name=f"defender_z{support}",
    )


def allocation_from_solution(inst: Instance, solution: LpSolution) -> Allocation:
    """Scatter the LP column vector back into the M x N allocation."""
    if solution.x is None:
        msg = f"no primal vector in a {solution.status} solution"
        raise ValueError(msg)
    pairs = inst.eligible_pairs()
    x = np.zeros((inst.m, inst.n))
    for col, (i, j) in enumerate(pairs):
        x[i, j] = max(solution.x[col], 0.0)
    q = np.maximum(solution.x[len(pairs) : len(pairs) + inst.m], 0.0)
    return Allocation(x=x.tolist(), q=q.tolist())


@dataclass(frozen=True)
class DefenderSolve:
    """Defender LP, its solution and the decoded allocation when optimal."""

    problem: LpProblem
    solution: LpSolution
    allocation: Allocation | None

    @property
    def cost(self) -> float:
        return self.solution.objective

    @property
    def feasible(self) -> bool:
        return self.solution.optimal


def solve_defender(
    inst: Instance,
    plan: AttackPlan,
    *,
    fairness: bool = True,
    tol: Tolerances | None = None,
) -> DefenderSolve:
    """Build and solve the defender LP for one plan."""
    problem = build_defender_lp(inst, plan, fairness=fairness)
    solution = solve_lp(problem, tol)
    allocation = allocation_from_solution(inst, solution) if solution.optimal else None
    return DefenderSolve(problem=problem, solution=solution, allocation=allocation)


def unmet_ratios(inst: Instance, alloc: Allocation) -> np.ndarray:
    return alloc.q_array / inst.demand


def evaluate_allocation(
    inst: Instance, plan: AttackPlan, alloc: Allocation, tol: float = 1e-8
) -> CostBreakdown:
    """Recompute the objective of ``alloc`` and check every allocation constraint.

    Returns:
        CostBreakdown: ``feasible`` is False with one :class:`Residual` per
        constraint violated by more than ``tol``.

    """
    x = alloc.x_array
    q = alloc.q_array
    cap = inst.capacity
    lam = inst.demand
    unmet = (1 - inst.gamma) * float(inst.penalty @ q)
    delay = inst.gamma * float((inst.delay * x).sum())

    found: list[Residual] = []

    def check(name: str, amount: float) -> None:
        if amount > tol:
            found.append(Residual(name=name, residual=float(amount)))

    for i, j in zip(*np.nonzero(x < -tol), strict=True):
        check(f"x_nonneg[{i},{j}]", -x[i, j])
    for i in np.flatnonzero(q < -tol):
        check(f"q_nonneg[{i}]", -q[i])
    for i, gap in enumerate(x.sum(axis=1) + q - lam):
        check(f"balance[{i}]", abs(gap))
    over_cap = x - cap[None, :] * inst.eligible
    for i, j in zip(*np.nonzero(over_cap > tol), strict=True):
        check(f"eligibility[{i},{j}]", over_cap[i, j])
    z = np.asarray(plan.z, dtype=float)
    for j, gap in enumerate(x.sum(axis=0) - cap * (1 - z)):
        check(f"capacity[{j}]", gap)
    ratios = q / lam
    for i, ratio in enumerate(ratios):
        check(f"theta_cap[{i}]", ratio - inst.theta)
    for i, l in combinations(range(inst.m), 2):
        check(f"fairness[{i},{l}]", abs(ratios[i] - ratios[l]) - inst.beta)

    return CostBreakdown(
        unmet_penalty_term=unmet,
        delay_term=delay,
        total=unmet + delay,
        feasible=not found,
        violations=found,
    )


@dataclass(frozen=True)
class DualValues:
    """Row multipliers renamed and re-signed to the dual maximisation.

    ``pi``, ``sigma``, ``eta``, ``tau`` and ``nu`` are nonnegative and ``mu``
    is free. Families absent from the LP (fairness rows dropped) are zero.
    """

    pi: np.ndarray
    mu: np.ndarray
    sigma: dict[tuple[int, int], float]
    eta: dict[tuple[int, int], float]
    tau: dict[tuple[int, int], float]
    nu: np.ndarray


def named_duals(inst: Instance, problem: LpProblem, solution: LpSolution) -> DualValues:
    """Map exported multipliers of a defender LP onto the named dual families.

    ``<=`` rows keep their sign; the balance and ``>=`` pair rows flip it.
    """
    if solution.duals is None:
        msg = f"no duals in a {solution.status} solution"
        raise ValueError(msg)
    pi = np.zeros(inst.n)
    mu = np.zeros(inst.m)
    nu = np.zeros(inst.m)
    sigma: dict[tuple[int, int], float] = {}
    eta: dict[tuple[int, int], float] = {}
    tau: dict[tuple[int, int], float] = {}
    for tag, value in zip(problem.row_tags, solution.duals, strict=True):
        v = float(value)
        match tag.symbol:
            case "pi":
                pi[tag.index[0]] = v
            case "mu":
                mu[tag.index[0]] = -v
            case "sigma":
                sigma[(tag.index[0], tag.index[1])] = v
            case "eta":
                eta[(tag.index[0], tag.index[1])] = v
            case "tau":
                tau[(tag.index[0], tag.index[1])] = -v
            case "nu":
                nu[tag.index[0]] = v
    return DualValues(pi=pi, mu=mu, sigma=sigma, eta=eta, tau=tau, nu=nu)


def dual_objective(inst: Instance, plan: AttackPlan, duals: DualValues) -> float:
    """Dual objective evaluated from instance data and named multipliers."""
    z = np.asarray(plan.z, dtype=float)
    cap = inst.capacity
    value = -float(cap @ ((1 - z) * duals.pi)) + float(inst.demand @ duals.mu)
    value -= sum(cap[j] * s for (_, j), s in duals.sigma.items())
    value -= inst.beta * (sum(duals.eta.values()) + sum(duals.tau.values()))
    value -= inst.theta * float(duals.nu.sum())
    return value


def allocation_frames(inst: Instance, alloc: Allocation) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Tables for CSV export with 1-based area and EN labels."""
    x = alloc.x_array
    x_frame = pd.DataFrame(
        [{"area": i + 1, "en": j + 1, "x": x[i, j]} for i, j in inst.eligible_pairs()],
        columns=["area", "en", "x"],
    )
    q = alloc.q_array
    q_frame = pd.DataFrame(
        {"area": np.arange(1, inst.m + 1), "q": q, "q_over_lambda": q / inst.demand}
    )
    return x_frame, q_frame


def write_allocation_csv(inst: Instance, alloc: Allocation, directory: Path) -> tuple[Path, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    x_frame, q_frame = allocation_frames(inst, alloc)
    x_path = directory / "allocation_x.csv"
    q_path = directory / "allocation_q.csv"
    x_frame.to_csv(x_path, index=False)
    q_frame.to_csv(q_path, index=False)
    logger.info(f"Wrote allocation tables to {directory}")
    return x_path, q_path
