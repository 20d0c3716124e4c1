"""Best-first branch-and-bound over the binary columns of a MILP formulation.

Each node is an LP relaxation with some binaries fixed through their bounds.
Children are solved as soon as they are created and queued by their LP bound.
Integral relaxations are rounded, the binaries fixed exactly and the LP
re-solved, so incumbents always carry exact 0/1 values. KKT formulations
are settled per attack: every KKT point of a fixed attack has the defender
optimum as objective, so one LP with the indicators fixed closes the subtree.
"""

from dataclasses import dataclass, field
from enum import StrEnum
import heapq
import time

from loguru import logger
import numpy as np

from app.config import SolverOptions
from app.core.lp import LpProblem, LpSolution, LpStatus, solve_lp
from app.core.reform import Flavor, MilpFormulation, indicator_pattern
from app.exceptions import SolverError
from app.models import AttackPlan

INTEGRALITY_TOL = 1e-6


class MilpStatus(StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    BUDGET_EXCEEDED = "budget_exceeded"


@dataclass
class MilpSolution:
    """Outcome of :func:`solve_milp`; ``objective`` is the attacker's (maximised) value."""

    status: MilpStatus
    objective: float
    x: np.ndarray | None
    plan: AttackPlan | None
    nodes: int
    wall_time_s: float
    pruned_bounds: list[float] = field(default_factory=list)
    pool_size: int = 0

    def binary_values(self, f: MilpFormulation) -> dict[int, int]:
        if self.x is None:
            return {}
        return {col: int(round(self.x[col])) for col in f.binaries}

    def continuous_values(self, f: MilpFormulation) -> np.ndarray | None:
        if self.x is None:
            return None
        mask = np.ones(f.problem.n_cols, dtype=bool)
        mask[list(f.binaries)] = False
        return self.x[mask]


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    x: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)
    completable: bool = field(compare=False, default=True)


def _relax(problem: LpProblem, lo: np.ndarray, hi: np.ndarray, opts: SolverOptions) -> LpSolution:
    solution = solve_lp(problem.with_bounds(lo, hi), opts.tolerances)
    if solution.status is LpStatus.SOLVER_FAILURE:
        msg = f"LP relaxation of {problem.name} failed: {solution.message}"
        raise SolverError(msg)
    return solution


def _support(f: MilpFormulation, x: np.ndarray) -> tuple[int, ...]:
    return f.attack_plan(x).support


class _Search:
    """Mutable state of one branch-and-bound run."""

    def __init__(self, f: MilpFormulation, opts: SolverOptions) -> None:
        self.f = f
        self.opts = opts
        self.problem = f.problem
        self.binaries = np.array(f.binaries, dtype=int)
        self.attack = np.array(f.attack_columns, dtype=int)
        self.completes = f.flavor is Flavor.KKT and f.instance is not None
        self.gap = opts.tolerances.bnb_gap
        self.best = np.inf
        self.pool: list[np.ndarray] = []
        self.pruned: list[float] = []
        self.nodes = 0

    def dominated(self, bound: float) -> bool:
        if self.opts.explore_ties:
            return bound > self.best + self.gap
        return bound >= self.best - self.gap

    def record(self, solution: LpSolution, origin: str) -> None:
        value = solution.objective
        if value < self.best - self.gap:
            self.best = value
            self.pool = [solution.x]
            logger.debug(f"{self.problem.name}: incumbent {-value:.6g} from {origin}")
        elif abs(value - self.best) <= self.gap:
            self.pool.append(solution.x)

    def attack_fixed(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        return bool(np.all(lo[self.attack] == hi[self.attack]))

    def complete(self, lo: np.ndarray, hi: np.ndarray) -> tuple[bool, LpSolution | None]:
        """Solve the subtree of a node whose attack columns are all fixed.

        Returns:
            tuple[bool, LpSolution | None]: ``(True, lp)`` when the subtree is
            settled, with ``lp`` None if the defender cannot answer the
            attack; ``(False, None)`` when the defender's complementarity
            pattern does not fit the node and branching must continue.

        """
        support = tuple(int(p) for p in np.flatnonzero(lo[self.attack] > 0.5))
        pattern = indicator_pattern(self.f, support)
        if pattern is None:
            return True, None
        lo, hi = lo.copy(), hi.copy()
        for col, value in pattern.items():
            if not lo[col] <= value <= hi[col]:
                return False, None
            lo[col] = hi[col] = value
        fixed = _relax(self.problem, lo, hi, self.opts)
        return (True, fixed) if fixed.optimal else (False, None)

    def fix_integral(self, node: _Node) -> None:
        values = node.x[self.binaries]
        lo, hi = node.lo.copy(), node.hi.copy()
        lo[self.binaries] = hi[self.binaries] = np.round(values)
        fixed = _relax(self.problem, lo, hi, self.opts)
        if fixed.optimal:
            self.record(fixed, f"node {node.node_id}")

    def branch_column(self, node: _Node) -> int:
        """Most fractional open attack column first, then any binary."""
        open_attack = node.lo[self.attack] < node.hi[self.attack]
        if open_attack.any():
            values = node.x[self.attack]
            frac = np.where(open_attack, np.abs(values - np.round(values)), -1.0)
            return int(self.attack[int(np.argmax(frac))])
        values = node.x[self.binaries]
        frac = np.abs(values - np.round(values))
        return int(self.binaries[int(np.argmax(frac))])

    def dive(self, x: np.ndarray) -> None:
        """Round the root attack to its ``k`` largest columns and solve once."""
        values = x[self.attack]
        order = sorted(range(len(self.attack)), key=lambda p: (-values[p], p))
        chosen = {p for p in order[: self.f.k] if values[p] >= 0.5}
        lo, hi = self.problem.lo.copy(), self.problem.hi.copy()
        for p, col in enumerate(self.attack):
            side = 1.0 if p in chosen else 0.0
            if not lo[col] <= side <= hi[col]:
                return
            lo[col] = hi[col] = side
        if self.completes:
            _, fixed = self.complete(lo, hi)
        elif len(self.attack) == len(self.binaries):
            fixed = _relax(self.problem, lo, hi, self.opts)
        else:
            return
        if fixed is not None and fixed.optimal:
            self.record(fixed, "root dive")


def solve_milp(f: MilpFormulation, opts: SolverOptions | None = None) -> MilpSolution:
    """Solve ``f`` to global optimality by best-first branch-and-bound.

    Attack columns are branched first, most fractional (lowest column on
    ties); the remaining binaries follow the same rule. Once a KKT node has
    every attack column fixed, its indicators are fixed to the defender's
    complementarity pattern and that single LP settles the subtree. A root
    dive seeds the incumbent. Nodes are pruned by bound dominance with
    absolute gap ``opts.tolerances.bnb_gap``. With ``explore_ties`` nodes
    whose bound ties the incumbent are still explored, and the final answer
    is the tied incumbent whose attack support is lexicographically smallest.

    Returns:
        MilpSolution: Optimal, Infeasible, Unbounded, or BudgetExceeded with
        the best incumbent found (if any) when a node or time limit is hit.

    Raises:
        SolverError: If an LP relaxation fails numerically.

    """
    opts = opts or SolverOptions()
    problem = f.problem
    start = time.perf_counter()
    search = _Search(f, opts)

    def finish(status: MilpStatus) -> MilpSolution:
        elapsed = time.perf_counter() - start
        nodes, pool, pruned = search.nodes, search.pool, search.pruned
        if not pool:
            objective = {
                MilpStatus.INFEASIBLE: -np.inf,
                MilpStatus.UNBOUNDED: np.inf,
            }.get(status, -np.inf)
            return MilpSolution(status, objective, None, None, nodes, elapsed, pruned)
        x = min(pool, key=lambda cand: _support(f, cand))
        logger.info(
            f"{problem.name}: {status} objective={-search.best:.6g} after {nodes} nodes "
            f"in {elapsed:.2f}s ({len(pool)} tied incumbents)"
        )
        return MilpSolution(
            status, -search.best, x, f.attack_plan(x), nodes, elapsed, pruned, len(pool)
        )

    root = _relax(problem, problem.lo.copy(), problem.hi.copy(), opts)
    search.nodes = 1
    if root.status is LpStatus.INFEASIBLE:
        logger.info(f"{problem.name}: root relaxation infeasible")
        return finish(MilpStatus.INFEASIBLE)
    if root.status is LpStatus.UNBOUNDED:
        logger.info(f"{problem.name}: root relaxation unbounded")
        return finish(MilpStatus.UNBOUNDED)

    root_values = root.x[search.binaries]
    if np.abs(root_values - np.round(root_values)).max(initial=0.0) > INTEGRALITY_TOL:
        search.dive(root.x)

    counter = 0
    heap: list[_Node] = [_Node(root.objective, counter, problem.lo.copy(), problem.hi.copy(), root.x)]

    while heap:
        if search.nodes >= opts.node_limit or time.perf_counter() - start > opts.time_limit_s:
            logger.warning(f"{problem.name}: search budget exhausted after {search.nodes} nodes")
            return finish(MilpStatus.BUDGET_EXCEEDED)
        node = heapq.heappop(heap)
        if search.dominated(node.bound):
            search.pruned.append(-node.bound)
            continue

        values = node.x[search.binaries]
        if np.abs(values - np.round(values)).max(initial=0.0) <= INTEGRALITY_TOL:
            search.fix_integral(node)
            continue

        completable = node.completable
        if search.completes and completable and search.attack_fixed(node.lo, node.hi):
            settled, leaf = search.complete(node.lo, node.hi)
            if settled:
                if leaf is not None:
                    search.record(leaf, f"node {node.node_id}")
                continue
            completable = False

        col = search.branch_column(node)
        for side in (0.0, 1.0):
            lo, hi = node.lo.copy(), node.hi.copy()
            lo[col] = hi[col] = side
            child = _relax(problem, lo, hi, opts)
            search.nodes += 1
            if child.status is not LpStatus.OPTIMAL:
                continue
            if search.dominated(child.objective):
                search.pruned.append(-child.objective)
                continue
            counter += 1
            heapq.heappush(
                heap,
                _Node(child.objective, counter, lo, hi, child.x, node.depth + 1, completable),
            )

    if not search.pool:
        return finish(MilpStatus.INFEASIBLE)
    return finish(MilpStatus.OPTIMAL)
