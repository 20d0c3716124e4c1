"""Tests for the bounded revised simplex and its certificates."""

from loguru import logger
import numpy as np
import pytest
from scipy.optimize import linprog

from app.config import Tolerances
from app.core.lp import (
    LpProblem,
    LpStatus,
    RowSense,
    RowTag,
    check_duality_gap,
    dual_value,
    farkas_bound,
    lp_residuals,
    solve_lp,
)
from app.core.model import build_defender_lp
from app.exceptions import ContractError
from app.models import AttackPlan, Instance

LE, EQ, GE = RowSense.LE, RowSense.EQ, RowSense.GE


def make_lp(
    c: list[float],
    a: list[list[float]],
    senses: list[RowSense],
    b: list[float],
    lo: list[float] | None = None,
    hi: list[float] | None = None,
) -> LpProblem:
    n = len(c)
    return LpProblem(
        c=np.array(c, dtype=float),
        a=np.array(a, dtype=float).reshape(len(b), n),
        senses=tuple(senses),
        b=np.array(b, dtype=float),
        lo=np.zeros(n) if lo is None else np.array(lo, dtype=float),
        hi=np.full(n, np.inf) if hi is None else np.array(hi, dtype=float),
    )


def assert_certified(p: LpProblem, solution: object) -> None:
    residuals = lp_residuals(p, solution)  # type: ignore[arg-type]
    assert residuals.within(1e-8)
    gap = check_duality_gap(p, solution)  # type: ignore[arg-type]
    assert gap <= 1e-7 * max(1.0, abs(solution.objective))  # type: ignore[attr-defined]


def test_small_le_problem() -> None:
    """Two-variable maximisation written as a minimisation."""
    p = make_lp([-1, -1], [[1, 2], [3, 1]], [LE, LE], [4, 6])
    solution = solve_lp(p)

    assert solution.status is LpStatus.OPTIMAL
    assert solution.objective == pytest.approx(-2.8)
    np.testing.assert_allclose(solution.x, [1.6, 1.2], atol=1e-9)
    assert (solution.duals >= -1e-12).all()
    assert_certified(p, solution)


def test_equality_and_ge_rows() -> None:
    """Mixed senses: x + y >= 2, x - y = 0."""
    p = make_lp([1, 1], [[1, 1], [1, -1]], [GE, EQ], [2, 0])
    solution = solve_lp(p)

    assert solution.optimal
    assert solution.objective == pytest.approx(2.0)
    np.testing.assert_allclose(solution.x, [1.0, 1.0], atol=1e-9)
    assert solution.duals[0] <= 1e-12
    assert_certified(p, solution)


def test_upper_bounds_and_offset() -> None:
    """Finite upper bounds are handled without rows; offset shifts the objective."""
    p = LpProblem(
        c=np.array([-2.0, -1.0]),
        a=np.array([[1.0, 1.0]]),
        senses=(LE,),
        b=np.array([10.0]),
        lo=np.zeros(2),
        hi=np.array([3.0, 4.0]),
        offset=5.0,
    )
    solution = solve_lp(p)

    assert solution.optimal
    np.testing.assert_allclose(solution.x, [3.0, 4.0], atol=1e-9)
    assert solution.objective == pytest.approx(-5.0)
    assert dual_value(p, solution.duals) == pytest.approx(-5.0)


def test_cycling_example_terminates() -> None:
    """Classic degenerate cycling LP reaches its optimum of -1.25."""
    p = make_lp(
        [-0.75, 20, -0.5, 6],
        [
            [0.25, -8, -1, 9],
            [0.5, -12, -0.5, 3],
            [0, 0, 1, 0],
        ],
        [LE, LE, LE],
        [0, 0, 1],
    )
    solution = solve_lp(p)

    assert solution.status is LpStatus.OPTIMAL
    assert solution.objective == pytest.approx(-1.25, abs=1e-9)
    assert_certified(p, solution)
    logger.info(f"Cycling LP solved in {solution.iterations} iterations")


def test_infeasible_with_farkas_certificate() -> None:
    """x <= 1 and x >= 2 cannot both hold."""
    p = make_lp([1], [[1], [1]], [LE, GE], [1, 2])
    solution = solve_lp(p)

    assert solution.status is LpStatus.INFEASIBLE
    assert solution.certificate is not None
    assert farkas_bound(p, solution.certificate) > 0


def test_unbounded_with_ray() -> None:
    """min -x subject to x - y <= 1 is unbounded."""
    p = make_lp([-1, 0], [[1, -1]], [LE], [1])
    solution = solve_lp(p)

    assert solution.status is LpStatus.UNBOUNDED
    ray = solution.certificate
    assert ray is not None
    assert float(p.c @ ray) < 0
    assert float((p.a @ ray)[0]) <= 1e-9


def test_problem_without_rows() -> None:
    """Bounds alone decide the optimum."""
    p = LpProblem(
        c=np.array([1.0, -1.0]),
        a=np.zeros((0, 2)),
        senses=(),
        b=np.zeros(0),
        lo=np.array([1.0, 0.0]),
        hi=np.array([5.0, 2.0]),
    )
    solution = solve_lp(p)

    assert solution.optimal
    np.testing.assert_allclose(solution.x, [1.0, 2.0])
    assert solution.objective == pytest.approx(-1.0)


def test_contract_errors() -> None:
    """Inconsistent data is refused at construction."""
    with pytest.raises(ContractError):
        make_lp([1, 1], [[1, 1]], [LE], [1], lo=[0, 0], hi=[1])
    with pytest.raises(ContractError):
        make_lp([1], [[1]], [LE], [1], lo=[2], hi=[1])
    with pytest.raises(ContractError):
        make_lp([np.nan], [[1]], [LE], [1])


def test_duality_gap_needs_optimal() -> None:
    """Certification helpers refuse non-optimal solutions."""
    p = make_lp([1], [[1], [1]], [LE, GE], [1, 2])
    solution = solve_lp(p)

    with pytest.raises(ContractError):
        check_duality_gap(p, solution)
    with pytest.raises(ContractError):
        lp_residuals(p, solution)


def test_iteration_limit_reports_failure() -> None:
    """A pivot cap too small to finish yields SolverFailure, not an exception."""
    p = make_lp([-1, -1], [[1, 2], [3, 1]], [LE, LE], [4, 6])
    solution = solve_lp(p, max_iterations=1)

    assert solution.status is LpStatus.SOLVER_FAILURE
    assert solution.message


def test_row_tag_labels() -> None:
    assert RowTag("sigma", (1, 2)).label() == "sigma[1,2]"
    assert RowTag("card").label() == "card"


def test_defender_lp_strong_duality(t1: Instance) -> None:
    """Inner LP under attack: objective 46.2 and zero duality gap."""
    p = build_defender_lp(t1, AttackPlan(z=(1, 0), k=1))
    solution = solve_lp(p)

    assert solution.objective == pytest.approx(46.2, abs=1e-9)
    assert_certified(p, solution)


def test_defender_lp_infeasible_status(make_instance: object) -> None:
    """Theta 0.4 under a single failure is reported infeasible."""
    inst = make_instance(theta=0.4)  # type: ignore[operator]
    p = build_defender_lp(inst, AttackPlan(z=(1, 0), k=1))
    solution = solve_lp(p)

    assert solution.status is LpStatus.INFEASIBLE
    assert farkas_bound(p, solution.certificate) > 0


@pytest.mark.parametrize("seed", range(25))
def test_matches_highs_on_random_lps(seed: int) -> None:
    """Random feasible bounded LPs agree with scipy's HiGHS to 1e-7."""
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(3, 12)), int(rng.integers(3, 15))
    a = rng.uniform(-1.0, 2.0, size=(m, n))
    a[rng.random((m, n)) < 0.3] = 0.0
    x0 = rng.uniform(0.0, 1.0, size=n)
    senses = [LE, GE, EQ][: 3 if m > 4 else 2]
    row_senses = [senses[int(rng.integers(len(senses)))] for _ in range(m)]
    ax0 = a @ x0
    b = np.array(
        [
            v + rng.uniform(0, 1) if s is LE else v - rng.uniform(0, 1) if s is GE else v
            for v, s in zip(ax0, row_senses, strict=True)
        ]
    )
    c = rng.normal(size=n)
    hi = np.full(n, 10.0)
    p = LpProblem(c=c, a=a, senses=tuple(row_senses), b=b, lo=np.zeros(n), hi=hi)
    solution = solve_lp(p, Tolerances())

    le = [i for i, s in enumerate(row_senses) if s is LE]
    ge = [i for i, s in enumerate(row_senses) if s is GE]
    eq = [i for i, s in enumerate(row_senses) if s is EQ]
    a_ub = np.vstack([a[le], -a[ge]]) if le or ge else None
    b_ub = np.concatenate([b[le], -b[ge]]) if le or ge else None
    reference = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a[eq] if eq else None,
        b_eq=b[eq] if eq else None,
        bounds=list(zip(np.zeros(n), hi, strict=True)),
        method="highs",
    )

    assert reference.status == 0
    assert solution.optimal
    assert solution.objective == pytest.approx(reference.fun, rel=1e-7, abs=1e-7)
    assert_certified(p, solution)
