"""Tests for instance validation, the defender LP and allocation checks."""

from collections.abc import Callable

from loguru import logger
import numpy as np
import pandas as pd
import pytest

from app.core.lp import RowSense
from app.core.model import (
    build_defender_lp,
    capacity_screen,
    dual_objective,
    evaluate_allocation,
    named_duals,
    require_valid,
    solve_defender,
    unmet_ratios,
    validate_instance,
    write_allocation_csv,
)
from app.exceptions import InstanceValidationError
from app.models import Allocation, AttackPlan, Instance

NO_ATTACK = AttackPlan(z=(0, 0), k=0)
FIRST_DOWN = AttackPlan(z=(1, 0), k=1)


def test_validate_canonical_instance(t1: Instance) -> None:
    """No violations; a single failure passes the capacity screen."""
    report = validate_instance(t1)

    assert report.ok
    row = report.screen[1]
    assert row.passes
    assert row.surviving_capacity == pytest.approx(10.0)
    assert row.required == pytest.approx(4.0)
    assert not report.screen[2].passes
    assert report.screen_passes(1)
    assert not report.screen_passes(2)


def test_empty_eligibility_row(make_instance: Callable[..., Instance]) -> None:
    inst = make_instance(a=[[0, 0], [1, 1]])
    report = validate_instance(inst)

    assert "area 1 has no eligible EN" in report.violations
    with pytest.raises(InstanceValidationError, match="no eligible EN"):
        require_valid(inst)


def test_parameter_violations(make_instance: Callable[..., Instance]) -> None:
    report = validate_instance(make_instance(**{"lambda": [0.0, 10.0], "theta": 1.5}))
    assert any("lambda" in v for v in report.violations)
    assert any("theta" in v for v in report.violations)

    report = validate_instance(make_instance(c=[10.0]))
    assert any("length 1" in v for v in report.violations)


def test_screen_flags_zero_theta_shortage(make_instance: Callable[..., Instance]) -> None:
    """Theta 0 forces full service, impossible when capacity is short."""
    inst = make_instance(theta=0.0, c=[5.0, 5.0])
    report = validate_instance(inst)

    assert report.ok
    assert not report.screen[0].passes


def test_screen_respects_protection(t1: Instance) -> None:
    """Protected ENs are never removed by the screen."""
    assert not capacity_screen(t1, 2).passes
    assert capacity_screen(t1, 1, protected=(0,)).surviving_capacity == pytest.approx(10.0)


def test_defender_lp_layout(t1: Instance) -> None:
    """Rows follow the canonical order with one fairness pair."""
    p = build_defender_lp(t1, NO_ATTACK)
    symbols = [tag.symbol for tag in p.row_tags]

    assert symbols == ["pi", "pi", "mu", "mu", "sigma", "sigma", "sigma", "sigma", "eta", "tau", "nu", "nu"]
    assert p.n_cols == 6
    assert p.senses[2] is RowSense.EQ
    assert p.senses[9] is RowSense.GE
    assert p.col_names[:2] == ("x_0_0", "x_0_1")

    attacked = build_defender_lp(t1, FIRST_DOWN)
    assert attacked.b[0] == 0.0
    assert attacked.b[1] == 10.0


def test_ineligible_pairs_are_omitted(make_instance: Callable[..., Instance]) -> None:
    inst = make_instance(a=[[1, 0], [1, 1]])
    p = build_defender_lp(inst, NO_ATTACK)
    assert p.n_cols == 3 + 2
    assert "x_0_1" not in p.col_names


def test_no_attack_optimum(t1: Instance) -> None:
    """Each area is served by its nearest EN at cost 2.0."""
    solved = solve_defender(t1, NO_ATTACK)

    assert solved.feasible
    assert solved.cost == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(solved.allocation.x_array, [[10, 0], [0, 10]], atol=1e-9)
    np.testing.assert_allclose(solved.allocation.q_array, [0, 0], atol=1e-9)


def test_single_failure_optimum(t1: Instance) -> None:
    """Losing EN 1 drops 8 units in area 1 and 2 in area 2."""
    solved = solve_defender(t1, FIRST_DOWN)

    assert solved.cost == pytest.approx(46.2, abs=1e-9)
    np.testing.assert_allclose(solved.allocation.q_array, [8, 2], atol=1e-9)
    np.testing.assert_allclose(solved.allocation.x_array, [[0, 2], [0, 8]], atol=1e-9)
    np.testing.assert_allclose(unmet_ratios(t1, solved.allocation), [0.8, 0.2], atol=1e-9)


def test_tight_fairness_optimum(make_instance: Callable[..., Instance]) -> None:
    solved = solve_defender(make_instance(beta=0.2), FIRST_DOWN)

    assert solved.cost == pytest.approx(46.4, abs=1e-9)
    np.testing.assert_allclose(solved.allocation.q_array, [6, 4], atol=1e-9)


def test_theta_infeasibility_and_fallback(make_instance: Callable[..., Instance]) -> None:
    """Theta 0.4 cannot absorb a failure; dropping the fairness rows can."""
    inst = make_instance(theta=0.4)
    strict = solve_defender(inst, FIRST_DOWN)
    relaxed = solve_defender(inst, FIRST_DOWN, fairness=False)

    assert not strict.feasible
    assert strict.allocation is None
    assert relaxed.feasible
    assert relaxed.cost == pytest.approx(46.0, abs=1e-9)
    assert not relaxed.problem.rows_of("nu")


def test_evaluate_optimal_allocation(t1: Instance) -> None:
    alloc = solve_defender(t1, NO_ATTACK).allocation
    breakdown = evaluate_allocation(t1, NO_ATTACK, alloc)

    assert breakdown.feasible
    assert breakdown.unmet_penalty_term == pytest.approx(0.0, abs=1e-9)
    assert breakdown.delay_term == pytest.approx(2.0)
    assert breakdown.total == pytest.approx(2.0)


def test_evaluate_all_drop(make_instance: Callable[..., Instance]) -> None:
    """With theta 1 dropping everything is feasible and costs (1-gamma) sum phi lambda."""
    inst = make_instance(theta=1.0)
    alloc = Allocation(x=[[0.0, 0.0], [0.0, 0.0]], q=[10.0, 10.0])
    breakdown = evaluate_allocation(inst, NO_ATTACK, alloc)

    assert breakdown.feasible
    assert breakdown.delay_term == 0.0
    assert breakdown.total == pytest.approx(0.9 * 100.0)


def test_evaluate_reports_theta_residual(t1: Instance) -> None:
    alloc = Allocation(x=[[0.0, 0.0], [0.0, 10.0]], q=[10.0, 0.0])
    breakdown = evaluate_allocation(t1, NO_ATTACK, alloc)

    assert not breakdown.feasible
    residuals = {r.name: r.residual for r in breakdown.violations}
    assert residuals == {"theta_cap[0]": pytest.approx(0.2)}


def test_evaluate_reports_attacked_capacity(t1: Instance) -> None:
    alloc = Allocation(x=[[10.0, 0.0], [0.0, 10.0]], q=[0.0, 0.0])
    breakdown = evaluate_allocation(t1, FIRST_DOWN, alloc)

    assert [r.name for r in breakdown.violations] == ["capacity[0]"]
    assert breakdown.violations[0].residual == pytest.approx(10.0)


def test_named_duals_close_the_gap(t1: Instance) -> None:
    """Re-signed multipliers are sign-valid and their objective equals the primal."""
    solved = solve_defender(t1, FIRST_DOWN)
    duals = named_duals(t1, solved.problem, solved.solution)

    assert (duals.pi >= -1e-9).all()
    assert (duals.nu >= -1e-9).all()
    assert all(v >= -1e-9 for v in duals.sigma.values())
    assert all(v >= -1e-9 for v in duals.eta.values())
    assert all(v >= -1e-9 for v in duals.tau.values())
    assert dual_objective(t1, FIRST_DOWN, duals) == pytest.approx(46.2, abs=1e-7)

    d = t1.delay
    for i, j in t1.eligible_pairs():
        lhs = -duals.pi[j] + duals.mu[i] - duals.sigma[(i, j)]
        assert lhs <= t1.gamma * d[i, j] + 1e-9


def test_allocation_csv_export(t1: Instance, tmp_path: object) -> None:
    alloc = solve_defender(t1, FIRST_DOWN).allocation
    x_path, q_path = write_allocation_csv(t1, alloc, tmp_path)  # type: ignore[arg-type]
    x_frame = pd.read_csv(x_path)
    q_frame = pd.read_csv(q_path)

    assert list(x_frame.columns) == ["area", "en", "x"]
    assert list(q_frame.columns) == ["area", "q", "q_over_lambda"]
    assert q_frame["q_over_lambda"].tolist() == pytest.approx([0.8, 0.2])
    assert x_frame["area"].min() == 1


@pytest.mark.parametrize("seed", range(10))
def test_relaxation_monotonicity(seed: int, random_instance: Callable[..., Instance]) -> None:
    """Cost is nonincreasing in beta and theta; dropping fairness never costs more."""
    inst = random_instance(seed).with_overrides(theta=1.0)
    plan = AttackPlan.none(inst.n)
    costs_beta = [
        solve_defender(inst.with_overrides(beta=beta), plan).cost for beta in (0.1, 0.3, 0.6, 1.0)
    ]
    costs_theta = [
        solve_defender(inst.with_overrides(theta=theta, beta=1.0), plan).cost
        for theta in (0.98, 1.0)
    ]
    unconstrained = solve_defender(inst, plan, fairness=False).cost

    assert all(a >= b - 1e-7 for a, b in zip(costs_beta, costs_beta[1:], strict=False))
    assert costs_theta[0] >= costs_theta[1] - 1e-7
    assert unconstrained <= min(costs_beta) + 1e-7
    logger.info(f"seed {seed}: beta costs {costs_beta}")


def test_screen_catches_shared_en_contention(contended: Instance) -> None:
    """Capacity sums pass, yet areas 1 and 2 cannot both be served by EN 1."""
    row = capacity_screen(contended, 0)

    assert row.surviving_capacity >= row.required
    assert row.short_areas == []
    assert not row.passes
    assert row.blocking_plan == []
    assert not validate_instance(contended).screen_passes(0)
    assert not solve_defender(contended, AttackPlan.none(2)).feasible


def test_screen_names_blocking_attack(make_instance: Callable[..., Instance]) -> None:
    """Losing either EN shared by areas 1 and 2 leaves them 2 units short."""
    inst = make_instance(
        m=3,
        n=4,
        c=[10.0, 10.0, 100.0, 100.0],
        a=[[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]],
        d=[[1.0, 2.0, 3.0, 3.0], [2.0, 1.0, 3.0, 3.0], [3.0, 3.0, 1.0, 2.0]],
        phi=[5.0, 5.0, 5.0],
        theta=0.4,
        **{"lambda": [10.0, 10.0, 10.0]},
    )
    assert capacity_screen(inst, 0).passes

    row = capacity_screen(inst, 1)
    assert row.short_areas == []
    assert not row.passes
    assert row.blocking_plan == [0]
    assert row.flow_checked
    assert capacity_screen(inst, 1, protected=(0,)).blocking_plan == [1]


def test_screen_skips_flow_on_many_plans(make_instance: Callable[..., Instance]) -> None:
    inst = make_instance(
        n=12,
        c=[10.0] * 12,
        d=[[1.0] * 12, [1.0] * 12],
        a=[[1] * 12, [1] * 12],
    )
    row = capacity_screen(inst, 6)

    assert row.passes
    assert not row.flow_checked
