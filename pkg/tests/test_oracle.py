"""Cross-checks of the duality MILP, the KKT MILP and exhaustive enumeration."""

from collections.abc import Callable, Iterator
import time

from loguru import logger
import pytest

from app.config import BENCHMARK_PRESET, SolverOptions
from app.core.model import validate_instance
from app.core.solve import Method, enumerate_attacks, restricted_worst_case, solve_bilevel
from app.core.topology import synthesize_instance
from app.models import HardeningPlan, Instance


def comparable_instances(
    count: int, make: Callable[..., Instance]
) -> Iterator[tuple[int, Instance, int]]:
    """Seeded instances where the screen passes and every attack stays feasible."""
    found = 0
    seed = 0
    while found < count:
        inst = make(seed)
        k = min(seed % 4, inst.n)
        seed += 1
        if not validate_instance(inst).screen_passes(k):
            continue
        if enumerate_attacks(inst, k).infeasible_plans:
            continue
        found += 1
        yield seed - 1, inst, k


def assert_methods_agree(inst: Instance, k: int, opts: SolverOptions | None = None) -> None:
    exact = enumerate_attacks(inst, k).worst_cost
    for method in (Method.DUALITY, Method.KKT):
        outcome = solve_bilevel(inst, k, method, opts=opts)
        assert outcome.worst_cost == pytest.approx(exact, rel=1e-6, abs=1e-6), method
        # Any optimal attack is acceptable; its re-solved cost must match.
        assert outcome.verified


def test_methods_agree_on_small_sample(random_instance: Callable[..., Instance]) -> None:
    """Both MILPs match enumeration, each solve held to a short search budget."""
    opts = SolverOptions(time_limit_s=30.0)
    started = time.perf_counter()
    for seed, inst, k in comparable_instances(15, random_instance):
        logger.debug(f"oracle seed {seed}: m={inst.m} n={inst.n} k={k}")
        assert_methods_agree(inst, k, opts)
    logger.info(f"15 oracle instances in {time.perf_counter() - started:.1f}s")


@pytest.mark.slow
def test_methods_agree_on_hundred_instances(random_instance: Callable[..., Instance]) -> None:
    checked = 0
    opts = SolverOptions(time_limit_s=60.0)
    for _, inst, k in comparable_instances(100, random_instance):
        assert_methods_agree(inst, k, opts)
        checked += 1
    assert checked == 100


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_protecting_critical_set_dominates(
    seed: int, random_instance: Callable[..., Instance]
) -> None:
    """Protecting the optimal attack's support never leaves a worse restricted worst case."""
    inst = random_instance(seed).with_overrides(theta=1.0)
    k = min(2, inst.n)
    critical = solve_bilevel(inst, k, Method.DUALITY).hardening
    baseline = enumerate_attacks(inst, k).worst_cost

    assert restricted_worst_case(inst, critical, k).worst_cost <= baseline + 1e-7
    assert restricted_worst_case(inst, HardeningPlan(), k).worst_cost == pytest.approx(baseline)


@pytest.mark.slow
@pytest.mark.integration
def test_full_scale_duality_single_failure() -> None:
    """Full-size synthesised instance: the duality MILP matches enumeration for k=1."""
    inst = synthesize_instance(BENCHMARK_PRESET)
    report = validate_instance(inst)
    if not report.screen_passes(1):
        pytest.skip("capacity screen fails for this draw")
    exact = enumerate_attacks(inst, 1)
    if exact.infeasible_plans:
        pytest.skip("some single failure is infeasible for this draw")

    outcome = solve_bilevel(inst, 1, Method.DUALITY)
    assert outcome.worst_cost == pytest.approx(exact.worst_cost, rel=1e-6)
    logger.info(f"full-scale k=1: {outcome.worst_cost:.6g}, {outcome.nodes} nodes")
