"""Tests for hardening schemes, failure simulation and experiment bundles."""

from collections.abc import Callable
import json
from pathlib import Path

from loguru import logger
import pandas as pd
import pytest

from app.config import SolverOptions
from app.core.experiments import (
    COLUMNS,
    ExperimentConfig,
    ExperimentFamily,
    FailureMode,
    ScenarioReport,
    fairness_profile,
    protection_plan,
    run_experiment,
    scenario_failures,
    simulate_failures,
    write_bundle,
)
from app.core.solve import Method
from app.exceptions import UsageError
from app.models import HardeningPlan, Instance, Provenance, Scheme, SchemeKind


@pytest.fixture
def three_en(make_instance: Callable[..., Instance]) -> Instance:
    """Two areas, three ENs of distinct size; EN 3 is the largest."""
    return make_instance(
        n=3,
        c=[10.0, 6.0, 14.0],
        d=[[1.0, 2.0, 3.0], [2.0, 1.0, 3.0]],
        a=[[1, 1, 1], [1, 1, 1]],
        theta=1.0,
    )


def test_none_and_heuristic_plans(three_en: Instance) -> None:
    none = protection_plan(three_en, Scheme(kind=SchemeKind.NONE, k=2))
    heuristic = protection_plan(three_en, Scheme(kind=SchemeKind.HEURISTIC, k=2))

    assert none.protected == ()
    assert none.provenance is Provenance.NONE
    assert heuristic.protected == (0, 2)
    assert heuristic.labels() == [1, 3]


def test_heuristic_ties_prefer_lower_index(t1: Instance) -> None:
    plan = protection_plan(t1, Scheme(kind=SchemeKind.HEURISTIC, k=1))
    assert plan.protected == (0,)


def test_random_plan_is_seeded(three_en: Instance) -> None:
    scheme = Scheme(kind=SchemeKind.RANDOM, k=2, seed=7)
    first = [protection_plan(three_en, scheme, draw=d).protected for d in range(5)]
    again = [protection_plan(three_en, scheme, draw=d).protected for d in range(5)]

    assert first == again
    assert all(len(p) == 2 and len(set(p)) == 2 for p in first)


def test_proposed_plan(t1: Instance) -> None:
    plan = protection_plan(t1, Scheme(kind=SchemeKind.PROPOSED, k=1), method=Method.ENUM)

    assert plan.protected == (0,)
    assert plan.provenance is Provenance.PROPOSED
    empty = protection_plan(t1, Scheme(kind=SchemeKind.PROPOSED, k=0))
    assert empty.protected == ()


def test_plan_budget_checked(t1: Instance) -> None:
    with pytest.raises(UsageError):
        protection_plan(t1, Scheme(kind=SchemeKind.HEURISTIC, k=3))


def test_scenario_failures_are_reproducible() -> None:
    first = scenario_failures([0, 2, 3, 5], 2, 10, seed=3)

    assert first == scenario_failures([0, 2, 3, 5], 2, 10, seed=3)
    assert all(set(f) <= {0, 2, 3, 5} and len(f) == 2 for f in first)
    # Scenario i only depends on (seed, i).
    assert scenario_failures([0, 2, 3, 5], 2, 4, seed=3) == first[:4]


def test_simulate_without_protection(t1: Instance) -> None:
    report = simulate_failures(t1, HardeningPlan(), 1, n_scenarios=20, seed=1)

    assert report.n_scenarios == 20
    assert report.costs == pytest.approx([46.2] * 20, abs=1e-9)
    assert report.mean == pytest.approx(46.2, abs=1e-9)
    assert report.flag_count == 0


def test_simulate_with_protection(t1: Instance) -> None:
    report = simulate_failures(t1, HardeningPlan(protected=(0,), k=1), 1, n_scenarios=10)

    assert report.failures == [[1]] * 10
    assert report.worst == pytest.approx(46.2, abs=1e-9)


def test_simulate_no_failures(t1: Instance) -> None:
    report = simulate_failures(t1, HardeningPlan(), 0, n_scenarios=3)
    assert report.costs == pytest.approx([2.0] * 3, abs=1e-9)


def test_simulate_too_many_failures(t1: Instance) -> None:
    with pytest.raises(UsageError, match="unprotected"):
        simulate_failures(t1, HardeningPlan(protected=(0,), k=1), 2, n_scenarios=3)


def test_simulate_flags_fairness_fallback(make_instance: Callable[..., Instance]) -> None:
    """Theta 0.4 cannot absorb a failure; the scenario is solved without fairness."""
    report = simulate_failures(make_instance(theta=0.4), HardeningPlan(), 1, n_scenarios=4)

    assert report.flagged == [0, 1, 2, 3]
    assert report.costs == pytest.approx([46.0] * 4, abs=1e-9)
    assert fairness_profile(report).unflagged_gap_max == 0.0


def test_simulation_with_workers(t1: Instance) -> None:
    serial = simulate_failures(t1, HardeningPlan(), 1, n_scenarios=6, seed=2)
    parallel = simulate_failures(t1, HardeningPlan(), 1, n_scenarios=6, seed=2, opts=SolverOptions(jobs=2))

    assert parallel.costs == serial.costs
    assert parallel.failures == serial.failures


def test_fairness_profile(t1: Instance, make_instance: Callable[..., Instance]) -> None:
    """Gaps are 0.6 with beta 1 and shrink to 0.2 with beta 0.2."""
    loose = fairness_profile(simulate_failures(t1, HardeningPlan(), 1, n_scenarios=8))
    tight = fairness_profile(
        simulate_failures(make_instance(beta=0.2), HardeningPlan(), 1, n_scenarios=8)
    )

    assert loose.gap_max == pytest.approx(0.6, abs=1e-9)
    assert loose.gap_std == pytest.approx(0.0, abs=1e-9)
    assert tight.gap_max == pytest.approx(0.2, abs=1e-9)
    assert len(loose.area_mean) == t1.m


def test_fairness_profile_needs_scenarios() -> None:
    empty = ScenarioReport(protected=[], q_failures=0, n_scenarios=0, seed=0, costs=[], failures=[], ratios=[])
    with pytest.raises(UsageError):
        fairness_profile(empty)


def test_config_needs_instance() -> None:
    with pytest.raises(ValueError, match="needs an instance"):
        ExperimentConfig(family=ExperimentFamily.BETA_SWEEP)
    assert ExperimentConfig(family=ExperimentFamily.SIZE_AND_TIME_TABLE).resolve_instance() is None


def test_scheme_comparison(t1: Instance) -> None:
    config = ExperimentConfig(
        family=ExperimentFamily.SCHEME_COMPARISON,
        instance=t1,
        k_values=[1],
        n_scenarios=10,
        random_draws=3,
        method=Method.ENUM,
    )
    bundle = run_experiment(config)
    frame = bundle.frame()

    assert list(frame.columns) == COLUMNS[ExperimentFamily.SCHEME_COMPARISON]
    assert frame["scheme"].tolist() == ["none", "heuristic", "random", "proposed"]
    assert frame["worst_cost"].tolist() == pytest.approx([46.2] * 4, abs=1e-9)
    assert frame.loc[frame["scheme"] == "random", "draws"].item() == 3
    assert frame.loc[frame["scheme"] == "proposed", "protected"].item() == "1"


def test_adversarial_scheme_comparison(t1: Instance) -> None:
    config = ExperimentConfig(
        family=ExperimentFamily.SCHEME_COMPARISON,
        instance=t1,
        k_values=[1],
        mode=FailureMode.ADVERSARIAL,
        random_draws=1,
        method=Method.ENUM,
    )
    frame = run_experiment(config).frame()

    assert set(frame["mode"]) == {"adversarial"}
    assert (frame["mean_cost"] == frame["worst_cost"]).all()
    assert frame["worst_cost"].tolist() == pytest.approx([46.2] * 4, abs=1e-9)


def test_k_vs_q_grid(t1: Instance) -> None:
    """The K=0 row is the unprotected baseline of the same scenarios."""
    config = ExperimentConfig(
        family=ExperimentFamily.K_VS_Q_GRID,
        instance=t1,
        k_values=[0, 1],
        q_values=[1],
        n_scenarios=6,
        method=Method.ENUM,
    )
    frame = run_experiment(config).frame()
    baseline = simulate_failures(t1, HardeningPlan(), 1, n_scenarios=6, seed=0)

    assert frame[["k", "q_failures"]].values.tolist() == [[0, 1], [1, 1]]
    assert frame.loc[0, "mean_cost"] == pytest.approx(baseline.mean)
    assert frame.loc[1, "protected"] == "1"


def test_beta_sweep(t1: Instance) -> None:
    config = ExperimentConfig(
        family=ExperimentFamily.BETA_SWEEP,
        instance=t1,
        beta_values=[0.2, 1.0],
        k_values=[1],
        n_scenarios=4,
        method=Method.DUALITY,
        omit_timing=True,
    )
    bundle = run_experiment(config)
    frame = bundle.frame()

    assert frame["worst_cost"].tolist() == pytest.approx([46.4, 46.2], abs=1e-7)
    assert frame["attack_gap"].tolist() == pytest.approx([0.2, 0.6], abs=1e-7)
    assert frame["sim_gap_max"].tolist() == pytest.approx([0.2, 0.6], abs=1e-7)
    assert frame["wall_time_s"].isna().all()
    assert len(bundle.details) == 2
    assert "profile" in bundle.details[0]


def test_write_bundle_is_deterministic(t1: Instance, tmp_path: Path) -> None:
    config = ExperimentConfig(
        family=ExperimentFamily.BETA_SWEEP,
        instance=t1,
        beta_values=[1.0],
        k_values=[1],
        n_scenarios=3,
        method=Method.ENUM,
        omit_timing=True,
    )
    first = write_bundle(run_experiment(config), tmp_path / "a")
    second = write_bundle(run_experiment(config), tmp_path / "b")

    for name in ("config.json", "instance.json", "flags.csv", "results/beta-sweep.csv", "results/beta-sweep.json"):
        assert (first / name).read_text(encoding="utf-8") == (second / name).read_text(encoding="utf-8")
    payload = json.loads((first / "results" / "beta-sweep.json").read_text(encoding="utf-8"))
    assert payload["family"] == "beta-sweep"
    assert list(pd.read_csv(first / "flags.csv").columns) == ["family", "key", "scenario", "failed"]
    assert Instance.load(first / "instance.json") == t1


def test_flags_written_for_fallback(make_instance: Callable[..., Instance], tmp_path: Path) -> None:
    config = ExperimentConfig(
        family=ExperimentFamily.K_VS_Q_GRID,
        instance=make_instance(theta=0.4),
        k_values=[0],
        q_values=[1],
        n_scenarios=2,
    )
    bundle = run_experiment(config)
    write_bundle(bundle, tmp_path)
    flags = pd.read_csv(tmp_path / "flags.csv")

    assert len(flags) == 2
    assert bundle.rows[0]["flagged"] == 2


@pytest.mark.slow
def test_size_and_time_table() -> None:
    config = ExperimentConfig(
        family=ExperimentFamily.SIZE_AND_TIME_TABLE,
        sizes=[(6, 3)],
        size_seeds=[0],
        table_k=1,
        omit_timing=True,
    )
    frame = run_experiment(config).frame()

    assert frame["flavor"].tolist() == ["duality", "kkt"]
    ok = frame[frame["status"] == "ok"]
    assert (ok["n_binary"] >= 3).all()
    assert (ok["table_binary"] == ok["n_binary"] - ok["delta_binary"]).all()
    if len(ok) == 2:
        assert ok["worst_cost"].iloc[0] == pytest.approx(ok["worst_cost"].iloc[1], rel=1e-6)
    logger.info(f"size table:\n{frame}")


@pytest.mark.parametrize("seed", range(5))
def test_unflagged_gaps_respect_beta(seed: int, random_instance: Callable[..., Instance]) -> None:
    inst = random_instance(seed)
    q = min(2, inst.n - 1)
    profile = fairness_profile(simulate_failures(inst, HardeningPlan(), q, n_scenarios=8, seed=seed))

    assert profile.unflagged_gap_max <= inst.beta + 1e-8
