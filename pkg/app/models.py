"""Pydantic data models shared by every planner module.

Indices are 0-based everywhere inside the library. Human-facing outputs
(CLI lines, ``critical_set`` in result JSON) use 1-based EN labels.
"""

from enum import StrEnum
from itertools import combinations
import json
import math
from pathlib import Path
from typing import Annotated, Any, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SynthesisParams(BaseModel):
    """Parameters for synthesising a random edge network instance."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    n_nodes: Annotated[int, Field(description="Topology size", ge=1)] = 100
    attachment_rate: Annotated[
        int, Field(description="Edges attached by each new node", ge=1)
    ] = 2
    n_aps: Annotated[int, Field(description="Number of access points (M)", ge=1)] = 80
    n_ens: Annotated[int, Field(description="Number of edge nodes (N)", ge=1)] = 30
    delay_range: Annotated[
        tuple[float, float], Field(description="Link delay range in ms")
    ] = (2.0, 5.0)
    eligibility_threshold: Annotated[
        float, Field(description="AP-EN delay below which the EN may serve the AP (ms)")
    ] = 20.0
    capacity_choices: Annotated[
        tuple[float, ...], Field(description="EN capacity choices in vCPU", min_length=1)
    ] = (16, 32, 64, 128, 256, 512, 1024)
    demand_range: Annotated[
        tuple[float, float], Field(description="Area demand range in vCPU")
    ] = (20.0, 35.0)
    unmet_penalty: Annotated[
        float, Field(description="Penalty per unit of unmet demand", ge=0)
    ] = 5.0
    gamma: Annotated[float, Field(description="Delay weight", ge=0, le=1)] = 0.1
    theta: Annotated[float, Field(description="Unmet-ratio cap", ge=0, le=1)] = 0.8
    beta: Annotated[float, Field(description="Fairness gap", ge=0)] = 0.8
    seed: Annotated[int, Field(description="Random seed")] = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> Self:
        # AP and EN roles may share a node once they no longer fit disjointly.
        if max(self.n_aps, self.n_ens) > self.n_nodes:
            msg = (
                f"n_aps ({self.n_aps}) and n_ens ({self.n_ens}) must each be at most "
                f"n_nodes ({self.n_nodes})"
            )
            raise ValueError(msg)
        if self.n_nodes < self.attachment_rate + 1:
            msg = f"n_nodes must be at least attachment_rate + 1 ({self.attachment_rate + 1})"
            raise ValueError(msg)
        low, high = self.delay_range
        if not 0 <= low <= high:
            msg = f"delay_range must satisfy 0 <= low <= high, got {self.delay_range}"
            raise ValueError(msg)
        low, high = self.demand_range
        if not 0 < low <= high:
            msg = f"demand_range must satisfy 0 < low <= high, got {self.demand_range}"
            raise ValueError(msg)
        if any(cap < 0 for cap in self.capacity_choices):
            msg = "capacity_choices must be nonnegative"
            raise ValueError(msg)
        return self


class Instance(BaseModel):
    """Full problem data: demands, capacities, delays, eligibility and weights.

    Rows of ``d`` and ``a`` index access points (areas), columns index ENs.
    Structural checks live in :func:`app.core.model.validate_instance` so that
    a malformed instance can still be loaded and reported on.
    """

    model_config = ConfigDict(
        frozen=True, populate_by_name=True, ser_json_inf_nan="constants"
    )

    m: int
    n: int
    lambda_: list[float] = Field(alias="lambda")
    c: list[float]
    phi: list[float]
    d: list[list[float]]
    a: list[list[int]]
    gamma: float
    theta: float
    beta: float
    meta: dict[str, Any] = Field(default_factory=dict)

    @property
    def demand(self) -> np.ndarray:
        return np.asarray(self.lambda_, dtype=float)

    @property
    def capacity(self) -> np.ndarray:
        return np.asarray(self.c, dtype=float)

    @property
    def penalty(self) -> np.ndarray:
        return np.asarray(self.phi, dtype=float)

    @property
    def delay(self) -> np.ndarray:
        return np.asarray(self.d, dtype=float).reshape(self.m, self.n)

    @property
    def eligible(self) -> np.ndarray:
        return np.asarray(self.a, dtype=int).reshape(self.m, self.n)

    def eligible_pairs(self) -> list[tuple[int, int]]:
        """Return (area, EN) pairs with a_{i,j} = 1 in row-major order."""
        return [
            (i, j) for i in range(self.m) for j in range(self.n) if self.a[i][j] == 1
        ]

    def area_pairs(self) -> list[tuple[int, int]]:
        """Return unordered area pairs (i, i') with i < i'."""
        return list(combinations(range(self.m), 2))

    def with_overrides(
        self,
        *,
        beta: float | None = None,
        theta: float | None = None,
        gamma: float | None = None,
    ) -> "Instance":
        """Copy the instance with selected weights replaced."""
        update: dict[str, float] = {}
        if beta is not None:
            update["beta"] = beta
        if theta is not None:
            update["theta"] = theta
        if gamma is not None:
            update["gamma"] = gamma
        return self.model_copy(update=update)

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.model_validate(json.loads(text))

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Instance":
        return cls.from_json(path.read_text(encoding="utf-8"))


class AttackPlan(BaseModel):
    """Binary interdiction vector z over ENs with cardinality budget k."""

    model_config = ConfigDict(frozen=True)

    z: tuple[int, ...]
    k: Annotated[int, Field(ge=0)]

    @field_validator("z")
    @classmethod
    def _binary(cls, z: tuple[int, ...]) -> tuple[int, ...]:
        if any(v not in {0, 1} for v in z):
            msg = "attack vector entries must be 0 or 1"
            raise ValueError(msg)
        return z

    @model_validator(mode="after")
    def _within_budget(self) -> Self:
        if sum(self.z) > self.k:
            msg = f"attack plan destroys {sum(self.z)} ENs, budget is {self.k}"
            raise ValueError(msg)
        return self

    @classmethod
    def none(cls, n: int) -> "AttackPlan":
        return cls(z=(0,) * n, k=0)

    @classmethod
    def from_support(
        cls, n: int, support: tuple[int, ...] | list[int], k: int | None = None
    ) -> "AttackPlan":
        chosen = set(support)
        return cls(
            z=tuple(1 if j in chosen else 0 for j in range(n)),
            k=len(chosen) if k is None else k,
        )

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(j for j, v in enumerate(self.z) if v == 1)


class Allocation(BaseModel):
    """Workload assignment x (M x N) and unmet demand q (M)."""

    model_config = ConfigDict(frozen=True)

    x: list[list[float]]
    q: list[float]

    @property
    def x_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    @property
    def q_array(self) -> np.ndarray:
        return np.asarray(self.q, dtype=float)


class Residual(BaseModel):
    """A violated allocation constraint and by how much."""

    name: str
    residual: float


class CostBreakdown(BaseModel):
    """Objective decomposition plus the feasibility verdict of an allocation."""

    unmet_penalty_term: float
    delay_term: float
    total: float
    feasible: bool = True
    violations: list[Residual] = Field(default_factory=list)


class ScreenRow(BaseModel):
    """Capacity screen for attacks of a given size."""

    k: int
    surviving_capacity: float
    required: float
    passes: bool
    short_areas: list[int] = Field(default_factory=list)
    blocking_plan: list[int] | None = Field(
        default=None, description="0-based ENs of an attack no allocation survives"
    )
    flow_checked: bool = Field(
        default=True, description="False when too many plans to check every allocation"
    )


class ValidationReport(BaseModel):
    violations: list[str] = Field(default_factory=list)
    screen: list[ScreenRow] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def screen_passes(self, k: int) -> bool:
        """Return True when every attack size up to ``k`` passes the screen."""
        return all(row.passes for row in self.screen if row.k <= k)


class Provenance(StrEnum):
    PROPOSED = "proposed"
    HEURISTIC = "heuristic"
    RANDOM = "random"
    NONE = "none"


class HardeningPlan(BaseModel):
    """Set of protected ENs (immune to attack and failure)."""

    model_config = ConfigDict(frozen=True)

    protected: tuple[int, ...] = ()
    k: Annotated[int, Field(ge=0)] = 0
    provenance: Provenance = Provenance.NONE

    @model_validator(mode="after")
    def _within_budget(self) -> Self:
        if len(self.protected) > self.k:
            msg = f"{len(self.protected)} protected ENs exceed budget {self.k}"
            raise ValueError(msg)
        if len(set(self.protected)) != len(self.protected):
            msg = "protected ENs must be distinct"
            raise ValueError(msg)
        return self

    def labels(self) -> list[int]:
        """Return 1-based EN labels for display."""
        return [j + 1 for j in self.protected]


class SchemeKind(StrEnum):
    NONE = "none"
    HEURISTIC = "heuristic"
    RANDOM = "random"
    PROPOSED = "proposed"


class Scheme(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: SchemeKind
    k: Annotated[int, Field(ge=0)]
    seed: int = 0


class AttackResult(BaseModel):
    """Outcome of exhaustive attack enumeration."""

    worst_plan: AttackPlan | None
    worst_cost: float
    plans_scanned: int
    infeasible_plans: list[tuple[int, ...]] = Field(default_factory=list)
    outright_sizes: list[int] = Field(default_factory=list)
    per_plan: dict[str, float | None] = Field(default_factory=dict)

    @property
    def attacker_wins_outright(self) -> bool:
        return bool(self.outright_sizes)


class SolveResult(BaseModel):
    """Serialised answer of the attacker-defender problem."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    method: str
    k: int
    worst_cost: float
    critical_set: list[int]
    wall_time_s: float | None
    nodes: int
    verified: bool
    escalations: int = 0

    @property
    def finite(self) -> bool:
        return math.isfinite(self.worst_cost)
