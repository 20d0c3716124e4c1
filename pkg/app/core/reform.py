"""Single-level MILP reformulations of the attacker-defender problem.

Two flavours are built from the same instance:

- ``duality``: the defender LP is replaced by its dual maximisation and the
  bilinear capacity term ``(1 - z_j) pi_j`` by ``g_j`` with four big-M rows.
- ``kkt``: the defender's primal and dual variables are kept side by side and
  every complementarity pair ``0 <= s _|_ v >= 0`` is encoded with one binary
  ``u`` as ``s <= M u`` and ``v <= M (1 - u)``.

Both are stored as minimisation :class:`~app.core.lp.LpProblem` objects with
the attacker's objective negated; :meth:`MilpFormulation.objective` turns a
column vector back into the attacker's (maximised) value.
"""

from dataclasses import dataclass, field
from enum import StrEnum

from loguru import logger
import numpy as np
from pydantic import BaseModel, ConfigDict, computed_field
import scipy.sparse as sp

from app.core.lp import LpProblem, RowSense, RowTag
from app.core.model import capacity_screen, require_valid, solve_defender
from app.exceptions import InfeasibilityError, UsageError
from app.models import AttackPlan, Instance

KKT_FAMILIES = ("u0", "u1", "u2", "u3", "u4", "u5", "u6")
# Families whose slack side is a dual reduced cost; the rest bound a multiplier.
REDUCED_COST_FAMILIES = ("u0", "u1")
PATTERN_TOL = 1e-9

Index = tuple[int, ...]


class Flavor(StrEnum):
    DUALITY = "duality"
    KKT = "kkt"


class BigMValues(BaseModel):
    """Per-EN bounds for the duality path and per-family bounds for KKT."""

    model_config = ConfigDict(frozen=True)

    per_en: tuple[float, ...]
    kkt: dict[str, float]

    def doubled(self) -> "BigMValues":
        return BigMValues(
            per_en=tuple(2 * v for v in self.per_en),
            kkt={name: 2 * v for name, v in self.kkt.items()},
        )


def compute_big_m(inst: Instance) -> BigMValues:
    """Derive big-M bounds from the instance data.

    ``M_j = 2 [(1 - gamma) max_i phi_i + gamma max_i d_ij]`` bounds the price
    of one unit of EN ``j`` capacity. The KKT families bound only the dual
    side of each complementarity pair: reduced costs of x and q get twice the
    largest price, capacity prices get the price itself, and the fairness and
    unmet-ratio multipliers scale it by the largest demand. The primal side of
    every pair is bounded by its exact data range in :func:`build_kkt_milp`.

    Returns:
        BigMValues: strictly positive finite bounds.

    """
    phi_max = float(inst.penalty.max())
    d_max = inst.delay.max(axis=0)
    per_en = 2 * ((1 - inst.gamma) * phi_max + inst.gamma * d_max)
    per_en = np.where(per_en > 0, per_en, 1.0)
    price = float(per_en.max())
    lam_max = float(inst.demand.max())
    kkt = {
        "u0": 2 * price,
        "u1": 2 * price,
        "u2": price,
        "u3": price,
        "u4": lam_max * price,
        "u5": lam_max * price,
        "u6": lam_max * price,
    }
    return BigMValues(per_en=tuple(float(v) for v in per_en), kkt=kkt)


@dataclass(frozen=True, eq=False)
class MilpFormulation:
    """A reformulated attacker problem with its symbolic column map.

    ``columns[family][index]`` gives the column of e.g. ``z[j]`` or
    ``sigma[i, j]``; ``binaries`` lists the integer columns.
    """

    flavor: Flavor
    problem: LpProblem
    binaries: tuple[int, ...]
    columns: dict[str, dict[Index, int]]
    k: int
    bigm: BigMValues
    m: int
    n: int
    protected: tuple[int, ...] = ()
    instance: Instance | None = None

    def objective(self, x: np.ndarray) -> float:
        """Attacker objective (maximised) of a column vector."""
        return -self.problem.objective_value(x)

    def family(self, x: np.ndarray, name: str) -> dict[Index, float]:
        return {index: float(x[col]) for index, col in self.columns.get(name, {}).items()}

    def attack_plan(self, x: np.ndarray) -> AttackPlan:
        z = tuple(int(round(x[self.columns["z"][(j,)]])) for j in range(self.n))
        return AttackPlan(z=z, k=self.k)

    @property
    def n_continuous(self) -> int:
        return self.problem.n_cols - len(self.binaries)

    @property
    def attack_columns(self) -> tuple[int, ...]:
        """Columns of z in EN order; every binary when there is no z family."""
        z = self.columns.get("z")
        if not z:
            return self.binaries
        return tuple(z[(j,)] for j in range(len(z)))


@dataclass
class _Builder:
    name: str
    cost: list[float] = field(default_factory=list)
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)
    col_names: list[str] = field(default_factory=list)
    binaries: list[int] = field(default_factory=list)
    columns: dict[str, dict[Index, int]] = field(default_factory=dict)
    rows: list[int] = field(default_factory=list)
    cols: list[int] = field(default_factory=list)
    vals: list[float] = field(default_factory=list)
    senses: list[RowSense] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    tags: list[RowTag] = field(default_factory=list)

    def column(
        self,
        family: str,
        index: Index,
        *,
        gain: float = 0.0,
        lo: float = 0.0,
        hi: float = np.inf,
        binary: bool = False,
    ) -> int:
        """Add a column whose attacker objective coefficient is ``gain``."""
        col = len(self.cost)
        self.cost.append(-gain)
        self.lo.append(lo)
        self.hi.append(hi)
        self.col_names.append(f"{family}_{'_'.join(str(i) for i in index)}")
        self.columns.setdefault(family, {})[index] = col
        if binary:
            self.binaries.append(col)
        return col

    def row(
        self, entries: list[tuple[int, float]], sense: RowSense, rhs: float, tag: RowTag
    ) -> None:
        r = len(self.rhs)
        for col, val in entries:
            self.rows.append(r)
            self.cols.append(col)
            self.vals.append(val)
        self.senses.append(sense)
        self.rhs.append(rhs)
        self.tags.append(tag)

    def finish(
        self, flavor: Flavor, inst: Instance, k: int, bigm: BigMValues, protected: tuple[int, ...]
    ) -> MilpFormulation:
        shape = (len(self.rhs), len(self.cost))
        problem = LpProblem(
            c=np.array(self.cost),
            a=sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=shape),
            senses=tuple(self.senses),
            b=np.array(self.rhs),
            lo=np.array(self.lo),
            hi=np.array(self.hi),
            row_tags=tuple(self.tags),
            col_names=tuple(self.col_names),
            name=self.name,
        )
        logger.info(
            f"Built {flavor} MILP for k={k}: {shape[0]} rows, {shape[1]} columns, "
            f"{len(self.binaries)} binaries"
        )
        return MilpFormulation(
            flavor=flavor,
            problem=problem,
            binaries=tuple(self.binaries),
            columns=self.columns,
            k=k,
            bigm=bigm,
            m=inst.m,
            n=inst.n,
            protected=protected,
            instance=inst,
        )


def _check_budget(inst: Instance, k: int, protected: tuple[int, ...]) -> None:
    require_valid(inst)
    if not 0 <= k <= inst.n:
        msg = f"attack budget k={k} must lie in [0, {inst.n}]"
        raise UsageError(msg)
    if any(not 0 <= j < inst.n for j in protected):
        msg = f"protected ENs {list(protected)} out of range"
        raise UsageError(msg)
    attackable = inst.n - len(set(protected))
    screen = capacity_screen(inst, min(k, attackable), protected)
    if not screen.passes:
        msg = (
            f"feasibility screen fails for k={k}: surviving capacity "
            f"{screen.surviving_capacity:g} vs required {screen.required:g}"
        )
        if screen.short_areas:
            msg += f", areas short of capacity {[i + 1 for i in screen.short_areas]}"
        if screen.blocking_plan is not None:
            msg += f", no allocation survives attack {[j + 1 for j in screen.blocking_plan]}"
        msg += "; use the enumeration method, which reports infeasible attacks explicitly"
        raise InfeasibilityError(msg)


def _attack_columns(b: _Builder, inst: Instance, k: int, protected: tuple[int, ...]) -> list[int]:
    z = [
        b.column("z", (j,), hi=0.0 if k == 0 or j in protected else 1.0, binary=True)
        for j in range(inst.n)
    ]
    b.row([(col, 1.0) for col in z], RowSense.LE, float(k), RowTag("card"))
    return z


def _dual_columns(b: _Builder, inst: Instance, gains: bool) -> None:
    """Dual variables pi, mu, sigma, eta, tau, nu (objective terms when ``gains``)."""
    cap = inst.capacity
    lam = inst.demand
    for j in range(inst.n):
        b.column("pi", (j,))
    for i in range(inst.m):
        b.column("mu", (i,), gain=lam[i] if gains else 0.0, lo=-np.inf)
    for i, j in inst.eligible_pairs():
        b.column("sigma", (i, j), gain=-cap[j] if gains else 0.0)
    for pair in inst.area_pairs():
        b.column("eta", pair, gain=-inst.beta if gains else 0.0)
    for pair in inst.area_pairs():
        b.column("tau", pair, gain=-inst.beta if gains else 0.0)
    for i in range(inst.m):
        b.column("nu", (i,), gain=-inst.theta if gains else 0.0)


def _reduced_cost_terms(
    b: _Builder, inst: Instance
) -> tuple[dict[Index, list[tuple[int, float]]], dict[Index, list[tuple[int, float]]]]:
    """Linear parts of ``-(reduced cost)`` of every x and q column.

    For ``x[i,j]`` this is ``-pi_j + mu_i - sigma_ij`` and for ``q[i]``
    ``mu_i - (1/lam_i) sum_{l>i} (eta - tau) + (1/lam_i) sum_{l<i} (eta - tau)
    - nu_i / lam_i``; dual feasibility bounds each by its primal cost.
    """
    cols = b.columns
    lam = inst.demand
    x_terms = {
        (i, j): [
            (cols["pi"][(j,)], -1.0),
            (cols["mu"][(i,)], 1.0),
            (cols["sigma"][(i, j)], -1.0),
        ]
        for i, j in inst.eligible_pairs()
    }
    q_terms: dict[Index, list[tuple[int, float]]] = {}
    for i in range(inst.m):
        entries = [(cols["mu"][(i,)], 1.0), (cols["nu"][(i,)], -1.0 / lam[i])]
        for l in range(inst.m):
            if l == i:
                continue
            pair = (i, l) if i < l else (l, i)
            sign = -1.0 if i < l else 1.0
            entries.append((cols["eta"][pair], sign / lam[i]))
            entries.append((cols["tau"][pair], -sign / lam[i]))
        q_terms[(i,)] = entries
    return x_terms, q_terms


def _dual_feasibility_rows(b: _Builder, inst: Instance) -> None:
    x_terms, q_terms = _reduced_cost_terms(b, inst)
    d = inst.delay
    for (i, j), entries in x_terms.items():
        b.row(entries, RowSense.LE, inst.gamma * d[i, j], RowTag("x", (i, j)))
    for (i,), entries in q_terms.items():
        b.row(entries, RowSense.LE, (1 - inst.gamma) * inst.phi[i], RowTag("q", (i,)))


def build_duality_milp(
    inst: Instance,
    k: int,
    bigm: BigMValues | None = None,
    *,
    protected: tuple[int, ...] = (),
) -> MilpFormulation:
    """Dual-based single-level MILP.

    Maximises ``-sum C_j g_j + sum lambda_i mu_i - sum C_j sigma_ij
    - beta sum (eta + tau) - theta sum nu`` subject to dual feasibility for
    every x and q column, the ``g`` linearisation and ``sum z <= k``.

    Raises:
        InfeasibilityError: If the capacity screen fails for budget ``k``.
        UsageError: On an out-of-range budget or protected index.

    """
    protected = tuple(sorted(set(protected)))
    _check_budget(inst, k, protected)
    bigm = bigm or compute_big_m(inst)
    b = _Builder(name=f"duality_k{k}")
    z = _attack_columns(b, inst, k, protected)
    g = [
        b.column("g", (j,), gain=-inst.capacity[j], hi=bigm.per_en[j]) for j in range(inst.n)
    ]
    _dual_columns(b, inst, gains=True)
    _dual_feasibility_rows(b, inst)
    for j in range(inst.n):
        big = bigm.per_en[j]
        pi = b.columns["pi"][(j,)]
        b.row([(g[j], 1.0), (z[j], big)], RowSense.LE, big, RowTag("g_off", (j,)))
        b.row([(g[j], 1.0), (pi, -1.0)], RowSense.LE, 0.0, RowTag("g_le_pi", (j,)))
        b.row(
            [(g[j], 1.0), (pi, -1.0), (z[j], big)], RowSense.GE, 0.0, RowTag("g_ge_pi", (j,))
        )
    return b.finish(Flavor.DUALITY, inst, k, bigm, protected)


def build_kkt_milp(
    inst: Instance,
    k: int,
    bigm: BigMValues | None = None,
    *,
    protected: tuple[int, ...] = (),
) -> MilpFormulation:
    """KKT-based single-level MILP with Fortuny-Amat complementarity rows.

    Maximises the defender cost over primal feasibility, dual feasibility
    and the seven complementarity families ``u0`` ... ``u6``.

    Raises:
        InfeasibilityError: If the capacity screen fails for budget ``k``.
        UsageError: On an out-of-range budget or protected index.

    """
    protected = tuple(sorted(set(protected)))
    _check_budget(inst, k, protected)
    bigm = bigm or compute_big_m(inst)
    big = bigm.kkt
    cap = inst.capacity
    lam = inst.demand
    d = inst.delay
    pairs = inst.eligible_pairs()
    area_pairs = inst.area_pairs()

    b = _Builder(name=f"kkt_k{k}")
    z = _attack_columns(b, inst, k, protected)
    x = {(i, j): b.column("x", (i, j), gain=inst.gamma * d[i, j]) for i, j in pairs}
    q = [b.column("q", (i,), gain=(1 - inst.gamma) * inst.phi[i]) for i in range(inst.m)]
    _dual_columns(b, inst, gains=False)
    cols = b.columns
    u = {
        "u0": {p: b.column("u0", p, hi=1.0, binary=True) for p in pairs},
        "u1": {(i,): b.column("u1", (i,), hi=1.0, binary=True) for i in range(inst.m)},
        "u2": {(j,): b.column("u2", (j,), hi=1.0, binary=True) for j in range(inst.n)},
        "u3": {p: b.column("u3", p, hi=1.0, binary=True) for p in pairs},
        "u4": {p: b.column("u4", p, hi=1.0, binary=True) for p in area_pairs},
        "u5": {p: b.column("u5", p, hi=1.0, binary=True) for p in area_pairs},
        "u6": {(i,): b.column("u6", (i,), hi=1.0, binary=True) for i in range(inst.m)},
    }

    # Primal feasibility.
    for j in range(inst.n):
        entries = [(x[(i, jj)], 1.0) for i, jj in pairs if jj == j] + [(z[j], cap[j])]
        b.row(entries, RowSense.LE, cap[j], RowTag("cap", (j,)))
    for i in range(inst.m):
        entries = [(x[(ii, j)], 1.0) for ii, j in pairs if ii == i] + [(q[i], 1.0)]
        b.row(entries, RowSense.EQ, lam[i], RowTag("bal", (i,)))
    for p in pairs:
        b.row([(x[p], 1.0)], RowSense.LE, cap[p[1]], RowTag("elig", p))
    for i, l in area_pairs:
        diff = [(q[i], 1.0 / lam[i]), (q[l], -1.0 / lam[l])]
        b.row(diff, RowSense.LE, inst.beta, RowTag("fair_hi", (i, l)))
        b.row(diff, RowSense.GE, -inst.beta, RowTag("fair_lo", (i, l)))
    for i in range(inst.m):
        b.row([(q[i], 1.0 / lam[i])], RowSense.LE, inst.theta, RowTag("theta", (i,)))

    # Dual feasibility.
    _dual_feasibility_rows(b, inst)

    # Complementarity: slack <= M_s u and var <= M_v (1 - u). The primal side
    # of each pair uses its exact range, the dual side the family bound.
    x_terms, q_terms = _reduced_cost_terms(b, inst)
    ratio_range = inst.beta + inst.theta

    def pair_rows(
        family: str,
        index: Index,
        slack: list[tuple[int, float]],
        slack_const: float,
        var: int,
        *,
        slack_big: float,
        var_big: float,
    ) -> None:
        """Encode ``slack_terms + slack_const`` _|_ ``var``."""
        ui = u[family][index]
        s_entries = slack + ([(ui, -slack_big)] if slack_big > 0 else [])
        b.row(s_entries, RowSense.LE, -slack_const, RowTag(f"{family}_s", index))
        v_entries = [(var, 1.0)] + ([(ui, var_big)] if var_big > 0 else [])
        b.row(v_entries, RowSense.LE, var_big, RowTag(f"{family}_v", index))

    for p in pairs:
        # rc_x = gamma d + pi - mu + sigma
        negated = [(col, -val) for col, val in x_terms[p]]
        pair_rows(
            "u0", p, negated, inst.gamma * d[p], x[p],
            slack_big=big["u0"], var_big=min(cap[p[1]], lam[p[0]]),
        )
    for i in range(inst.m):
        negated = [(col, -val) for col, val in q_terms[(i,)]]
        pair_rows(
            "u1", (i,), negated, (1 - inst.gamma) * inst.phi[i], q[i],
            slack_big=big["u1"], var_big=inst.theta * lam[i],
        )
    for j in range(inst.n):
        used = [(x[(i, jj)], -1.0) for i, jj in pairs if jj == j] + [(z[j], -cap[j])]
        pair_rows(
            "u2", (j,), used, cap[j], cols["pi"][(j,)], slack_big=cap[j], var_big=big["u2"]
        )
    for p in pairs:
        pair_rows(
            "u3", p, [(x[p], -1.0)], cap[p[1]], cols["sigma"][p],
            slack_big=cap[p[1]], var_big=big["u3"],
        )
    for i, l in area_pairs:
        down = [(q[i], -1.0 / lam[i]), (q[l], 1.0 / lam[l])]
        up = [(q[i], 1.0 / lam[i]), (q[l], -1.0 / lam[l])]
        pair_rows(
            "u4", (i, l), down, inst.beta, cols["eta"][(i, l)],
            slack_big=ratio_range, var_big=big["u4"],
        )
        pair_rows(
            "u5", (i, l), up, inst.beta, cols["tau"][(i, l)],
            slack_big=ratio_range, var_big=big["u5"],
        )
    for i in range(inst.m):
        pair_rows(
            "u6", (i,), [(q[i], -1.0 / lam[i])], inst.theta, cols["nu"][(i,)],
            slack_big=inst.theta, var_big=big["u6"],
        )

    return b.finish(Flavor.KKT, inst, k, bigm, protected)


def indicator_pattern(f: MilpFormulation, support: tuple[int, ...]) -> dict[int, float] | None:
    """Complementarity indicators matching the defender's answer to ``support``.

    With the attack fixed, every feasible point of the KKT formulation is an
    optimal primal-dual pair of the defender LP, so all share one objective.
    An indicator is 1 where the primal side (a slack or ``x``/``q``) is
    strictly positive, which any optimal dual allows, and 0 elsewhere.

    Returns:
        dict[int, float] | None: Column values for every ``u`` binary, or
        None when the defender has no feasible answer to the attack.

    """
    inst = f.instance
    if inst is None or f.flavor is not Flavor.KKT:
        msg = "indicator patterns need a KKT formulation built from an instance"
        raise UsageError(msg)
    solved = solve_defender(inst, AttackPlan.from_support(inst.n, support))
    if solved.allocation is None:
        return None
    x = solved.allocation.x_array
    q = solved.allocation.q_array
    cap = inst.capacity
    lam = inst.demand
    attacked = set(support)
    ratio = q / lam
    positive: dict[tuple[str, Index], float] = {}

    def positive_above(value: float, scale: float = 1.0) -> float:
        return 1.0 if value > PATTERN_TOL * max(1.0, scale) else 0.0

    for i, j in inst.eligible_pairs():
        positive[("u0", (i, j))] = 1.0 - positive_above(x[i, j], cap[j])
        positive[("u3", (i, j))] = positive_above(cap[j] - x[i, j], cap[j])
    for i in range(inst.m):
        positive[("u1", (i,))] = 1.0 - positive_above(q[i], lam[i])
        positive[("u6", (i,))] = positive_above(inst.theta - ratio[i])
    for j in range(inst.n):
        room = (0.0 if j in attacked else cap[j]) - x[:, j].sum()
        positive[("u2", (j,))] = positive_above(room, cap[j])
    for i, l in inst.area_pairs():
        positive[("u4", (i, l))] = positive_above(inst.beta - (ratio[i] - ratio[l]))
        positive[("u5", (i, l))] = positive_above(inst.beta + (ratio[i] - ratio[l]))
    return {f.columns[family][index]: value for (family, index), value in positive.items()}


class SizeStats(BaseModel):
    """Built formulation size beside the closed-form size counts."""

    flavor: Flavor
    m: int
    n: int
    n_rows: int
    n_binary: int
    n_continuous: int
    table_rows: int
    table_binary: int
    table_continuous: int

    @computed_field
    @property
    def delta_rows(self) -> int:
        return self.n_rows - self.table_rows

    @computed_field
    @property
    def delta_binary(self) -> int:
        return self.n_binary - self.table_binary

    @computed_field
    @property
    def delta_continuous(self) -> int:
        return self.n_continuous - self.table_continuous


def table_counts(flavor: Flavor, m: int, n: int) -> tuple[int, int, int]:
    """Closed-form (rows, binaries, continuous) counts for M areas and N ENs."""
    if flavor is Flavor.DUALITY:
        return 6 * n + 2 * m * (m + n), n, 2 * n + m * (2 * m + n)
    return (
        5 * n + m * (8 * m + 8 * n + 1),
        2 * n + 2 * m * (m + n),
        n + 2 * m * (m + n + 1),
    )


def formulation_stats(f: MilpFormulation) -> SizeStats:
    rows, binary, continuous = table_counts(f.flavor, f.m, f.n)
    return SizeStats(
        flavor=f.flavor,
        m=f.m,
        n=f.n,
        n_rows=f.problem.n_rows,
        n_binary=len(f.binaries),
        n_continuous=f.n_continuous,
        table_rows=rows,
        table_binary=binary,
        table_continuous=continuous,
    )


def minimal_pi(f: MilpFormulation, x: np.ndarray, inst: Instance) -> np.ndarray:
    """Smallest capacity prices consistent with the other dual values.

    The prices of attacked ENs carry no cost in the duality objective, so
    their solver values are arbitrary; binding checks use this canonical
    choice ``max(0, max_i (mu_i - sigma_ij - gamma d_ij))`` instead.
    """
    mu = f.family(x, "mu")
    sigma = f.family(x, "sigma")
    d = inst.delay
    pi = np.zeros(inst.n)
    for i, j in inst.eligible_pairs():
        need = mu[(i,)] - sigma[(i, j)] - inst.gamma * d[i, j]
        pi[j] = max(pi[j], need)
    return pi


def g_linearization_error(f: MilpFormulation, x: np.ndarray) -> float:
    """Largest ``|g_j - (1 - z_j) pi_j|`` at a duality-path solution."""
    g = f.family(x, "g")
    pi = f.family(x, "pi")
    z = f.family(x, "z")
    return max(
        (abs(g[(j,)] - (1 - round(z[(j,)])) * pi[(j,)]) for j in range(f.n)),
        default=0.0,
    )


def _kkt_pairs(
    f: MilpFormulation, x: np.ndarray, inst: Instance
) -> list[tuple[str, float, float, float]]:
    """(row label, indicator, slack, variable) for every complementarity pair.

    Attacked ENs carry no capacity, so their prices are replaced by the
    canonical :func:`minimal_pi` value.
    """
    val = {name: f.family(x, name) for name in f.columns}
    canonical = minimal_pi(f, x, inst)
    for j in range(inst.n):
        if round(val["z"][(j,)]) == 1:
            val["pi"][(j,)] = float(canonical[j])
    cap = inst.capacity
    lam = inst.demand
    d = inst.delay
    pairs = inst.eligible_pairs()
    out = []

    def ratio(i: int) -> float:
        return val["q"][(i,)] / lam[i]

    for i, j in pairs:
        rc = inst.gamma * d[i, j] + val["pi"][(j,)] - val["mu"][(i,)] + val["sigma"][(i, j)]
        out.append((f"u0[{i},{j}]", val["u0"][(i, j)], rc, val["x"][(i, j)]))
    for i in range(inst.m):
        rc = (1 - inst.gamma) * inst.phi[i] - val["mu"][(i,)] + val["nu"][(i,)] / lam[i]
        for l in range(inst.m):
            if l == i:
                continue
            pair = (i, l) if i < l else (l, i)
            sign = 1.0 if i < l else -1.0
            rc += sign * (val["eta"][pair] - val["tau"][pair]) / lam[i]
        out.append((f"u1[{i}]", val["u1"][(i,)], rc, val["q"][(i,)]))
    for j in range(inst.n):
        used = sum(val["x"][(i, jj)] for i, jj in pairs if jj == j)
        slack = cap[j] * (1 - round(val["z"][(j,)])) - used
        out.append((f"u2[{j}]", val["u2"][(j,)], slack, val["pi"][(j,)]))
    for i, j in pairs:
        slack = cap[j] - val["x"][(i, j)]
        out.append((f"u3[{i},{j}]", val["u3"][(i, j)], slack, val["sigma"][(i, j)]))
    for i, l in inst.area_pairs():
        diff = ratio(i) - ratio(l)
        out.append((f"u4[{i},{l}]", val["u4"][(i, l)], inst.beta - diff, val["eta"][(i, l)]))
        out.append((f"u5[{i},{l}]", val["u5"][(i, l)], inst.beta + diff, val["tau"][(i, l)]))
    for i in range(inst.m):
        out.append((f"u6[{i}]", val["u6"][(i,)], inst.theta - ratio(i), val["nu"][(i,)]))
    return out


def binding_big_m_rows(
    f: MilpFormulation, x: np.ndarray, inst: Instance, rel_tol: float = 1e-6
) -> list[str]:
    """Name every big-M row whose slack is within ``rel_tol * M`` of zero.

    Returns:
        list[str]: Row labels; empty when the bounds are safely loose.

    """
    binding = []
    if f.flavor is Flavor.DUALITY:
        pi = minimal_pi(f, x, inst)
        for j in range(f.n):
            big = f.bigm.per_en[j]
            if pi[j] >= big * (1 - rel_tol):
                binding.append(f"g_ge_pi[{j}]")
        return binding

    # Primal sides are bounded by exact data ranges and never need escalation.
    for label, indicator, slack, var in _kkt_pairs(f, x, inst):
        family = label.split("[", 1)[0]
        big = f.bigm.kkt[family]
        if family in REDUCED_COST_FAMILIES:
            if round(indicator) == 1 and slack >= big * (1 - rel_tol):
                binding.append(f"{family}_s{label[len(family):]}")
        elif round(indicator) == 0 and var >= big * (1 - rel_tol):
            binding.append(f"{family}_v{label[len(family):]}")
    return binding
