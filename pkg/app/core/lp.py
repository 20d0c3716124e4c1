"""Bounded-variable revised simplex with primal and dual solutions.

Problems are ``min c.x + offset`` over rows ``A x (<= | = | >=) b`` and
variable bounds ``lo <= x <= hi``. Every row receives a logical column so the
working system is ``A x + s = b`` with the row sense carried by the bounds of
``s``. The basis inverse is kept in product form: a sparse LU of the last
refactorised basis plus eta columns for the pivots since.

Exported row multipliers follow a single convention::

    c + A^T duals = reduced_costs

so ``<=`` rows carry nonnegative multipliers, ``>=`` rows nonpositive ones and
equality rows free ones. The matching dual objective is
``offset - b.duals + sum_j min(lo_j r_j, hi_j r_j)``.
"""

from dataclasses import dataclass, field, replace
from enum import StrEnum

from loguru import logger
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from app.config import Tolerances
from app.exceptions import ContractError

REFACTOR_EVERY = 100
BLAND_AFTER = 50
PIVOT_TOL = 1e-9
DEGENERATE_STEP = 1e-12


class RowSense(StrEnum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class RowTag:
    """Dual symbol and index a constraint row stands for, e.g. ``pi[3]``."""

    symbol: str
    index: tuple[int, ...] = ()

    def label(self) -> str:
        if not self.index:
            return self.symbol
        return f"{self.symbol}[{','.join(str(i) for i in self.index)}]"


@dataclass(frozen=True, eq=False)
class LpProblem:
    """Minimisation LP with tagged rows and bounded columns.

    Arrays are converted on construction; ``a`` is stored as CSR.

    Raises:
        ContractError: On inconsistent dimensions, non-finite coefficients
            or crossed bounds.

    """

    c: np.ndarray
    a: sp.csr_matrix
    senses: tuple[RowSense, ...]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    row_tags: tuple[RowTag, ...] = ()
    col_names: tuple[str, ...] = ()
    offset: float = 0.0
    name: str = "lp"

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "c", np.asarray(self.c, dtype=float))
        set_(self, "a", sp.csr_matrix(self.a, dtype=float))
        set_(self, "b", np.asarray(self.b, dtype=float))
        set_(self, "lo", np.asarray(self.lo, dtype=float))
        set_(self, "hi", np.asarray(self.hi, dtype=float))
        set_(self, "senses", tuple(RowSense(s) for s in self.senses))
        m, n = self.a.shape
        if not self.row_tags:
            set_(self, "row_tags", tuple(RowTag("row", (i,)) for i in range(m)))
        if not self.col_names:
            set_(self, "col_names", tuple(f"x{j}" for j in range(n)))

        if self.c.shape != (n,) or self.lo.shape != (n,) or self.hi.shape != (n,):
            msg = f"{self.name}: cost and bound vectors must have length {n}"
            raise ContractError(msg)
        if self.b.shape != (m,) or len(self.senses) != m or len(self.row_tags) != m:
            msg = f"{self.name}: row data must have length {m}"
            raise ContractError(msg)
        if len(self.col_names) != n:
            msg = f"{self.name}: expected {n} column names"
            raise ContractError(msg)
        if not (
            np.isfinite(self.c).all()
            and np.isfinite(self.b).all()
            and np.isfinite(self.a.data).all()
        ):
            msg = f"{self.name}: coefficients must be finite"
            raise ContractError(msg)
        if (self.lo > self.hi).any() or (self.lo == np.inf).any() or (self.hi == -np.inf).any():
            msg = f"{self.name}: every bound pair must satisfy lo <= hi"
            raise ContractError(msg)

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    @property
    def n_cols(self) -> int:
        return self.a.shape[1]

    def rows_of(self, symbol: str) -> list[int]:
        return [i for i, tag in enumerate(self.row_tags) if tag.symbol == symbol]

    def with_bounds(self, lo: np.ndarray, hi: np.ndarray) -> "LpProblem":
        return replace(self, lo=lo, hi=hi)

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.offset


@dataclass
class LpSolution:
    """Outcome of :func:`solve_lp`.

    ``certificate`` holds row multipliers proving infeasibility (positive
    :func:`farkas_bound`) or a primal ray of decreasing cost when unbounded.
    """

    status: LpStatus
    x: np.ndarray | None
    duals: np.ndarray | None
    reduced_costs: np.ndarray | None
    objective: float
    iterations: int = 0
    certificate: np.ndarray | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass(frozen=True)
class LpResiduals:
    primal: float
    dual: float
    complementarity: float

    def within(self, tol: float) -> bool:
        return max(self.primal, self.dual) <= tol


class _SingularBasisError(Exception):
    pass


class _BasisFactor:
    """Sparse LU of a basis matrix followed by product-form eta updates."""

    def __init__(self, matrix: sp.csc_matrix) -> None:
        try:
            self._lu = splu(sp.csc_matrix(matrix))
        except RuntimeError as e:
            raise _SingularBasisError(str(e)) from e
        self._etas: list[tuple[int, np.ndarray]] = []

    @property
    def n_updates(self) -> int:
        return len(self._etas)

    def ftran(self, v: np.ndarray) -> np.ndarray:
        w = self._lu.solve(np.asarray(v, dtype=float))
        for r, eta in self._etas:
            t = w[r]
            if t != 0.0:
                w += t * eta
                w[r] = t * eta[r]
        return w

    def btran(self, v: np.ndarray) -> np.ndarray:
        w = np.array(v, dtype=float)
        for r, eta in reversed(self._etas):
            w[r] = eta @ w
        return self._lu.solve(w, trans="T")

    def update(self, r: int, alpha: np.ndarray) -> None:
        eta = -alpha / alpha[r]
        eta[r] = 1.0 / alpha[r]
        self._etas.append((r, eta))


@dataclass
class _Simplex:
    p: LpProblem
    tol: Tolerances
    max_iterations: int
    iterations: int = 0
    ray: np.ndarray | None = None
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        p = self.p
        m, n = p.a.shape
        senses = np.array([s.value for s in p.senses])
        s_lo = np.where(senses == RowSense.GE.value, -np.inf, 0.0)
        s_hi = np.where(senses == RowSense.LE.value, np.inf, 0.0)
        x0 = np.where(np.isfinite(p.lo), p.lo, np.where(np.isfinite(p.hi), p.hi, 0.0))
        resid = p.b - p.a @ x0
        clipped = np.clip(resid, s_lo, s_hi)
        gap = resid - clipped
        art_rows = np.flatnonzero(np.abs(gap) > self.tol.feasibility)
        n_art = art_rows.size
        art = sp.csc_matrix(
            (np.sign(gap[art_rows]), (art_rows, np.arange(n_art))), shape=(m, n_art)
        )

        self.m, self.n, self.n_art = m, n, n_art
        self.art_start = n + m
        self.A = sp.hstack([p.a, sp.identity(m, format="csc"), art], format="csc")
        self.lo = np.concatenate([p.lo, s_lo, np.zeros(n_art)])
        self.hi = np.concatenate([p.hi, s_hi, np.full(n_art, np.inf)])
        self.x = np.concatenate([x0, clipped, np.zeros(n_art)])
        self.basis = np.arange(n, n + m)
        self.basis[art_rows] = self.art_start + np.arange(n_art)
        self.is_basic = np.zeros(n + m + n_art, dtype=bool)
        self.is_basic[self.basis] = True
        self.b_scale = 1.0 + (float(np.abs(p.b).max()) if m else 0.0)

    # -- linear algebra -------------------------------------------------

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        start, end = self.A.indptr[j], self.A.indptr[j + 1]
        col[self.A.indices[start:end]] = self.A.data[start:end]
        return col

    def _refactor(self) -> None:
        self.factor = _BasisFactor(self.A[:, self.basis])
        nonbasic = ~self.is_basic
        rhs = self.p.b - self.A[:, np.flatnonzero(nonbasic)] @ self.x[nonbasic]
        self.x[self.basis] = self.factor.ftran(rhs)

    # -- iteration ------------------------------------------------------

    def _price(self, d: np.ndarray, bland: bool) -> tuple[int, int]:
        tol = self.tol.optimality
        nonbasic = ~self.is_basic
        up = nonbasic & (self.x < self.hi) & (d < -tol)
        down = nonbasic & (self.x > self.lo) & (d > tol)
        score = np.where(up | down, np.abs(d), 0.0)
        candidates = np.flatnonzero(score > 0)
        if candidates.size == 0:
            return -1, 0
        q = int(candidates[0]) if bland else int(np.argmax(score))
        return q, 1 if up[q] else -1

    def _ratio(
        self, alpha: np.ndarray, direction: int, q: int, bland: bool
    ) -> tuple[float, int]:
        rate = -direction * alpha
        xb = self.x[self.basis]
        lob = self.lo[self.basis]
        hib = self.hi[self.basis]
        steps = np.full(self.m, np.inf)
        dec = rate < -PIVOT_TOL
        inc = rate > PIVOT_TOL
        steps[dec] = (xb[dec] - lob[dec]) / -rate[dec]
        steps[inc] = (hib[inc] - xb[inc]) / rate[inc]
        steps = np.maximum(steps, 0.0)
        flip = self.hi[q] - self.lo[q]
        best = float(steps.min()) if self.m else np.inf
        if flip <= best:
            return float(flip), -1
        if not np.isfinite(best):
            return np.inf, -1
        ties = np.flatnonzero(steps <= best * (1 + 1e-9) + DEGENERATE_STEP)
        if bland:
            r = ties[np.argmin(self.basis[ties])]
        else:
            r = ties[np.argmax(np.abs(alpha[ties]))]
        return best, int(r)

    def _pivot(self, r: int, q: int, alpha: np.ndarray) -> None:
        self.is_basic[self.basis[r]] = False
        self.basis[r] = q
        self.is_basic[q] = True
        self.factor.update(r, alpha)

    def _run(self, cost: np.ndarray) -> str:
        degenerate = 0
        while True:
            if self.factor.n_updates >= REFACTOR_EVERY:
                self._refactor()
            self.y = self.factor.btran(cost[self.basis])
            d = cost - self.A.T @ self.y
            bland = degenerate >= BLAND_AFTER
            q, direction = self._price(d, bland)
            if q < 0:
                return "optimal"
            if self.iterations >= self.max_iterations:
                return "limit"
            self.iterations += 1

            alpha = self.factor.ftran(self._column(q))
            step, r = self._ratio(alpha, direction, q, bland)
            if not np.isfinite(step):
                ray = np.zeros(self.A.shape[1])
                ray[q] = direction
                ray[self.basis] = -direction * alpha
                self.ray = ray[: self.n]
                return "unbounded"

            self.x[self.basis] -= step * direction * alpha
            if r < 0:
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                degenerate = 0
                continue
            leaving = self.basis[r]
            self.x[q] += step * direction
            self.x[leaving] = self.lo[leaving] if direction * alpha[r] > 0 else self.hi[leaving]
            self._pivot(r, q, alpha)
            degenerate = degenerate + 1 if step <= DEGENERATE_STEP else 0
            if degenerate == BLAND_AFTER:
                logger.debug(f"{self.p.name}: degeneracy streak, switching to Bland's rule")

    def _drive_out_artificials(self) -> None:
        for r in range(self.m):
            leaving = self.basis[r]
            if leaving < self.art_start:
                continue
            unit = np.zeros(self.m)
            unit[r] = 1.0
            pivots = self.A.T @ self.factor.btran(unit)
            pivots[self.is_basic] = 0.0
            pivots[self.art_start :] = 0.0
            candidates = np.flatnonzero(np.abs(pivots) > PIVOT_TOL)
            if candidates.size == 0:
                # Redundant row; the artificial stays basic, fixed at zero.
                continue
            q = int(candidates[np.argmax(np.abs(pivots[candidates]))])
            self.x[leaving] = 0.0
            self._pivot(r, q, self.factor.ftran(self._column(q)))
        self._refactor()

    # -- driver ---------------------------------------------------------

    def _failure(self, message: str) -> LpSolution:
        return LpSolution(
            status=LpStatus.SOLVER_FAILURE,
            x=None,
            duals=None,
            reduced_costs=None,
            objective=np.nan,
            iterations=self.iterations,
            message=message,
        )

    def solve(self) -> LpSolution:
        p = self.p
        try:
            self._refactor()
            if self.n_art:
                phase_one = np.zeros(self.A.shape[1])
                phase_one[self.art_start :] = 1.0
                outcome = self._run(phase_one)
                if outcome != "optimal":
                    return self._failure(f"phase 1 stopped: {outcome}")
                infeasibility = float(self.x[self.basis[self.basis >= self.art_start]].sum())
                if infeasibility > self.tol.feasibility * self.b_scale:
                    return LpSolution(
                        status=LpStatus.INFEASIBLE,
                        x=None,
                        duals=None,
                        reduced_costs=None,
                        objective=np.inf,
                        iterations=self.iterations,
                        certificate=-self.y,
                        message=f"phase 1 infeasibility {infeasibility:.3g}",
                    )
                self.hi[self.art_start :] = 0.0
                self._drive_out_artificials()

            cost = np.zeros(self.A.shape[1])
            cost[: self.n] = p.c
            outcome = self._run(cost)
            if outcome == "limit":
                return self._failure(f"iteration limit {self.max_iterations} reached")
            if outcome == "unbounded":
                return LpSolution(
                    status=LpStatus.UNBOUNDED,
                    x=self.x[: self.n].copy(),
                    duals=None,
                    reduced_costs=None,
                    objective=-np.inf,
                    iterations=self.iterations,
                    certificate=self.ray,
                )
            self._refactor()
            self.y = self.factor.btran(cost[self.basis])
        except _SingularBasisError as e:
            return self._failure(f"singular basis: {e}")

        x = self.x[: self.n].copy()
        duals = -self.y
        return LpSolution(
            status=LpStatus.OPTIMAL,
            x=x,
            duals=duals,
            reduced_costs=p.c + p.a.T @ duals,
            objective=p.objective_value(x),
            iterations=self.iterations,
        )


def _solve_without_rows(p: LpProblem) -> LpSolution:
    x = np.where(np.isfinite(p.lo), p.lo, np.where(np.isfinite(p.hi), p.hi, 0.0))
    x = np.where(p.c > 0, p.lo, np.where(p.c < 0, p.hi, x))
    unbounded = ~np.isfinite(x)
    if unbounded.any():
        j = int(np.flatnonzero(unbounded)[0])
        ray = np.zeros(p.n_cols)
        ray[j] = -np.sign(p.c[j])
        return LpSolution(LpStatus.UNBOUNDED, None, None, None, -np.inf, certificate=ray)
    return LpSolution(
        LpStatus.OPTIMAL, x, np.zeros(0), p.c.copy(), p.objective_value(x)
    )


def solve_lp(
    p: LpProblem,
    tol: Tolerances | None = None,
    *,
    max_iterations: int | None = None,
) -> LpSolution:
    """Solve ``p`` to optimality with the two-phase revised simplex.

    Pricing is Dantzig's rule until a streak of degenerate pivots, then
    Bland's rule until the next nondegenerate pivot. The result is
    deterministic for identical input.

    Args:
        p: Problem to solve.
        tol: Feasibility and optimality tolerances.
        max_iterations: Pivot cap; defaults to a multiple of the problem size.

    Returns:
        LpSolution: Optimal with duals, or Infeasible / Unbounded with a
        certificate, or SolverFailure on iteration limit or singular basis.

    """
    tol = tol or Tolerances()
    if p.n_rows == 0:
        return _solve_without_rows(p)
    cap = max_iterations or 20 * (p.n_rows + p.n_cols) + 5000
    solution = _Simplex(p, tol, cap).solve()
    logger.debug(
        f"LP {p.name}: {solution.status} after {solution.iterations} iterations "
        f"({p.n_rows} rows, {p.n_cols} cols)"
    )
    return solution


def _bound_terms(p: LpProblem, r: np.ndarray, zero_tol: float) -> float:
    """Return sum_j min over [lo_j, hi_j] of r_j x_j, or -inf."""
    pos = r > 0
    neg = r < 0
    if (pos & ~np.isfinite(p.lo) & (r > zero_tol)).any():
        return -np.inf
    if (neg & ~np.isfinite(p.hi) & (r < -zero_tol)).any():
        return -np.inf
    use_lo = pos & np.isfinite(p.lo)
    use_hi = neg & np.isfinite(p.hi)
    return float(r[use_lo] @ p.lo[use_lo] + r[use_hi] @ p.hi[use_hi])


def dual_value(p: LpProblem, duals: np.ndarray, zero_tol: float = 1e-9) -> float:
    """Lagrangian dual objective of ``p`` at the given row multipliers."""
    r = p.c + p.a.T @ duals
    return p.offset - float(p.b @ duals) + _bound_terms(p, r, zero_tol)


def farkas_bound(p: LpProblem, certificate: np.ndarray) -> float:
    """Infeasibility proof value; positive when ``certificate`` proves ``p`` empty.

    For any feasible ``x``, sign-valid multipliers give
    ``certificate.(A x - b) <= 0``, which contradicts a positive bound.
    """
    r = p.a.T @ certificate
    return -float(p.b @ certificate) + _bound_terms(p, r, 1e-9)


def check_duality_gap(p: LpProblem, s: LpSolution) -> float:
    """Absolute gap between primal objective and the dual objective of ``s.duals``.

    The dual side is recomputed from the problem data only.

    Returns:
        float: Nonnegative gap (``inf`` when the multipliers are dual infeasible).

    Raises:
        ContractError: If ``s`` is not optimal.

    """
    if s.status is not LpStatus.OPTIMAL or s.x is None or s.duals is None:
        msg = f"duality gap needs an optimal solution, got {s.status}"
        raise ContractError(msg)
    return abs(p.objective_value(s.x) - dual_value(p, s.duals))


def lp_residuals(p: LpProblem, s: LpSolution, tol: Tolerances | None = None) -> LpResiduals:
    """Primal, dual and complementary-slackness residuals of an optimal solution.

    Raises:
        ContractError: If ``s`` is not optimal.

    """
    if s.status is not LpStatus.OPTIMAL or s.x is None or s.duals is None:
        msg = f"residuals need an optimal solution, got {s.status}"
        raise ContractError(msg)
    tol = tol or Tolerances()
    x, lam = s.x, s.duals
    senses = np.array([sense.value for sense in p.senses])
    le = senses == RowSense.LE.value
    ge = senses == RowSense.GE.value
    eq = senses == RowSense.EQ.value
    slack = p.b - p.a @ x

    row_viol = np.where(le, np.maximum(-slack, 0.0), 0.0)
    row_viol = np.maximum(row_viol, np.where(ge, np.maximum(slack, 0.0), 0.0))
    row_viol = np.maximum(row_viol, np.where(eq, np.abs(slack), 0.0))
    bound_viol = np.maximum(np.maximum(p.lo - x, 0.0), np.maximum(x - p.hi, 0.0))
    primal = float(max(row_viol.max(initial=0.0), bound_viol.max(initial=0.0)))

    r = p.c + p.a.T @ lam
    near = tol.feasibility
    at_lo = np.isfinite(p.lo) & (x - p.lo <= near)
    at_hi = np.isfinite(p.hi) & (p.hi - x <= near)
    rc_viol = np.where(
        at_lo & at_hi,
        0.0,
        np.where(at_lo, np.maximum(-r, 0.0), np.where(at_hi, np.maximum(r, 0.0), np.abs(r))),
    )
    sign_viol = np.where(le, np.maximum(-lam, 0.0), np.where(ge, np.maximum(lam, 0.0), 0.0))
    dual = float(max(rc_viol.max(initial=0.0), sign_viol.max(initial=0.0)))

    with np.errstate(invalid="ignore"):
        dist_lo = np.where(np.isfinite(p.lo), x - p.lo, np.inf)
        dist_hi = np.where(np.isfinite(p.hi), p.hi - x, np.inf)
        col_comp = np.where(r > 0, r * dist_lo, np.where(r < 0, -r * dist_hi, 0.0))
    col_comp = np.where(np.isnan(col_comp), 0.0, col_comp)
    row_comp = np.abs(lam * slack)
    complementarity = float(
        max(row_comp.max(initial=0.0), np.abs(col_comp).max(initial=0.0))
    )
    return LpResiduals(primal=primal, dual=dual, complementarity=complementarity)
