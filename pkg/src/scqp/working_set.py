"""Working-set strategy for sequences of related bound-constrained QPs.

Variables guessed to sit on a bound are pinned there and eliminated; the
remaining small QP is solved with :func:`scqp.qp.solve_qp`. Bound multipliers
of the pinned variables are recovered from full-problem stationarity and every
pinned variable with a negative multiplier is released. A released set never
grows back, so the number of reduced solves is at most ``|working set| + 1``.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateEqualities,
    DimensionMismatch,
    EmptyFreeSet,
    Infeasible,
    InfeasibleWorkingSet,
)
from .qp import DEFAULT_QP_SETTINGS, QpProblem, QpSolution, solve_qp

__all__ = [
    "WorkingSet",
    "ReducedProblem",
    "ActiveSetResult",
    "WarmStartCache",
    "reduce_problem",
    "recover_multipliers",
    "solve_with_working_set",
    "warm_start_from",
    "top_k_working_set",
]

DROP_TOL = 1e-10
WARM_START_TOL = 1e-9


@dataclass(frozen=True)
class WorkingSet:
    """Index sets of variables pinned to their lower / upper bounds (0-based)."""

    lower_fixed: frozenset = frozenset()
    upper_fixed: frozenset = frozenset()

    def __post_init__(self):
        lo = frozenset(int(i) for i in self.lower_fixed)
        up = frozenset(int(i) for i in self.upper_fixed)
        if lo & up:
            raise ValueError(f"indices pinned to both bounds: {sorted(lo & up)}")
        object.__setattr__(self, "lower_fixed", lo)
        object.__setattr__(self, "upper_fixed", up)

    def __len__(self):
        return len(self.lower_fixed) + len(self.upper_fixed)

    @property
    def pinned(self):
        return self.lower_fixed | self.upper_fixed

    def validate(self, problem):
        n = problem.n
        bad = [i for i in self.pinned if not 0 <= i < n]
        if bad:
            raise ValueError(f"working-set indices out of range: {sorted(bad)}")
        if any(not np.isfinite(problem.l[i]) for i in self.lower_fixed):
            raise ValueError("cannot pin a variable to an infinite lower bound")
        if any(not np.isfinite(problem.u[i]) for i in self.upper_fixed):
            raise ValueError("cannot pin a variable to an infinite upper bound")


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    """QP over the free variables of a working set.

    ``inner`` is ``None`` when every variable is pinned. ``offset`` is the
    objective contribution of the pinned variables, so that
    ``inner.objective(w_free) + offset == problem.objective(full_w)``.
    """

    inner: QpProblem | None
    free: np.ndarray
    pinned: np.ndarray
    pinned_values: np.ndarray
    offset: float
    n: int

    def expand(self, w_free):
        w = np.empty(self.n)
        w[self.pinned] = self.pinned_values
        if self.free.size:
            w[self.free] = w_free
        return w


def reduce_problem(problem: QpProblem, ws: WorkingSet, tol: float = 1e-10) -> ReducedProblem:
    """Eliminate the pinned variables of ``ws`` from ``problem``.

    Raises
    ------
    EmptyFreeSet
        If every variable is pinned and the pinned point violates ``Aw = b``.
    InfeasibleWorkingSet
        If an equality row loses all its free variables but is not satisfied.
    """
    ws.validate(problem)
    n = problem.n
    pinned_mask = np.zeros(n, dtype=bool)
    pinned_mask[list(ws.pinned)] = True
    free = np.flatnonzero(~pinned_mask)
    pinned = np.flatnonzero(pinned_mask)
    wp = np.array([problem.l[i] if i in ws.lower_fixed else problem.u[i] for i in pinned])
    H, c, A, b = problem.H, problem.c, problem.A, problem.b
    offset = float(c[pinned] @ wp + 0.5 * wp @ H[np.ix_(pinned, pinned)] @ wp)
    rhs = b - A[:, pinned] @ wp
    if free.size == 0:
        if problem.m and np.abs(rhs).max() > tol * max(1.0, np.abs(b).max()):
            raise EmptyFreeSet("all variables pinned and the pinned point violates Aw = b")
        return ReducedProblem(None, free, pinned, wp, offset, n)
    A_f = A[:, free]
    keep = np.abs(A_f).max(axis=1, initial=0.0) > 0.0
    if np.any(np.abs(rhs[~keep]) > tol * max(1.0, np.abs(b).max(initial=0.0))):
        raise InfeasibleWorkingSet("an equality row has no free variable left and is violated")
    inner = QpProblem(
        c=c[free] + H[np.ix_(free, pinned)] @ wp,
        H=H[np.ix_(free, free)],
        A=A_f[keep],
        b=rhs[keep],
        l=problem.l[free],
        u=problem.u[free],
    )
    return ReducedProblem(inner, free, pinned, wp, offset, n)


def recover_multipliers(problem, ws, full_w, nu, free_beta_l=None, free_beta_u=None):
    """Bound multipliers of the full problem from a reduced solve.

    Pinned variables get the stationarity residual ``(c + Hw - A'nu)_i``
    (negated for upper pins); free variables keep the multipliers of the
    reduced solve, passed as full-length arrays.
    """
    n = problem.n
    full_w = np.asarray(full_w, dtype=float)
    if full_w.size != n or np.size(nu) != problem.m:
        raise DimensionMismatch("w / nu do not match the problem")
    grad = problem.c + problem.H @ full_w - problem.A.T @ np.asarray(nu, dtype=float)
    beta_l = np.zeros(n) if free_beta_l is None else np.array(free_beta_l, dtype=float)
    beta_u = np.zeros(n) if free_beta_u is None else np.array(free_beta_u, dtype=float)
    lo = sorted(ws.lower_fixed)
    up = sorted(ws.upper_fixed)
    beta_l[lo] = grad[lo]
    beta_u[lo] = 0.0
    beta_u[up] = -grad[up]
    beta_l[up] = 0.0
    return beta_l, beta_u


class ActiveSetResult(NamedTuple):
    solution: QpSolution
    iterations: int
    working_set: WorkingSet
    objectives: tuple
    sizes: tuple
    fell_back: bool


def _solve_once(problem, ws, settings):
    red = reduce_problem(problem, ws)
    n = problem.n
    if red.inner is None:
        w = red.expand(np.zeros(0))
        nu = np.zeros(problem.m)
        # nu is undetermined here; pick the least-squares fit of stationarity
        if problem.m:
            grad = problem.c + problem.H @ w
            nu = np.linalg.lstsq(problem.A.T, grad, rcond=None)[0]
        fl, fu = np.zeros(n), np.zeros(n)
        gi_iters = 0
        lower, upper = (), ()
    else:
        try:
            inner = solve_qp(red.inner, settings)
        except (Infeasible, DegenerateEqualities) as exc:
            raise InfeasibleWorkingSet(str(exc)) from exc
        w = red.expand(inner.w)
        nu = np.zeros(problem.m)
        nu_inner = inner.nu
        # rows dropped by the reduction keep a zero multiplier
        if problem.m and nu_inner.size != problem.m:
            keep = np.abs(problem.A[:, red.free]).max(axis=1) > 0.0
            nu[keep] = nu_inner
        else:
            nu = nu_inner.copy()
        fl, fu = np.zeros(n), np.zeros(n)
        fl[red.free] = inner.beta_l
        fu[red.free] = inner.beta_u
        gi_iters = inner.iterations
        lower = tuple(int(red.free[i]) for i in inner.lower_active)
        upper = tuple(int(red.free[i]) for i in inner.upper_active)
    beta_l, beta_u = recover_multipliers(problem, ws, w, nu, fl, fu)
    return w, nu, beta_l, beta_u, gi_iters, lower, upper


def solve_with_working_set(problem: QpProblem, ws0: WorkingSet | None = None,
                           settings=DEFAULT_QP_SETTINGS, drop_tol: float = DROP_TOL) -> ActiveSetResult:
    """Solve ``problem`` starting from the guessed working set ``ws0``.

    Every pinned variable with a multiplier below ``-drop_tol`` is released
    at once; iteration stops when all pinned multipliers are nonnegative. If
    the initial working set admits no feasible completion the solve restarts
    once from the empty working set.

    Returns
    -------
    ActiveSetResult
        Final solution, number of reduced solves, final working set, the
        objective and working-set size after every reduced solve, and whether
        the empty-set fallback was taken.
    """
    ws = ws0 if ws0 is not None else WorkingSet()
    fell_back = False
    while True:
        try:
            return _iterate(problem, ws, settings, drop_tol, fell_back)
        except InfeasibleWorkingSet:
            if fell_back or len(ws) == 0:
                raise Infeasible("QP has no feasible point") from None
            ws, fell_back = WorkingSet(), True


def _iterate(problem, ws0, settings, drop_tol, fell_back):
    ws = ws0
    bound = len(ws0) + 1
    objectives, sizes = [], []
    total_gi = 0
    for it in range(1, bound + 1):
        w, nu, beta_l, beta_u, gi_iters, lower, upper = _solve_once(problem, ws, settings)
        total_gi += gi_iters
        q = problem.objective(w)
        if objectives and q > objectives[-1] + 1e-12 * max(1.0, abs(objectives[-1])):
            raise RuntimeError(
                f"working-set objective increased from {objectives[-1]!r} to {q!r}"
            )
        objectives.append(q)
        sizes.append(len(ws))
        drop_l = {i for i in ws.lower_fixed if beta_l[i] < -drop_tol}
        drop_u = {i for i in ws.upper_fixed if beta_u[i] < -drop_tol}
        if not drop_l and not drop_u:
            lower_on = set(ws.lower_fixed) | set(lower)
            upper_on = set(ws.upper_fixed) | set(upper)
            sol = QpSolution(
                w=w, nu=nu, beta_l=beta_l, beta_u=beta_u, objective=q, iterations=total_gi,
                lower_active=tuple(sorted(lower_on)), upper_active=tuple(sorted(upper_on)),
            )
            return ActiveSetResult(sol, it, ws, tuple(objectives), tuple(sizes), fell_back)
        ws = WorkingSet(ws.lower_fixed - drop_l, ws.upper_fixed - drop_u)
    raise RuntimeError("working-set iteration exceeded |L u U| + 1 reduced solves")


def warm_start_from(previous: QpSolution, problem: QpProblem, tol: float = WARM_START_TOL) -> WorkingSet:
    """Working set of the bounds that ``previous`` touches within ``tol``."""
    w = np.asarray(previous.w, dtype=float)
    if w.size != problem.n:
        raise DimensionMismatch(f"previous solution has {w.size} entries, problem has {problem.n}")
    l, u = problem.l, problem.u
    lower = np.isfinite(l) & (w <= l + tol)
    upper = np.isfinite(u) & (w >= u - tol) & ~lower
    return WorkingSet(frozenset(np.flatnonzero(lower).tolist()),
                      frozenset(np.flatnonzero(upper).tolist()))


def top_k_working_set(problem: QpProblem, k: int) -> WorkingSet:
    """Pin every variable except the ``k`` with the most negative linear cost."""
    if k >= problem.n:
        return WorkingSet()
    order = np.argsort(problem.c, kind="stable")
    rest = [int(i) for i in order[k:] if np.isfinite(problem.l[i])]
    return WorkingSet(frozenset(rest))


@dataclass
class WarmStartCache:
    """Last solution of a QP sequence plus reduced-solve statistics.

    Owned by the caller; one cache per sequence of related QPs.
    """

    initial: str = "empty"
    top_k: int = 10
    tol: float = WARM_START_TOL
    settings: object = DEFAULT_QP_SETTINGS
    last: QpSolution | None = None
    solves: int = 0
    reduced_solves: list = field(default_factory=list)

    def initial_working_set(self, problem):
        if self.last is not None and self.last.w.size == problem.n:
            return warm_start_from(self.last, problem, self.tol)
        if self.initial == "top_k":
            return top_k_working_set(problem, self.top_k)
        return WorkingSet()

    def solve(self, problem: QpProblem) -> ActiveSetResult:
        result = solve_with_working_set(problem, self.initial_working_set(problem), self.settings)
        self.last = result.solution
        self.solves += 1
        self.reduced_solves.append(result.iterations)
        return result
