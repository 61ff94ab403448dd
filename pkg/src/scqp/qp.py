"""Dense strictly convex QP solver with equality constraints and variable bounds.

Solves::

    minimize    c'w + 1/2 w'Hw
    subject to  Aw = b,  l <= w <= u

with a dual active-set method of Goldfarb-Idnani type. The method works on the
Cholesky factor of ``H`` and starts from the unconstrained minimizer, so no
feasible starting point is needed. Bounds are handled as unit-normal
constraints directly (their normals are never materialized), which keeps the
cost of a violation scan at O(N).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import (
    DegenerateEqualities,
    DimensionMismatch,
    Infeasible,
    MaxIterations,
    NotPositiveDefinite,
)

__all__ = [
    "QpSettings",
    "QpProblem",
    "QpSolution",
    "solve_qp",
    "kkt_residual",
    "DEFAULT_QP_SETTINGS",
]


@dataclass(frozen=True)
class QpSettings:
    """Tolerances for the QP layer.

    ``bound_tol`` is the slack below which the dual method treats a bound as
    satisfied; it is scaled by ``max(1, |bound|)``.
    """

    feasibility_tol: float = 1e-8
    stationarity_tol: float = 1e-8
    symmetry_tol: float = 1e-10
    pd_threshold: float = 1e-12
    bound_tol: float = 1e-12
    max_iter: int | None = None
    polish: bool = True


DEFAULT_QP_SETTINGS = QpSettings()


def _as_vector(value, name):
    arr = np.array(value, dtype=float).reshape(-1)
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN")
    return arr


@dataclass(frozen=True, eq=False)
class QpProblem:
    """A dense QP instance. Infinite bounds are encoded as ``-inf`` / ``+inf``."""

    c: np.ndarray
    H: np.ndarray
    A: np.ndarray
    b: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        c = _as_vector(self.c, "c")
        n = c.size
        H = np.array(self.H, dtype=float)
        if H.shape != (n, n):
            raise DimensionMismatch(f"H has shape {H.shape}, expected {(n, n)}")
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, n))
        A = A.reshape(-1, n) if A.ndim == 1 else A
        if A.shape[1] != n:
            raise DimensionMismatch(f"A has {A.shape[1]} columns, expected {n}")
        b = _as_vector(self.b, "b") if np.size(self.b) else np.zeros(0)
        if b.size != A.shape[0]:
            raise DimensionMismatch(f"b has length {b.size}, expected {A.shape[0]}")
        l = _as_vector(self.l, "l")
        u = _as_vector(self.u, "u")
        if l.size != n or u.size != n:
            raise DimensionMismatch("bound vectors must have length N")
        if not (np.isfinite(c).all() and np.isfinite(H).all() and np.isfinite(A).all()
                and np.isfinite(b).all()):
            raise ValueError("c, H, A, b must be finite")
        if np.any(l > u):
            raise Infeasible("lower bound exceeds upper bound")
        if np.any(l == np.inf) or np.any(u == -np.inf):
            raise Infeasible("bounds exclude every finite point")
        scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        asym = float(np.abs(H - H.T).max(initial=0.0))
        if asym > DEFAULT_QP_SETTINGS.symmetry_tol * scale:
            raise ValueError(f"H is not symmetric (max asymmetry {asym:.3e})")
        H = 0.5 * (H + H.T)
        for name, value in (("c", c), ("H", H), ("A", A), ("b", b), ("l", l), ("u", u)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def simplex(cls, c, H):
        """QP over the long-only, fully invested set {w >= 0, 1'w = 1}."""
        c = np.asarray(c, dtype=float).reshape(-1)
        n = c.size
        return cls(c=c, H=H, A=np.ones((1, n)), b=np.ones(1),
                   l=np.zeros(n), u=np.full(n, np.inf))

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return self.b.size

    def objective(self, w):
        w = np.asarray(w, dtype=float)
        return float(self.c @ w + 0.5 * w @ self.H @ w)


@dataclass(frozen=True, eq=False)
class QpSolution:
    w: np.ndarray
    nu: np.ndarray
    beta_l: np.ndarray
    beta_u: np.ndarray
    objective: float
    iterations: int
    lower_active: tuple = field(default=())
    upper_active: tuple = field(default=())


def _cholesky(H, threshold):
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization of H failed") from exc
    pivots = np.diag(L) ** 2
    if pivots.min() < threshold * np.diag(H).max():
        raise NotPositiveDefinite(
            f"Cholesky pivot {pivots.min():.3e} below threshold "
            f"{threshold:.1e} x max diag"
        )
    return L


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


class _DualActiveSet:
    """State of one Goldfarb-Idnani run.

    Constraint ids: ``0..m-1`` equalities, ``m+i`` the lower bound of ``w_i``,
    ``m+n+i`` the upper bound. The factorization is kept as ``J = L^{-T} Q``
    with ``J' N = [R; 0]`` for the matrix ``N`` of active normals.
    """

    def __init__(self, problem, settings):
        self.p = problem
        self.settings = settings
        n, m = problem.n, problem.m
        self.n, self.m = n, m
        L = _cholesky(problem.H, settings.pd_threshold)
        self.J = solve_triangular(L, np.eye(n), lower=True).T.copy()
        self.x = -cho_solve((L, True), problem.c)
        self.R = np.zeros((n, n))
        self.mult = np.zeros(n)
        self.active = []
        self.eq_sign = np.ones(m)
        self.q = 0
        self.iterations = 0
        self.max_iter = settings.max_iter or 50 * (n + m) + 100
        self.lower_on = np.zeros(n, dtype=bool)
        self.upper_on = np.zeros(n, dtype=bool)

    # constraint primitives -------------------------------------------------

    def _jt_normal(self, cid):
        m, n = self.m, self.n
        if cid < m:
            return self.J.T @ (self.eq_sign[cid] * self.p.A[cid])
        if cid < m + n:
            return self.J[cid - m].copy()
        return -self.J[cid - m - n]

    def _slack(self, cid):
        m, n, p = self.m, self.n, self.p
        if cid < m:
            return self.eq_sign[cid] * (p.A[cid] @ self.x - p.b[cid])
        if cid < m + n:
            i = cid - m
            return self.x[i] - p.l[i]
        i = cid - m - n
        return p.u[i] - self.x[i]

    # factorization updates --------------------------------------------------

    def _append(self, cid, d, u_new):
        q = self.q
        d2 = d[q:]
        norm = np.linalg.norm(d2)
        alpha = -norm if d2[0] >= 0 else norm
        v = d2.copy()
        v[0] -= alpha
        vv = v @ v
        if vv > 0.0:
            J2 = self.J[:, q:]
            self.J[:, q:] = J2 - np.outer(J2 @ v, v) * (2.0 / vv)
        self.R[:q, q] = d[:q]
        self.R[q, q] = alpha
        self.mult[q] = u_new
        self.active.append(cid)
        self.q += 1
        self._flag(cid, True)

    def _drop(self, k):
        q = self.q
        R, J = self.R, self.J
        self._flag(self.active[k], False)
        R[:, k:q - 1] = R[:, k + 1:q]
        R[:, q - 1] = 0.0
        for j in range(k, q - 1):
            cs, sn = _givens(R[j, j], R[j + 1, j])
            if sn == 0.0:
                continue
            rows = R[j:j + 2, j:q - 1].copy()
            R[j, j:q - 1] = cs * rows[0] + sn * rows[1]
            R[j + 1, j:q - 1] = -sn * rows[0] + cs * rows[1]
            R[j + 1, j] = 0.0
            cols = J[:, j:j + 2].copy()
            J[:, j] = cs * cols[:, 0] + sn * cols[:, 1]
            J[:, j + 1] = -sn * cols[:, 0] + cs * cols[:, 1]
        R[q - 1, :] = 0.0
        self.mult[k:q - 1] = self.mult[k + 1:q]
        self.mult[q - 1] = 0.0
        del self.active[k]
        self.q -= 1

    def _flag(self, cid, on):
        m, n = self.m, self.n
        if cid < m:
            return
        if cid < m + n:
            self.lower_on[cid - m] = on
        else:
            self.upper_on[cid - m - n] = on

    # main steps -----------------------------------------------------------

    def add(self, cid):
        """Drive constraint ``cid`` to activity, dropping blockers on the way."""
        u_new = 0.0
        m = self.m
        while True:
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise MaxIterations("dual active-set method did not terminate")
            q = self.q
            d = self._jt_normal(cid)
            d2 = d[q:]
            z = self.J[:, q:] @ d2
            if q:
                r = solve_triangular(self.R[:q, :q], d[:q], lower=False)
            else:
                r = np.zeros(0)

            t1, k = np.inf, -1
            if q:
                ineq = np.fromiter((a >= m for a in self.active), bool, q)
                cand = ineq & (r > 1e-14 * max(1.0, np.abs(r).max()))
                if cand.any():
                    idx = np.flatnonzero(cand)
                    ratios = self.mult[idx] / r[idx]
                    j = int(np.argmin(ratios))
                    t1, k = max(float(ratios[j]), 0.0), int(idx[j])

            zn = float(d2 @ d2)
            if np.sqrt(zn) <= 1e-12 * max(1.0, np.linalg.norm(d)):
                t2 = np.inf
            else:
                t2 = max(-self._slack(cid) / zn, 0.0)

            if t1 == np.inf and t2 == np.inf:
                if cid < m:
                    raise DegenerateEqualities("equality rows are linearly dependent")
                raise Infeasible("constraints admit no feasible point")
            if t2 == np.inf:
                self.mult[:q] -= t1 * r
                u_new += t1
                self._drop(k)
                continue
            t = min(t1, t2)
            self.x = self.x + t * z
            self.mult[:q] -= t * r
            u_new += t
            if t2 <= t1:
                self._append(cid, d, u_new)
                return
            self._drop(k)

    def most_violated(self):
        p = self.p
        x = self.x
        with np.errstate(invalid="ignore"):
            s_l = np.where(self.lower_on | ~np.isfinite(p.l), np.inf, x - p.l)
            s_u = np.where(self.upper_on | ~np.isfinite(p.u), np.inf, p.u - x)
        tol_l = self.settings.bound_tol * np.maximum(1.0, np.abs(np.where(np.isfinite(p.l), p.l, 0.0)))
        tol_u = self.settings.bound_tol * np.maximum(1.0, np.abs(np.where(np.isfinite(p.u), p.u, 0.0)))
        s = np.concatenate([s_l + tol_l, s_u + tol_u])
        j = int(np.argmin(s))
        if s[j] >= 0.0:
            return None
        return self.m + j

    def run(self):
        for i in range(self.m):
            resid = self.p.A[i] @ self.x - self.p.b[i]
            self.eq_sign[i] = -1.0 if resid > 0 else 1.0
            self.add(i)
        while True:
            cid = self.most_violated()
            if cid is None:
                break
            self.add(cid)
        return self._solution()

    def _solution(self):
        p, m, n = self.p, self.m, self.n
        nu = np.zeros(m)
        beta_l = np.zeros(n)
        beta_u = np.zeros(n)
        for pos, cid in enumerate(self.active):
            val = self.mult[pos]
            if cid < m:
                nu[cid] = self.eq_sign[cid] * val
            elif cid < m + n:
                beta_l[cid - m] = val
            else:
                beta_u[cid - m - n] = val
        return _make_solution(p, self.x.copy(), nu, beta_l, beta_u, self.iterations,
                              self.lower_on.copy(), self.upper_on.copy())


def _make_solution(problem, w, nu, beta_l, beta_u, iterations, lower_on, upper_on):
    return QpSolution(
        w=w,
        nu=nu,
        beta_l=beta_l,
        beta_u=beta_u,
        objective=problem.objective(w),
        iterations=iterations,
        lower_active=tuple(int(i) for i in np.flatnonzero(lower_on)),
        upper_active=tuple(int(i) for i in np.flatnonzero(upper_on)),
    )


def _polish(problem, sol):
    """Re-solve the KKT system on the identified active set.

    Walking from a far-away unconstrained minimizer (nearly singular ``H``)
    leaves cancellation error in the primal; pinning the active bounds exactly
    and solving the equality-constrained system removes it.
    """
    n, m = problem.n, problem.m
    lower_on = np.zeros(n, dtype=bool)
    lower_on[list(sol.lower_active)] = True
    upper_on = np.zeros(n, dtype=bool)
    upper_on[list(sol.upper_active)] = True
    pinned = lower_on | upper_on
    free = ~pinned
    nf = int(free.sum())
    if nf == 0:
        return None
    w = np.where(lower_on, problem.l, np.where(upper_on, problem.u, 0.0))
    H, c, A = problem.H, problem.c, problem.A
    rhs_top = -(c[free] + H[np.ix_(free, pinned)] @ w[pinned])
    rhs_bot = problem.b - A[:, pinned] @ w[pinned]
    K = np.zeros((nf + m, nf + m))
    K[:nf, :nf] = H[np.ix_(free, free)]
    K[:nf, nf:] = -A[:, free].T
    K[nf:, :nf] = A[:, free]
    try:
        sol_vec = np.linalg.solve(K, np.concatenate([rhs_top, rhs_bot]))
    except np.linalg.LinAlgError:
        return None
    w[free] = sol_vec[:nf]
    nu = sol_vec[nf:]
    grad = c + H @ w - A.T @ nu
    beta_l = np.where(lower_on, grad, 0.0)
    beta_u = np.where(upper_on, -grad, 0.0)
    return _make_solution(problem, w, nu, beta_l, beta_u, sol.iterations, lower_on, upper_on)


def solve_qp(problem: QpProblem, settings: QpSettings = DEFAULT_QP_SETTINGS) -> QpSolution:
    """Solve a strictly convex QP to its unique global minimizer.

    Parameters
    ----------
    problem : QpProblem
        Instance with symmetric positive-definite ``H`` and independent rows of ``A``.
    settings : QpSettings, optional
        Tolerances.

    Returns
    -------
    QpSolution
        Primal vector, equality multipliers ``nu`` and nonnegative bound
        multipliers satisfying ``c + Hw - A'nu - beta_l + beta_u = 0``.

    Raises
    ------
    NotPositiveDefinite
        If the Cholesky factorization of ``H`` fails or has a tiny pivot.
    DegenerateEqualities
        If the rows of ``A`` are linearly dependent.
    Infeasible
        If the dual method finds no step that reduces a violation.
    """
    sol = _DualActiveSet(problem, settings).run()
    if settings.polish:
        refined = _polish(problem, sol)
        if refined is not None and kkt_residual(problem, refined) <= kkt_residual(problem, sol):
            sol = refined
    return sol


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Largest violation of stationarity, feasibility, complementarity and dual sign."""
    w = np.asarray(solution.w, dtype=float)
    nu = np.asarray(solution.nu, dtype=float)
    bl = np.asarray(solution.beta_l, dtype=float)
    bu = np.asarray(solution.beta_u, dtype=float)
    n, m = problem.n, problem.m
    if w.size != n or nu.size != m or bl.size != n or bu.size != n:
        raise DimensionMismatch("solution dimensions do not match the problem")
    stat = problem.c + problem.H @ w - problem.A.T @ nu - bl + bu
    parts = [np.abs(stat).max(initial=0.0)]
    if m:
        parts.append(np.abs(problem.A @ w - problem.b).max())
    l, u = problem.l, problem.u
    fl, fu = np.isfinite(l), np.isfinite(u)
    parts.append(np.maximum(l[fl] - w[fl], 0.0).max(initial=0.0))
    parts.append(np.maximum(w[fu] - u[fu], 0.0).max(initial=0.0))
    parts.append(np.abs(bl[fl] * (w[fl] - l[fl])).max(initial=0.0))
    parts.append(np.abs(bu[fu] * (u[fu] - w[fu])).max(initial=0.0))
    # a multiplier on an infinite bound can never be complementary
    parts.append(np.abs(bl[~fl]).max(initial=0.0))
    parts.append(np.abs(bu[~fu]).max(initial=0.0))
    parts.append(np.maximum(-bl, 0.0).max(initial=0.0))
    parts.append(np.maximum(-bu, 0.0).max(initial=0.0))
    return float(max(parts))
