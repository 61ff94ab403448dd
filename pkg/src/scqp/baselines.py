"""Reference algorithms and a brute-force oracle.

All iterative baselines solve one QP per iteration over the budget simplex,
go through the same warm-started working-set layer as SCQP, record traces
with the same schema, and stop on the same test ``|w_{k+1} - w_k|_inf <= tol``.
"""

import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainViolation, NoFeasiblePoint, TooLarge
from .objectives import (
    MGSRP,
    MSRP,
    Kelly,
    MarketModel,
    MvpSpec,
    WorstCaseGMRP,
    eval_moments,
    objective_value,
)
from .qp import DEFAULT_QP_SETTINGS, QpProblem
from .solver import SolveTrace, TraceRecord, default_start
from .working_set import WarmStartCache

__all__ = [
    "BaselineSettings",
    "BaselineResult",
    "GridResult",
    "solve_dinkelbach",
    "solve_quadratic_transform",
    "solve_mm_worstcase",
    "solve_mm_kelly",
    "grid_oracle",
]


@dataclass(frozen=True)
class BaselineSettings:
    tol: float = 1e-6
    max_iter: int = 5000
    inner_tol: float = 1e-11
    inner_max_iter: int = 20000
    descent_tol: float = 1e-12
    qp: object = DEFAULT_QP_SETTINGS


DEFAULT_BASELINE = BaselineSettings()


@dataclass
class BaselineResult:
    w_star: np.ndarray
    trace: SolveTrace
    status: str
    objective: float
    iterations: int
    method: str
    message: str = ""

    @property
    def converged(self):
        return self.status == "Converged"


def _start(market, w0, model):
    if w0 is not None:
        return np.array(w0, dtype=float)
    return default_start(MvpSpec(model), market)


def _iterate(method, model, market, w0, step, settings, cache=None):
    """Shared driver: ``step(w, cache) -> (w_next, inner_qps)``."""
    t0 = time.monotonic()
    cache = cache or WarmStartCache(settings=settings.qp)
    w = _start(market, w0, model)
    trace = SolveTrace()
    f = objective_value(model, eval_moments(w, market))
    for k in range(settings.max_iter):
        before = cache.solves
        w_next = step(w, cache)
        change = float(np.abs(w_next - w).max())
        trace.append(TraceRecord(k=k, t=time.monotonic() - t0, f=f, step=change, residual=change,
                                 qp_iters=cache.solves - before,
                                 reduced_solves=sum(cache.reduced_solves[before:])))
        w = w_next
        f = objective_value(model, eval_moments(w, market))
        if change <= settings.tol:
            return BaselineResult(w, trace, "Converged", f, len(trace), method)
    return BaselineResult(w, trace, "MaxIterations", f, len(trace), method,
                          f"no convergence in {settings.max_iter} iterations")


def _qp(market, c, H, cache):
    return cache.solve(QpProblem.simplex(c, H)).solution.w


def _mm_worstcase_step(market, alpha, mu, sigma):
    def step(w, cache):
        y = float(w @ sigma @ w)
        return _qp(market, -mu, (alpha / math.sqrt(y)) * sigma, cache)
    return step


def solve_mm_worstcase(market: MarketModel, alpha: float = 1.0, settings=DEFAULT_BASELINE,
                       w0=None) -> BaselineResult:
    """MM for ``-x + alpha*sqrt(y)``: majorize ``sqrt(y)`` by ``y/(2 sqrt(y_k)) + sqrt(y_k)/2``."""
    model = WorstCaseGMRP(alpha)
    mu, sigma = market.mus[0], market.sigmas[0]
    result = _iterate("mm-worstcase", model, market, w0, _mm_worstcase_step(market, alpha, mu, sigma),
                      settings)
    _check_descent(result, settings)
    return result


def _check_descent(result, settings):
    f = np.append(result.trace.objectives, result.objective)
    rises = np.diff(f) > settings.descent_tol * np.maximum(1.0, np.abs(f[:-1]))
    if rises.any():
        k = int(np.argmax(rises))
        raise RuntimeError(f"{result.method}: objective rose at iteration {k} ({f[k]!r} -> {f[k + 1]!r})")


def _sharpe_model(rf, beta):
    return MSRP(rf) if beta == 0.5 else MGSRP(rf, beta)


def _check_start(model, market, w):
    m = eval_moments(w, market)
    objective_value(model, m)  # raises DomainViolation when x <= rf


def solve_dinkelbach(market: MarketModel, rf: float = 0.0, settings=DEFAULT_BASELINE, beta: float = 1.0,
                     w0=None) -> BaselineResult:
    """Dinkelbach's method for ``max (x - rf) / y**beta`` over the simplex, ``1/2 <= beta <= 1``.

    Each iteration minimizes ``-(x - rf) + t_k y**beta`` with
    ``t_k = (x_k - rf) / y_k**beta``. For ``beta = 1`` the subproblem is a QP;
    otherwise ``y**beta`` is concave in ``y`` and the subproblem is solved by
    an inner MM loop on its tangent majorizer.
    """
    if not 0.5 <= beta <= 1.0:
        raise ValueError("Dinkelbach here supports 1/2 <= beta <= 1")
    model = _sharpe_model(rf, beta)
    mu, sigma = market.mus[0], market.sigmas[0]
    _check_start(model, market, _start(market, w0, model))

    def step(w, cache):
        x, y = float(w @ mu), float(w @ sigma @ w)
        t = (x - rf) / y ** beta
        if beta == 1.0:
            return _qp(market, -mu, 2.0 * t * sigma, cache)
        v = w
        for _ in range(settings.inner_max_iter):
            yv = float(v @ sigma @ v)
            # y**beta <= yv**beta + beta yv**(beta-1) (y - yv)
            v_next = _qp(market, -mu, 2.0 * t * beta * yv ** (beta - 1.0) * sigma, cache)
            done = np.abs(v_next - v).max() <= settings.inner_tol
            v = v_next
            if done:
                break
        return v

    return _iterate("dinkelbach", model, market, w0, step, settings)


def solve_quadratic_transform(market: MarketModel, rf: float = 0.0, settings=DEFAULT_BASELINE,
                              w0=None) -> BaselineResult:
    """Quadratic transform for ``max (x - rf)^2 / y`` (MSRP with ``x > rf``).

    Subproblem: minimize ``-2 theta (x - rf) + theta^2 y`` with ``theta = (x_k - rf) / y_k``.
    """
    model = MSRP(rf)
    mu, sigma = market.mus[0], market.sigmas[0]
    _check_start(model, market, _start(market, w0, model))

    def step(w, cache):
        theta = (float(w @ mu) - rf) / float(w @ sigma @ w)
        return _qp(market, -2.0 * theta * mu, 2.0 * theta ** 2 * sigma, cache)

    return _iterate("qt", model, market, w0, step, settings)


def _kelly_value(mu, sigma, w):
    v = 1.0 + w @ mu
    return -math.log(v) + 0.5 * (w @ sigma @ w) / v ** 2


def solve_mm_kelly(market: MarketModel, settings=DEFAULT_BASELINE, w0=None) -> BaselineResult:
    """MM for the Kelly objective ``-log(1+x) + y / (2 (1+x)^2)`` with QP subproblems.

    The iteration follows the auxiliary-variable scheme ``a1 = sqrt(y_k)/(1+x_k)^2``,
    ``a2 = mu mu' w_k`` with ``a1 sqrt(y)`` majorized by
    ``a1 (y/(2 sqrt(y_k)) + sqrt(y_k)/2)`` and ``-log(1+x)`` by its tangent plus
    the curvature bound ``(1+min mu)^-2``. The ratio step of that scheme
    bounds the ratio term from below, so a step can overshoot; whenever the
    true objective would rise the step is replaced by the minimizer of a
    global quadratic upper bound built from a Hessian bound on the simplex.
    """
    model = Kelly()
    mu, sigma = market.mus[0], market.sigmas[0]
    v_min = 1.0 + float(mu.min())
    if v_min <= 0:
        raise DomainViolation("kelly requires 1 + mu_i > 0 for every asset")
    y_max = float(np.diag(sigma).max())
    curv = 1.0 / v_min ** 2
    mm = np.outer(mu, mu)
    # Hessian of the Kelly objective on the simplex is below c1 Sigma + c2 mu mu'
    c1 = 1.0 / v_min ** 2 + 2.0 * math.sqrt(y_max) / v_min ** 3
    c2 = 1.0 / v_min ** 2 + 3.0 * y_max / v_min ** 4 + 2.0 * math.sqrt(y_max) / v_min ** 3
    h_bound = c1 * sigma + c2 * mm

    def step(w, cache):
        x, y = float(w @ mu), float(w @ sigma @ w)
        v = 1.0 + x
        a1 = math.sqrt(y) / v ** 2
        a2 = mm @ w
        lin = 1.0 / v + curv * x
        c = -lin * mu - a1 ** 2 * (mu + a2)
        H = curv * mm + (a1 / math.sqrt(y)) * sigma
        w_new = _qp(market, c, H, cache)
        f = _kelly_value(mu, sigma, w)
        if _kelly_value(mu, sigma, w_new) <= f:
            return w_new
        grad = -(1.0 / v + y / v ** 3) * mu + (sigma @ w) / v ** 2
        return _qp(market, grad - h_bound @ w, h_bound, cache)

    _check_start(model, market, _start(market, w0, model))
    result = _iterate("mm-kelly", model, market, w0, step, settings)
    _check_descent(result, settings)
    return result


# ---------------------------------------------------------------------------
# grid oracle


class GridResult(NamedTuple):
    w: np.ndarray
    objective: float
    evaluated: int


def _lattice_values(spec, market, W):
    x = np.stack([W @ mu for mu in market.mus], axis=-1) if market.p else np.zeros((W.shape[0], 0))
    y = np.stack([np.einsum("ij,jk,ik->i", W, s, W) for s in market.sigmas], axis=-1)
    model = spec.objective
    with np.errstate(all="ignore"):
        f = np.asarray(model.value(x, y), dtype=float)
        ok = np.array(model.in_domain(x, y), dtype=bool)
    a = spec.floors(market.p)
    b = spec.caps(market.q)
    if market.p:
        ok &= (x >= a).all(axis=1)
    ok &= (y <= b).all(axis=1)
    return np.where(ok & np.isfinite(f), f, np.inf)


def _lattice(n, lo, hi, h):
    """Simplex points with coordinates on the grid ``h`` inside per-coordinate boxes."""
    if n == 1:
        return np.ones((1, 1))
    k_lo = np.ceil(lo / h - 1e-9).astype(int)
    k_hi = np.floor(hi / h + 1e-9).astype(int)
    total = int(round(1.0 / h))
    if n == 2:
        k = np.arange(max(k_lo[0], total - k_hi[1]), min(k_hi[0], total - k_lo[1]) + 1)
        return np.column_stack([k, total - k]) / total
    k1 = np.arange(k_lo[0], k_hi[0] + 1)
    k2 = np.arange(k_lo[1], k_hi[1] + 1)
    K1, K2 = np.meshgrid(k1, k2, indexing="ij")
    K3 = total - K1 - K2
    keep = (K3 >= k_lo[2]) & (K3 <= k_hi[2])
    return np.column_stack([K1[keep], K2[keep], K3[keep]]) / total


def grid_oracle(spec: MvpSpec, market: MarketModel, resolution: float = 1e-5) -> GridResult:
    """Best lattice point of the simplex honoring the mean-variance limits.

    Two assets are searched exhaustively at ``resolution``. Three assets are
    searched exhaustively at ``max(resolution, 1e-3)`` and then refined on
    successively finer lattices (factor 10) around the best candidates.

    Raises
    ------
    TooLarge
        More than three assets.
    NoFeasiblePoint
        No lattice point satisfies the limits inside the objective's domain.
    """
    n = market.n
    if n > 3:
        raise TooLarge(f"grid oracle handles at most 3 assets, got {n}")
    if not 0 < resolution <= 1:
        raise ValueError("resolution must lie in (0, 1]")
    steps = round(1.0 / resolution)
    if abs(steps * resolution - 1.0) > 1e-9:
        raise ValueError("resolution must divide 1")
    h = resolution if n <= 2 else max(resolution, 1e-3)
    W = _lattice(n, np.zeros(n), np.ones(n), h)
    f = _lattice_values(spec, market, W)
    evaluated = W.shape[0]
    if n == 3:
        while h > resolution * (1 + 1e-9):
            order = np.argsort(f, kind="stable")
            seeds = []
            for i in order[:200]:
                if not np.isfinite(f[i]):
                    break
                if all(np.abs(W[i] - s).max() > 3 * h for s in seeds):
                    seeds.append(W[i])
                if len(seeds) == 5:
                    break
            if not seeds:
                break
            h_new = max(h / 10.0, resolution)
            cand = [W[order[:1]]]
            for s in seeds:
                cand.append(_lattice(n, np.maximum(s - 2 * h, 0.0), np.minimum(s + 2 * h, 1.0), h_new))
            W = np.unique(np.vstack(cand), axis=0)
            f = _lattice_values(spec, market, W)
            evaluated += W.shape[0]
            h = h_new
    best = int(np.argmin(f))
    if not np.isfinite(f[best]):
        raise NoFeasiblePoint("no lattice point satisfies the constraints")
    return GridResult(W[best].copy(), float(f[best]), evaluated)
