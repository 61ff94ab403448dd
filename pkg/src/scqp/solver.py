"""Successive convex QP approximation (SCQP) for mean-variance problems.

Each outer iteration freezes weights ``lambda`` from the objective gradient
at the current iterate and minimizes the strictly convex surrogate::

    -(lambda_x + eta_x)' x(w) + (lambda_y + eta_y)' y(w)    over  W

where ``W`` is the long-only budget simplex. Mean-variance constraints are
handled by projected gradient ascent on the dual ``eta``; every dual
evaluation is one QP solved with a warm-started working set. The iterate
then moves part of the way towards the surrogate minimizer.
"""

import json
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    AssumptionViolated,
    DomainViolation,
    InfeasibleSpec,
    MaxIterations,
    NotStrictlyConvex,
)
from .objectives import (
    MarketModel,
    MvpSpec,
    check_assumption1,
    constraint_values,
    eval_moments,
    objective_gradients,
    objective_value,
)
from .qp import DEFAULT_QP_SETTINGS, QpProblem, QpSettings
from .working_set import WarmStartCache

__all__ = [
    "Weights",
    "ScqpSettings",
    "SolveTrace",
    "TraceRecord",
    "SolveResult",
    "InnerResult",
    "build_surrogate",
    "lambda_update",
    "inner_dual_ascent",
    "solve",
    "gamma_schedule",
    "stationarity_residual",
    "default_ridge",
    "default_start",
]

TRACE_FIELDS = ("k", "t", "f", "step", "inner_iters", "qp_iters")
_H_NOISE = 100 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class Weights:
    """Surrogate weights: gradient part ``lambda`` and dual part ``eta``."""

    lambda_x: np.ndarray
    lambda_y: np.ndarray
    eta_x: np.ndarray
    eta_y: np.ndarray

    def __post_init__(self):
        for name in ("lambda_x", "lambda_y", "eta_x", "eta_y"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if np.isnan(arr).any() or (arr < 0).any():
                raise ValueError(f"{name} must be nonnegative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.lambda_x.size != self.eta_x.size or self.lambda_y.size != self.eta_y.size:
            raise ValueError("lambda and eta lengths differ")

    @property
    def x_total(self):
        return self.lambda_x + self.eta_x

    @property
    def y_total(self):
        return self.lambda_y + self.eta_y

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("lambda_x", "lambda_y", "eta_x", "eta_y")}


@dataclass(frozen=True)
class ScqpSettings:
    """Parameters of the double loop.

    Parameters
    ----------
    gamma : {"decay", "diminishing", "unit"}
        Smoothing step rule. ``"decay"`` starts at 1 and follows
        ``gamma_{k+1} = gamma_k (1 - gamma_decay * gamma_k)``; ``"diminishing"``
        is ``2 / (k + 2)``. Both satisfy ``gamma_k -> 0`` and
        ``sum gamma_k = inf``.
    gamma_decay : float
        Decay rate of the ``"decay"`` rule, in ``(0, 1)``.
    armijo_init, armijo_sigma, armijo_beta, max_backtracks :
        Backtracking rule along the projection arc.
    armijo_adaptive : bool
        Start each inner line search from ``alpha_prev / beta`` instead of
        ``armijo_init``. The dual function can be very flat when moments are
        small, and a fixed initial step then makes the inner loop crawl.
    outer_tol : float
        Bound on the fixed-point residual ``|w_hat - w|_inf`` at convergence.
    inner_tol : float
        Bound on the projected dual gradient ``|[eta + g]_+ - eta|_inf``.
    ridge_scale : float
        Surrogate ridge is ``ridge_scale * mean_j trace(Sigma_j) / N``.
    eta0 : float
        Initial multiplier for every finite mean-variance limit.
    eta_cap : float
        A multiplier beyond this value means the constraint set is empty.
    initial_working_set : {"empty", "top_k"}
        Working set of the very first QP of a solve.
    """

    gamma: str = "decay"
    gamma_decay: float = 1e-2
    armijo_init: float = 1.0
    armijo_sigma: float = 0.1
    armijo_beta: float = 0.5
    max_backtracks: int = 40
    armijo_adaptive: bool = True
    outer_tol: float = 1e-6
    inner_tol: float = 1e-9
    max_outer: int = 500
    max_inner: int = 5000
    ridge_scale: float = 1e-10
    eta0: float = 1.0
    eta_cap: float = 1e8
    initial_working_set: str = "empty"
    top_k: int = 10
    qp: QpSettings = DEFAULT_QP_SETTINGS

    def __post_init__(self):
        if self.gamma not in ("decay", "diminishing", "unit"):
            raise ValueError(f"unknown gamma rule {self.gamma!r}")
        if not 0 < self.gamma_decay < 1:
            raise ValueError("gamma_decay must lie in (0, 1)")
        if not 0 < self.armijo_sigma < 1 or not 0 < self.armijo_beta < 1:
            raise ValueError("Armijo sigma and beta must lie in (0, 1)")
        if not self.armijo_init > 0:
            raise ValueError("armijo_init must be positive")
        for name in ("outer_tol", "inner_tol", "eta_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ridge_scale < 0 or self.eta0 < 0:
            raise ValueError("ridge_scale and eta0 must be nonnegative")
        if self.max_outer < 1 or self.max_inner < 1 or self.max_backtracks < 0:
            raise ValueError("iteration limits must be positive")
        if self.initial_working_set not in ("empty", "top_k"):
            raise ValueError(f"unknown initial working set {self.initial_working_set!r}")


DEFAULT_SETTINGS = ScqpSettings()


def gamma_schedule(k: int, settings: ScqpSettings = DEFAULT_SETTINGS) -> float:
    """Smoothing step at outer iteration ``k``."""
    if k < 0:
        raise ValueError("iteration index must be >= 0")
    if settings.gamma == "unit":
        return 1.0
    if settings.gamma == "diminishing":
        return 2.0 / (k + 2.0)
    gamma = 1.0
    for _ in range(k):
        gamma *= 1.0 - settings.gamma_decay * gamma
    return gamma


def default_ridge(market: MarketModel, settings: ScqpSettings = DEFAULT_SETTINGS) -> float:
    return settings.ridge_scale * float(np.mean([np.trace(s) for s in market.sigmas])) / market.n


def build_surrogate(market: MarketModel, weights: Weights, ridge: float = 0.0) -> QpProblem:
    """QP ``c = -sum (lx + ex) mu_i``, ``H = sum 2 (ly + ey) Sigma_j + ridge I`` over the simplex."""
    if weights.lambda_x.size != market.p or weights.lambda_y.size != market.q:
        raise ValueError("weights do not match the market's moment counts")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    wy = weights.y_total
    if not (wy > 0).any() and ridge == 0:
        raise NotStrictlyConvex("every variance weight is zero and no ridge is set")
    n = market.n
    c = np.zeros(n)
    for coef, mu in zip(weights.x_total, market.mus):
        if coef:
            c -= coef * mu
    H = ridge * np.eye(n)
    for coef, s in zip(wy, market.sigmas):
        if coef:
            H += 2.0 * coef * s
    return QpProblem.simplex(c, H)


def lambda_update(model, m):
    """Scaled weights ``(-dF/dx, dF/dy)`` at moments ``m``."""
    gx, gy = objective_gradients(model, m)
    scale = model.lambda_scale(float(m.x[model.x_index]) if m.x.size else 0.0,
                               float(m.y[model.y_index]))
    lx = np.zeros(m.x.size)
    ly = np.zeros(m.y.size)
    used_x = list(model.uses_x(m.x.size))
    used_y = list(model.uses_y(m.y.size))
    lx[used_x] = -gx[used_x] * scale
    ly[used_y] = gy[used_y] * scale
    return lx, ly


class InnerResult(NamedTuple):
    w_hat: np.ndarray
    eta_x: np.ndarray
    eta_y: np.ndarray
    iterations: int
    qp_solves: int
    reduced_solves: int
    dual_values: tuple
    converged: bool


def _finite_limits(spec, market):
    a = spec.floors(market.p)
    b = spec.caps(market.q)
    return a, b, np.isfinite(a), np.isfinite(b)


def inner_dual_ascent(market: MarketModel, spec: MvpSpec, lam, eta0=None,
                      settings: ScqpSettings = DEFAULT_SETTINGS, cache: WarmStartCache | None = None,
                      ridge: float | None = None) -> InnerResult:
    """Maximize the dual of the surrogate over ``eta >= 0`` for fixed ``lam``.

    Parameters
    ----------
    lam : tuple of arrays
        ``(lambda_x, lambda_y)``, held fixed.
    eta0 : tuple of arrays, optional
        Starting multipliers; entries for infinite limits are ignored.
        Defaults to ``settings.eta0`` on every finite limit.

    Raises
    ------
    InfeasibleSpec
        If a multiplier exceeds ``settings.eta_cap``.
    """
    lx, ly = (np.asarray(v, dtype=float) for v in lam)
    a, b, fa, fb = _finite_limits(spec, market)
    if ridge is None:
        ridge = default_ridge(market, settings)
    if cache is None:
        cache = WarmStartCache(initial=settings.initial_working_set, top_k=settings.top_k,
                               settings=settings.qp)
    if eta0 is None:
        ex, ey = np.full(market.p, settings.eta0), np.full(market.q, settings.eta0)
    else:
        ex, ey = (np.array(v, dtype=float) for v in eta0)
    ex = np.where(fa, np.maximum(ex, 0.0), 0.0)
    ey = np.where(fb, np.maximum(ey, 0.0), 0.0)
    a0 = np.where(fa, a, 0.0)
    b0 = np.where(fb, b, 0.0)
    if (fb & (b0 <= 0)).any():
        raise InfeasibleSpec("a variance cap <= 0 cannot be met")
    # each constraint is measured relative to its own scale, so that return
    # floors and variance caps of very different magnitude share one step size
    sx = np.where(fa, np.maximum(np.abs(a0), [1e-2 * np.abs(mu).max(initial=0.0) + 1e-300
                                             for mu in market.mus] if market.p else 1.0), 1.0)
    sy = np.where(fb, b0, 1.0)
    dx, dy = 1.0 / sx ** 2, 1.0 / sy ** 2
    stats = {"qp": 0, "reduced": 0}

    def evaluate(ex, ey):
        prob = build_surrogate(market, Weights(lx, ly, ex, ey), ridge)
        res = cache.solve(prob)
        stats["qp"] += 1
        stats["reduced"] += res.iterations
        w = res.solution.w
        m = eval_moments(w, market)
        q = res.solution.objective
        h = q + ex @ a0 - ey @ b0
        noise = _H_NOISE * max(abs(q), abs(ex @ a0), abs(ey @ b0), 1e-300)
        gx = np.where(fa, a0 - m.x, 0.0)
        gy = np.where(fb, m.y - b0, 0.0)
        return w, h, gx, gy, noise

    w, h, gx, gy, noise = evaluate(ex, ey)
    if not (fa.any() or fb.any()):
        return InnerResult(w, ex, ey, 0, stats["qp"], stats["reduced"], (h,), True)

    sigma, beta = settings.armijo_sigma, settings.armijo_beta
    alpha = settings.armijo_init
    values = [h]
    for it in range(1, settings.max_inner + 1):
        # projected gradient in scaled units
        pgx = np.maximum(ex * sx + gx / sx, 0.0) - ex * sx
        pgy = np.maximum(ey * sy + gy / sy, 0.0) - ey * sy
        if max(np.abs(pgx[fa]).max(initial=0.0), np.abs(pgy[fb]).max(initial=0.0)) <= settings.inner_tol:
            return InnerResult(w, ex, ey, it - 1, stats["qp"], stats["reduced"], tuple(values), True)
        if not settings.armijo_adaptive:
            alpha = settings.armijo_init
        accepted = False
        for j in range(settings.max_backtracks + 1):
            nx = np.where(fa, np.maximum(ex + alpha * dx * gx, 0.0), 0.0)
            ny = np.where(fb, np.maximum(ey + alpha * dy * gy, 0.0), 0.0)
            if max(nx.max(initial=0.0), ny.max(initial=0.0)) > settings.eta_cap:
                raise InfeasibleSpec(
                    "mean-variance multipliers diverge; the constraint set has no strictly feasible point"
                )
            w_new, h_new, gx_new, gy_new, noise_new = evaluate(nx, ny)
            rise = gx @ (nx - ex) + gy @ (ny - ey)
            gain = h_new - h
            if abs(gain) <= max(noise, noise_new):
                # dual values agree to rounding: use the trapezoid estimate from both gradients
                gain = 0.5 * (rise + gx_new @ (nx - ex) + gy_new @ (ny - ey))
            if gain >= sigma * rise:
                accepted = True
                break
            alpha *= beta
        if not accepted:
            # no ascent possible at this precision: the point is dual-optimal to rounding
            return InnerResult(w, ex, ey, it - 1, stats["qp"], stats["reduced"], tuple(values), False)
        if settings.armijo_adaptive and j == 0:
            alpha /= beta
        ex, ey, w, h, gx, gy, noise = nx, ny, w_new, h_new, gx_new, gy_new, noise_new
        values.append(h)
    raise MaxIterations(f"dual ascent did not converge in {settings.max_inner} iterations")


@dataclass(frozen=True)
class TraceRecord:
    k: int
    t: float
    f: float
    step: float
    residual: float = math.nan
    gamma: float = 1.0
    inner_iters: int = 0
    qp_iters: int = 1
    reduced_solves: int = 0
    lambda_x: tuple = ()
    lambda_y: tuple = ()
    eta_x: tuple = ()
    eta_y: tuple = ()

    def to_json_record(self):
        return {"k": self.k, "t": round(self.t, 6), "f": self.f, "step": self.step,
                "inner_iters": self.inner_iters, "qp_iters": self.qp_iters}


@dataclass
class SolveTrace:
    """Per-outer-iteration records of one solve."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: TraceRecord):
        if self.records and record.t < self.records[-1].t:
            raise ValueError("trace times must be nondecreasing")
        self.records.append(record)

    @property
    def objectives(self):
        return np.array([r.f for r in self.records])

    @property
    def times(self):
        return np.array([r.t for r in self.records])

    def to_jsonl(self):
        return "".join(json.dumps(r.to_json_record()) + "\n" for r in self.records)

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


@dataclass
class SolveResult:
    w_star: np.ndarray
    weights: Weights
    trace: SolveTrace
    status: str
    objective: float
    residual: float
    iterations: int
    message: str = ""
    reduced_solves: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == "Converged"


def default_start(spec: MvpSpec, market: MarketModel) -> np.ndarray:
    """Equal weights, or the best single asset when equal weights lie outside the objective's domain."""
    n = market.n
    w = np.full(n, 1.0 / n)
    m = eval_moments(w, market)
    if bool(spec.objective.in_domain(m.x, m.y)) and check_assumption1(spec.objective, m):
        return w
    idx = spec.objective.x_index
    if market.p:
        w = np.zeros(n)
        w[int(np.argmax(market.mus[idx]))] = 1.0
    return w


def _project_simplex(w):
    """Euclidean projection onto the long-only budget simplex."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, w.size + 1) > 0)[0][-1]
    return np.maximum(w - css[rho] / (rho + 1.0), 0.0)


def _surrogate_point(spec, market, w, eta, settings, cache, ridge):
    m = eval_moments(w, market)
    lam = lambda_update(spec.objective, m)
    inner = inner_dual_ascent(market, spec, lam, eta, settings, cache, ridge)
    return lam, inner


def stationarity_residual(w, spec: MvpSpec, market: MarketModel,
                          settings: ScqpSettings = DEFAULT_SETTINGS) -> float:
    """Fixed-point residual ``|w_hat(lambda(w), eta*(w)) - w|_inf``."""
    w = np.asarray(w, dtype=float)
    cache = WarmStartCache(initial=settings.initial_working_set, top_k=settings.top_k,
                           settings=settings.qp)
    _, inner = _surrogate_point(spec, market, w, None, settings, cache,
                                default_ridge(market, settings))
    return float(np.abs(inner.w_hat - w).max())


def _max_violation(spec, market, w):
    g = constraint_values(spec, eval_moments(w, market))
    return float(np.maximum(g, 0.0).max(initial=0.0))


def solve(spec: MvpSpec, market: MarketModel, w0=None,
          settings: ScqpSettings = DEFAULT_SETTINGS, cache: WarmStartCache | None = None) -> SolveResult:
    """Run the SCQP double loop.

    Parameters
    ----------
    w0 : array, optional
        Starting weights, projected onto the simplex if needed. Defaults to
        :func:`default_start`.
    cache : WarmStartCache, optional
        Working-set cache shared with earlier solves (e.g. along a frontier).

    Returns
    -------
    SolveResult
        ``status`` is one of ``"Converged"``, ``"MaxIterations"`` (the best
        feasible iterate is returned), ``"Infeasible"`` or ``"AssumptionViolated"``.
    """
    t0 = time.monotonic()
    n = market.n
    if w0 is None:
        w = default_start(spec, market)
    else:
        w = np.array(w0, dtype=float).reshape(-1)
        if w.size != n:
            raise ValueError(f"w0 has {w.size} entries, market has {n} assets")
        if abs(w.sum() - 1.0) > 1e-9 or (w < -1e-12).any():
            w = _project_simplex(w)
    ridge = default_ridge(market, settings)
    if cache is None:
        cache = WarmStartCache(initial=settings.initial_working_set, top_k=settings.top_k,
                               settings=settings.qp)
    first_solve = len(cache.reduced_solves)
    trace = SolveTrace()
    eta = None
    weights = None
    best = None
    model = spec.objective
    constrained = spec.is_constrained(market.p, market.q)
    decay_gamma = 1.0

    def fail(status, message, w, weights, residual):
        f = _safe_value(model, market, w)
        return SolveResult(w, weights, trace, status, f, residual, len(trace), message,
                           list(cache.reduced_solves[first_solve:]))

    for k in range(settings.max_outer):
        qp_before = cache.solves
        red_before = sum(cache.reduced_solves)
        try:
            m = eval_moments(w, market)
            f = objective_value(model, m)
            lam = lambda_update(model, m)
            inner = inner_dual_ascent(market, spec, lam, eta, settings, cache, ridge)
        except (AssumptionViolated, DomainViolation) as exc:
            return fail("AssumptionViolated", str(exc), w, weights, math.inf)
        except InfeasibleSpec as exc:
            return fail("Infeasible", str(exc), w, weights, math.inf)
        except MaxIterations as exc:
            return fail("MaxIterations", str(exc), w, weights, math.inf)
        eta = (inner.eta_x, inner.eta_y)
        weights = Weights(lam[0], lam[1], inner.eta_x, inner.eta_y)
        residual = float(np.abs(inner.w_hat - w).max())
        feasible = not constrained or _max_violation(spec, market, w) <= 1e-8
        if feasible and (best is None or f < best[0]):
            best = (f, w, weights, residual)
        gamma = gamma_schedule(k, settings) if settings.gamma != "decay" else decay_gamma
        converged = residual <= settings.outer_tol and feasible
        step = 0.0 if converged else gamma * residual
        trace.append(TraceRecord(
            k=k, t=time.monotonic() - t0, f=f, step=step, residual=residual, gamma=gamma,
            inner_iters=inner.iterations, qp_iters=cache.solves - qp_before,
            reduced_solves=sum(cache.reduced_solves) - red_before,
            lambda_x=tuple(lam[0].tolist()), lambda_y=tuple(lam[1].tolist()),
            eta_x=tuple(inner.eta_x.tolist()), eta_y=tuple(inner.eta_y.tolist()),
        ))
        if converged:
            return SolveResult(w, weights, trace, "Converged", f, residual, len(trace), "",
                               list(cache.reduced_solves[first_solve:]))
        w = w + gamma * (inner.w_hat - w)
        decay_gamma *= 1.0 - settings.gamma_decay * decay_gamma
    if best is None:
        return fail("MaxIterations", "no feasible iterate found", w, weights, math.inf)
    f, w, weights, residual = best
    return SolveResult(w, weights, trace, "MaxIterations", f, residual, len(trace),
                       f"no convergence in {settings.max_outer} outer iterations",
                       list(cache.reduced_solves[first_solve:]))


def _safe_value(model, market, w):
    try:
        return objective_value(model, eval_moments(w, market))
    except DomainViolation:
        return math.nan
