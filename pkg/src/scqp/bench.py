"""Benchmark applications, frontier tracing and complexity fits."""

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .baselines import (
    BaselineSettings,
    grid_oracle,
    solve_dinkelbach,
    solve_mm_kelly,
    solve_mm_worstcase,
    solve_quadratic_transform,
)
from .data import estimate_moments, generate_market, simulate_returns
from .errors import ConfigError, DegenerateInput, ScqpError
from .objectives import (
    MGSRP,
    MSRP,
    Kelly,
    MarketModel,
    Markowitz,
    MaxReturn,
    MinVariance,
    MvpSpec,
    WorstCaseGMRP,
    eval_moments,
)
from .solver import ScqpSettings, solve
from .working_set import WarmStartCache

__all__ = [
    "METHODS",
    "APPLICATIONS",
    "PUBLISHED_EXPONENTS",
    "BenchConfig",
    "BenchReport",
    "FrontierPoint",
    "build_application",
    "run_benchmark",
    "trace_frontier",
    "pareto_violations",
    "fit_complexity_order",
]

METHODS = ("scqp", "dinkelbach", "qt", "mm-worstcase", "mm-kelly", "grid-oracle")
APPLICATIONS = {
    1: "worst-case robust GMRP (alpha = 1)",
    2: "Kelly portfolio",
    3: "risk-constrained Markowitz (b = equal-weight risk)",
    4: "long-term MSRP with short-term goals (a = 1.2 e, b = 0.8 r)",
}
# published SCQP exponents for reference output
PUBLISHED_EXPONENTS = {1: 1.155, 2: 0.944, 3: 1.137, 4: 0.768}
APP4_VOL_SCALE = 0.01


def build_application(app: int, n: int, seed: int):
    """``(spec, market)`` for one benchmark instance."""
    if app not in APPLICATIONS:
        raise ConfigError(f"unknown application {app!r}; expected one of {sorted(APPLICATIONS)}")
    market = generate_market(n, 1, 1, seed)
    ew = np.full(n, 1.0 / n)
    if app == 1:
        return MvpSpec(WorstCaseGMRP(1.0)), market
    if app == 2:
        return MvpSpec(Kelly()), market
    if app == 3:
        r = float(ew @ market.sigmas[0] @ ew)
        return MvpSpec(MaxReturn(), risk_caps=[r]), market
    days = 5 * n
    rets = simulate_returns(market.mus[0], market.sigmas[0], days, seed + 10_000, APP4_VOL_SCALE)
    est = estimate_moments(rets, [(0, days), (days - 2 * n, days)])
    e = float(ew @ est.mus[1])
    r = float(ew @ est.sigmas[1] @ ew)
    spec = MvpSpec(MSRP(0.0), return_floors=[None, 1.2 * e], risk_caps=[None, 0.8 * r])
    return spec, est


def _applicable(method, spec):
    if method in ("scqp", "grid-oracle"):
        return True
    obj = spec.objective
    unconstrained = spec.return_floors is None or all(math.isinf(v) for v in spec.return_floors)
    unconstrained &= spec.risk_caps is None or all(math.isinf(v) for v in spec.risk_caps)
    if not unconstrained or obj.x_index or obj.y_index:
        return False
    if method == "dinkelbach":
        return isinstance(obj, MGSRP) and 0.5 <= obj.beta <= 1.0
    if method == "qt":
        return isinstance(obj, MSRP)
    if method == "mm-worstcase":
        return isinstance(obj, WorstCaseGMRP)
    if method == "mm-kelly":
        return isinstance(obj, Kelly)
    return False


@dataclass(frozen=True)
class BenchConfig:
    """What to run. ``application`` is 1-4 or ``None`` with a custom ``spec``."""

    application: int | None = 1
    sizes: tuple = (50, 100, 200)
    seeds: tuple = tuple(range(5))
    methods: tuple = ("scqp",)
    spec: MvpSpec | None = None
    tol: float = 1e-6
    max_iter: int = 500
    grid_resolution: float = 1e-5
    output: str | None = None
    trace_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.sizes or min(self.sizes) < 2:
            raise ConfigError("sizes must be a nonempty list of integers >= 2")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {list(METHODS)}")
        if (self.application is None) == (self.spec is None):
            raise ConfigError("give exactly one of application and spec")
        if self.application is not None and self.application not in APPLICATIONS:
            raise ConfigError(f"application must be one of {sorted(APPLICATIONS)}")
        if "grid-oracle" in self.methods and max(self.sizes) > 3:
            raise ConfigError("grid-oracle is only allowed for sizes <= 3")
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")
        probe = self.spec or build_application(self.application, 2, 0)[0]
        for m in self.methods:
            if not _applicable(m, probe):
                raise ConfigError(f"method {m!r} does not apply to {probe.objective.kind} with these limits")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if d.get("spec") is not None:
            try:
                d["spec"] = MvpSpec.from_dict(d["spec"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"bad spec: {exc}") from None
            d.setdefault("application", None)
        env = os.environ.get("SCQP_SEED")
        if env is not None:
            try:
                d["seeds"] = [int(env)]
            except ValueError:
                raise ConfigError(f"SCQP_SEED must be an integer, got {env!r}") from None
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    def instance(self, n, seed):
        if self.spec is not None:
            return self.spec, generate_market(n, max(1, self.spec.objective.x_index + 1),
                                              self.spec.objective.y_index + 1, seed)
        return build_application(self.application, n, seed)


@dataclass
class BenchReport:
    cells: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"cells": self.cells, "fits": self.fits, "config": self.config}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json(indent=2))
            fh.write("\n")

    def cell(self, method, size, seed):
        for c in self.cells:
            if (c["method"], c["size"], c["seed"]) == (method, size, seed):
                return c
        raise KeyError((method, size, seed))


def _run_method(method, spec, market, config):
    obj = spec.objective
    bs = BaselineSettings(tol=config.tol, max_iter=config.max_iter)
    if method == "scqp":
        return solve(spec, market, settings=ScqpSettings(outer_tol=config.tol, max_outer=config.max_iter))
    if method == "dinkelbach":
        return solve_dinkelbach(market, obj.rf, bs, beta=obj.beta)
    if method == "qt":
        return solve_quadratic_transform(market, obj.rf, bs)
    if method == "mm-worstcase":
        return solve_mm_worstcase(market, obj.alpha, bs)
    if method == "mm-kelly":
        return solve_mm_kelly(market, bs)
    raise ConfigError(f"no runner for {method!r}")


def run_benchmark(config: BenchConfig) -> BenchReport:
    """Solve every (method, size, seed) cell and fit time exponents.

    Failures are recorded on the cell. ``gap`` is the distance to the best
    terminal objective on the same instance across all methods run.
    """
    report = BenchReport(config={
        "application": config.application,
        "spec": config.spec.to_dict() if config.spec else None,
        "sizes": list(config.sizes), "seeds": list(config.seeds), "methods": list(config.methods),
        "tol": config.tol, "max_iter": config.max_iter,
    })
    if config.trace_dir:
        os.makedirs(config.trace_dir, exist_ok=True)
    for n in config.sizes:
        for seed in config.seeds:
            spec, market = config.instance(n, seed)
            group = []
            for method in config.methods:
                cell = {"method": method, "size": n, "seed": seed, "objective": None, "gap": None,
                        "time": None, "iterations": None, "status": None, "trace": None, "message": ""}
                t0 = time.monotonic()
                try:
                    if method == "grid-oracle":
                        g = grid_oracle(spec, market, config.grid_resolution)
                        cell.update(objective=g.objective, iterations=g.evaluated, status="Converged")
                    else:
                        res = _run_method(method, spec, market, config)
                        cell.update(objective=float(res.objective), iterations=res.iterations,
                                    status=res.status, message=res.message)
                        if config.trace_dir:
                            path = os.path.join(config.trace_dir, f"{method}_n{n}_s{seed}.jsonl")
                            res.trace.write_jsonl(path)
                            cell["trace"] = path
                except ScqpError as exc:
                    cell.update(status=type(exc).__name__, message=str(exc))
                cell["time"] = round(time.monotonic() - t0, 6)
                group.append(cell)
            finite = [c["objective"] for c in group
                      if c["objective"] is not None and math.isfinite(c["objective"])
                      and c["status"] in ("Converged", "MaxIterations")]
            ref = min(finite) if finite else None
            for c in group:
                if ref is not None and c["objective"] is not None and math.isfinite(c["objective"]):
                    c["gap"] = abs(c["objective"] - ref)
            report.cells.extend(group)
    for method in config.methods:
        sizes, times = [], []
        for n in config.sizes:
            ts = [c["time"] for c in report.cells
                  if c["method"] == method and c["size"] == n and c["status"] == "Converged"]
            if ts:
                sizes.append(n)
                times.append(float(np.mean(ts)))
        try:
            report.fits[method] = fit_complexity_order(sizes, times)
        except DegenerateInput:
            report.fits[method] = None
    if config.output:
        report.write(config.output)
    return report


def fit_complexity_order(sizes, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(N)``."""
    sizes = np.asarray(sizes, dtype=float)
    times = np.asarray(times, dtype=float)
    if sizes.shape != times.shape:
        raise DegenerateInput("sizes and times differ in length")
    if np.unique(sizes).size < 3:
        raise DegenerateInput("need at least three distinct sizes")
    if (sizes <= 0).any() or not (times > 0).all():
        raise DegenerateInput("sizes and times must be positive")
    lx = np.log(sizes)
    if np.var(lx) == 0:
        raise DegenerateInput("log sizes have zero variance")
    slope = np.polyfit(lx, np.log(times), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# frontier


FAMILIES = {
    "markowitz": lambda v: MvpSpec(Markowitz(alpha=v)),
    "worst_case": lambda v: MvpSpec(WorstCaseGMRP(alpha=v)),
    "risk_capped": lambda v: MvpSpec(MaxReturn(), risk_caps=[v]),
    "return_floored": lambda v: MvpSpec(MinVariance(), return_floors=[v]),
}


class FrontierPoint(NamedTuple):
    param: float
    w: np.ndarray | None
    x: float
    y: float
    nonzeros: int
    qp_solves: int
    reduced_solves: tuple
    status: str
    message: str = ""


def trace_frontier(market: MarketModel, family: str, params, warm: bool = True,
                   settings: ScqpSettings | None = None) -> list:
    """Solve one problem per parameter value and tabulate the efficient points.

    With ``warm`` every solve reuses the working-set cache of the previous one.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown frontier family {family!r}; expected one of {sorted(FAMILIES)}")
    params = [float(p) for p in params]
    diffs = np.diff(params)
    if params and not ((diffs > 0).all() or (diffs < 0).all()):
        raise ValueError("parameter grid must be strictly monotone")
    settings = settings or ScqpSettings()
    shared = WarmStartCache(initial=settings.initial_working_set, top_k=settings.top_k,
                            settings=settings.qp)
    out = []
    for p in params:
        cache = shared if warm else WarmStartCache(initial=settings.initial_working_set,
                                                    top_k=settings.top_k, settings=settings.qp)
        try:
            res = solve(FAMILIES[family](p), market, settings=settings, cache=cache)
        except (ScqpError, ValueError) as exc:
            out.append(FrontierPoint(p, None, math.nan, math.nan, 0, 0, (), type(exc).__name__, str(exc)))
            continue
        m = eval_moments(res.w_star, market)
        out.append(FrontierPoint(
            p, res.w_star, float(m.x[0]) if m.x.size else math.nan, float(m.y[0]),
            int((np.abs(res.w_star) > 1e-7).sum()), len(res.reduced_solves),
            tuple(res.reduced_solves), res.status, res.message,
        ))
    return out


def pareto_violations(points, tol: float = 1e-9):
    """Pairs ``(i, j)`` where point ``i`` strictly dominates point ``j``."""
    pts = [(i, p.x, p.y) for i, p in enumerate(points) if p.w is not None]
    bad = []
    for i, xa, ya in pts:
        for j, xb, yb in pts:
            if i != j and xa >= xb + tol and ya <= yb - tol:
                bad.append((i, j))
    return bad
