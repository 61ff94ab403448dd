"""Mean-variance problem family: moments, objective models and constraints.

A portfolio ``w`` has ``p`` expected returns ``x_i = w'mu_i`` and ``q``
variances ``y_j = w'Sigma_j w``. An objective model ``F(x, y)`` combines one
mean and one variance (selected by ``x_index`` / ``y_index``); the
constraints are ``x_i >= a_i`` and ``y_j <= b_j``.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar

import numpy as np

from .errors import AssumptionViolated, DimensionMismatch, DomainViolation, NotPositiveDefinite

__all__ = [
    "MarketModel",
    "Moments",
    "ObjectiveModel",
    "Markowitz",
    "MSRP",
    "MGSRP",
    "WorstCaseGMRP",
    "Utility",
    "exponential_utility",
    "log_utility",
    "ExpectedUtility",
    "Kelly",
    "MinVariance",
    "MaxReturn",
    "MvpSpec",
    "Assumption1Report",
    "eval_moments",
    "objective_value",
    "objective_gradients",
    "constraint_values",
    "check_assumption1",
    "model_from_dict",
]


@dataclass(frozen=True, eq=False)
class MarketModel:
    """``p`` mean vectors and ``q`` covariance matrices over ``N`` assets."""

    mus: tuple
    sigmas: tuple

    def __post_init__(self):
        mus = tuple(np.array(m, dtype=float).reshape(-1) for m in self.mus)
        sigmas = tuple(np.atleast_2d(np.array(s, dtype=float)) for s in self.sigmas)
        if not sigmas:
            raise ValueError("a market needs at least one covariance matrix")
        n = sigmas[0].shape[0]
        for mu in mus:
            if mu.size != n:
                raise DimensionMismatch(f"mean vector of length {mu.size}, expected {n}")
        for j, s in enumerate(sigmas):
            if s.shape != (n, n):
                raise DimensionMismatch(f"covariance {j} has shape {s.shape}, expected {(n, n)}")
            if np.abs(s - s.T).max() > 1e-10 * max(1.0, np.abs(s).max()):
                raise ValueError(f"covariance {j} is not symmetric")
            try:
                np.linalg.cholesky(s)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(f"covariance {j} is not positive definite") from exc
        sigmas = tuple(0.5 * (s + s.T) for s in sigmas)
        for arr in mus + sigmas:
            arr.setflags(write=False)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "sigmas", sigmas)

    @classmethod
    def single(cls, mu, sigma):
        return cls((mu,), (sigma,))

    @property
    def n(self):
        return self.sigmas[0].shape[0]

    @property
    def p(self):
        return len(self.mus)

    @property
    def q(self):
        return len(self.sigmas)


@dataclass(frozen=True, eq=False)
class Moments:
    x: np.ndarray
    y: np.ndarray


def eval_moments(w, market: MarketModel) -> Moments:
    """Expected returns ``x_i = w'mu_i`` and variances ``y_j = w'Sigma_j w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (market.n,):
        raise DimensionMismatch(f"weights of shape {w.shape}, market has {market.n} assets")
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    x = np.array([w @ mu for mu in market.mus])
    y = np.array([w @ s @ w for s in market.sigmas])
    return Moments(x, y)


# ---------------------------------------------------------------------------
# objective models


@dataclass(frozen=True)
class ObjectiveModel:
    """Base class. Subclasses define ``_f`` and ``_partials`` on scalars/arrays
    of the selected mean ``x`` and variance ``y``."""

    kind: ClassVar[str] = ""
    uses_mean: ClassVar[bool] = True
    uses_variance: ClassVar[bool] = True

    def uses_x(self, p):
        return (self.x_index,) if self.uses_mean and self.x_index < p else ()

    def uses_y(self, q):
        return (self.y_index,) if self.uses_variance and self.y_index < q else ()

    # vectorized over leading axes of x (…, p) and y (…, q)
    def value(self, x, y):
        return self._f(np.asarray(x)[..., self.x_index], np.asarray(y)[..., self.y_index])

    def in_domain(self, x, y):
        return self._domain(np.asarray(x)[..., self.x_index], np.asarray(y)[..., self.y_index])

    def partials(self, x, y):
        """``(dF/dx, dF/dy)`` with respect to the selected moments."""
        return self._partials(float(x[self.x_index]), float(y[self.y_index]))

    def lambda_scale(self, x, y):
        """Positive factor applied to the surrogate weights (1 unless overridden)."""
        return 1.0

    def domain_message(self, x, y):
        return f"{self.kind} is undefined at x={x!r}, y={y!r}"

    def _domain(self, x, y):
        return np.ones(np.broadcast(x, y).shape, dtype=bool)

    def params(self):
        return {}

    def to_dict(self):
        d = {"kind": self.kind, **self.params()}
        if self.x_index:
            d["x_index"] = self.x_index
        if self.y_index:
            d["y_index"] = self.y_index
        return d


@dataclass(frozen=True)
class Markowitz(ObjectiveModel):
    alpha: float = 1.0
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "markowitz"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("Markowitz risk aversion must be >= 0")

    def uses_y(self, q):
        return super().uses_y(q) if self.alpha > 0 else ()

    def _f(self, x, y):
        return -x + 0.5 * self.alpha * y

    def _partials(self, x, y):
        return -1.0, 0.5 * self.alpha

    def params(self):
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class MGSRP(ObjectiveModel):
    """Generalized Sharpe ratio ``-(x - rf) / y**beta`` (MSRP is ``beta = 1/2``)."""

    rf: float = 0.0
    beta: float = 1.0
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "mgsrp"

    def __post_init__(self):
        if not self.beta >= 0.5:
            raise ValueError("generalized Sharpe exponent must be >= 1/2")

    def _domain(self, x, y):
        return (x > self.rf) & (y > 0)

    def domain_message(self, x, y):
        return f"{self.kind} requires x > rf={self.rf!r} and y > 0, got x={x!r}, y={y!r}"

    def _f(self, x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            return -(x - self.rf) / np.power(y, self.beta)

    def _partials(self, x, y):
        yb = y ** self.beta
        return -1.0 / yb, self.beta * (x - self.rf) / (yb * y)

    def lambda_scale(self, x, y):
        return y ** self.beta

    def params(self):
        return {"rf": self.rf, "beta": self.beta}


@dataclass(frozen=True)
class MSRP(MGSRP):
    """Negative Sharpe ratio ``-(x - rf) / sqrt(y)``."""

    rf: float = 0.0
    beta: float = field(default=0.5, init=False)
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "msrp"

    def _f(self, x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            return -(x - self.rf) / np.sqrt(y)

    def _partials(self, x, y):
        s = math.sqrt(y)
        return -1.0 / s, 0.5 * (x - self.rf) / (s * y)

    def lambda_scale(self, x, y):
        return math.sqrt(y)

    def params(self):
        return {"rf": self.rf}


@dataclass(frozen=True)
class WorstCaseGMRP(ObjectiveModel):
    """Worst-case return over an ellipsoidal mean uncertainty set: ``-x + alpha*sqrt(y)``."""

    alpha: float = 1.0
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "worst_case"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("worst-case uncertainty radius must be > 0")

    def _domain(self, x, y):
        return np.broadcast_to(np.asarray(y) > 0, np.broadcast(x, y).shape)

    def domain_message(self, x, y):
        return f"worst_case requires y > 0, got y={y!r}"

    def _f(self, x, y):
        return -x + self.alpha * np.sqrt(np.maximum(y, 0.0))

    def _partials(self, x, y):
        return -1.0, 0.5 * self.alpha / math.sqrt(y)

    def params(self):
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class Utility:
    """A utility function with its first three derivatives."""

    name: str
    u: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    domain: Callable = field(default=lambda r: np.ones(np.shape(r), dtype=bool))
    params: dict = field(default_factory=dict)


def exponential_utility(gamma):
    """``U(r) = -exp(-gamma r)``."""
    if not gamma > 0:
        raise ValueError("exponential utility needs gamma > 0")
    g = float(gamma)
    return Utility(
        name="exponential",
        u=lambda r: -np.exp(-g * r),
        d1=lambda r: g * np.exp(-g * r),
        d2=lambda r: -g * g * np.exp(-g * r),
        d3=lambda r: g ** 3 * np.exp(-g * r),
        params={"gamma": g},
    )


def log_utility():
    """``U(r) = log(1 + r)``."""
    return Utility(
        name="log",
        u=lambda r: np.log1p(r),
        d1=lambda r: 1.0 / (1.0 + r),
        d2=lambda r: -1.0 / (1.0 + r) ** 2,
        d3=lambda r: 2.0 / (1.0 + r) ** 3,
        domain=lambda r: np.asarray(r) > -1.0,
    )


@dataclass(frozen=True)
class ExpectedUtility(ObjectiveModel):
    """Second-order mean-variance approximation ``-U(x) - U''(x) y / 2``."""

    utility: Utility = field(default_factory=lambda: exponential_utility(1.0))
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "exp_utility"

    def _domain(self, x, y):
        return np.broadcast_to(self.utility.domain(x), np.broadcast(x, y).shape)

    def domain_message(self, x, y):
        return f"{self.utility.name} utility is undefined at x={x!r}"

    def _f(self, x, y):
        ut = self.utility
        with np.errstate(invalid="ignore", divide="ignore"):
            return -ut.u(x) - 0.5 * ut.d2(x) * y

    def _partials(self, x, y):
        ut = self.utility
        return float(-ut.d1(x) - 0.5 * ut.d3(x) * y), float(-0.5 * ut.d2(x))

    def params(self):
        return dict(self.utility.params)


@dataclass(frozen=True)
class Kelly(ExpectedUtility):
    """Expected log growth: ``-log(1+x) + y / (2 (1+x)^2)``."""

    utility: Utility = field(default_factory=log_utility, init=False)
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "kelly"

    def domain_message(self, x, y):
        return f"kelly requires x > -1, got x={x!r}"

    def params(self):
        return {}


@dataclass(frozen=True)
class MinVariance(ObjectiveModel):
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "min_variance"
    uses_mean: ClassVar[bool] = False

    def _f(self, x, y):
        return y + 0.0 * x

    def _partials(self, x, y):
        return 0.0, 1.0


@dataclass(frozen=True)
class MaxReturn(ObjectiveModel):
    x_index: int = 0
    y_index: int = 0
    kind: ClassVar[str] = "max_return"
    uses_variance: ClassVar[bool] = False

    def _f(self, x, y):
        return -x + 0.0 * y

    def _partials(self, x, y):
        return -1.0, 0.0


_KINDS = {
    "markowitz": lambda d: Markowitz(alpha=float(d.get("alpha", 1.0))),
    "msrp": lambda d: MSRP(rf=float(d.get("rf", 0.0))),
    "mgsrp": lambda d: MGSRP(rf=float(d.get("rf", 0.0)), beta=float(d.get("beta", 1.0))),
    "worst_case": lambda d: WorstCaseGMRP(alpha=float(d.get("alpha", 1.0))),
    "exp_utility": lambda d: ExpectedUtility(exponential_utility(float(d.get("gamma", 1.0)))),
    "kelly": lambda d: Kelly(),
    "min_variance": lambda d: MinVariance(),
    "max_return": lambda d: MaxReturn(),
}


def model_from_dict(d):
    kind = d.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown objective kind {kind!r}; expected one of {sorted(_KINDS)}")
    model = _KINDS[kind](d)
    idx = {k: int(d[k]) for k in ("x_index", "y_index") if k in d}
    if idx:
        import dataclasses

        model = dataclasses.replace(model, **idx)
    return model


# ---------------------------------------------------------------------------
# problem description (MvpSpec)


def _limits(values, default, name):
    if values is None:
        return None
    out = []
    for v in values:
        out.append(default if v is None else float(v))
    arr = np.array(out, dtype=float)
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN")
    return tuple(arr.tolist())


@dataclass(frozen=True)
class MvpSpec:
    """Objective plus return floors ``a`` (``-inf`` = none) and risk caps ``b`` (``+inf`` = none).

    ``None`` limits mean "no constraint on any moment" and are expanded to the
    market's ``p`` / ``q`` by :meth:`floors` and :meth:`caps`.
    """

    objective: ObjectiveModel
    return_floors: tuple | None = None
    risk_caps: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "return_floors", _limits(self.return_floors, -np.inf, "return_floors"))
        object.__setattr__(self, "risk_caps", _limits(self.risk_caps, np.inf, "risk_caps"))

    def floors(self, p):
        if self.return_floors is None:
            return np.full(p, -np.inf)
        if len(self.return_floors) != p:
            raise DimensionMismatch(f"{len(self.return_floors)} return floors for {p} means")
        return np.array(self.return_floors)

    def caps(self, q):
        if self.risk_caps is None:
            return np.full(q, np.inf)
        if len(self.risk_caps) != q:
            raise DimensionMismatch(f"{len(self.risk_caps)} risk caps for {q} covariances")
        return np.array(self.risk_caps)

    def is_constrained(self, p, q):
        return bool(np.isfinite(self.floors(p)).any() or np.isfinite(self.caps(q)).any())

    def to_dict(self):
        def enc(vals):
            if vals is None:
                return None
            return [v if math.isfinite(v) else None for v in vals]

        return {
            "objective": self.objective.to_dict(),
            "return_floors": enc(self.return_floors),
            "risk_caps": enc(self.risk_caps),
        }

    @classmethod
    def from_dict(cls, d):
        if "objective" not in d:
            raise ValueError("spec document needs an 'objective' entry")
        return cls(model_from_dict(d["objective"]), d.get("return_floors"), d.get("risk_caps"))

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# operations


def _check_domain(model, m):
    x, y = m.x, m.y
    if model.x_index >= x.size or model.y_index >= y.size:
        raise DimensionMismatch("objective selects a moment the market does not have")
    if not bool(model.in_domain(x, y)):
        raise DomainViolation(model.domain_message(float(x[model.x_index]), float(y[model.y_index])))


def objective_value(model: ObjectiveModel, m: Moments) -> float:
    """``F(x, y)``; raises :class:`DomainViolation` outside the model's domain."""
    _check_domain(model, m)
    return float(model.value(m.x, m.y))


@dataclass(frozen=True)
class Assumption1Report:
    ok: bool
    moment: str | None = None
    index: int | None = None
    gradient: float | None = None

    def __bool__(self):
        return self.ok

    def describe(self):
        if self.ok:
            return "objective is decreasing in every used mean and increasing in every used variance"
        want = "< 0" if self.moment == "x" else "> 0"
        return f"dF/d{self.moment}[{self.index}] = {self.gradient!r}, expected {want}"


def check_assumption1(model: ObjectiveModel, m: Moments) -> Assumption1Report:
    """Sign check ``dF/dx_i < 0`` and ``dF/dy_j > 0`` on the moments the model uses."""
    gx, gy = model.partials(m.x, m.y)
    for i in model.uses_x(m.x.size):
        if not gx < 0:
            return Assumption1Report(False, "x", i, gx)
    for j in model.uses_y(m.y.size):
        if not gy > 0:
            return Assumption1Report(False, "y", j, gy)
    return Assumption1Report(True)


def objective_gradients(model: ObjectiveModel, m: Moments):
    """Analytic partial derivatives ``(dF/dx, dF/dy)`` as length-``p`` and ``q`` vectors."""
    _check_domain(model, m)
    report = check_assumption1(model, m)
    if not report:
        raise AssumptionViolated(report.describe(), report)
    gx, gy = model.partials(m.x, m.y)
    grad_x = np.zeros(m.x.size)
    grad_y = np.zeros(m.y.size)
    grad_x[model.x_index] = gx
    grad_y[model.y_index] = gy
    return grad_x, grad_y


def constraint_values(spec: MvpSpec, m: Moments) -> np.ndarray:
    """``[a - x, y - b]``; entries without a limit are ``-inf``."""
    a = spec.floors(m.x.size)
    b = spec.caps(m.y.size)
    with np.errstate(invalid="ignore"):
        gx = np.where(np.isfinite(a), a - m.x, -np.inf)
        gy = np.where(np.isfinite(b), m.y - b, -np.inf)
    return np.concatenate([gx, gy])
