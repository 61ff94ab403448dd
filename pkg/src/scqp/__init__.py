"""Mean-variance portfolio optimization by successive convex QP approximation.

Every supported formulation is reduced to a sequence of strictly convex QPs
over the long-only budget simplex, each solved by a dense dual active-set
method behind a warm-started working-set layer.
"""

from .baselines import (
    grid_oracle,
    solve_dinkelbach,
    solve_mm_kelly,
    solve_mm_worstcase,
    solve_quadratic_transform,
)
from .bench import BenchConfig, run_benchmark, trace_frontier
from .data import estimate_moments, generate_market, load_prices_csv, to_returns
from .objectives import (
    MGSRP,
    MSRP,
    ExpectedUtility,
    Kelly,
    MarketModel,
    Markowitz,
    MaxReturn,
    MinVariance,
    MvpSpec,
    WorstCaseGMRP,
    eval_moments,
)
from .qp import QpProblem, QpSettings, solve_qp
from .solver import ScqpSettings, SolveResult, solve
from .working_set import WorkingSet, solve_with_working_set

__version__ = "0.1.0"

__all__ = [
    "MarketModel", "MvpSpec", "eval_moments",
    "Markowitz", "MSRP", "MGSRP", "WorstCaseGMRP", "ExpectedUtility", "Kelly", "MinVariance", "MaxReturn",
    "QpProblem", "QpSettings", "solve_qp", "WorkingSet", "solve_with_working_set",
    "ScqpSettings", "SolveResult", "solve",
    "solve_dinkelbach", "solve_quadratic_transform", "solve_mm_worstcase", "solve_mm_kelly", "grid_oracle",
    "generate_market", "load_prices_csv", "to_returns", "estimate_moments",
    "BenchConfig", "run_benchmark", "trace_frontier",
]
