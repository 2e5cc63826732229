"""Desk-scale penalized martingale transport on finite path lattices.

Core objects: a MarketGrid of per-time node sets, path measures and
semistatic strategies on it, penalty families on the marginals, and the
two sides of the duality: solve_inf (measures) and solve_sup (hedges).
"""

from .lattice import (
    ConeSpec,
    GridError,
    MarginalMeasure,
    MarketGrid,
    PathMeasure,
    SemistaticStrategy,
    cone_membership,
    grid_from_node_lists,
    marginal,
    martingale_residuals,
    stochastic_integral,
)
from .valuation import (
    CustomUtility,
    OceValue,
    UtilityFunction,
    conjugate,
    divergence,
    goce_indirect,
    stock_additive_value,
    utility,
)
from .penalties import (
    DivergenceSum,
    FixedMarginals,
    LossFunction,
    MarketPrice,
    MonotoneSequence,
    OptionQuote,
    WassersteinBall,
    loss,
    penalty_value,
    scaled_utility,
)
from .wasserstein import GroundMetric, kr_dual_witness, w1
from .solver import (
    EmotProblem,
    SolveReport,
    SolverError,
    SolverOptions,
    lp_minimize,
    martingale_attainable,
    mot_value,
    solve_eot,
    solve_inf,
)
from .hedging import (
    HedgeProblem,
    HedgeReport,
    call_decomposition,
    feasible,
    solve_sup,
    subhedge_no_options,
    superhedge,
)
from .convergence import (
    ConvergenceResult,
    run_eps_martingale,
    run_marginal_perturbation,
    run_monotone,
)
from . import oracle, scenario

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
