"""Arbitrage-limited combinatorial prediction markets.

Securities over tournament outcomes (plus sums and comparisons of them) are
priced by a sum of per-variable logarithmic market scoring rules.  Coherence
across variables comes from two escalating mechanisms: cheap constraint-row
trading that removes the arbitrage a relaxation can see, and Bregman
projection onto the true outcome polytope driven by an integer-programming
vertex oracle inside a Frank-Wolfe loop.  A replay engine compares the
treatments on the same order stream.
"""

from .costs import (
    MarketState,
    PartialOutcome,
    conjugate_gradient,
    conjugate_value,
    cost,
    divergence,
    price,
    state_from_prices,
    trade_cost,
)
from .engine import (
    FWMM,
    IND,
    LCMM,
    Ledger,
    RunConfig,
    SettlementEvent,
    Snapshot,
    TradeOrder,
    direct_settlement_bits,
    execute_limit_order,
    log_likelihood_metrics,
    outcome_token,
    replay_max_error,
    run_market,
)
from .errors import BoundaryError, ConsistencyError, FwmarketError, ParseError
from .generator import GeneratedData, champion_probabilities, default_model, generate
from .kernels import BACKEND
from .lcmm import LcmmResult, remove_arbitrage, trade_directions
from .model import LinearRow, MarketModel, Tournament, Variable, init_prices
from .oracle import Oracle, OracleResult, SettleResult, enumerate_solutions
from .projection import (
    ALREADY_COHERENT,
    INTERRUPTED,
    NO_UPDATE,
    PROFIT_GUARANTEED,
    ProjectionResult,
    fw_gap,
    init_fw,
    inner_solve,
    project_fw,
)

__version__ = "0.1.0"

__all__ = [
    "ALREADY_COHERENT",
    "BACKEND",
    "BoundaryError",
    "ConsistencyError",
    "FWMM",
    "FwmarketError",
    "GeneratedData",
    "IND",
    "INTERRUPTED",
    "LCMM",
    "LcmmResult",
    "Ledger",
    "LinearRow",
    "MarketModel",
    "MarketState",
    "NO_UPDATE",
    "Oracle",
    "OracleResult",
    "PROFIT_GUARANTEED",
    "ParseError",
    "PartialOutcome",
    "ProjectionResult",
    "RunConfig",
    "SettleResult",
    "SettlementEvent",
    "Snapshot",
    "Tournament",
    "TradeOrder",
    "Variable",
    "champion_probabilities",
    "conjugate_gradient",
    "conjugate_value",
    "cost",
    "default_model",
    "direct_settlement_bits",
    "divergence",
    "enumerate_solutions",
    "execute_limit_order",
    "fw_gap",
    "generate",
    "init_fw",
    "init_prices",
    "inner_solve",
    "log_likelihood_metrics",
    "outcome_token",
    "price",
    "project_fw",
    "remove_arbitrage",
    "replay_max_error",
    "run_market",
    "state_from_prices",
    "trade_cost",
    "trade_directions",
]
