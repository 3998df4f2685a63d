"""Partial arbitrage removal by trading violated relaxed-constraint rows.

Every relaxed row a . mu >= rhs is sound for the admissible payoff set, so
whenever current prices violate it the market maker can buy the bundle eta*a
for eta chosen so the row's price rises back to rhs.  Convexity of the cost
makes that trade cost at most eta*rhs while it pays at least eta*rhs at
settlement: a risk-free profit that also pulls prices toward the relaxed
polytope (it will not, in general, reach the exact Bregman projection).

Rows are swept most-violated-first; equality rows trade in whichever
direction is violated.  Box rows never trade (a price map cannot violate
them).  The line search brackets by doubling and bisects, returning the
bracket end on the still-profitable side, so every booked trade satisfies the
profit inequality exactly rather than to line-search tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .costs import MarketState, PartialOutcome, cost
from .model import LinearRow, MarketModel

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_PASSES = 50
ETA_CAP = float(2**40)
LINE_SEARCH_STEPS = 200
LINE_SEARCH_REL = 1e-13


@dataclass(frozen=True)
class Direction:
    """One tradeable >= direction of a relaxed row."""

    idx: np.ndarray
    coef: np.ndarray
    rhs: float
    dense: np.ndarray
    groups: np.ndarray
    tag: str


@dataclass
class LcmmResult:
    state: MarketState
    profit_bound: float
    n_trades: int
    passes: int
    converged: bool
    max_violation: float


def trade_directions(model: MarketModel) -> list[Direction]:
    """Expand tradeable rows into >= directions with dense trade vectors."""
    out = []
    for row in model.tradeable_lcmm_rows:
        sides = [(row.coef, row.rhs)]
        if row.sense == "eq":
            sides.append((-row.coef, -row.rhs))
        for coef, rhs in sides:
            dense = np.zeros(model.n_securities, dtype=np.float64)
            dense[row.idx] = coef
            groups = np.unique(model.group_of[row.idx])
            out.append(
                Direction(row.idx, coef.astype(np.float64), float(rhs), dense,
                          groups.astype(np.int64), row.tag)
            )
    return out


def _root_eta(d: Direction, theta: np.ndarray, b: float, model: MarketModel,
              sigma: PartialOutcome) -> float:
    """Largest eta with the traded row still at or below rhs.

    The row price is nondecreasing in eta; the bracket doubles until it
    crosses rhs (or hits the cap, meaning the trade cannot move the row:
    wrong direction, skip).  Bisection then returns the lower end, so the
    market maker never pays more than eta * rhs for the bundle.
    """
    return float(
        kernels.root_bundle_eta(
            theta, d.dense, d.rhs, b, model.group_start, sigma.bits, d.groups,
            ETA_CAP, LINE_SEARCH_STEPS, LINE_SEARCH_REL,
        )
    )


def remove_arbitrage(
    model: MarketModel,
    state: MarketState,
    sigma: PartialOutcome,
    tol: float = DEFAULT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
    directions: list[Direction] | None = None,
) -> LcmmResult:
    """Sweep relaxed rows, trading each violated one back to its bound.

    Stops when the worst violation is within ``tol`` or after ``max_passes``
    sweeps (non-convergence is legal and logged).  Settled securities keep
    their exact prices: trading moves only unsettled coordinates' prices.
    """
    dirs = directions if directions is not None else trade_directions(model)
    theta = state.theta.copy()
    b = state.b
    start_cost = cost(model, state, sigma)
    sold_value = 0.0
    n_trades = 0
    passes = 0
    prices = np.empty(model.n_securities, dtype=np.float64)
    dense_rows = np.stack([d.dense for d in dirs]) if dirs else np.empty((0, 0))
    rhs_vec = np.array([d.rhs for d in dirs])
    while passes < max_passes:
        passes += 1
        kernels.prices_into(theta, b, model.group_start, sigma.bits, prices)
        violations = rhs_vec - dense_rows @ prices
        order = np.argsort(-violations, kind="stable")
        worst = float(violations[order[0]]) if len(order) else 0.0
        if worst <= tol:
            break
        traded = False
        for j in order:
            if violations[j] <= tol:
                break
            d = dirs[j]
            # earlier trades this pass moved prices; re-check before trading
            value = kernels.bundle_price_along(
                theta, d.dense, 0.0, b, model.group_start, sigma.bits, d.groups
            )
            if d.rhs - value <= tol:
                continue
            eta = _root_eta(d, theta, b, model, sigma)
            if eta <= 0.0:
                log.debug("row %s violated but untradeable (flat direction)", d.tag)
                continue
            theta += eta * d.dense
            sold_value += eta * d.rhs
            n_trades += 1
            traded = True
        if not traded:
            break
    final_state = state.with_theta(theta)
    kernels.prices_into(theta, b, model.group_start, sigma.bits, prices)
    max_violation = float((rhs_vec - dense_rows @ prices).max()) if dirs else 0.0
    converged = max_violation <= tol
    if not converged:
        log.info(
            "arbitrage removal stopped after %d passes with violation %.3g",
            passes, max_violation,
        )
    profit_bound = sold_value - (cost(model, final_state, sigma) - start_cost)
    return LcmmResult(final_state, profit_bound, n_trades, passes, converged, max_violation)
