"""Trade replay: limit orders, settlements, market-maker steps, metrics.

The engine consumes timestamp-sorted order and settlement streams and replays
them against one of three treatments:

* ``ind``  — independent per-variable markets; no cross-variable activity.
* ``lcmm`` — after every executed trade, the market maker trades violated
  relaxed constraint rows back to their bounds (guaranteed-profit moves).
* ``fwmm`` — lcmm plus Bregman projection onto the outcome hull, attempted
  after every settlement batch and every ``projection_cadence`` trades.

Events at equal timestamps process settlements first.  All market-maker
activity is cashless bookkeeping against its own cost function; ``revenue``
counts trader payments only, and the final loss is ``payout - revenue``.
Every ledger entry carries enough to replay the run: costs recompute exactly
from the initial state by walking entries in order.

Snapshot rows (hourly on the simulated clock, every ``snapshot_trades``
executed trades, and once at the final event) record the two log-likelihood
accuracy metrics, cash, and the most recent projection status.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import MarketState, PartialOutcome, price, state_from_prices, trade_cost
from .errors import ConsistencyError, ParseError
from .lcmm import remove_arbitrage, trade_directions
from .model import MarketModel, Variable
from .oracle import Oracle
from .projection import project_fw

log = logging.getLogger(__name__)

IND = "ind"
LCMM = "lcmm"
FWMM = "fwmm"
TREATMENTS = (IND, LCMM, FWMM)

PRICE_FLOOR = 1e-9
SNAPSHOT_SECS = 3600.0
SNAPSHOT_TRADES = 100


@dataclass(frozen=True)
class TradeOrder:
    timestamp: float
    variable: str
    event_values: tuple
    limit_price: float
    budget: float


@dataclass(frozen=True)
class SettlementEvent:
    timestamp: float
    game: str
    winner: int


@dataclass
class RunConfig:
    treatment: str = FWMM
    liquidity: float = 150.0
    budget: float | None = None  # overrides every order's budget when set
    alpha: float = 0.5
    eps0: float = 0.5
    epsd: float = 1e-6
    projection_cadence: int = 100
    projection_deadline: float = 10.0
    snapshot_trades: int = SNAPSHOT_TRADES
    snapshot_secs: float = SNAPSHOT_SECS
    seed: int | None = None

    def validate(self) -> None:
        if self.treatment not in TREATMENTS:
            raise ValueError(f"treatment must be one of {TREATMENTS}")
        for name in ("liquidity", "alpha", "eps0", "epsd",
                     "projection_cadence", "projection_deadline",
                     "snapshot_trades", "snapshot_secs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.budget is not None and not self.budget > 0:
            raise ValueError("budget override must be positive")


@dataclass
class TradeEntry:
    timestamp: float
    variable: str
    event_values: tuple
    securities: tuple  # coordinates actually bought (unsettled at trade time)
    quantity: float
    cost: float


@dataclass
class MakerEntry:
    timestamp: float
    kind: str  # "lcmm" | "projection"
    delta: np.ndarray
    cost: float


@dataclass
class SettleEntry:
    timestamp: float
    kind: str  # "settlement" | "extension"
    pairs: tuple  # ((security, bit), ...)
    game: str = ""
    winner: int = 0


@dataclass
class Ledger:
    entries: list = field(default_factory=list)
    revenue: float = 0.0
    payout_total: float = 0.0

    @property
    def trades(self) -> list[TradeEntry]:
        return [e for e in self.entries if isinstance(e, TradeEntry)]

    @property
    def maker_trades(self) -> list[MakerEntry]:
        return [e for e in self.entries if isinstance(e, MakerEntry)]

    @property
    def loss(self) -> float:
        return self.payout_total - self.revenue


@dataclass(frozen=True)
class Snapshot:
    timestamp: float
    n_trades: int
    avg_variable_ll: float
    avg_bundle_ll: float
    mm_cash: float
    projection_status: str


# ----------------------------------------------------------------- limit orders


def execute_limit_order(
    model: MarketModel, state: MarketState, sigma: PartialOutcome, order: TradeOrder
) -> tuple[MarketState, float, float, tuple]:
    """Buy the largest stake in the event respecting limit price and budget.

    Returns (new state, shares bought, cost paid, securities bought).  The
    trade adds q to each still-unsettled event coordinate, with q chosen so
    the resulting event price does not exceed the limit and the cost does not
    exceed the budget; a decided group, an already-certain event, or a limit
    at or below the current price all yield q = 0.
    """
    var = model.by_name[order.variable]
    bits = sigma.bits
    group = np.arange(var.start, var.stop)
    if (bits[group] == 1).any():
        return state, 0.0, 0.0, ()
    event = np.array(sorted({var.security(v) for v in order.event_values}))
    buy = event[bits[event] == -1]
    open_rest = group[(bits[group] == -1) & ~np.isin(group, buy)]
    if buy.size == 0 or open_rest.size == 0:
        return state, 0.0, 0.0, ()
    b = state.b
    log_se = np.logaddexp.reduce(state.theta[buy] / b)
    log_sc = np.logaddexp.reduce(state.theta[open_rest] / b)
    limit = order.limit_price
    if limit >= 1.0:
        q_limit = np.inf
    elif limit <= 0.0:
        return state, 0.0, 0.0, ()
    else:
        q_limit = b * (np.log(limit) - np.log1p(-limit) + log_sc - log_se)
    if order.budget <= 0.0:
        return state, 0.0, 0.0, ()
    a = order.budget / b + np.logaddexp(log_se, log_sc)
    inner = -np.expm1(log_sc - a)
    if inner <= 0.0:
        q_budget = -np.inf
    else:
        q_budget = b * (a + np.log(inner) - log_se)
    q = min(q_limit, q_budget)
    if not q > 0.0:
        return state, 0.0, 0.0, ()
    delta = np.zeros(model.n_securities)
    delta[buy] = q
    paid = trade_cost(model, state, sigma, delta)
    return state.with_theta(state.theta + delta), float(q), paid, tuple(int(s) for s in buy)


# ------------------------------------------------------------------ settlements


def validate_settlement(model: MarketModel, results: dict, event: SettlementEvent) -> tuple:
    """Check one settlement against bracket order; return its (round, block)."""
    t = model.tournament
    if t is None:
        raise ConsistencyError("settlements require a tournament model")
    var = model.by_name.get(event.game)
    if var is None or var.kind != "game":
        raise ConsistencyError(f"{event.game!r} is not a game variable")
    r, blk = var.meta["round"], var.meta["block"]
    if (r, blk) in results:
        raise ConsistencyError(f"game {event.game!r} settled twice")
    if r == 1:
        contenders = (2 * blk + 1, 2 * blk + 2)
    else:
        feeders = ((r - 1, 2 * blk), (r - 1, 2 * blk + 1))
        missing = [f for f in feeders if f not in results]
        if missing:
            raise ConsistencyError(
                f"game {event.game!r} settled before its feeder games"
            )
        contenders = tuple(results[f] for f in feeders)
    if event.winner not in contenders:
        raise ConsistencyError(
            f"team {event.winner} cannot win {event.game!r}; contenders {contenders}"
        )
    return (r, blk)


def direct_settlement_bits(model: MarketModel, results: dict) -> np.ndarray:
    """Security bits implied by accumulated game results without any solving.

    Covers: settled games (winner 1, losers 0), win counts of eliminated
    teams and champions (full), the impossible low win counts of teams still
    alive, eliminated teams' coordinates in unplayed games, and sums and
    comparisons once every child's value is known.
    """
    t = model.tournament
    bits = np.full(model.n_securities, -1, dtype=np.int8)
    values: dict[str, object] = {}
    for (r, blk), w in results.items():
        values[t.game_name(r, blk)] = w
    wins: dict[int, int] = {}
    alive: dict[int, bool] = {}
    for team in range(1, t.n_teams + 1):
        w = 0
        live = True
        for r in range(1, t.k + 1):
            g = t.game_of(r, team)
            if g not in results:
                break
            if results[g] == team:
                w += 1
            else:
                live = False
                break
        wins[team], alive[team] = w, live
        name = t.wins_name(team)
        if not live or w == t.k:
            values[name] = w
        else:
            var = model.by_name[name]
            for x in range(w):
                bits[var.security(x)] = 0
    for var in model.variables:
        if var.kind == "game" and var.name not in values:
            for team in var.domain:
                if not alive[team]:
                    bits[var.security(team)] = 0
        elif var.kind == "sum" and all(c in values for c in var.children):
            values[var.name] = sum(values[c] for c in var.children)
        elif var.kind == "comparison" and all(c in values for c in var.children):
            a, c = (values[ch] for ch in var.children)
            values[var.name] = "lt" if a < c else "eq" if a == c else "gt"
    for name, value in values.items():
        var = model.by_name[name]
        seg = np.arange(var.start, var.stop)
        bits[seg] = 0
        bits[var.security(value)] = 1
    return bits


def settlement_pairs(model: MarketModel, sigma: PartialOutcome, results: dict) -> tuple:
    """Newly implied (security, bit) pairs not yet present in sigma."""
    bits = direct_settlement_bits(model, results)
    clash = np.flatnonzero((bits != -1) & (sigma.bits != -1) & (bits != sigma.bits))
    if clash.size:
        name, value = model.label(int(clash[0]))
        raise ConsistencyError(
            f"settlement contradicts the prior state of {name!r} = {value!r}"
        )
    fresh = np.flatnonzero((bits != -1) & (sigma.bits == -1))
    return tuple((int(i), int(bits[i])) for i in fresh)


# ---------------------------------------------------------------- outcome token


def outcome_token(model: MarketModel, winners: dict) -> int:
    """Encode a full game->winner map as an outcome index."""
    t = model.tournament
    if t is None:
        raise ConsistencyError("outcome tokens require a tournament model")
    token = 0
    decided: dict[tuple, int] = {}
    for pos, (r, blk) in enumerate(t.games):
        name = t.game_name(r, blk)
        if name not in winners:
            raise ConsistencyError(f"outcome is missing the winner of {name!r}")
        w = int(winners[name])
        if r == 1:
            pair = (2 * blk + 1, 2 * blk + 2)
        else:
            pair = (decided[(r - 1, 2 * blk)], decided[(r - 1, 2 * blk + 1)])
        if w == pair[1]:
            token |= 1 << pos
        elif w != pair[0]:
            raise ConsistencyError(
                f"outcome winner {w} of {name!r} is not among contenders {pair}"
            )
        decided[(r, blk)] = w
    return token


# --------------------------------------------------------------------- metrics


def log_likelihood_metrics(
    model: MarketModel, prices: np.ndarray, truth: dict, bundles
) -> tuple[float, float]:
    """Average variable and bundle log likelihoods at the given prices.

    Variable form: mean over variables of log mu{X = realized value}.  Bundle
    form: mean over purchased bundles of log mu{event} when the event
    happened, else log(1 - mu{event}).  Prices floor at 1e-9 before the log.
    """
    var_ll = 0.0
    for var in model.variables:
        var_ll += np.log(max(prices[var.security(truth[var.name])], PRICE_FLOOR))
    var_ll /= max(len(model.variables), 1)
    if not bundles:
        return float(var_ll), 0.0
    bundle_ll = 0.0
    for variable, event_values in bundles:
        var = model.by_name[variable]
        p = float(sum(prices[var.security(v)] for v in event_values))
        if truth[variable] in set(event_values):
            bundle_ll += np.log(max(p, PRICE_FLOOR))
        else:
            bundle_ll += np.log(max(1.0 - p, PRICE_FLOOR))
    return float(var_ll), float(bundle_ll / len(bundles))


# ------------------------------------------------------------------ run market


def run_market(
    model: MarketModel,
    orders: list[TradeOrder],
    settlements: list[SettlementEvent],
    outcome,
    config: RunConfig,
) -> tuple[Ledger, list[Snapshot]]:
    """Replay order and settlement streams under one treatment.

    ``outcome`` is either a game->winner map covering every game or an
    outcome index; it prices the accuracy metrics and closes the ledger.
    Consistency violations (out-of-order or contradictory settlements,
    settlements disagreeing with the outcome) raise ConsistencyError.
    """
    config.validate()
    token = outcome if isinstance(outcome, (int, np.integer)) else outcome_token(model, outcome)
    truth = model.outcome_values(token)
    payoff = model.payoff(token)
    state = state_from_prices(model, model.initial_prices, config.liquidity)
    sigma = PartialOutcome.empty(model.n_securities)
    oracle = Oracle(model)
    directions = trade_directions(model) if config.treatment != IND else []
    ledger = Ledger()
    snapshots: list[Snapshot] = []
    bundles: list[tuple] = []
    results: dict[tuple, int] = {}
    n_trades = 0
    last_status = "none"

    def emit(ts: float) -> None:
        var_ll, bundle_ll = log_likelihood_metrics(
            model, price(model, state, sigma), truth, bundles
        )
        snap = Snapshot(ts, n_trades, var_ll, bundle_ll, ledger.revenue, last_status)
        if snapshots and snapshots[-1] == snap:
            return
        snapshots.append(snap)

    def attempt_projection(ts: float) -> None:
        nonlocal state, sigma, last_status
        res = project_fw(
            model, state, sigma, oracle,
            alpha=config.alpha, eps0=config.eps0, epsd=config.epsd,
            deadline_secs=config.projection_deadline,
        )
        last_status = res.status
        if not np.array_equal(res.sigma.bits, sigma.bits):
            fresh = np.flatnonzero((res.sigma.bits != -1) & (sigma.bits == -1))
            pairs = tuple((int(i), int(res.sigma.bits[i])) for i in fresh)
            ledger.entries.append(SettleEntry(ts, "extension", pairs))
            sigma = res.sigma
        if res.updated:
            delta = res.state.theta - state.theta
            paid = trade_cost(model, state, sigma, delta)
            ledger.entries.append(MakerEntry(ts, "projection", delta, paid))
            state = res.state

    events: list[tuple] = [
        (s.timestamp, 0, i, s) for i, s in enumerate(settlements)
    ] + [(o.timestamp, 1, i, o) for i, o in enumerate(orders)]
    events.sort(key=lambda e: e[:3])
    next_hour = config.snapshot_secs
    last_ts = events[-1][0] if events else 0.0

    for pos, (ts, kind, _, ev) in enumerate(events):
        while next_hour < ts:
            emit(next_hour)
            next_hour += config.snapshot_secs
        if kind == 0:
            key = validate_settlement(model, results, ev)
            if isinstance(outcome, dict) and outcome.get(ev.game, ev.winner) != ev.winner:
                raise ConsistencyError(
                    f"settlement of {ev.game!r} disagrees with the final outcome"
                )
            results[key] = ev.winner
            pairs = settlement_pairs(model, sigma, results)
            sigma = sigma.settle(pairs)  # raises on contradiction
            ledger.entries.append(
                SettleEntry(ts, "settlement", pairs, ev.game, ev.winner)
            )
            batch_ends = pos + 1 >= len(events) or events[pos + 1][1] != 0 \
                or events[pos + 1][0] != ts
            if batch_ends and config.treatment == FWMM:
                attempt_projection(ts)
        else:
            order = ev if config.budget is None else replace(ev, budget=config.budget)
            state, q, paid, secs = execute_limit_order(model, state, sigma, order)
            if q > 0.0:
                n_trades += 1
                ledger.revenue += paid
                ledger.entries.append(
                    TradeEntry(ts, order.variable, order.event_values, secs, q, paid)
                )
                bundles.append((order.variable, order.event_values))
                if config.treatment != IND:
                    res = remove_arbitrage(
                        model, state, sigma, directions=directions
                    )
                    if res.n_trades:
                        delta = res.state.theta - state.theta
                        paid = trade_cost(model, state, sigma, delta)
                        ledger.entries.append(MakerEntry(ts, "lcmm", delta, paid))
                        state = res.state
                if config.treatment == FWMM and n_trades % config.projection_cadence == 0:
                    attempt_projection(ts)
                if n_trades % config.snapshot_trades == 0:
                    emit(ts)
    while next_hour < last_ts:
        emit(next_hour)
        next_hour += config.snapshot_secs
    emit(last_ts)
    ledger.payout_total = float(
        sum(e.quantity * payoff[list(e.securities)].sum() for e in ledger.trades)
    )
    return ledger, snapshots


def replay_max_error(model: MarketModel, ledger: Ledger, liquidity: float) -> float:
    """Largest |recorded - recomputed| cost over a fresh replay of the ledger."""
    state = state_from_prices(model, model.initial_prices, liquidity)
    sigma = PartialOutcome.empty(model.n_securities)
    worst = 0.0
    for entry in ledger.entries:
        if isinstance(entry, SettleEntry):
            sigma = sigma.settle(entry.pairs)
            continue
        if isinstance(entry, TradeEntry):
            delta = np.zeros(model.n_securities)
            delta[list(entry.securities)] = entry.quantity
        else:
            delta = entry.delta
        worst = max(worst, abs(trade_cost(model, state, sigma, delta) - entry.cost))
        state = state.with_theta(state.theta + delta)
    return worst


# ------------------------------------------------------------------------- csv


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_orders_csv(path: str, orders: list[TradeOrder]) -> None:
    with open(path, "w") as fh:
        fh.write("timestamp,variable_id,event_values,limit_price,budget\n")
        for o in orders:
            values = ";".join(str(v) for v in o.event_values)
            fh.write(
                f"{_fmt(o.timestamp)},{o.variable},{values},"
                f"{_fmt(o.limit_price)},{_fmt(o.budget)}\n"
            )


def _parse_value(var: Variable, text: str, path: str, lineno: int):
    for v in var.domain:
        if str(v) == text:
            return v
    raise ParseError(path, lineno, f"value {text!r} not in the domain of {var.name!r}")


def read_orders_csv(path: str, model: MarketModel) -> list[TradeOrder]:
    orders = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError(path, lineno, f"expected 5 fields, got {len(parts)}")
            ts_s, variable, values_s, limit_s, budget_s = parts
            var = model.by_name.get(variable)
            if var is None:
                raise ParseError(path, lineno, f"unknown variable {variable!r}")
            tokens = [t for t in values_s.split(";") if t]
            if not tokens or len(tokens) != len(set(tokens)):
                raise ParseError(path, lineno, f"bad event values {values_s!r}")
            values = tuple(_parse_value(var, t, path, lineno) for t in tokens)
            try:
                ts, limit, budget = float(ts_s), float(limit_s), float(budget_s)
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad number: {exc}") from exc
            if not 0.0 < limit <= 1.0:
                raise ParseError(path, lineno, f"limit price {limit} outside (0, 1]")
            if not budget > 0.0:
                raise ParseError(path, lineno, f"budget {budget} must be positive")
            orders.append(TradeOrder(ts, variable, values, limit, budget))
    return orders


def write_settlements_csv(path: str, settlements: list[SettlementEvent]) -> None:
    with open(path, "w") as fh:
        fh.write("timestamp,game_id,winner\n")
        for s in settlements:
            fh.write(f"{_fmt(s.timestamp)},{s.game},{s.winner}\n")


def read_settlements_csv(path: str, model: MarketModel) -> list[SettlementEvent]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 fields, got {len(parts)}")
            ts_s, game, winner_s = parts
            var = model.by_name.get(game)
            if var is None or var.kind != "game":
                raise ParseError(path, lineno, f"unknown game {game!r}")
            try:
                ts, winner = float(ts_s), int(winner_s)
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad number: {exc}") from exc
            out.append(SettlementEvent(ts, game, winner))
    return out


def write_outcome_csv(path: str, winners: dict) -> None:
    with open(path, "w") as fh:
        fh.write("game_id,winner\n")
        for game, winner in winners.items():
            fh.write(f"{game},{winner}\n")


def read_outcome_csv(path: str, model: MarketModel) -> dict:
    winners: dict[str, int] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line.startswith("game_id")):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 2 fields, got {len(parts)}")
            game, winner_s = parts
            var = model.by_name.get(game)
            if var is None or var.kind != "game":
                raise ParseError(path, lineno, f"unknown game {game!r}")
            try:
                winners[game] = int(winner_s)
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad winner: {exc}") from exc
    return winners


def write_snapshots_csv(path: str, snapshots: list[Snapshot]) -> None:
    with open(path, "w") as fh:
        fh.write(
            "timestamp,n_trades,avg_variable_ll,avg_bundle_ll,mm_cash,projection_status\n"
        )
        for s in snapshots:
            fh.write(
                f"{_fmt(s.timestamp)},{s.n_trades},{_fmt(s.avg_variable_ll)},"
                f"{_fmt(s.avg_bundle_ll)},{_fmt(s.mm_cash)},{s.projection_status}\n"
            )


def read_snapshots_csv(path: str) -> list[Snapshot]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ParseError(path, lineno, f"expected 6 fields, got {len(parts)}")
            out.append(
                Snapshot(
                    float(parts[0]), int(parts[1]), float(parts[2]),
                    float(parts[3]), float(parts[4]), parts[5],
                )
            )
    return out
