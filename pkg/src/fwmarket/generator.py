"""Synthetic tournament data: latent strengths, streams, and trader orders.

One seeded counter-based generator (numpy Philox) drives everything, so a
seed reproduces the dataset byte for byte: team strengths are log-normal
Bradley-Terry weights, the true bracket is simulated round by round, and the
default market adds two conference win-total sums plus three comparisons on
top of the tournament variables.

Traders are simulated as partially informed: each order's belief is a Monte
Carlo estimate of the event's true conditional probability given the games
settled so far, perturbed by logit noise.  Limit prices draw uniformly from
[belief, 1]; a coin flip converts would-be sells into buys of the
complementary event at the complementary belief.  A configurable fraction of
orders (deterministic count) targets comparison variables.

Settlements land at round boundaries; ``settle_rounds`` caps how many rounds
settle inside the stream (the final outcome file always covers every game).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (
    SettlementEvent,
    TradeOrder,
    write_orders_csv,
    write_outcome_csv,
    write_settlements_csv,
)
from .model import EQ, GT, LT, MarketModel, Tournament

BELIEF_SAMPLES = 256
BELIEF_NOISE = 0.35
BELIEF_CLAMP = 0.01
ROUND_SECS = 4 * 3600.0
STRENGTH_SPREAD = 0.75


@dataclass
class GeneratedData:
    model: MarketModel
    orders: list[TradeOrder]
    settlements: list[SettlementEvent]
    outcome: dict  # game name -> winner, every game
    strengths: np.ndarray


def champion_probabilities(k: int, strengths: np.ndarray) -> dict[int, float]:
    """Exact win-the-bracket probability per team under Bradley-Terry."""
    n = 1 << k
    alive = np.ones(n)  # P(team wins its first r rounds), teams 0-based
    for r in range(1, k + 1):
        nxt = np.zeros(n)
        for t in range(n):
            blk = t >> r
            half = t >> (r - 1)
            rivals = [
                o for o in range(blk << r, (blk + 1) << r) if (o >> (r - 1)) != half
            ]
            beat = sum(
                alive[o] * strengths[t] / (strengths[t] + strengths[o]) for o in rivals
            )
            nxt[t] = alive[t] * beat
        alive = nxt
    return {t + 1: float(alive[t]) for t in range(n)}


def default_model(k: int, strengths: np.ndarray) -> MarketModel:
    """Tournament plus conference sums and a standard comparison set."""
    model = MarketModel()
    model.add_tournament(k, champion_probabilities(k, strengths))
    t = model.tournament
    if k >= 2:
        half = t.n_teams // 2
        conf_a = [t.wins_name(i) for i in range(1, half + 1)]
        conf_b = [t.wins_name(i) for i in range(half + 1, t.n_teams + 1)]
        model.add_sum("conference_a_wins", conf_a)
        model.add_sum("conference_b_wins", conf_b)
        model.add_comparison("conference_a_vs_b", "conference_a_wins", "conference_b_wins")
        model.add_comparison("cross_top", t.wins_name(1), t.wins_name(half + 1))
        model.add_comparison("cross_second", t.wins_name(2), t.wins_name(half + 2))
    else:
        model.add_comparison("final_head_to_head", t.wins_name(1), t.wins_name(2))
    return model


def _simulate_brackets(
    rng: np.random.Generator, t: Tournament, strengths: np.ndarray,
    results: dict, m: int,
) -> np.ndarray:
    """m bracket completions consistent with settled results; winners round-major."""
    winners = np.empty((m, len(t.games)), dtype=np.int64)
    prev = np.tile(np.arange(1, t.n_teams + 1), (m, 1))
    col = 0
    for r in range(1, t.k + 1):
        a = prev[:, 0::2]
        c = prev[:, 1::2]
        sa = strengths[a - 1]
        sc = strengths[c - 1]
        u = rng.random(a.shape)
        w = np.where(u < sa / (sa + sc), a, c)
        for blk in range(a.shape[1]):
            if (r, blk) in results:
                w[:, blk] = results[(r, blk)]
        winners[:, col : col + a.shape[1]] = w
        col += a.shape[1]
        prev = w
    return winners


def _realized_numeric(model: MarketModel, name: str, winners: np.ndarray) -> np.ndarray:
    """Per-sample realized value of a numeric variable (game, wins, sum)."""
    t = model.tournament
    var = model.by_name[name]
    if var.kind == "game":
        pos = t.game_pos[(var.meta["round"], var.meta["block"])]
        return winners[:, pos]
    if var.kind == "team_wins":
        team = var.meta["team"]
        cols = [t.game_pos[t.game_of(r, team)] for r in range(1, t.k + 1)]
        return (winners[:, cols] == team).sum(axis=1)
    if var.kind == "sum":
        return sum(_realized_numeric(model, c, winners) for c in var.children)
    raise ValueError(f"variable {name!r} has no numeric realization")


def _event_matches(model: MarketModel, name: str, values, winners: np.ndarray) -> np.ndarray:
    var = model.by_name[name]
    if var.kind == "comparison":
        a = _realized_numeric(model, var.children[0], winners)
        c = _realized_numeric(model, var.children[1], winners)
        match = np.zeros(winners.shape[0], dtype=bool)
        for v in values:
            match |= a < c if v == LT else a == c if v == EQ else a > c
        return match
    return np.isin(_realized_numeric(model, name, winners), list(values))


def _observed_values(model: MarketModel, name: str, winners: np.ndarray) -> list:
    """Domain values realized in at least one sampled completion, sorted."""
    var = model.by_name[name]
    if var.kind == "comparison":
        a = _realized_numeric(model, var.children[0], winners)
        c = _realized_numeric(model, var.children[1], winners)
        realized = np.where(a < c, 0, np.where(a == c, 1, 2))
        return [(LT, EQ, GT)[v] for v in np.unique(realized)]
    return [int(v) for v in np.unique(_realized_numeric(model, name, winners))]


def _pick_event(rng: np.random.Generator, model: MarketModel, name: str,
                observed: list) -> tuple:
    """Choose a proper event subset containing a sampled-possible value."""
    var = model.by_name[name]
    v = observed[rng.integers(len(observed))]
    if var.kind != "comparison" and len(var.domain) > 2 and rng.random() < 0.3:
        # one-sided range event: "at least v" or "at most v"
        if rng.random() < 0.5:
            event = tuple(x for x in var.domain if x >= v)
        else:
            event = tuple(x for x in var.domain if x <= v)
        if len(event) < len(var.domain):
            return event
    return (v,)


def generate(
    k: int,
    n_orders: int,
    comparison_fraction: float = 0.17,
    seed: int = 0,
    settle_rounds: int | None = None,
    budget: float = 1.0,
    round_secs: float = ROUND_SECS,
    belief_samples: int = BELIEF_SAMPLES,
) -> GeneratedData:
    """Build a seeded synthetic dataset: model, orders, settlements, outcome."""
    if not 1 <= k <= 6:
        raise ValueError(f"rounds k={k} outside [1, 6]")
    if n_orders < 0:
        raise ValueError("n_orders must be nonnegative")
    if not 0.0 <= comparison_fraction <= 1.0:
        raise ValueError("comparison_fraction must be in [0, 1]")
    settle_rounds = k if settle_rounds is None else settle_rounds
    rng = np.random.Generator(np.random.Philox(seed))
    n_teams = 1 << k
    strengths = np.exp(rng.normal(0.0, STRENGTH_SPREAD, n_teams))
    model = default_model(k, strengths)
    t = model.tournament

    # The true bracket, drawn once.
    truth = _simulate_brackets(rng, t, strengths, {}, 1)[0]
    outcome = {
        t.game_name(r, blk): int(truth[i]) for i, (r, blk) in enumerate(t.games)
    }
    # A whole round settles as one batch at the round boundary.
    settlements = [
        SettlementEvent(r * round_secs, t.game_name(r, blk), int(truth[t.game_pos[(r, blk)]]))
        for r in range(1, min(settle_rounds, k) + 1)
        for blk in range(1 << (k - r))
    ]

    times = np.sort(rng.uniform(0.0, k * round_secs, n_orders))
    n_cmp = int(round(comparison_fraction * n_orders))
    is_cmp = np.zeros(n_orders, dtype=bool)
    is_cmp[rng.permutation(n_orders)[:n_cmp]] = True
    cmp_vars = [v.name for v in model.variables if v.kind == "comparison"]
    plain_classes = [
        [v.name for v in model.variables if v.kind == kind]
        for kind in ("game", "team_wins", "sum")
    ]
    class_weights = np.array([0.5, 0.3, 0.2 if plain_classes[2] else 0.0])
    class_weights /= class_weights.sum()

    orders: list[TradeOrder] = []
    settled_at = 0  # settlements with timestamp <= current order time
    results: dict[tuple, int] = {}
    for i in range(n_orders):
        ts = float(times[i])
        while settled_at < len(settlements) and settlements[settled_at].timestamp <= ts:
            ev = settlements[settled_at]
            var = model.by_name[ev.game]
            results[(var.meta["round"], var.meta["block"])] = ev.winner
            settled_at += 1
        for _ in range(5):  # re-pick when the sampled variable is decided
            if is_cmp[i]:
                name = cmp_vars[rng.integers(len(cmp_vars))]
            else:
                cls = plain_classes[rng.choice(3, p=class_weights)]
                name = cls[rng.integers(len(cls))]
            winners = _simulate_brackets(rng, t, strengths, results, belief_samples)
            observed = _observed_values(model, name, winners)
            if len(observed) >= 2:
                break
        if len(observed) >= 2:
            event = _pick_event(rng, model, name, observed)
            belief = float(_event_matches(model, name, event, winners).mean())
            if rng.random() < 0.5:  # sell: buy the complement at 1 - belief
                var = model.by_name[name]
                event = tuple(v for v in var.domain if v not in set(event))
                belief = 1.0 - belief
            belief = min(max(belief, BELIEF_CLAMP), 1.0 - BELIEF_CLAMP)
            noisy = 1.0 / (1.0 + np.exp(-(np.log(belief / (1.0 - belief))
                                          + rng.normal(0.0, BELIEF_NOISE))))
            noisy = min(max(float(noisy), BELIEF_CLAMP), 1.0 - BELIEF_CLAMP)
        else:
            # every sample agrees: emit an order priced at certainty so the
            # stream keeps its exact composition; it almost never executes
            event = (observed[0],)
            noisy = 1.0 - BELIEF_CLAMP
        limit = float(rng.uniform(noisy, 1.0))
        orders.append(TradeOrder(ts, name, event, limit, budget))
    return GeneratedData(model, orders, settlements, outcome, strengths)


def write_dataset(
    data: GeneratedData, model_path: str, orders_path: str,
    settlements_path: str, outcome_path: str,
) -> None:
    data.model.save(model_path)
    write_orders_csv(orders_path, data.orders)
    write_settlements_csv(settlements_path, data.settlements)
    write_outcome_csv(outcome_path, data.outcome)
