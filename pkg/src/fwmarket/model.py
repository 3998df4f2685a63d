"""Securities, variables, outcome sets, and the constraint rows over them.

A model is a list of variables, each holding a contiguous group of mutually
exclusive securities (one per domain value).  The admissible payoff vectors
form the solution set of an integer program over those securities; a second,
relaxed row set over price vectors drives arbitrage removal.  Two outcome
backings exist: a single-elimination tournament (payoffs enumerated from game
winner bitstrings) and an explicit list of base-variable assignments for
hand-built fixtures.  Derived variables (sums and pairwise comparisons of
integer variables) work with either backing.

Constraint conventions: rows are sparse integer-coefficient relations
``coef . z >= rhs`` or ``== rhs``.  Every variable carries an exclusivity row
(its securities sum to 1).  Tournament win counts couple to game winners, sums
couple through an expected-value identity, and comparisons use big-M rows on
the integer side but tighter union-bound rows on the relaxed side.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, ParseError

log = logging.getLogger(__name__)

LT, EQ, GT = "lt", "eq", "gt"
COMPARISON_DOMAIN = (LT, EQ, GT)

VARIANCE_FLOOR = 0.25
PAYOFF_CACHE_LIMIT = 1 << 14
PROJECTION_PASSES = 200
PROJECTION_TOL = 1e-8


@dataclass(frozen=True)
class LinearRow:
    """Sparse integer row over securities: coef . z (>=|==) rhs."""

    idx: np.ndarray
    coef: np.ndarray
    sense: str
    rhs: int
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "idx", np.asarray(self.idx, dtype=np.int64))
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=np.int64))
        if self.sense not in ("ge", "eq"):
            raise ValueError(f"unknown sense {self.sense!r}")

    def value(self, vec: np.ndarray) -> float:
        return float(vec[self.idx] @ self.coef)

    def holds_exactly(self, z: np.ndarray) -> bool:
        v = int(np.asarray(z, dtype=np.int64)[self.idx] @ self.coef)
        return v == self.rhs if self.sense == "eq" else v >= self.rhs


def _merge_terms(terms) -> tuple[np.ndarray, np.ndarray]:
    """Combine duplicate indices and drop zero coefficients."""
    acc: dict[int, int] = {}
    for i, c in terms:
        acc[int(i)] = acc.get(int(i), 0) + int(c)
    pairs = sorted((i, c) for i, c in acc.items() if c != 0)
    if not pairs:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    idx, coef = zip(*pairs)
    return np.array(idx, dtype=np.int64), np.array(coef, dtype=np.int64)


@dataclass
class Variable:
    name: str
    domain: tuple
    start: int
    kind: str  # team_wins | game | sum | comparison | base
    children: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def stop(self) -> int:
        return self.start + len(self.domain)

    def security(self, value) -> int:
        return self.start + self.domain.index(value)


class Tournament:
    """Bracket geometry for 2**k teams with round-1 pairs (1,2), (3,4), ...

    Games are indexed round-major; the game of team t in round r is the one
    covering t's block of 2**r consecutive teams, so bracket aliases (the
    same physical game reached by different teams) resolve to one variable.
    """

    def __init__(self, k: int):
        self.k = k
        self.n_teams = 1 << k
        self.games: list[tuple[int, int]] = [
            (r, blk) for r in range(1, k + 1) for blk in range(1 << (k - r))
        ]
        self.game_pos = {g: i for i, g in enumerate(self.games)}

    def game_of(self, r: int, team: int) -> tuple[int, int]:
        return (r, (team - 1) >> r)

    def block_teams(self, r: int, blk: int) -> range:
        return range(blk * (1 << r) + 1, (blk + 1) * (1 << r) + 1)

    def game_name(self, r: int, blk: int) -> str:
        return f"game_r{r}_b{blk}"

    def wins_name(self, team: int) -> str:
        return f"team{team}_wins"

    def winners(self, bits: int) -> list[int]:
        """Winner of every game for one outcome bitstring, round-major order."""
        out: list[int] = []
        prev = list(range(1, self.n_teams + 1))
        pos = 0
        for r in range(1, self.k + 1):
            cur = []
            for blk in range(1 << (self.k - r)):
                pair = (prev[2 * blk], prev[2 * blk + 1])
                cur.append(pair[(bits >> pos) & 1])
                pos += 1
            out.extend(cur)
            prev = cur
        return out


class MarketModel:
    """Append-only registry of variables, securities, and constraint rows."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.by_name: dict[str, Variable] = {}
        self.n_securities = 0
        self.group_start = np.zeros(1, dtype=np.int64)
        self.group_of = np.empty(0, dtype=np.int64)
        self.ip_rows: list[LinearRow] = []
        self.lcmm_rows: list[LinearRow] = []
        self.initial_prices = np.empty(0, dtype=np.float64)
        self.tournament: Tournament | None = None
        self.explicit_outcomes: list[dict] | None = None
        self.records: list[dict] = []
        self._payoff_cache: np.ndarray | None = None

    # ------------------------------------------------------------------ layout

    def security(self, var_name: str, value) -> int:
        return self.by_name[var_name].security(value)

    def label(self, sec: int) -> tuple[str, object]:
        var = self.variables[int(self.group_of[sec])]
        return var.name, var.domain[sec - var.start]

    def _append_variable(self, var: Variable, prices: np.ndarray | None) -> Variable:
        if var.name in self.by_name:
            raise ValueError(f"duplicate variable {var.name!r}")
        if len(var.domain) != len(set(var.domain)):
            raise ValueError(f"domain of {var.name!r} has repeated values")
        n = len(var.domain)
        if n == 0:
            raise ValueError(f"variable {var.name!r} needs a nonempty domain")
        self.variables.append(var)
        self.by_name[var.name] = var
        self.n_securities += n
        self.group_start = np.append(self.group_start, self.n_securities)
        self.group_of = np.append(
            self.group_of, np.full(n, len(self.variables) - 1, dtype=np.int64)
        )
        if prices is None:
            prices = np.full(n, 1.0 / n)
        self.initial_prices = np.append(self.initial_prices, prices)
        self._payoff_cache = None
        idx = np.arange(var.start, var.stop, dtype=np.int64)
        ones = np.ones(n, dtype=np.int64)
        self.add_ip_row(LinearRow(idx, ones, "eq", 1, "exclusivity"), relax=True)
        for i in range(var.start, var.stop):
            self.add_lcmm_row(
                LinearRow(np.array([i]), np.array([1]), "ge", 0, "box")
            )
            self.add_lcmm_row(
                LinearRow(np.array([i]), np.array([-1]), "ge", -1, "box")
            )
        return var

    def add_ip_row(self, row: LinearRow, relax: bool = False) -> None:
        self.ip_rows.append(row)
        self._payoff_cache = None
        if relax:
            self.lcmm_rows.append(row)

    def add_lcmm_row(self, row: LinearRow) -> None:
        self.lcmm_rows.append(row)

    @property
    def tradeable_lcmm_rows(self) -> list[LinearRow]:
        return [r for r in self.lcmm_rows if r.tag != "box"]

    # ------------------------------------------------------------- construction

    def add_base_variable(self, name: str, domain, prices=None) -> Variable:
        """Explicit-outcome base variable for hand-built models."""
        if self.tournament is not None:
            raise ValueError("cannot mix base variables with a tournament backing")
        var = Variable(name, tuple(domain), self.n_securities, "base")
        return self._append_variable(var, None if prices is None else np.asarray(prices, float))

    def set_outcomes(self, assignments: list[dict]) -> None:
        """Declare the admissible base-variable assignments of an explicit model."""
        base = [v.name for v in self.variables if v.kind == "base"]
        for a in assignments:
            missing = [n for n in base if n not in a]
            if missing:
                raise ValueError(f"assignment missing values for {missing}")
        self.explicit_outcomes = [dict(a) for a in assignments]
        self._payoff_cache = None

    def add_tournament(self, k: int, champion_prices: dict, window: dict | None = None) -> None:
        """Create win-count and game-winner variables for a 2**k bracket.

        ``champion_prices`` maps team -> price of that team winning the final
        round; together with the optional ``window`` of observed security
        prices it seeds the initial price vector.
        """
        if self.tournament is not None or any(v.kind == "base" for v in self.variables):
            raise ValueError("model already has an outcome backing")
        if not 1 <= k <= 6:
            raise ValueError(f"rounds k={k} outside [1, 6]")
        t = Tournament(k)
        if set(champion_prices) != set(range(1, t.n_teams + 1)):
            raise ValueError(f"champion prices must cover teams 1..{t.n_teams}")
        self.tournament = t
        for team in range(1, t.n_teams + 1):
            self._append_variable(
                Variable(
                    t.wins_name(team),
                    tuple(range(k + 1)),
                    self.n_securities,
                    "team_wins",
                    meta={"team": team},
                ),
                None,
            )
        for r, blk in t.games:
            self._append_variable(
                Variable(
                    t.game_name(r, blk),
                    tuple(t.block_teams(r, blk)),
                    self.n_securities,
                    "game",
                    meta={"round": r, "block": blk},
                ),
                None,
            )
        for team in range(1, t.n_teams + 1):
            wins = self.by_name[t.wins_name(team)]
            # z{X_t=r} = z{G_r wins} - z{G_{r+1} wins}; at the ends the telescoping
            # closes with z{X_t=0} = 1 - z{G_1 wins} and z{X_t=k} = z{G_k wins}.
            g1 = self._game_sec(1, team)
            self.add_ip_row(
                LinearRow([wins.security(0), g1], [1, 1], "eq", 1, "wins-coupling"),
                relax=True,
            )
            for r in range(1, k):
                self.add_ip_row(
                    LinearRow(
                        [wins.security(r), self._game_sec(r, team), self._game_sec(r + 1, team)],
                        [1, -1, 1],
                        "eq",
                        0,
                        "wins-coupling",
                    ),
                    relax=True,
                )
            self.add_ip_row(
                LinearRow(
                    [wins.security(k), self._game_sec(k, team)], [1, -1], "eq", 0, "wins-coupling"
                ),
                relax=True,
            )
        window_prices = dict(window or {})
        for team, p in champion_prices.items():
            window_prices.setdefault((t.wins_name(team), k), float(p))
        self.initial_prices = init_prices(self, window_prices)
        self.records.append(
            {
                "kind": "tournament",
                "rounds": k,
                "champion_prices": {str(team): float(p) for team, p in champion_prices.items()},
                "window": {f"{v}={x}": float(p) for (v, x), p in (window or {}).items()},
            }
        )

    def _game_sec(self, r: int, team: int) -> int:
        t = self.tournament
        rr, blk = t.game_of(r, team)
        return self.by_name[t.game_name(rr, blk)].security(team)

    def _integer_children(self, names, op: str) -> list[Variable]:
        if not names:
            raise ValueError(f"{op} needs at least one child")
        out = []
        for n in names:
            if n not in self.by_name:
                raise ValueError(f"unknown child variable {n!r}")
            var = self.by_name[n]
            if not all(isinstance(v, (int, np.integer)) for v in var.domain):
                raise ValueError(f"{op} child {n!r} must have an integer domain")
            out.append(var)
        return out

    def add_sum(self, name: str, children, prices=None) -> Variable:
        """Sum of integer variables, coupled by the expected-value identity."""
        kids = self._integer_children(children, "sum")
        lo = sum(min(v.domain) for v in kids)
        hi = sum(max(v.domain) for v in kids)
        var = Variable(
            name, tuple(range(lo, hi + 1)), self.n_securities, "sum", tuple(children)
        )
        if prices is None:
            mean = sum(self._moments(v)[0] for v in kids)
            spread = sum(self._moments(v)[1] for v in kids)
            prices = _discrete_gaussian(np.array(var.domain, float), mean, spread)
        self._append_variable(var, np.asarray(prices, float))
        terms = [(var.security(x), x) for x in var.domain]
        for kid in kids:
            terms.extend((kid.security(x), -x) for x in kid.domain)
        idx, coef = _merge_terms(terms)
        self.add_ip_row(LinearRow(idx, coef, "eq", 0, "sum-link"), relax=True)
        self.records.append({"kind": "sum", "id": name, "children": list(children)})
        return var

    def add_comparison(self, name: str, left: str, right: str, prices=None) -> Variable:
        """Three-way comparison lt/eq/gt of two integer variables.

        The integer side uses four big-M threshold identities; the relaxed
        side instead gets the union-bound rows, which dominate the big-M LP
        relaxation, so no relaxed copies of the big-M rows are added.
        """
        x1, x2 = self._integer_children([left, right], "comparison")
        var = Variable(
            name, COMPARISON_DOMAIN, self.n_securities, "comparison", (left, right)
        )
        if prices is None:
            prices = self._comparison_prices(x1, x2)
        self._append_variable(var, np.asarray(prices, float))
        s_lt, s_eq, s_gt = (var.security(v) for v in COMPARISON_DOMAIN)
        m1, hi1 = min(x1.domain), max(x1.domain)
        m2, hi2 = min(x2.domain), max(x2.domain)
        e1 = [(x1.security(v), v) for v in x1.domain]
        neg_e2 = [(x2.security(v), -v) for v in x2.domain]

        def bigm(extra, rhs):
            idx, coef = _merge_terms(e1 + neg_e2 + extra)
            self.add_ip_row(LinearRow(idx, coef, "ge", rhs, "comparison-bigm"))

        def bigm_neg(extra, rhs):
            flipped = [(i, -c) for i, c in e1 + neg_e2]
            idx, coef = _merge_terms(flipped + extra)
            self.add_ip_row(LinearRow(idx, coef, "ge", rhs, "comparison-bigm"))

        bigm([(s_lt, -(m1 - hi2))], 0)
        bigm([(s_lt, -(m1 - hi2 - 1)), (s_eq, -(m1 - hi2 - 1))], 1)
        bigm_neg([(s_gt, hi1 - m2)], 0)
        bigm_neg([(s_gt, hi1 - m2 + 1), (s_eq, hi1 - m2 + 1)], 1)

        def union_rows(a: Variable, b: Variable, strict_sec: int, weak_sec: int):
            # mu{A <= x} <= mu{strict} + mu{B <= x}  and
            # mu{A <= x} <= mu{strict} + mu{weak} + mu{B < x}
            for x in range(min(a.domain), max(b.domain) + 1):
                below_a = [(a.security(v), -1) for v in a.domain if v <= x]
                le_b = [(b.security(v), 1) for v in b.domain if v <= x]
                lt_b = [(b.security(v), 1) for v in b.domain if v < x]
                idx, coef = _merge_terms(below_a + le_b + [(strict_sec, 1)])
                self.add_lcmm_row(LinearRow(idx, coef, "ge", 0, "union-bound"))
                idx, coef = _merge_terms(
                    below_a + lt_b + [(strict_sec, 1), (weak_sec, 1)]
                )
                self.add_lcmm_row(LinearRow(idx, coef, "ge", 0, "union-bound"))

        union_rows(x1, x2, s_lt, s_eq)
        union_rows(x2, x1, s_gt, s_eq)
        self.records.append(
            {"kind": "comparison", "id": name, "left": left, "right": right}
        )
        return var

    def _moments(self, var: Variable) -> tuple[float, float]:
        p = self.initial_prices[var.start : var.stop]
        vals = np.array(var.domain, dtype=np.float64)
        mean = float(vals @ p)
        return mean, float(np.square(vals - mean) @ p)

    def _comparison_prices(self, x1: Variable, x2: Variable) -> np.ndarray:
        """Prices from the discretized-Gaussian difference of the children.

        Builds Y = X2 - X1 on its integer range; lt (X1 < X2) collects the
        mass of Y > 0 and gt the mass of Y < 0.
        """
        m1, v1 = self._moments(x1)
        m2, v2 = self._moments(x2)
        points = np.arange(
            min(x2.domain) - max(x1.domain), max(x2.domain) - min(x1.domain) + 1,
            dtype=np.float64,
        )
        q = _discrete_gaussian(points, m2 - m1, v1 + v2)
        return np.array(
            [float(q[points > 0].sum()), float(q[points == 0].sum()), float(q[points < 0].sum())]
        )

    # ------------------------------------------------------------------ outcomes

    @property
    def n_outcomes(self) -> int:
        if self.tournament is not None:
            return 1 << len(self.tournament.games)
        if self.explicit_outcomes is not None:
            return len(self.explicit_outcomes)
        return 0

    def outcome_values(self, token: int) -> dict:
        """Every variable's realized value under one outcome token."""
        values: dict[str, object] = {}
        if self.tournament is not None:
            t = self.tournament
            winners = t.winners(token)
            wins = {team: 0 for team in range(1, t.n_teams + 1)}
            for (r, blk), w in zip(t.games, winners):
                values[t.game_name(r, blk)] = w
                wins[w] += 1
            for team, w in wins.items():
                name = t.wins_name(team)
                if name in self.by_name:
                    values[name] = w
        elif self.explicit_outcomes is not None:
            values.update(self.explicit_outcomes[token])
        else:
            raise ValueError("model has no outcome backing")
        for var in self.variables:
            if var.kind == "sum":
                values[var.name] = sum(values[c] for c in var.children)
            elif var.kind == "comparison":
                a, b = (values[c] for c in var.children)
                values[var.name] = LT if a < b else EQ if a == b else GT
        return values

    def payoff(self, token: int) -> np.ndarray:
        """0/1 payoff vector of one outcome."""
        values = self.outcome_values(token)
        z = np.zeros(self.n_securities, dtype=np.int8)
        for var in self.variables:
            z[var.security(values[var.name])] = 1
        return z

    def payoff_matrix(self) -> np.ndarray:
        """All payoff vectors, n_outcomes x n_securities (cached while small)."""
        if self._payoff_cache is not None:
            return self._payoff_cache
        n = self.n_outcomes
        if n > PAYOFF_CACHE_LIMIT:
            raise ValueError(f"{n} outcomes is too many to materialize")
        mat = np.stack([self.payoff(tok) for tok in range(n)])
        self._payoff_cache = mat
        return mat

    # ------------------------------------------------------------------- io

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: str) -> "MarketModel":
        model = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(path, lineno, f"bad JSON: {exc}") from exc
                try:
                    kind = rec["kind"]
                    if kind == "tournament":
                        champs = {int(t): float(p) for t, p in rec["champion_prices"].items()}
                        window = {}
                        for key, p in rec.get("window", {}).items():
                            var, _, val = key.partition("=")
                            window[(var, int(val))] = float(p)
                        model.add_tournament(int(rec["rounds"]), champs, window or None)
                    elif kind == "sum":
                        model.add_sum(rec["id"], rec["children"])
                    elif kind == "comparison":
                        model.add_comparison(rec["id"], rec["left"], rec["right"])
                    else:
                        raise ParseError(path, lineno, f"unknown record kind {kind!r}")
                except ParseError:
                    raise
                except (KeyError, ValueError, TypeError) as exc:
                    raise ParseError(path, lineno, f"bad {rec.get('kind', '?')} record: {exc}") from exc
        return model


# ---------------------------------------------------------------------- pricing


def _discrete_gaussian(points: np.ndarray, mean: float, var: float) -> np.ndarray:
    """Normal density sampled at integer points and renormalized."""
    var = max(float(var), VARIANCE_FLOOR)
    d = np.exp(-np.square(points - mean) / (2.0 * var))
    s = d.sum()
    if s <= 0.0:
        return np.full(len(points), 1.0 / len(points))
    return d / s


def init_prices(model: MarketModel, window: dict) -> np.ndarray:
    """Initial price vector from a window of observed security prices.

    Game-winner prices split each game among its potential attendees in
    proportion to their championship prices; win-count prices fall back to
    differences of consecutive game prices when unobserved (clamped at 0).
    Everything is renormalized per variable and the full vector is pushed
    onto the relaxed constraint set by alternating projections.
    """
    if model.tournament is None:
        raise ValueError("init_prices needs a tournament backing")
    t = model.tournament
    k = t.k
    mu = model.initial_prices.copy()
    champ = {
        team: max(float(window.get((t.wins_name(team), k), 0.0)), 0.0)
        for team in range(1, t.n_teams + 1)
    }
    game_price: dict[tuple[int, int], float] = {}
    for r, blk in t.games:
        var = model.by_name[t.game_name(r, blk)]
        teams = list(t.block_teams(r, blk))
        weights = np.array([champ[team] for team in teams])
        total = weights.sum()
        if total <= 0.0:
            weights = np.full(len(teams), 1.0 / len(teams))
        else:
            weights = weights / total
        mu[var.start : var.stop] = weights
        for team, w in zip(teams, weights):
            game_price[(r, team)] = float(w)
    for team in range(1, t.n_teams + 1):
        var = model.by_name[t.wins_name(team)]
        seg = np.empty(k + 1)
        for x in var.domain:
            key = (var.name, x)
            if key in window:
                seg[x] = max(float(window[key]), 0.0)
            elif x == 0:
                seg[x] = max(1.0 - game_price[(1, team)], 0.0)
            elif x == k:
                seg[x] = game_price[(k, team)]
            else:
                seg[x] = max(game_price[(x, team)] - game_price[(x + 1, team)], 0.0)
        total = seg.sum()
        mu[var.start : var.stop] = seg / total if total > 0 else 1.0 / (k + 1)
    for var in model.variables:
        seg = mu[var.start : var.stop]
        total = seg.sum()
        if total > 0:
            mu[var.start : var.stop] = seg / total
    return project_onto_rows(mu, model.lcmm_rows)


def project_onto_rows(
    mu: np.ndarray,
    rows: list[LinearRow],
    passes: int = PROJECTION_PASSES,
    tol: float = PROJECTION_TOL,
) -> np.ndarray:
    """Alternating Euclidean projections onto the rows' halfspaces."""
    mu = np.asarray(mu, dtype=np.float64).copy()
    norms = [float(r.coef @ r.coef) for r in rows]
    for _ in range(passes):
        worst = 0.0
        for row, nrm in zip(rows, norms):
            if nrm == 0.0:
                continue
            gap = row.rhs - row.value(mu)
            if row.sense == "ge":
                if gap > 0.0:
                    worst = max(worst, gap)
                    mu[row.idx] += (gap / nrm) * row.coef
            else:
                if abs(gap) > 0.0:
                    worst = max(worst, abs(gap))
                    mu[row.idx] += (gap / nrm) * row.coef
        if worst <= tol:
            break
    else:
        log.debug("alternating projection hit the %d-pass cap", passes)
    return mu
