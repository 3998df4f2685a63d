"""Shared fixtures and independent oracles for the test suite.

Reference models:

* the acceptance model — a 2**k-team bracket plus one sum variable and two
  cross-conference comparisons, strengths drawn from a seeded generator;
* the aliased model — two binary variables constrained equal but priced
  apart, whose projection has the closed form (0.75, 0.25);
* the tightness model — two 0..9 scores and their comparison, where every
  score pair is a declared outcome, so only the union-bound rows (not the
  big-M threshold rows) can see certain incoherences.

Independent oracles here reimplement bracket propagation, win counting,
and derived-variable rules from scratch so that model/solver tests never
check the code against itself.

The acceptance suite tags each test with a criterion number
(``test_criterionNN_*``); the terminal summary prints one PASS/FAIL line
per criterion.
"""

import re

import numpy as np
import pytest

from fwmarket.generator import champion_probabilities
from fwmarket.model import LinearRow, MarketModel

# ------------------------------------------------------------- model builders


def build_acceptance_model(k: int, seed: int = 2) -> MarketModel:
    """Bracket over 2**k teams plus one sum and two comparison variables."""
    rng = np.random.Generator(np.random.Philox(seed))
    n_teams = 2**k
    strengths = np.exp(rng.normal(0.0, 0.75, n_teams))
    m = MarketModel()
    m.add_tournament(k, champion_probabilities(k, strengths))
    half = n_teams // 2
    m.add_sum("first_half_wins", [f"team{t}_wins" for t in range(1, half + 1)])
    m.add_comparison("cross_top", "team1_wins", f"team{half + 1}_wins")
    m.add_comparison("cross_second", "team2_wins", f"team{half + 2}_wins")
    return m


def build_aliased_model() -> MarketModel:
    """Two binary variables forced equal but priced (0.9, 0.1) vs (0.5, 0.5).

    Securities are ordered alias_a=1, alias_a=0, alias_b=1, alias_b=0; the
    extra row ties the two "=1" securities together, making the initial
    prices incoherent.
    """
    m = MarketModel()
    m.add_base_variable("alias_a", (1, 0), prices=(0.9, 0.1))
    m.add_base_variable("alias_b", (1, 0), prices=(0.5, 0.5))
    m.set_outcomes(
        [
            {"alias_a": 1, "alias_b": 1},
            {"alias_a": 0, "alias_b": 0},
        ]
    )
    m.add_ip_row(LinearRow([0, 2], [1, -1], "eq", 0, "alias"), relax=True)
    return m


def build_tightness_model() -> MarketModel:
    """Two independent 0..9 scores and their three-way comparison.

    Every (score_a, score_b) pair is declared a valid outcome, so the
    outcome polytope is the full product and the only binding structure is
    the comparison variable itself.
    """
    m = MarketModel()
    dom = tuple(range(10))
    pa = np.zeros(10)
    pa[0], pa[9] = 0.9, 0.1
    pb = np.zeros(10)
    pb[0], pb[1] = 0.3, 0.7
    m.add_base_variable("score_a", dom, prices=pa)
    m.add_base_variable("score_b", dom, prices=pb)
    m.set_outcomes([{"score_a": i, "score_b": j} for i in dom for j in dom])
    m.add_comparison("score_a_vs_b", "score_a", "score_b")
    return m


def tightness_prices(model: MarketModel) -> np.ndarray:
    """The LP-feasible but incoherent price point for the tightness model.

    score_a puts 0.9 on 0 and 0.1 on 9; score_b puts 0.3 on 0 and 0.7 on 1;
    the comparison prices are (lt, eq, gt) = (0.1, 0.05, 0.85).  The point
    satisfies every big-M threshold row yet P(score_a <= 0) = 0.9 exceeds
    P(lt) + P(score_b <= 0) = 0.4.
    """
    mu = np.zeros(model.n_securities)
    a, bvar, cmp_ = (model.by_name[n] for n in ("score_a", "score_b", "score_a_vs_b"))
    mu[a.security(0)], mu[a.security(9)] = 0.9, 0.1
    mu[bvar.security(0)], mu[bvar.security(1)] = 0.3, 0.7
    mu[cmp_.security("lt")] = 0.1
    mu[cmp_.security("eq")] = 0.05
    mu[cmp_.security("gt")] = 0.85
    return mu


# -------------------------------------------------- independent bracket oracle


def bracket_values(k: int, bits: int) -> dict:
    """Realized value of every bracket variable, computed from first rules.

    Teams are 1..2**k with round-1 pairs (1,2), (3,4), ...; games are
    ordered round-major and bit g set means the second (higher-seeded-slot)
    contender of game g wins.  Returns {variable name: realized value} for
    all game and team-wins variables.
    """
    teams = list(range(1, 2**k + 1))
    wins = {t: 0 for t in teams}
    values: dict = {}
    alive = teams
    pos = 0
    for r in range(1, k + 1):
        nxt = []
        for blk in range(len(alive) // 2):
            pair = (alive[2 * blk], alive[2 * blk + 1])
            w = pair[(bits >> pos) & 1]
            values[f"game_r{r}_b{blk}"] = w
            wins[w] += 1
            nxt.append(w)
            pos += 1
        alive = nxt
    for t in teams:
        values[f"team{t}_wins"] = wins[t]
    return values


def derived_values(model: MarketModel, values: dict) -> dict:
    """Extend realized bracket values to sum and comparison variables."""
    out = dict(values)
    for var in model.variables:
        if var.kind == "sum":
            out[var.name] = sum(out[c] for c in var.children)
        elif var.kind == "comparison":
            x1, x2 = (out[c] for c in var.children)
            out[var.name] = "lt" if x1 < x2 else ("eq" if x1 == x2 else "gt")
    return out


def simulated_payoffs(model: MarketModel, k: int) -> np.ndarray:
    """Payoff vectors of all 2**(2**k - 1) bracket outcomes, by simulation."""
    n_games = 2**k - 1
    rows = []
    for bits in range(1 << n_games):
        values = derived_values(model, bracket_values(k, bits))
        z = np.zeros(model.n_securities, dtype=np.int8)
        for var in model.variables:
            z[var.security(values[var.name])] = 1
        rows.append(z)
    return np.stack(rows)


# ------------------------------------------------- independent projection check


def restricted_brute(model, state, sigma_hat, n_starts: int = 5) -> float:
    """Minimize the restricted divergence over the outcome hull, externally.

    Parametrizes hull points as softmax-weighted combinations of the payoff
    matrix rows and runs a quasi-Newton solver with the analytic gradient.
    The restricted log-partition is evaluated inline from the sigma bits so
    this check shares no solver code with the projection path.
    """
    from scipy.optimize import minimize

    Z = model.payoff_matrix().astype(np.float64)
    theta, b = np.asarray(state.theta, float), float(state.b)
    gs = np.asarray(model.group_start)
    bits = sigma_hat.bits
    logsum = 0.0
    for j in range(len(gs) - 1):
        seg = slice(gs[j], gs[j + 1])
        won = np.flatnonzero(bits[seg] == 1)
        if won.size:
            logsum += float(theta[seg][won[0]])
        else:
            open_ = bits[seg] != 0
            logsum += b * np.logaddexp.reduce(theta[seg][open_] / b)

    def fg(y):
        y = y - y.max()
        e = np.exp(y)
        lam = e / e.sum()
        mu = lam @ Z
        pos = mu > 0.0
        f = b * float(mu[pos] @ np.log(mu[pos])) + logsum - float(theta @ mu)
        grad_mu = np.zeros_like(mu)
        grad_mu[pos] = b * (1.0 + np.log(mu[pos])) - theta[pos]
        grad_lam = Z[:, pos] @ grad_mu[pos]
        grad_y = lam * (grad_lam - float(lam @ grad_lam))
        return f, grad_y

    rng = np.random.Generator(np.random.Philox(99))
    starts = [np.zeros(Z.shape[0])]
    starts += [rng.normal(0.0, 2.0, Z.shape[0]) for _ in range(n_starts)]
    best = np.inf
    for y0 in starts:
        r = minimize(
            fg,
            y0,
            jac=True,
            method="L-BFGS-B",
            options=dict(maxiter=20000, ftol=1e-17, gtol=1e-12),
        )
        best = min(best, float(r.fun))
    return best


# ------------------------------------------------------------------- fixtures


@pytest.fixture
def aliased_model() -> MarketModel:
    return build_aliased_model()


@pytest.fixture
def tightness_model() -> MarketModel:
    return build_tightness_model()


@pytest.fixture(scope="session")
def k2_model() -> MarketModel:
    return build_acceptance_model(2)


@pytest.fixture(scope="session")
def k3_model() -> MarketModel:
    return build_acceptance_model(3)


# ------------------------------------------------- acceptance criteria report

ACCEPTANCE_LABELS = {
    1: "oracle equivalence: branch-and-bound matches enumeration",
    2: "outcome-set exactness: |Z| = 2, 8, 128 and bijection",
    3: "projection reaches the hull optimum",
    4: "maker trades never lose against any outcome",
    5: "worst-case loss bounded by the initial divergence",
    6: "settled prices condition exactly",
    7: "entropy gradient growth bounded by b/eps",
    8: "union-bound rows catch what the big-M LP misses",
    9: "likelihood ordering fwmm >= lcmm >= ind",
    10: "byte-identical reruns",
}

_CRITERION = re.compile(r"test_criterion(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[int, bool] = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            m = _CRITERION.search(nodeid)
            if not m:
                continue
            n = int(m.group(1))
            verdicts[n] = verdicts.get(n, True) and outcome == "passed"
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        label = ACCEPTANCE_LABELS.get(n, "")
        flag = "PASS" if verdicts[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}  {label:<55s} {flag}")
