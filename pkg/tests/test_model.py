"""Market model structure: brackets, derived variables, rows, and pricing.

Outcome semantics are checked against an independent bracket simulator
(``conftest.bracket_values``) that reimplements winner propagation and win
counting from the pairing rules alone.
"""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import (
    bracket_values,
    build_acceptance_model,
    build_tightness_model,
    derived_values,
    simulated_payoffs,
    tightness_prices,
)
from fwmarket.errors import ParseError
from fwmarket.model import LinearRow, MarketModel, Tournament, init_prices


class TestLinearRow:
    def test_value_is_the_sparse_dot_product(self):
        row = LinearRow([0, 3], [2, -1], "ge", 1)
        npt.assert_allclose(row.value(np.array([1.0, 9.0, 9.0, 0.5])), 1.5)

    def test_holds_exactly_by_sense(self):
        ge = LinearRow([0], [1], "ge", 1)
        eq = LinearRow([0], [1], "eq", 1)
        assert ge.holds_exactly(np.array([2])) and not eq.holds_exactly(np.array([2]))
        assert ge.holds_exactly(np.array([1])) and eq.holds_exactly(np.array([1]))
        assert not ge.holds_exactly(np.array([0]))

    def test_rejects_unknown_sense(self):
        with pytest.raises(ValueError):
            LinearRow([0], [1], "le", 0)


class TestTournamentGeometry:
    def test_round_major_game_order(self):
        t = Tournament(3)
        assert t.games[:4] == [(1, 0), (1, 1), (1, 2), (1, 3)]
        assert t.games[-1] == (3, 0)
        assert len(t.games) == 7

    def test_game_of_resolves_bracket_aliases(self):
        """All teams in one block of 2**r share the round-r game."""
        t = Tournament(3)
        assert t.game_of(1, 1) == t.game_of(1, 2) == (1, 0)
        assert t.game_of(2, 1) == t.game_of(2, 4) == (2, 0)
        assert t.game_of(3, 8) == (3, 0)

    def test_block_teams_are_consecutive(self):
        t = Tournament(2)
        assert list(t.block_teams(1, 1)) == [3, 4]
        assert list(t.block_teams(2, 0)) == [1, 2, 3, 4]

    def test_winners_matches_independent_simulation(self):
        """Winner propagation agrees with the rule-based reimplementation."""
        for k in (1, 2, 3):
            t = Tournament(k)
            for bits in range(1 << len(t.games)):
                values = bracket_values(k, bits)
                expected = [values[t.game_name(r, blk)] for r, blk in t.games]
                assert t.winners(bits) == expected


class TestVariableLayout:
    def test_groups_are_contiguous_and_exclusive(self, k2_model):
        m = k2_model
        gs = m.group_start
        assert gs[0] == 0 and gs[-1] == m.n_securities
        for i, var in enumerate(m.variables):
            assert (var.start, var.stop) == (gs[i], gs[i + 1])
        # one exclusivity row per variable, forcing exactly one value
        excl = [r for r in m.ip_rows if r.tag == "exclusivity"]
        assert len(excl) == len(m.variables)
        for row in excl:
            assert row.sense == "eq" and row.rhs == 1

    def test_security_maps_values_to_coordinates(self, k2_model):
        var = k2_model.by_name["team1_wins"]
        assert [var.security(v) for v in var.domain] == list(range(var.start, var.stop))
        name, value = k2_model.label(var.security(2))
        assert (name, value) == ("team1_wins", 2)


class TestOutcomeEnumeration:
    def test_outcome_count_is_two_to_the_games(self):
        for k, want in ((1, 2), (2, 8), (3, 128)):
            m = build_acceptance_model(k) if k > 1 else _k1_model()
            assert m.n_outcomes == want

    def test_payoffs_match_independent_simulation(self, k2_model):
        """Every token's payoff vector equals the rule-based simulation."""
        m = k2_model
        expected = simulated_payoffs(m, 2)
        got = m.payoff_matrix()
        npt.assert_array_equal(got, expected)

    def test_outcome_values_agree_with_bracket_rules(self, k2_model):
        m = k2_model
        for token in range(m.n_outcomes):
            values = derived_values(m, bracket_values(2, token))
            assert m.outcome_values(token) == values

    def test_every_payoff_satisfies_every_row(self, k2_model):
        m = k2_model
        Z = m.payoff_matrix()
        for row in m.ip_rows:
            for z in Z:
                assert row.holds_exactly(z)

    def test_relaxed_rows_hold_at_every_vertex(self, k2_model):
        """Rows handed to the arbitrage remover must be sound: no valid
        outcome may violate them."""
        m = k2_model
        Z = m.payoff_matrix().astype(float)
        for row in m.lcmm_rows:
            vals = Z[:, row.idx] @ row.coef
            if row.sense == "eq":
                npt.assert_array_equal(vals, row.rhs)
            else:
                assert (vals >= row.rhs).all()


class TestSumVariable:
    def test_sum_of_all_wins_is_games_played(self, k2_model):
        """Total wins across the four teams is exactly 3 in every outcome."""
        m = MarketModel()
        m.add_tournament(2, {1: 0.25, 2: 0.25, 3: 0.25, 4: 0.25})
        m.add_sum("total_wins", [f"team{t}_wins" for t in (1, 2, 3, 4)])
        var = m.by_name["total_wins"]
        Z = m.payoff_matrix()
        for z in Z:
            values = np.flatnonzero(z[var.start : var.stop])
            assert var.domain[int(values[0])] == 3

    def test_degenerate_children_concentrate_at_zero(self):
        """Children priced identically 0 push the sum's mass onto 0."""
        m = MarketModel()
        m.add_base_variable("a", (0, 1), prices=(1.0, 0.0))
        m.add_base_variable("b", (0, 1), prices=(1.0, 0.0))
        m.set_outcomes([{"a": i, "b": j} for i in (0, 1) for j in (0, 1)])
        var = m.add_sum("a_plus_b", ["a", "b"])
        prices = m.initial_prices[var.start : var.stop]
        assert np.argmax(prices) == 0
        assert prices[0] > 0.8
        assert prices[0] > prices[1] > prices[2]

    def test_sum_link_row_ties_expected_values(self, k2_model):
        m = k2_model
        rows = [r for r in m.ip_rows if r.tag == "sum-link"]
        assert len(rows) == 1
        for z in m.payoff_matrix():
            assert rows[0].holds_exactly(z)


class TestComparisonVariable:
    def test_self_comparison_is_always_eq(self):
        m = MarketModel()
        m.add_tournament(1, {1: 0.6, 2: 0.4})
        var = m.add_comparison("mirror", "team1_wins", "team1_wins")
        Z = m.payoff_matrix()
        assert (Z[:, var.security("eq")] == 1).all()

    def test_round_one_rivals_never_tie(self):
        """Teams that meet in round 1 cannot end with equal win counts: one
        of them loses game 1 and stays at zero while the winner has at least
        one."""
        m = MarketModel()
        m.add_tournament(2, {1: 0.25, 2: 0.25, 3: 0.25, 4: 0.25})
        var = m.add_comparison("rivals", "team1_wins", "team2_wins")
        w1, w2 = m.by_name["team1_wins"], m.by_name["team2_wins"]
        for z in m.payoff_matrix():
            eq = z[var.security("eq")]
            wins1 = w1.domain[int(np.flatnonzero(z[w1.start : w1.stop])[0])]
            wins2 = w2.domain[int(np.flatnonzero(z[w2.start : w2.stop])[0])]
            assert not (eq == 1 and wins1 == 1 and wins2 == 1)
            assert eq == 0  # stronger: the winner always leads the loser

    def test_comparison_prices_from_difference_distribution(self):
        """Initial lt/eq/gt prices collect the discretized-Gaussian mass of
        the children's difference, computed here independently."""
        m = build_acceptance_model(2)
        var = m.by_name["cross_top"]
        x1, x2 = (m.by_name[c] for c in var.children)

        def moments(v):
            p = m.initial_prices[v.start : v.stop]
            vals = np.array(v.domain, float)
            mean = float(vals @ p)
            return mean, float(np.square(vals - mean) @ p)

        m1, v1 = moments(x1)
        m2, v2 = moments(x2)
        pts = np.arange(min(x2.domain) - max(x1.domain),
                        max(x2.domain) - min(x1.domain) + 1, dtype=float)
        w = np.exp(-0.5 * (pts - (m2 - m1)) ** 2 / max(v1 + v2, 0.25))
        w /= w.sum()
        expected = [w[pts > 0].sum(), w[pts == 0].sum(), w[pts < 0].sum()]
        got = m.initial_prices[var.start : var.stop]
        npt.assert_allclose(got, expected, rtol=1e-12)


class TestTightnessFixture:
    def test_point_is_lp_feasible_but_violates_union_rows(self, tightness_model):
        """The fixture price point satisfies every integer-side row (the
        big-M LP relaxation) yet breaks union-bound rows.

        At x = 0: P(A<=0) - P(B<=0) = 0.6 exceeds the priced P(A<B) = 0.1,
        so the strict row is short by 0.5, and P(A<=0) - P(B<0) = 0.9
        exceeds P(A<B) + P(A=B) = 0.15, so the weak row is short by 0.75.
        """
        m = tightness_model
        mu = tightness_prices(m)
        assert (mu >= 0).all() and (mu <= 1).all()
        for row in m.ip_rows:
            v = row.value(mu)
            assert v >= row.rhs - 1e-12, (row.tag, v, row.rhs)
        bigm = sorted(r.value(mu) for r in m.ip_rows if r.tag == "comparison-bigm")
        npt.assert_allclose(bigm, [1.1, 1.7, 7.45, 8.8], rtol=1e-12)
        eq_idx = m.by_name["score_a_vs_b"].security("eq")
        strict, weak = [], []
        for r in m.lcmm_rows:
            if r.tag != "union-bound":
                continue
            (weak if eq_idx in r.idx else strict).append(r.value(mu) - r.rhs)
        npt.assert_allclose(min(strict), -0.5, rtol=1e-12)
        npt.assert_allclose(min(weak), -0.75, rtol=1e-12)

    def test_outcome_set_is_the_full_product(self, tightness_model):
        assert tightness_model.n_outcomes == 100


class TestInitialPrices:
    def test_champion_weights_split_the_bracket(self):
        """Champion prices (0.4, 0.4, 0.1, 0.1) price the final directly and
        split round 1 proportionally: team 1 wins game 1 at 0.4/0.8."""
        m = MarketModel()
        m.add_tournament(2, {1: 0.4, 2: 0.4, 3: 0.1, 4: 0.1})
        by = m.by_name
        final = by["game_r2_b0"]
        npt.assert_allclose(m.initial_prices[final.start : final.stop],
                            [0.4, 0.4, 0.1, 0.1], atol=1e-9)
        g1 = by["game_r1_b0"]
        npt.assert_allclose(m.initial_prices[g1.start : g1.stop], [0.5, 0.5], atol=1e-9)
        w1 = by["team1_wins"]
        npt.assert_allclose(m.initial_prices[w1.start : w1.stop], [0.5, 0.1, 0.4],
                            atol=1e-9)

    def test_no_information_gives_fair_coin_bracket(self):
        """With no usable champion weights, games go uniform and win counts
        telescope to the fair-coin distribution (0.5, 0.25, 0.25)."""
        m = MarketModel()
        m.add_tournament(2, {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0})
        mu = init_prices(m, {})
        for r, blk in m.tournament.games:
            var = m.by_name[m.tournament.game_name(r, blk)]
            npt.assert_allclose(mu[var.start : var.stop], 1.0 / len(var.domain),
                                atol=1e-9)
        w = m.by_name["team3_wins"]
        npt.assert_allclose(mu[w.start : w.stop], [0.5, 0.25, 0.25], atol=1e-9)

    def test_zeroed_window_segment_falls_back_to_uniform(self):
        """A window zeroing out a whole win-count group is read as total
        ignorance: the group seeds uniform instead of renormalizing 0/0.

        On a two-team bracket the resulting point (uniform game, uniform
        win counts) is already coherent, so it comes back untouched.
        """
        m = MarketModel()
        m.add_tournament(1, {1: 0.8, 2: 0.2})
        mu = init_prices(m, {("team1_wins", x): 0.0 for x in (0, 1)})
        assert np.isfinite(mu).all()
        npt.assert_allclose(mu, np.full(m.n_securities, 0.5), atol=1e-12)

    def test_negative_observations_clamp_to_zero(self):
        """A negative observed price clamps to zero before renormalization:
        the result is identical to observing zero, and stays a distribution."""
        m = MarketModel()
        m.add_tournament(2, {1: 0.4, 2: 0.4, 3: 0.1, 4: 0.1})
        mu_neg = init_prices(m, {("team1_wins", 1): -0.3, ("team1_wins", 2): 0.4})
        mu_zero = init_prices(m, {("team1_wins", 1): 0.0, ("team1_wins", 2): 0.4})
        npt.assert_array_equal(mu_neg, mu_zero)
        assert (mu_neg >= 0).all()
        w = m.by_name["team1_wins"]
        npt.assert_allclose(mu_neg[w.start : w.stop].sum(), 1.0, atol=1e-6)

    def test_initial_prices_are_near_feasible(self, k3_model):
        """Seed prices are a heuristic, not a projection result: they must be
        proper near-distributions with only small relaxed-row violations
        (arbitrage removal handles the rest at run time)."""
        mu = k3_model.initial_prices
        assert (mu >= 0).all() and (mu <= 1).all()
        gs = k3_model.group_start
        sums = np.add.reduceat(mu, gs[:-1])
        npt.assert_allclose(sums, 1.0, atol=5e-3)
        worst = max(
            (row.rhs - row.value(mu)) if row.sense == "ge" else abs(row.value(mu) - row.rhs)
            for row in k3_model.lcmm_rows
        )
        assert worst < 0.05


class TestSaveLoad:
    def test_round_trip_preserves_structure_and_prices(self, tmp_path, k3_model):
        path = str(tmp_path / "model.jsonl")
        k3_model.save(path)
        again = MarketModel.load(path)
        assert [v.name for v in again.variables] == [v.name for v in k3_model.variables]
        npt.assert_allclose(again.initial_prices, k3_model.initial_prices, rtol=1e-15)
        assert len(again.ip_rows) == len(k3_model.ip_rows)
        assert len(again.lcmm_rows) == len(k3_model.lcmm_rows)
        npt.assert_array_equal(again.payoff_matrix(), k3_model.payoff_matrix())

    def test_bad_json_reports_path_and_line(self, tmp_path, k2_model):
        path = str(tmp_path / "model.jsonl")
        k2_model.save(path)
        with open(path) as fh:
            lines = fh.readlines()
        lines.insert(1, "{not json\n")
        with open(path, "w") as fh:
            fh.writelines(lines)
        with pytest.raises(ParseError) as exc:
            MarketModel.load(path)
        assert f"{path}:2" in str(exc.value)

    def test_unknown_record_kind_reports_line(self, tmp_path):
        path = str(tmp_path / "model.jsonl")
        with open(path, "w") as fh:
            fh.write('{"kind": "mystery"}\n')
        with pytest.raises(ParseError) as exc:
            MarketModel.load(path)
        assert "mystery" in str(exc.value)

    def test_bad_reference_reports_line(self, tmp_path):
        path = str(tmp_path / "model.jsonl")
        with open(path, "w") as fh:
            fh.write('{"kind": "sum", "id": "s", "children": ["ghost"]}\n')
        with pytest.raises(ParseError) as exc:
            MarketModel.load(path)
        assert f"{path}:1" in str(exc.value)


def _k1_model() -> MarketModel:
    m = MarketModel()
    m.add_tournament(1, {1: 0.6, 2: 0.4})
    return m
