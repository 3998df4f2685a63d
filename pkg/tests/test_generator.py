"""Synthetic data streams: reproducibility and validity.

Champion probabilities follow the pairwise-strength rule (team i beats j
with probability s_i/(s_i+s_j)), so small brackets can be checked against
explicit enumeration of every bracket path.
"""

import filecmp

import numpy as np
import numpy.testing as npt

from fwmarket.engine import outcome_token, validate_settlement
from fwmarket.generator import (
    champion_probabilities,
    default_model,
    generate,
    write_dataset,
)


def beats(s, i, j):
    return s[i - 1] / (s[i - 1] + s[j - 1])


class TestChampionProbabilities:
    def test_two_teams_reduce_to_one_game(self):
        s = np.array([3.0, 1.0])
        probs = champion_probabilities(1, s)
        npt.assert_allclose(probs[1], 0.75, rtol=1e-15)
        npt.assert_allclose(probs[2], 0.25, rtol=1e-15)

    def test_four_teams_match_explicit_enumeration(self):
        rng = np.random.Generator(np.random.Philox(41))
        s = np.exp(rng.normal(0.0, 1.0, 4))
        probs = champion_probabilities(2, s)
        want = {
            1: beats(s, 1, 2) * (beats(s, 3, 4) * beats(s, 1, 3)
                                 + beats(s, 4, 3) * beats(s, 1, 4)),
            2: beats(s, 2, 1) * (beats(s, 3, 4) * beats(s, 2, 3)
                                 + beats(s, 4, 3) * beats(s, 2, 4)),
            3: beats(s, 3, 4) * (beats(s, 1, 2) * beats(s, 3, 1)
                                 + beats(s, 2, 1) * beats(s, 3, 2)),
            4: beats(s, 4, 3) * (beats(s, 1, 2) * beats(s, 4, 1)
                                 + beats(s, 2, 1) * beats(s, 4, 2)),
        }
        for team, p in want.items():
            npt.assert_allclose(probs[team], p, rtol=1e-12)
        npt.assert_allclose(sum(probs.values()), 1.0, rtol=1e-12)

    def test_eight_teams_form_a_distribution(self):
        rng = np.random.Generator(np.random.Philox(42))
        s = np.exp(rng.normal(0.0, 1.0, 8))
        probs = champion_probabilities(3, s)
        assert set(probs) == set(range(1, 9))
        assert all(p > 0 for p in probs.values())
        npt.assert_allclose(sum(probs.values()), 1.0, rtol=1e-12)


class TestDefaultModel:
    def test_four_team_layout(self):
        s = np.ones(4)
        m = default_model(2, s)
        kinds = {v.name: v.kind for v in m.variables}
        assert kinds["conference_a_wins"] == "sum"
        assert kinds["conference_b_wins"] == "sum"
        for name in ("conference_a_vs_b", "cross_top", "cross_second"):
            assert kinds[name] == "comparison"

    def test_two_team_layout(self):
        m = default_model(1, np.ones(2))
        assert m.by_name["final_head_to_head"].kind == "comparison"


class TestGenerate:
    def test_no_orders_still_settles_the_bracket(self):
        data = generate(2, 0, seed=5)
        assert data.orders == []
        assert len(data.settlements) == 3
        assert [s.game for s in data.settlements] == [
            "game_r1_b0", "game_r1_b1", "game_r2_b0"
        ]

    def test_settle_rounds_truncates_the_stream(self):
        data = generate(2, 0, seed=5, settle_rounds=1)
        assert [s.game for s in data.settlements] == ["game_r1_b0", "game_r1_b1"]
        assert len(data.outcome) == 3  # the outcome always decides every game

    def test_comparison_fraction_is_exact(self):
        data = generate(2, 1000, comparison_fraction=0.17, seed=3)
        kinds = [data.model.by_name[o.variable].kind for o in data.orders]
        assert len(kinds) == 1000
        assert sum(k == "comparison" for k in kinds) == 170

    def test_streams_are_valid(self):
        data = generate(2, 200, seed=11, budget=2.5)
        m = data.model
        last_ts = 0.0
        for o in data.orders:
            var = m.by_name[o.variable]
            assert o.timestamp >= last_ts
            last_ts = o.timestamp
            assert 0 < len(o.event_values) < len(var.domain)
            assert len(set(o.event_values)) == len(o.event_values)
            for v in o.event_values:
                assert v in var.domain
            assert 0.0 < o.limit_price <= 1.0
            assert o.budget == 2.5
        results = {}
        for ev in data.settlements:
            results[validate_settlement(m, results, ev)] = ev.winner
            assert data.outcome[ev.game] == ev.winner
        assert 0 <= outcome_token(m, data.outcome) < m.n_outcomes

    def test_same_seed_writes_identical_files(self, tmp_path):
        names = ("model.jsonl", "orders.csv", "settlements.csv", "outcome.csv")
        for sub in ("a", "b"):
            d = tmp_path / sub
            d.mkdir()
            data = generate(2, 40, seed=9)
            write_dataset(data, *(str(d / n) for n in names))
        for n in names:
            assert filecmp.cmp(tmp_path / "a" / n, tmp_path / "b" / n,
                               shallow=False), n

    def test_different_seeds_differ(self):
        a = generate(2, 40, seed=9)
        b = generate(2, 40, seed=10)
        assert a.orders != b.orders
