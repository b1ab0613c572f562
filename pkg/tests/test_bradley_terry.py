import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdn.bradley_terry import (Comparison, ComparisonGraphError, bt_fit, log_likelihood,
                               read_comparisons, simulate_tournament, win_matrix)

LP_PROFILE = {"ground_truth": 1.0, "reflection": 0.99, "random_scaling": 0.94, "small_noise": 0.87,
              "large_noise": 0.63, "squeezing": 0.55, "rotation": 0.26, "alter_rgb": 0.10}


def games(a, b, a_wins, b_wins):
    return [Comparison(a, b, "a")] * a_wins + [Comparison(a, b, "b")] * b_wins


def test_two_items_even():
    r = bt_fit(games("x", "y", 10, 10), reference="x")
    assert r.lp_factors["y"] == pytest.approx(1.0, abs=1e-12)


def test_two_items_closed_form_ratio():
    r = bt_fit(games("a", "b", 3, 1), reference="b")
    assert r.scores["a"] / r.scores["b"] == pytest.approx(3.0, abs=1e-6)
    assert r.lp_factors["b"] == 1.0
    assert r.converged


@given(st.integers(1, 30), st.integers(1, 30))
@settings(max_examples=30, deadline=None)
def test_two_item_mle_is_win_ratio(w, l):
    r = bt_fit(games("a", "b", w, l))
    assert r.scores["a"] / r.scores["b"] == pytest.approx(w / l, rel=1e-6)


def test_reference_defaults_to_strongest():
    r = bt_fit(games("a", "b", 1, 3))
    assert r.reference == "b" and r.lp_factors["b"] == 1.0


def test_unknown_reference_rejected():
    with pytest.raises(ValueError, match="reference"):
        bt_fit(games("a", "b", 1, 1), reference="c")


def test_lp_factors_are_scale_invariant():
    base = simulate_tournament(LP_PROFILE, 3000, seed=5)
    scaled = simulate_tournament({k: 7.5 * v for k, v in LP_PROFILE.items()}, 3000, seed=5)
    assert [(c.item_a, c.item_b, c.winner) for c in base] == [(c.item_a, c.item_b, c.winner) for c in scaled]
    a = bt_fit(base, reference="ground_truth").lp_factors
    b = bt_fit(scaled, reference="ground_truth").lp_factors
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12)


def test_log_likelihood_never_decreases():
    r = bt_fit(simulate_tournament(LP_PROFILE, 2000, seed=1))
    steps = np.diff(r.log_likelihood)
    assert np.all(steps >= -1e-9)
    items, W = win_matrix(simulate_tournament(LP_PROFILE, 2000, seed=1))
    s = np.array([r.scores[k] for k in items])
    assert log_likelihood(W, s) == pytest.approx(r.log_likelihood[-1], rel=1e-12)


def test_disconnected_graph_lists_components():
    comps = games("a", "b", 2, 1) + games("c", "d", 1, 2)
    with pytest.raises(ComparisonGraphError, match=r"\['a', 'b'\].*\['c', 'd'\]"):
        bt_fit(comps)


def test_idle_item_rejected():
    with pytest.raises(ComparisonGraphError, match="zero wins and zero losses"):
        bt_fit(games("a", "b", 2, 1), items=["a", "b", "c"])


def test_undefeated_item_rejected_unless_regularized():
    comps = games("a", "b", 3, 0) + games("b", "c", 2, 2)
    with pytest.raises(ComparisonGraphError, match="virtual_ties"):
        bt_fit(comps)
    r = bt_fit(comps, virtual_ties=True)
    assert set(r.scores) == {"a", "b", "c"}
    assert r.ranking()[0][0] == "a"


def test_empty_input_rejected():
    with pytest.raises(ComparisonGraphError):
        bt_fit([])


def test_comparison_invariants():
    with pytest.raises(ValueError):
        Comparison("a", "a", "a")
    with pytest.raises(ValueError):
        Comparison("a", "b", "c")


# -- simulator ------------------------------------------------------------------------

def test_simulator_equal_strengths():
    comps = simulate_tournament({"a": 1.0, "b": 1.0}, 10**5, seed=0)
    assert abs(np.mean([c.winner_id == "a" for c in comps]) - 0.5) < 0.01


def test_simulator_three_to_one():
    comps = simulate_tournament({"a": 3.0, "b": 1.0, "c": 2.0}, 10**5, seed=0)
    ab = [c for c in comps if {c.item_a, c.item_b} == {"a", "b"}]
    assert abs(np.mean([c.winner_id == "a" for c in ab]) - 0.75) < 0.01


def test_simulator_is_seeded():
    assert simulate_tournament(LP_PROFILE, 500, seed=3) == simulate_tournament(LP_PROFILE, 500, seed=3)
    assert simulate_tournament(LP_PROFILE, 500, seed=3) != simulate_tournament(LP_PROFILE, 500, seed=4)


def test_simulator_rejects_bad_strengths():
    with pytest.raises(ValueError):
        simulate_tournament({"a": 1.0}, 10)
    with pytest.raises(ValueError):
        simulate_tournament({"a": 1.0, "b": 0.0}, 10)


# -- recovery -------------------------------------------------------------------------

def _recovery(n, seed, profile=LP_PROFILE):
    r = bt_fit(simulate_tournament(profile, n, seed), reference="ground_truth")
    err = max(abs(r.lp_factors[k] - v) for k, v in profile.items())
    order = [k for k, _ in r.ranking()] == sorted(profile, key=lambda k: -profile[k])
    return err, order


@pytest.mark.xfail(strict=True, reason="2,000 comparisons leave ~0.07 standard error on each factor")
def test_table_profile_recovery_at_2000():
    err, order = _recovery(2000, seed=0)
    assert err < 0.05 and order


@pytest.mark.parametrize("seed", range(5))
def test_table_profile_factors_at_20000(seed):
    err, _ = _recovery(20_000, seed)
    assert err < 0.05


def test_rank_order_on_separated_profile():
    separated = {"ground_truth": 1.0, "b": 0.8, "c": 0.6, "d": 0.4, "e": 0.2}
    for seed in range(5):
        assert _recovery(20_000, seed, separated)[1]


def test_error_shrinks_with_more_comparisons():
    small = np.mean([_recovery(2000, s)[0] for s in range(5)])
    large = np.mean([_recovery(20_000, s)[0] for s in range(5)])
    assert large < small


# -- parsing --------------------------------------------------------------------------

def test_read_comparisons():
    lines = ["item_a,item_b,winner", "# a comment", "", "x,y,a", "x,y,y", "y,z,b"]
    assert read_comparisons(lines) == [Comparison("x", "y", "a"), Comparison("x", "y", "b"),
                                       Comparison("y", "z", "b")]


@pytest.mark.parametrize("line,msg", [("x,y", "3 fields"), ("x,y,q", "neither"), ("x,x,a", "itself")])
def test_read_comparisons_errors(line, msg):
    with pytest.raises(ValueError, match=msg):
        read_comparisons([line])
