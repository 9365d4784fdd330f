import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from hypwalk.errors import ValidationError
from hypwalk.green import (
    _killed_hit_enumerated,
    _killed_hit_tree,
    carne_varopoulos_tail,
    green_distance_ball,
    green_distance_tree,
    green_function_series,
    tree_first_passage,
)
from hypwalk.groups import GroupModel, reduce
from hypwalk.measures import StepMeasure
from hypwalk.metrics import GreenMetric, TreeGreenMetric, hyperbolicity_defect, length


def curve_b_q():
    """Independent first-passage oracle for mu(a) = 0.3, mu(b) = 0.2 via scalar root finding.

    With x = q_a, y = q_b: x = .3 + x(.3x + .4y), y = .2 + y(.6x + .2y).
    The second equation gives the smaller root y(x); then solve the first in x.
    """
    def y_of(x):
        a, b, c = 0.2, 0.6 * x - 1, 0.2
        return (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)

    x = brentq(lambda x: 0.3 + x * (0.3 * x + 0.4 * y_of(x)) - x, 0.1, 0.6)
    return x, y_of(x)


def test_uniform_first_passage(uniform, F2):
    t = tree_first_passage(uniform)
    assert np.allclose(t.q, 1 / 3, atol=1e-15)
    assert t.return_prob == pytest.approx(1 / 3, abs=1e-15)
    assert t.residual <= 1e-12
    assert np.all(t.q_upper >= t.q)
    assert green_distance_tree(t, F2.element("ab")) == pytest.approx(2 * math.log(3), abs=1e-14)
    assert green_distance_tree(t, F2.identity) == 0


def test_anisotropic_first_passage(curve_b, F2):
    t = tree_first_passage(curve_b.base)
    qa, qb = curve_b_q()
    assert t.q[F2.alphabet.index("a")] == pytest.approx(qa, abs=1e-12)
    assert t.q[F2.alphabet.index("B")] == pytest.approx(qb, abs=1e-12)
    assert t.residual <= 1e-12
    assert green_distance_tree(t, F2.element("aab")) == pytest.approx(-2 * math.log(qa) - math.log(qb), abs=1e-12)


def test_tree_requires_free_group(Z3Z3):
    with pytest.raises(ValidationError):
        tree_first_passage(StepMeasure.uniform(Z3Z3))


@pytest.mark.parametrize("word", ["a", "ab", "aBa", "bbA"])
def test_ball_bracket_contains_tree_value(word, curve_b, F2):
    m = curve_b.base
    z = F2.element(word)
    exact = green_distance_tree(tree_first_passage(m), z)
    ev = green_distance_ball(m, None, z, len(z) + 15)
    assert ev.contains(exact)
    assert ev.width <= 1e-4
    assert ev.method == f"BallSolve({len(z) + 15})"


def test_ball_bracket_tightens(uniform, F2):
    z = F2.element("a")
    prev_F, prev_w = 0.0, math.inf
    for R in (1, 3, 5, 10, 20):
        ev = green_distance_ball(uniform, None, z, R)
        assert ev.F_lower >= prev_F
        assert ev.width <= prev_w
        assert ev.contains(math.log(3))
        prev_F, prev_w = ev.F_lower, ev.width
    assert prev_w < 1e-8


def test_ball_engines_agree(curve_b, F2):
    for word, R in (("a", 4), ("ab", 5), ("BA", 6)):
        z = F2.element(word)
        tree = _killed_hit_tree(curve_b.base, z, R)
        enum, residual, _ = _killed_hit_enumerated(curve_b.base, z, R, 10**6)
        assert residual < 1e-12
        assert tree == pytest.approx(enum, abs=1e-11)


def test_ball_edge_cases(uniform, F2):
    ev = green_distance_ball(uniform, None, F2.identity, 0)
    assert (ev.lower, ev.upper) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        green_distance_ball(uniform, None, F2.element("ab"), 1)


def test_carne_varopoulos_tail():
    assert carne_varopoulos_tail(0.9, 0) == math.inf
    assert carne_varopoulos_tail(1.0, 5) == math.inf
    vals = [carne_varopoulos_tail(0.87, D) for D in (5, 10, 20)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] <= 2 * 0.87**20 / 0.13


def test_green_function_at_identity(uniform, F2):
    # G(id) = 1 / (1 - U) = 3/2 for the simple walk on F_2
    partial = [green_function_series(uniform, None, F2.identity, T, engine="chain")[0] for T in (0, 10, 100, 400)]
    assert partial[0] == 1.0
    assert all(b > a for a, b in zip(partial, partial[1:]))
    assert partial[-1] <= 1.5 + 1e-12 and 1.5 - partial[-1] < 1e-6


def test_series_engines_agree(uniform, curve_b, F2):
    z = F2.element("ab")
    a = green_function_series(uniform, None, z, 16, engine="convolution")[0]
    b = green_function_series(uniform, None, z, 16, engine="chain")[0]
    c = green_function_series(uniform, None, z, 16, engine="tree")[0]
    assert a == pytest.approx(b, abs=1e-15) and a == pytest.approx(c, abs=1e-15)
    z = F2.element("aB")
    a = green_function_series(curve_b.base, None, z, 14, engine="convolution")[0]
    c = green_function_series(curve_b.base, None, z, 14, engine="tree")[0]
    assert a == pytest.approx(c, abs=1e-15)
    with pytest.raises(ValidationError):
        green_function_series(curve_b.base, None, z, 14, engine="chain")


def test_hitting_factorisation(curve_b, F2):
    # G(z) = F(z) G(id)
    m = curve_b.base
    t = tree_first_passage(m)
    z = F2.element("ab")
    Gz, tail_z = green_function_series(m, None, z, 600, engine="tree")
    G0, tail_0 = green_function_series(m, None, F2.identity, 600, engine="tree")
    assert tail_z < 1e-28
    assert Gz / G0 == pytest.approx(math.exp(-green_distance_tree(t, z)), rel=1e-12)
    assert G0 == pytest.approx(1 / (1 - t.return_prob), rel=1e-12)


def test_tree_metric_properties(curve_b, F2):
    metric = TreeGreenMetric(tree_first_passage(curve_b.base))
    w = metric.token_weights(F2)
    for word in ("a", "ab", "aBAb", "bbbA"):
        x = F2.element(word)
        # symmetric because the measure is
        assert length(metric, x) == pytest.approx(length(metric, x.inverse()), abs=1e-14)
        # comparable to the word length
        assert w.min() * len(x) <= length(metric, x) + 1e-12
        assert length(metric, x) <= w.max() * len(x) + 1e-12


elements = st.lists(st.sampled_from("aAbB"), max_size=7).map(lambda s: reduce("".join(s), GroupModel.free(2)))


@settings(max_examples=40)
@given(st.tuples(elements, elements, elements, elements))
def test_green_metric_tree_defect(quad):
    m = StepMeasure.from_mapping(GroupModel.free(2), {"a": 0.3, "b": 0.2})
    metric = TreeGreenMetric(tree_first_passage(m))
    assert hyperbolicity_defect([quad], metric) <= 1e-9


def test_ball_metric_on_free_group_matches_tree(curve_b, F2):
    tree = TreeGreenMetric(tree_first_passage(curve_b.base)).token_weights(F2)
    lo, hi = GreenMetric(curve_b.base).token_bounds(F2)
    assert np.all(lo <= tree) and np.all(tree <= hi)


def test_free_product_brackets(Z3Z3):
    m = StepMeasure.uniform(Z3Z3)
    prev = 0.0
    for R in (2, 4, 6):
        ev = green_distance_ball(m, None, Z3Z3.element("x1"), R)
        assert 0 <= ev.lower <= ev.upper
        assert ev.F_lower >= prev
        prev = ev.F_lower
    # x1 and x1^2 are mirror images under the symmetric measure
    one = green_distance_ball(m, None, Z3Z3.element("x1"), 6)
    two = green_distance_ball(m, None, Z3Z3.element("x1^2"), 6)
    assert one.lower == pytest.approx(two.lower, abs=1e-12)
    three = green_distance_ball(m, None, Z3Z3.element("x1 x2 x1"), 6)
    assert three.upper > one.upper
