import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypwalk.errors import Overflow, UnknownLetter, ValidationError
from hypwalk.groups import (
    GroupModel,
    ball_count,
    enumerate_ball,
    growth_rate,
    invert,
    multiply,
    reduce,
    sphere_counts,
    word_distance,
    word_length,
)
from hypwalk.metrics import WordMetric, gromov_product, hyperbolicity_defect, metric_growth

MODELS = [GroupModel.free(2), GroupModel.free(3), GroupModel.free_product(3, 3), GroupModel.free_product(2, 3),
          GroupModel.free_product(4, 5, 2)]


def letters_of(model):
    return st.lists(st.integers(0, len(model.alphabet) - 1), max_size=20)


def elements(model):
    return letters_of(model).map(model.from_letters)


def naive_reduce_free(letters):
    # repeatedly delete adjacent inverse pairs until nothing changes
    w = list(letters)
    changed = True
    while changed:
        changed = False
        for i in range(len(w) - 1):
            if w[i] ^ 1 == w[i + 1]:
                del w[i : i + 2]
                changed = True
                break
    return tuple(w)


def test_reduce_examples(F2, Z3Z3):
    assert reduce(["a", "A"], F2).is_identity
    assert reduce("a a^-1", F2).is_identity
    assert str(reduce(["a", "b", "B"], F2)) == "a"
    assert reduce(["x1", "x1", "x1"], Z3Z3).is_identity


def test_multiply_examples(F2):
    ab = F2.element("ab")
    assert multiply(ab, F2.element("BA")).is_identity
    assert str(F2.element("a") * F2.element("b")) == "ab"
    assert str(multiply(ab, F2.element("BB"))) == "aB"
    assert multiply(ab, F2.identity) == ab


def test_invert_examples(F2, Z3Z3):
    assert invert(F2.identity).is_identity
    assert str(invert(F2.element("ab"))) == "BA"
    assert str(invert(Z3Z3.element("x1"))) == "x1^2"


def test_word_length_examples(F2):
    assert word_length(F2.identity) == 0
    assert word_length(F2.element("aba")) == 3
    assert word_length(F2.element("aB")) == 2


def test_free_product_syllable_lengths():
    G = GroupModel.free_product(5, 3)
    assert word_length(G.element("x1^2")) == 2
    assert word_length(G.element("x1^3")) == 2  # x^3 = x^-2
    assert word_length(G.element("x1 x1 x1 x1")) == 1
    assert str(G.element("x1^4")) == "x1^4"


def test_unknown_letters(F2, Z3Z3):
    with pytest.raises(UnknownLetter):
        reduce(["a", "c"], F2)
    with pytest.raises(UnknownLetter):
        F2.element("a!b")
    with pytest.raises(UnknownLetter):
        Z3Z3.element("x3")
    with pytest.raises(UnknownLetter):
        F2.from_letters([4])


def test_model_validation():
    with pytest.raises(ValidationError):
        GroupModel.free(1)
    with pytest.raises(ValidationError):
        GroupModel.free_product(2, 2)
    with pytest.raises(ValidationError):
        GroupModel.free_product(3)
    with pytest.raises(ValidationError):
        GroupModel.parse("surface:2")
    assert GroupModel.parse("freeproduct:3,3") == GroupModel.free_product(3, 3)
    assert str(GroupModel.parse(" free:2 ")) == "free:2"


def test_alphabet_is_symmetric():
    for G in MODELS:
        inv = G.alphabet.inverse
        assert all(inv[inv[i]] == i for i in range(len(inv)))
    assert GroupModel.free(2).alphabet.names == ("a", "A", "b", "B")
    assert GroupModel.free_product(2, 3).alphabet.names == ("x1", "x2", "x2^2")


def test_gromov_product_examples(F2):
    e = F2.identity
    assert gromov_product(F2.element("ab"), F2.element("aB"), e) == 1.0
    assert gromov_product(F2.element("ab"), F2.element("ab"), e) == 2.0
    assert gromov_product(F2.element("a"), F2.element("b"), e) == 0.0


def test_ball_count_examples(F2):
    assert [ball_count(F2, r) for r in range(3)] == [1, 5, 17]
    assert sphere_counts(F2, 4) == [1, 4, 12, 36, 108]


def test_ball_count_matches_enumeration():
    for G in MODELS:
        for r in range(5):
            assert ball_count(G, r) == len(enumerate_ball(G, r))
            assert len(set(enumerate_ball(G, r))) == ball_count(G, r)


def test_ball_count_overflow(F2):
    with pytest.raises(Overflow):
        ball_count(F2, 60)


def test_tree_growth(F2):
    r = 12
    assert abs(math.log(ball_count(F2, r)) / r - math.log(3)) < 0.1
    k3 = GroupModel.free(3)
    assert abs(math.log(ball_count(k3, r)) / r - math.log(5)) < 0.15


def test_growth_two_routes():
    # sphere-count ratio against the transfer-matrix root
    for G in MODELS:
        assert growth_rate(G, 60) == pytest.approx(metric_growth(G), abs=2e-3)


def test_hyperbolicity_defect_examples(F2):
    x = F2.element("ab")
    assert hyperbolicity_defect([(x, x, x, x)]) == 0.0
    with pytest.raises(ValueError):
        hyperbolicity_defect([])


@given(letters_of(GroupModel.free(2)))
def test_reduce_matches_naive_cancellation(letters):
    G = GroupModel.free(2)
    assert G.from_letters(letters).word == naive_reduce_free(letters)


@pytest.mark.parametrize("G", MODELS, ids=str)
@given(data=st.data())
def test_group_axioms(G, data):
    x, y, z = (data.draw(elements(G)) for _ in range(3))
    assert (x * y) * z == x * (y * z)
    assert (x * invert(x)).is_identity
    assert invert(invert(x)) == x
    assert G.from_tokens(x.word) == x  # idempotent normal form
    assert word_length(invert(x)) == word_length(x)
    assert word_length(x * y) <= word_length(x) + word_length(y)
    assert word_distance(x, y) == word_distance(y, x)
    assert (word_length(x) == 0) == x.is_identity


@pytest.mark.parametrize("G", MODELS, ids=str)
@given(data=st.data())
def test_parse_roundtrip(G, data):
    x = data.draw(elements(G))
    assert G.element(str(x)) == x


@given(st.lists(st.tuples(*(elements(GroupModel.free(2)),) * 4), min_size=1, max_size=5))
def test_free_group_is_zero_hyperbolic(quads):
    assert hyperbolicity_defect(quads, WordMetric()) == 0.0


@given(data=st.data())
def test_gromov_product_symmetric(data):
    G = GroupModel.free_product(3, 3)
    x, y, w = (data.draw(elements(G)) for _ in range(3))
    assert gromov_product(x, y, w) == gromov_product(y, x, w)
    assert gromov_product(x, x, w) == word_distance(x, w)
    assert gromov_product(x, y, w) >= 0
