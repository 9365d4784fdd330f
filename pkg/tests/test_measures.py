import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypwalk.errors import InvalidLambda, ValidationError
from hypwalk.groups import GroupModel
from hypwalk.measures import (
    MeasureCurve,
    NotNormalized,
    NotSymmetric,
    StepMeasure,
    ZeroMass,
    curve_at,
    curve_derivative,
    log_ratio,
    log_ratio_residual,
    second_order_centering,
    validate_measure,
)


def kinds(report):
    return {type(v) for v in report.violations}


def test_validate_examples(F2):
    assert validate_measure(StepMeasure.uniform(F2)).ok
    bad = StepMeasure(F2, np.array([0.3, 0.2, 0.25, 0.25]))
    assert kinds(validate_measure(bad)) == {NotSymmetric}
    short = StepMeasure(F2, np.array([0.25, 0.25, 0.25, 0.15]))
    rep = validate_measure(short)
    assert kinds(rep) == {NotSymmetric, NotNormalized}
    total = next(v.total for v in rep.violations if isinstance(v, NotNormalized))
    assert total == pytest.approx(0.9)
    zero = StepMeasure(F2, np.array([0.5, 0.5, 0.0, 0.0]))
    assert ZeroMass in kinds(validate_measure(zero))
    with pytest.raises(ValidationError, match="NotSymmetric"):
        bad.check()


def test_from_mapping_fills_inverses_and_keeps_rationals(F2):
    m = StepMeasure.from_mapping(F2, {"a": 0.3, "b": 0.2})
    assert m.as_dict() == {"a": 0.3, "A": 0.3, "b": 0.2, "B": 0.2}
    assert m.exact == (Fraction(3, 10), Fraction(3, 10), Fraction(1, 5), Fraction(1, 5))
    assert StepMeasure.from_mapping(F2, {"a": 1 / 3, "b": 1 / 6}).exact is None
    with pytest.raises(ValidationError):
        StepMeasure.from_mapping(GroupModel.free(3), {"a": 0.5})


def test_curve_examples(curve_b, curve_c, uniform):
    assert curve_at(curve_c, 0.0) == uniform
    m = curve_at(curve_b, 0.1)
    expected = 0.3 * math.exp(0.1) / (0.6 * math.exp(0.1) + 0.4 * math.exp(-0.1))
    assert m.as_dict()["a"] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.32345, abs=5e-6)
    assert np.allclose(curve_derivative(curve_c), [1, 1, -1, -1])
    assert np.allclose(curve_derivative(curve_b), [0.8, 0.8, -1.2, -1.2])
    flat = MeasureCurve(uniform, np.zeros(4))
    assert not np.any(flat.nu)


def test_log_ratio_examples(curve_b, curve_c):
    assert np.all(log_ratio(curve_b, 0.0) == 0)
    assert abs(log_ratio(curve_c, 0.01, 0) / 0.01 - curve_c.nu[0]) < 0.02
    assert log_ratio(curve_b, 0.1, 0) == pytest.approx(math.log(0.32345 / 0.3), abs=2e-5)
    assert log_ratio(curve_b, 0.1, 0) == pytest.approx(0.07527, abs=1e-5)


def test_lambda_domain(curve_b):
    with pytest.raises(InvalidLambda):
        curve_at(curve_b, 1.5)
    with pytest.raises(InvalidLambda):
        log_ratio(curve_b, -1.01)


def test_tilt_must_be_inverse_invariant(uniform):
    with pytest.raises(ValidationError):
        MeasureCurve(uniform, np.array([1.0, 0.0, 0.0, 0.0]))


def test_second_order_centering_decreases(curve_b, curve_c):
    for c in (curve_b, curve_c):
        vals = [abs(second_order_centering(c, lam)) for lam in (0.1, 0.01, 0.001)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < vals[0] / 50  # O(lambda)


def test_residual_is_order_lambda(curve_b):
    r1 = np.max(np.abs(log_ratio_residual(curve_b, 0.01)))
    r2 = np.max(np.abs(log_ratio_residual(curve_b, 0.001)))
    assert r2 < r1 / 5


MODELS = [GroupModel.free(2), GroupModel.free(3), GroupModel.free_product(3, 3), GroupModel.free_product(2, 3, 4)]


@st.composite
def curves(draw):
    G = draw(st.sampled_from(MODELS))
    alph = G.alphabet
    reps = [i for i, j in enumerate(alph.inverse) if i <= j]
    w = draw(st.lists(st.floats(0.05, 1.0), min_size=len(reps), max_size=len(reps)))
    phi = draw(st.lists(st.floats(-3, 3), min_size=len(reps), max_size=len(reps)))
    mass = np.zeros(len(alph))
    tilt = np.zeros(len(alph))
    for r, wi, fi in zip(reps, w, phi):
        mass[r] = mass[alph.inverse[r]] = wi
        tilt[r] = tilt[alph.inverse[r]] = fi
    return MeasureCurve(StepMeasure(G, mass / mass.sum()), tilt)


@given(curves(), st.floats(-1, 1))
def test_curve_points_are_valid(c, lam):
    assert validate_measure(curve_at(c, lam)).ok


@given(curves())
def test_nu_is_centred_and_bounded(c):
    nu = c.nu
    assert abs(float(np.dot(nu, c.base.prob))) <= 1e-12
    assert np.max(np.abs(nu)) <= 2 * np.max(np.abs(c.tilt)) + 1e-12


@given(curves(), st.floats(0.01, 1))
def test_negated_tilt_mirrors_lambda(c, lam):
    a = curve_at(c, -lam).prob
    b = curve_at(c.scaled(-1), lam).prob
    assert np.allclose(a, b, rtol=0, atol=1e-15)


@given(curves(), st.floats(-1, 1))
def test_log_ratio_matches_direct_logs(c, lam):
    direct = np.log(curve_at(c, lam).prob) - np.log(c.base.prob)
    assert np.allclose(log_ratio(c, lam), direct, atol=1e-12)
