"""Symmetric step distributions on the generating set and exponential-tilt curves."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .errors import InvalidLambda, ValidationError
from .groups import GroupModel

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class NotSymmetric:
    letter: str


@dataclass(frozen=True)
class NotNormalized:
    total: float


@dataclass(frozen=True)
class ZeroMass:
    letter: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "ok"
        return "; ".join(_describe(v) for v in self.violations)


def _describe(v) -> str:
    if isinstance(v, NotSymmetric):
        return f"NotSymmetric: mu({v.letter}) != mu({v.letter}^-1)"
    if isinstance(v, NotNormalized):
        return f"NotNormalized: masses sum to {v.total:.12g}"
    return f"ZeroMass: mu({v.letter}) <= 0"


def _as_fraction(v) -> Fraction | None:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    fr = Fraction(repr(float(v)))
    if fr.denominator <= 10**9 and float(fr) == float(v):
        return fr
    return None


@dataclass(frozen=True, eq=False)
class StepMeasure:
    """Probability on the letters of ``model.alphabet`` (array in alphabet order).

    ``exact`` holds rationals when every mass is a short decimal/rational and the
    total is exactly 1; the exact oracle then works in integer arithmetic.
    """

    model: GroupModel
    prob: np.ndarray
    exact: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.prob, dtype=float)
        if p.shape != (len(self.model.alphabet),):
            raise ValidationError("measure must give one mass per letter of the alphabet")
        p.setflags(write=False)
        object.__setattr__(self, "prob", p)

    @classmethod
    def uniform(cls, model: GroupModel) -> "StepMeasure":
        n = len(model.alphabet)
        return cls(model, np.full(n, 1.0 / n), tuple(Fraction(1, n) for _ in range(n)))

    @classmethod
    def from_mapping(cls, model: GroupModel, masses: Mapping[str, float], symmetrize: bool = True) -> "StepMeasure":
        """Build from ``{letter: mass}``; missing inverses are filled by symmetry."""
        alph = model.alphabet
        vals: list = [None] * len(alph)
        for name, v in masses.items():
            vals[alph.index(name)] = v
        if symmetrize:
            for i, j in enumerate(alph.inverse):
                if vals[i] is None and vals[j] is not None:
                    vals[i] = vals[j]
        missing = [alph.names[i] for i, v in enumerate(vals) if v is None]
        if missing:
            raise ValidationError(f"no mass given for letters {', '.join(missing)}")
        fracs = [_as_fraction(v) for v in vals]
        exact = None
        if all(f is not None for f in fracs) and sum(fracs) == 1:
            exact = tuple(fracs)
        return cls(model, np.array([float(v) for v in vals]), exact)

    @property
    def letters(self) -> tuple[str, ...]:
        return self.model.alphabet.names

    def as_dict(self) -> dict[str, float]:
        return {a: float(p) for a, p in zip(self.letters, self.prob)}

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.prob == self.prob[0]))

    def check(self) -> "StepMeasure":
        report = validate_measure(self)
        if not report.ok:
            raise ValidationError(str(report))
        return self

    def __eq__(self, other):
        return (
            isinstance(other, StepMeasure)
            and self.model == other.model
            and np.array_equal(self.prob, other.prob)
        )

    def __hash__(self):
        return hash((self.model, self.prob.tobytes()))


def validate_measure(m: StepMeasure) -> ValidationReport:
    report = ValidationReport()
    names = m.letters
    inv = m.model.alphabet.inverse
    for i, p in enumerate(m.prob):
        if not p > 0:
            report.violations.append(ZeroMass(names[i]))
    total = float(np.sum(m.prob))
    if abs(total - 1.0) > NORMALIZATION_TOL:
        report.violations.append(NotNormalized(total))
    for i, j in enumerate(inv):
        if i < j and m.prob[i] != m.prob[j]:
            report.violations.append(NotSymmetric(names[i]))
    return report


@dataclass(frozen=True, eq=False)
class MeasureCurve:
    """``mu_lambda(a) ∝ mu_0(a) exp(lambda * tilt(a))`` for lambda in [-1, 1]."""

    base: StepMeasure
    tilt: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tilt, dtype=float)
        if t.shape != self.base.prob.shape:
            raise ValidationError("tilt must give one value per letter")
        inv = np.asarray(self.base.model.alphabet.inverse)
        if not np.array_equal(t, t[inv]):
            raise ValidationError("tilt must be inverse-invariant to keep the curve symmetric")
        t.setflags(write=False)
        object.__setattr__(self, "tilt", t)

    @classmethod
    def from_mapping(cls, base: StepMeasure, tilt: Mapping[str, float]) -> "MeasureCurve":
        alph = base.model.alphabet
        vals = np.zeros(len(alph))
        given = np.zeros(len(alph), dtype=bool)
        for name, v in tilt.items():
            i = alph.index(name)
            vals[i] = v
            given[i] = True
        for i, j in enumerate(alph.inverse):
            if not given[i] and given[j]:
                vals[i] = vals[j]
        return cls(base, vals)

    @property
    def model(self) -> GroupModel:
        return self.base.model

    @property
    def nu(self) -> np.ndarray:
        return curve_derivative(self)

    def scaled(self, factor: float) -> "MeasureCurve":
        return MeasureCurve(self.base, self.tilt * factor)


def curve_at(c: MeasureCurve, lam: float) -> StepMeasure:
    if not -1.0 <= lam <= 1.0:
        raise InvalidLambda(f"lambda={lam} outside [-1, 1]")
    if lam == 0:
        return c.base
    w = c.base.prob * np.exp(lam * c.tilt)
    return StepMeasure(c.model, w / w.sum())


def curve_derivative(c: MeasureCurve) -> np.ndarray:
    """nu(a) = tilt(a) - E_{mu_0}[tilt]."""
    return c.tilt - float(np.dot(c.tilt, c.base.prob))


def log_ratio(c: MeasureCurve, lam: float, a: int | None = None):
    """log mu_lambda(a) - log mu_0(a); all letters when ``a`` is None."""
    if not -1.0 <= lam <= 1.0:
        raise InvalidLambda(f"lambda={lam} outside [-1, 1]")
    z = lam * c.tilt
    zmax = z.max()
    out = z - (zmax + np.log(np.dot(c.base.prob, np.exp(z - zmax))))
    return out if a is None else float(out[a])


def log_ratio_residual(c: MeasureCurve, lam: float) -> np.ndarray:
    """o_lambda(a) = log_ratio / lambda - nu(a)."""
    return log_ratio(c, lam) / lam - c.nu


def second_order_centering(c: MeasureCurve, lam: float) -> float:
    """(1/lambda) * sum_a (o_lambda(a) + lambda/2 nu(a)^2) mu_0(a); tends to 0."""
    nu = c.nu
    return float(np.dot(log_ratio_residual(c, lam) + 0.5 * lam * nu**2, c.base.prob) / lam)
