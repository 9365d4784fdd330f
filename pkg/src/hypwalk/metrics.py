"""Left-invariant metrics on the supported groups, Gromov products, four-point defect.

Every metric here is additive over the tokens of the normal form:
``d(id, x) = sum(weight[t] for t in x.word)``. For the word metric this is the
syllable length; for Green metrics it is ``-log F(t)``, which factorises over
the cut vertices of the Cayley graph (letters of a free group, syllables of a
free product). Distances between arbitrary points go through left invariance,
``d(x, y) = d(id, x^-1 y)``, and nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .groups import PUSH, GroupElement, GroupModel, invert, multiply

if TYPE_CHECKING:
    from .green import FirstPassageTable
    from .measures import StepMeasure


class WordMetric:
    name = "word"

    def token_weights(self, model: GroupModel) -> np.ndarray:
        return model.token_length

    def __eq__(self, other):
        return isinstance(other, WordMetric)

    def __hash__(self):
        return hash("word")

    def __repr__(self):
        return "WordMetric()"


@dataclass(frozen=True, eq=False)
class TreeGreenMetric:
    """Exact Green metric of a free-group walk from its first-passage table."""

    table: "FirstPassageTable"
    name: str = "green-tree"

    def token_weights(self, model: GroupModel) -> np.ndarray:
        if model != self.table.model:
            raise ValueError("first-passage table belongs to a different group")
        return self.table.weights


@dataclass(frozen=True)
class GreenMetric:
    """Green metric of ``measure`` with per-token values bracketed by ball solves.

    Distances use bracket midpoints; ``token_bounds`` exposes the brackets.
    """

    measure: "StepMeasure"
    extra_radius: int = 15
    name: str = "green-ball"

    def token_bounds(self, model: GroupModel) -> tuple[np.ndarray, np.ndarray]:
        if model != self.measure.model:
            raise ValueError("reference measure lives on a different group")
        return _green_token_bounds(self.measure, self.extra_radius)

    def token_weights(self, model: GroupModel) -> np.ndarray:
        lo, hi = self.token_bounds(model)
        return 0.5 * (lo + hi)


@lru_cache(maxsize=32)
def _green_token_bounds(measure: "StepMeasure", extra_radius: int):
    from .green import green_distance_ball

    model = measure.model
    lo, hi = [], []
    for t in range(len(model.tokens)):
        z = GroupElement(model, (t,))
        R = int(model.token_length[t]) + extra_radius
        ev = green_distance_ball(measure, model, z, R)
        lo.append(ev.lower)
        hi.append(ev.upper)
    lo_a, hi_a = np.array(lo), np.array(hi)
    lo_a.setflags(write=False)
    hi_a.setflags(write=False)
    return lo_a, hi_a


def length(metric, x: GroupElement) -> float:
    w = metric.token_weights(x.model)
    return float(sum(w[t] for t in x.word))


def distance(metric, x: GroupElement, y: GroupElement) -> float:
    return length(metric, multiply(invert(x), y))


def gromov_product(x: GroupElement, y: GroupElement, w: GroupElement, metric=None) -> float:
    """(x, y)_w = (d(x, w) + d(y, w) - d(x, y)) / 2."""
    metric = WordMetric() if metric is None else metric
    return 0.5 * (distance(metric, x, w) + distance(metric, y, w) - distance(metric, x, y))


def hyperbolicity_defect(samples: Iterable[tuple], metric=None) -> float:
    """max over (x, y, z, w) of min((x,z)_w, (z,y)_w) - (x,y)_w, floored at 0."""
    metric = WordMetric() if metric is None else metric
    worst = 0.0
    seen = False
    for x, y, z, w in samples:
        seen = True
        gap = min(gromov_product(x, z, w, metric), gromov_product(z, y, w, metric)) - gromov_product(
            x, y, w, metric
        )
        worst = max(worst, gap)
    if not seen:
        raise ValueError("hyperbolicity_defect needs at least one quadruple")
    return worst


def _transition(model: GroupModel) -> np.ndarray:
    """allowed[t, u]: token u may follow token t in a normal form."""
    T = len(model.tokens)
    allowed = np.ones((T, T), dtype=bool)
    for t in range(T):
        for u in range(T):
            allowed[t, u] = model._combine(t, u) == PUSH
    return allowed


def metric_growth(model: GroupModel, metric=None, tol: float = 1e-12) -> float:
    """v(d) = lim log #{x : d(id, x) <= R} / R for an additive metric.

    Normal forms are paths in the token automaton, so v is the root s of
    rho(A(s)) = 1 with A(s)[t, u] = allowed[t, u] * exp(-s * w[u]).
    """
    metric = WordMetric() if metric is None else metric
    w = np.asarray(metric.token_weights(model), dtype=float)
    allowed = _transition(model).astype(float)

    def rho(s):
        return float(np.max(np.abs(np.linalg.eigvals(allowed * np.exp(-s * w)[None, :]))))

    lo, hi = 0.0, 1.0
    while rho(hi) > 1:
        hi *= 2
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if rho(mid) > 1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
