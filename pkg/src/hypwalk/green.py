"""Green function, hitting probabilities and the Green metric d_G(id, z) = -log F(z).

On a free group the Cayley graph is a tree: F(z) is the product of the
first-passage probabilities ``q(s)`` along the letters of ``z``, where ``q`` is
the minimal solution of

    q(s) = mu(s) + q(s) * sum_{u != s} mu(u) q(u^-1).

For general models F(z) is bracketed: the lower end is the hitting probability
of the walk killed when it leaves the ball of radius R, the upper end adds an
explicit bound on what happens after leaving the ball.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, NonConvergence, ValidationError
from .exact import (
    SUPPORT_BUDGET,
    _aggregate,
    _ball_size,
    _key_dtype,
    _step_keys,
    distance_chain,
    encode,
    key_lengths,
    spectral_radius_estimate,
    tree_first_passage_series,
    tree_return_series,
)
from .groups import GroupElement, GroupModel, enumerate_ball, sphere_counts, word_length
from .measures import StepMeasure

BALL_BUDGET = 10**6
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FirstPassageTable:
    model: GroupModel
    measure: StepMeasure
    q: np.ndarray  # per letter, alphabet order (= token order on free groups)
    q_upper: np.ndarray  # certified: T(q_upper) <= q_upper, hence q <= q_upper
    return_prob: float
    residual: float
    iterations: int

    @property
    def weights(self) -> np.ndarray:
        return -np.log(self.q)


def _tree_map(mu: np.ndarray, inv: np.ndarray, q: np.ndarray) -> np.ndarray:
    back = mu * q[inv]  # mu(u) q(u^-1)
    return mu + q * (back.sum() - back)


def tree_first_passage(m: StepMeasure, model: GroupModel | None = None, max_iter: int = 200_000) -> FirstPassageTable:
    """Minimal fixed point by monotone iteration from zero."""
    model = m.model if model is None else model
    if not model.is_free:
        raise ValidationError("tree first-passage tables need a free group")
    m.check()
    mu = m.prob
    inv = np.asarray(model.alphabet.inverse)
    q = np.zeros_like(mu)
    it = 0
    for it in range(1, max_iter + 1):
        nq = _tree_map(mu, inv, q)
        if np.array_equal(nq, q):
            break
        q = nq
    residual = float(np.max(np.abs(_tree_map(mu, inv, q) - q)))
    if residual > RESIDUAL_TOL:
        raise NonConvergence(f"first-passage iteration stalled at residual {residual:.3e}")
    q_up = _certify_upper(mu, inv, q)
    U = float(np.dot(mu, q[inv]))
    return FirstPassageTable(model, m, q, q_up, U, residual, it)


def _certify_upper(mu, inv, q) -> np.ndarray:
    # the least fixed point lies below every x with T(x) <= x
    for eps in (1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3):
        x = q * (1 + eps) + eps
        if np.all(_tree_map(mu, inv, x) <= x) and np.all(x < 1):
            return x
    raise NonConvergence("could not certify an upper bound for the first-passage probabilities")


def green_distance_tree(table: FirstPassageTable, z: GroupElement) -> float:
    w = table.weights
    return math.fsum(float(w[t]) for t in z.word)


@dataclass(frozen=True)
class GreenEvaluation:
    z: GroupElement
    lower: float
    upper: float
    method: str
    F_lower: float
    F_upper: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


# -- killed-walk hitting probability -------------------------------------------


def _killed_hit_tree(m: StepMeasure, z: GroupElement, R: int) -> float:
    """P[hit z before leaving the ball of radius R], exact on a free group.

    Off the geodesic [id, z] the return probability to the parent depends only
    on the last letter and on the remaining depth, which gives a finite recursion.
    """
    model = m.model
    mu = m.prob
    S = len(mu)
    inv = model.alphabet.inverse
    # g[r][s]: from x = parent*s with R - |x| = r, probability of reaching the parent
    g = {-1: np.zeros(S)}
    for r in range(0, R + 1):
        prev = g[r - 1]
        gr = np.empty(S)
        for s in range(S):
            out = sum(mu[t] * prev[t] for t in range(S) if t != inv[s])
            gr[s] = mu[inv[s]] / (1.0 - out)
        g[r] = gr
    word = z.word  # on free groups tokens are letters
    L = len(word)
    F = 1.0
    f_prev = 0.0
    for i in range(L):
        fwd = word[i]
        back = inv[word[i - 1]] if i > 0 else None
        r_child = R - i - 1
        side = g[r_child] if r_child >= -1 else g[-1]
        E = sum(mu[t] * side[t] for t in range(S) if t != fwd and t != back)
        denom = 1.0 - E - (mu[back] * f_prev if back is not None else 0.0)
        f = mu[fwd] / denom
        F *= f
        f_prev = f
    return F


def _killed_hit_enumerated(m: StepMeasure, z: GroupElement, R: int, budget: int, tol: float = 1e-13):
    """Same quantity by Jacobi sweeps over the enumerated ball."""
    model = m.model
    words = enumerate_ball(model, R, budget)
    index = {w: i for i, w in enumerate(words)}
    K = len(words)
    S = len(m.prob)
    nb = np.full((K, S), K, dtype=np.int64)  # K = killed sink
    letter_tok = model.letter_tokens
    for i, w in enumerate(words):
        for a in range(S):
            nw = list(w)
            model._append(nw, letter_tok[a])
            nb[i, a] = index.get(tuple(nw), K)
    target = index[z.word]
    h = np.zeros(K + 1)
    h[target] = 1.0
    for sweep in range(1, 200_000):
        nh = np.empty_like(h)
        nh[:K] = h[nb] @ m.prob
        nh[K] = 0.0
        nh[target] = 1.0
        change = float(np.max(np.abs(nh - h)))
        h = nh
        if change <= tol:
            break
    else:
        raise NonConvergence("ball solve did not converge")
    residual = float(np.max(np.abs((h[nb] @ m.prob)[np.arange(K) != target] - h[:K][np.arange(K) != target])))
    return float(h[index[()]]), residual, sweep


def carne_varopoulos_tail(rho: float, D: int) -> float:
    """Upper bound on G(y) for |y| >= D: sum_{n >= D} 2 rho^n exp(-D^2 / 2n)."""
    if D <= 0:
        return math.inf
    if rho >= 1:
        return math.inf
    total = 0.0
    n = D
    while True:
        term = 2.0 * rho**n * math.exp(-D * D / (2.0 * n))
        total += term
        # remaining terms are below 2 rho^n each
        rest = 2.0 * rho ** (n + 1) / (1.0 - rho)
        if rest < 1e-18 or rest < 1e-14 * total:
            return total + rest
        n += 1


def green_distance_ball(
    m: StepMeasure,
    model: GroupModel | None,
    z: GroupElement,
    R: int,
    budget: int = BALL_BUDGET,
    engine: str = "auto",
    rho_upper: float | None = None,
) -> GreenEvaluation:
    """Bracket d_G(id, z) from the killed-walk hitting probability in the ball of radius R."""
    model = m.model if model is None else model
    m.check()
    L = word_length(z)
    if R < L:
        raise ValidationError(f"R={R} is smaller than |z|={L}")
    method = f"BallSolve({R})"
    if z.is_identity:
        return GreenEvaluation(z, 0.0, 0.0, method, 1.0, 1.0)
    if engine == "auto":
        engine = "tree" if model.is_free else "enumerate"
    if engine == "tree":
        if not model.is_free:
            raise ValidationError("tree ball solve needs a free group")
        F_lo = _killed_hit_tree(m, z, R)
    elif engine == "enumerate":
        F_lo, _, _ = _killed_hit_enumerated(m, z, R, budget)
    else:
        raise ValidationError(f"unknown engine {engine!r}")
    # after leaving the ball the walk is at distance >= D from z
    D = R + 1 - L
    if rho_upper is None:
        rho_upper = spectral_radius_estimate(m).upper
    tail = carne_varopoulos_tail(rho_upper, D)
    if model.is_free:
        table = tree_first_passage(m)
        tail = min(tail, float(np.max(table.q_upper)) ** D)
    F_hi = min(1.0, F_lo + (1.0 - F_lo) * tail)
    return GreenEvaluation(z, -math.log(F_hi), -math.log(F_lo), method, F_lo, F_hi)


# -- Green function series -----------------------------------------------------


def _series_terms_convolution(m: StepMeasure, z: GroupElement, T: int, budget: int) -> np.ndarray:
    model = m.model
    Lz = word_length(z)
    est = _ball_size(model, min(T, (T + Lz) // 2 + 1))
    if est > budget:
        raise BudgetExceeded(est, budget)
    target = encode(z)
    keys = np.zeros(1, dtype=_key_dtype(model, T))
    weights = np.ones(1)
    out = [1.0 if target == 0 else 0.0]
    for j in range(1, T + 1):
        nk = np.concatenate([_step_keys(model, keys, a) for a in range(len(m.prob))])
        nw = np.concatenate([weights * p for p in m.prob])
        keys, weights = _aggregate(nk, nw)
        keep = key_lengths(model, keys) <= Lz + (T - j)
        keys, weights = keys[keep], weights[keep]
        i = np.searchsorted(keys, target)
        out.append(float(weights[i]) if i < len(keys) and keys[i] == target else 0.0)
    return np.array(out)


def _series_terms_chain(m: StepMeasure, z: GroupElement, T: int) -> np.ndarray:
    model = m.model
    r = len(z.word)
    sphere = sphere_counts(model, r)[r]
    law_terms = [distance_chain(model.rank, n)[r] if n >= r else 0.0 for n in range(T + 1)]
    return np.array(law_terms) / sphere


def _series_terms_tree(m: StepMeasure, z: GroupElement, T: int) -> np.ndarray:
    g = tree_return_series(m, T)
    c = tree_first_passage_series(m, T)
    acc = g.copy()
    for t in z.word:
        acc = np.convolve(acc, c[t])[: T + 1]
    return acc


def green_function_series(
    m: StepMeasure,
    model: GroupModel | None,
    z: GroupElement,
    T: int,
    engine: str = "convolution",
    budget: int = SUPPORT_BUDGET,
    rho_upper: float | None = None,
) -> tuple[float, float]:
    """(sum_{n <= T} mu^n(z), rho^{T+1} / (1 - rho)) with rho the upper spectral estimate."""
    model = m.model if model is None else model
    if engine == "convolution":
        terms = _series_terms_convolution(m, z, T, budget)
    elif engine == "chain":
        if not (model.is_free and m.is_uniform):
            raise ValidationError("distance-chain engine needs a uniform measure on a free group")
        terms = _series_terms_chain(m, z, T)
    elif engine == "tree":
        terms = _series_terms_tree(m, z, T)
    else:
        raise ValidationError(f"unknown engine {engine!r}")
    if rho_upper is None:
        rho_upper = spectral_radius_estimate(m).upper
    tail = rho_upper ** (T + 1) / (1.0 - rho_upper) if rho_upper < 1 else math.inf
    return math.fsum(terms.tolist()), tail
