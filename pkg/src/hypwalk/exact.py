"""Exact small-n computations used as ground truth for the estimators.

Two engines:

* sparse convolution over normal forms. A reduced word is packed into one
  integer (last token in the lowest base-(T+1) digit), so right multiplication
  by a letter is arithmetic on the key and aggregation is a sort plus
  ``np.add.reduceat``. When the step measure is rational, masses are carried as
  integers over the common denominator ``D**n`` and results are exact.
* full path enumeration (``|S|**n`` paths), for path functionals such as
  ``M_n``. The convolution can also carry ``E[M_n; Z_n = x]`` per endpoint; the
  two routes must agree.

Reductions use ``math.fsum`` so float results do not depend on summation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce as _reduce
from itertools import product

import numpy as np

from .errors import BudgetExceeded, NotCentered, Overflow, ValidationError
from .groups import POP, PUSH, GroupElement, GroupModel, ball_count
from .measures import MeasureCurve, StepMeasure, curve_at, log_ratio
from .metrics import WordMetric

SUPPORT_BUDGET = 10**7
PATH_BUDGET = 10**8
_INT64_SAFE = 2**62


# -- key encoding -------------------------------------------------------------


def _base(model: GroupModel) -> int:
    return len(model.tokens) + 1


def encode(x: GroupElement) -> int:
    base = _base(x.model)
    key = 0
    for t in x.word:
        key = key * base + t + 1
    return key


def decode(model: GroupModel, key: int) -> GroupElement:
    base = _base(model)
    word = []
    key = int(key)
    while key:
        key, d = divmod(key, base)
        word.append(d - 1)
    return GroupElement(model, tuple(reversed(word)))


def _key_dtype(model: GroupModel, n: int):
    # longest reduced word after n steps has n tokens
    return np.int64 if _base(model) ** (n + 1) < _INT64_SAFE else object


def _step_keys(model: GroupModel, keys: np.ndarray, letter: int) -> np.ndarray:
    base = _base(model)
    tok = model.letter_tokens[letter]
    top = keys % base - 1  # -1 for the empty word
    row = np.where(top < 0, len(model.tokens), top).astype(np.int64)
    act = model.action[row, letter]
    out = keys * base + (tok + 1)
    pop = act == POP
    out = np.where(pop, keys // base, out)
    if model.has_replacements:
        rep = act >= 0
        out = np.where(rep, keys - (top + 1) + (act + 1), out)
    return out


def key_lengths(model: GroupModel, keys: np.ndarray, weights=None) -> np.ndarray:
    """Additive length of every encoded word (word metric unless ``weights`` given)."""
    w = model.token_length if weights is None else np.asarray(weights, dtype=float)
    base = _base(model)
    k = keys.copy()
    out = np.zeros(len(k))
    while True:
        live = k > 0
        if not live.any():
            return out
        digit = (k % base - 1)[live].astype(np.int64)
        out[live] += w[digit]
        k = k // base


def _aggregate(keys: np.ndarray, *values: np.ndarray):
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    starts = np.flatnonzero(np.concatenate(([True], ks[1:] != ks[:-1])))
    return (ks[starts],) + tuple(np.add.reduceat(v[order], starts) for v in values)


# -- exact distributions --------------------------------------------------------


@dataclass
class ExactDistribution:
    """Law of Z_n. ``weights / denominator`` are the masses (floats if denominator is None)."""

    n: int
    model: GroupModel
    keys: np.ndarray
    weights: np.ndarray
    denominator: int | None
    metadata: dict = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return self.denominator is not None

    def probabilities(self) -> np.ndarray:
        if self.denominator is None:
            return self.weights.astype(float)
        return np.array([w / self.denominator for w in self.weights.tolist()], dtype=float)

    def masses(self) -> list:
        if self.denominator is None:
            return [float(w) for w in self.weights]
        return [Fraction(int(w), self.denominator) for w in self.weights]

    @property
    def mass(self) -> dict[GroupElement, Fraction | float]:
        return {decode(self.model, k): p for k, p in zip(self.keys.tolist(), self.masses())}

    def prob(self, x: GroupElement) -> Fraction | float:
        key = encode(x)
        i = np.searchsorted(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            return self.masses()[i] if self.exact else float(self.weights[i])
        return Fraction(0) if self.exact else 0.0

    def total(self):
        if self.exact:
            return Fraction(int(sum(int(w) for w in self.weights.tolist())), self.denominator)
        return math.fsum(self.weights.tolist())

    def __len__(self):
        return len(self.keys)


def _integer_weights(m: StepMeasure):
    if m.exact is None:
        return None
    D = _reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in m.exact), 1)
    return D, [int(f * D) for f in m.exact]


def _ball_size(model: GroupModel, n: int) -> int:
    """Ball count, saturated at 2^63 when it does not fit."""
    try:
        return ball_count(model, n)
    except Overflow:
        return 2**63


def _check_budget(model: GroupModel, n: int, budget: int) -> int:
    est = _ball_size(model, n)
    if est > budget:
        raise BudgetExceeded(est, budget)
    return est


def convolve_power(
    m: StepMeasure,
    n: int,
    model: GroupModel | None = None,
    budget: int = SUPPORT_BUDGET,
    exact: bool | None = None,
    nu: np.ndarray | None = None,
):
    """Exact law of Z_n under ``m``.

    With ``nu`` given the float engine also carries ``E[M_n; Z_n = x]`` and the
    pair ``(distribution, aux)`` is returned.
    """
    model = m.model if model is None else model
    if n < 0:
        raise ValidationError("n must be nonnegative")
    est = _check_budget(model, n, budget)
    ints = _integer_weights(m) if (exact is not False and nu is None) else None
    if exact and ints is None:
        raise ValidationError("exact mode needs a rational step measure")
    kd = _key_dtype(model, n)
    keys = np.zeros(1, dtype=kd)
    if ints is not None:
        D, wint = ints
        big = D**n >= _INT64_SAFE
        wdt = object if big else np.int64
        weights = np.ones(1, dtype=wdt)
        step_w = [wdt(w) if not big else int(w) for w in wint]
    else:
        weights = np.ones(1)
        step_w = [float(p) for p in m.prob]
    aux = np.zeros(1) if nu is not None else None
    S = len(m.prob)
    for _ in range(n):
        nk = [_step_keys(model, keys, a) for a in range(S)]
        nw = [weights * step_w[a] for a in range(S)]
        cat_k = np.concatenate(nk)
        if aux is None:
            keys, weights = _aggregate(cat_k, np.concatenate(nw))
        else:
            na = [(aux + weights * nu[a]) * step_w[a] for a in range(S)]
            keys, weights, aux = _aggregate(cat_k, np.concatenate(nw), np.concatenate(na))
    meta = {"exact": ints is not None, "budget_used": int(len(keys)), "budget_estimate": int(est)}
    dist = ExactDistribution(n, model, keys, weights, ints[0] ** n if ints is not None else None, meta)
    if nu is not None:
        return dist, aux
    return dist


def exact_entropy(m: StepMeasure, n: int, model: GroupModel | None = None, budget: int = SUPPORT_BUDGET) -> float:
    """H(mu^n) in nats."""
    dist = convolve_power(m, n, model, budget)
    if dist.exact:
        logD = math.log(dist.denominator)
        terms = [(w / dist.denominator) * (logD - math.log(w)) for w in dist.weights.tolist()]
    else:
        terms = [-p * math.log(p) for p in dist.weights.tolist() if p > 0]
    return math.fsum(terms)


def exact_mean_distance(
    m: StepMeasure,
    n: int,
    model: GroupModel | None = None,
    metric=None,
    budget: int = SUPPORT_BUDGET,
    engine: str = "auto",
) -> float:
    """E[d(id, Z_n)]; ``engine`` is ``convolution``, ``chain`` or ``auto``."""
    model = m.model if model is None else model
    metric = WordMetric() if metric is None else metric
    w = metric.token_weights(model)
    radial = model.is_free and m.is_uniform and np.all(w == w[0])
    if engine == "chain" or (engine == "auto" and radial and _ball_size(model, n) > budget):
        if not radial:
            raise ValidationError("distance-chain engine needs a uniform measure on a free group and a radial metric")
        law = distance_chain(model.rank, n)
        return math.fsum((law * np.arange(n + 1) * w[0]).tolist())
    dist = convolve_power(m, n, model, budget)
    lengths = key_lengths(model, dist.keys, w)
    return math.fsum((lengths * dist.probabilities()).tolist())


def mean_distance_sequence(m: StepMeasure, n_max: int, metric=None, budget: int = SUPPORT_BUDGET) -> np.ndarray:
    """a(n) = E[d(id, Z_n)] for n = 0..n_max from one convolution pass."""
    model = m.model
    metric = WordMetric() if metric is None else metric
    _check_budget(model, n_max, budget)
    w = metric.token_weights(model)
    keys = np.zeros(1, dtype=_key_dtype(model, n_max))
    weights = np.ones(1)
    out = [0.0]
    for _ in range(n_max):
        nk = np.concatenate([_step_keys(model, keys, a) for a in range(len(m.prob))])
        nw = np.concatenate([weights * p for p in m.prob])
        keys, weights = _aggregate(nk, nw)
        out.append(math.fsum((key_lengths(model, keys, w) * weights).tolist()))
    return np.array(out)


# -- path enumeration -----------------------------------------------------------


def enumerate_paths(m: StepMeasure, n: int, budget: int = PATH_BUDGET, chunk: int = 1 << 16):
    """Yield ``(letters, prob, counts)`` blocks covering all |S|**n paths in lexicographic order.

    ``counts[i]`` is the token multiset of the endpoint of path ``i``.
    """
    from .walk import StackWalker

    model = m.model
    S = len(m.prob)
    total = S**n
    if total > budget:
        raise BudgetExceeded(total, budget, "path count")
    if n == 0:
        yield np.zeros((1, 0), dtype=np.int64), np.ones(1), np.zeros((1, len(model.tokens)), dtype=np.int32)
        return
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        letters = np.empty((len(idx), n), dtype=np.int64)
        rem = idx.copy()
        for j in range(n - 1, -1, -1):
            letters[:, j] = rem % S
            rem //= S
        walker = StackWalker(model, len(idx), n)
        for j in range(n):
            walker.step(letters[:, j])
        prob = np.prod(m.prob[letters], axis=1)
        yield letters, prob, walker.counts.T.copy()


def _path_sum(values_iter) -> float:
    parts = [math.fsum(v.tolist()) for v in values_iter]
    return math.fsum(parts)


def exact_covariance(
    m: StepMeasure,
    nu,
    n: int,
    model: GroupModel | None = None,
    metric=None,
    engine: str = "convolution",
    budget: int | None = None,
) -> float:
    """E[d(id, Z_n) M_n] with M_n = sum_j nu(X_j)."""
    model = m.model if model is None else model
    metric = WordMetric() if metric is None else metric
    nu = np.asarray(nu, dtype=float)
    centre = float(np.dot(nu, m.prob))
    if abs(centre) > 1e-10:
        raise NotCentered(centre)
    w = metric.token_weights(model)
    if engine == "paths":
        def terms():
            for letters, prob, counts in enumerate_paths(m, n, budget or PATH_BUDGET):
                yield prob * (counts @ w) * nu[letters].sum(axis=1)

        return _path_sum(terms())
    if engine != "convolution":
        raise ValidationError(f"unknown engine {engine!r}")
    dist, aux = convolve_power(m, n, model, budget or SUPPORT_BUDGET, exact=False, nu=nu)
    return math.fsum((key_lengths(model, dist.keys, w) * aux).tolist())


def exact_tilted_mean(
    c: MeasureCurve, lam: float, n: int, model: GroupModel | None = None, metric=None, budget: int = SUPPORT_BUDGET
) -> float:
    """E^lambda[d(id, Z_n)] by direct convolution of mu_lambda."""
    return exact_mean_distance(curve_at(c, lam), n, model, metric, budget, engine="convolution")


def girsanov_weighted_mean(
    c: MeasureCurve, lam: float, n: int, metric=None, budget: int = PATH_BUDGET
) -> float:
    """E^0[d(id, Z_n) prod_j mu_lambda(X_j)/mu_0(X_j)] by path enumeration under mu_0."""
    metric = WordMetric() if metric is None else metric
    w = metric.token_weights(c.model)
    lr = log_ratio(c, lam)

    def terms():
        for letters, prob, counts in enumerate_paths(c.base, n, budget):
            yield prob * np.exp(lr[letters].sum(axis=1)) * (counts @ w)

    return _path_sum(terms())


def fd_tilted_mean(c: MeasureCurve, n: int, h: float = 1e-4, metric=None) -> float:
    """Central difference of lambda -> E^lambda[d(id, Z_n)] at 0."""
    return (exact_tilted_mean(c, h, n, metric=metric) - exact_tilted_mean(c, -h, n, metric=metric)) / (2 * h)


# -- radial chain, return probabilities, spectral radius -----------------------


def distance_chain(k: int, n: int) -> np.ndarray:
    """Law of |Z_n| for the uniform walk on F_k (birth-death chain on the distance)."""
    p = np.zeros(n + 2)
    p[0] = 1.0
    back = 1.0 / (2 * k)
    fwd = 1.0 - back
    for _ in range(n):
        q = np.zeros_like(p)
        q[1] += p[0]
        q[:-1] += p[1:] * back
        q[2:] += p[1:-1] * fwd
        p = q
    return p[: n + 1]


def distance_chain_returns(k: int, n_max: int) -> np.ndarray:
    """mu^{2n}(id) for n = 0..n_max, uniform walk on F_k."""
    p = np.zeros(2 * n_max + 2)
    p[0] = 1.0
    back = 1.0 / (2 * k)
    fwd = 1.0 - back
    out = [1.0]
    for step in range(1, 2 * n_max + 1):
        q = np.zeros_like(p)
        q[1] += p[0]
        q[:-1] += p[1:] * back
        q[2:] += p[1:-1] * fwd
        p = q
        if step % 2 == 0:
            out.append(p[0])
    return np.array(out)


def tree_first_passage_series(m: StepMeasure, order: int) -> np.ndarray:
    """Power-series coefficients of t -> E[t^{T_s}; T_s < inf] for each letter s of a free group.

    Returns an array of shape (|S|, order + 1).
    """
    model = m.model
    if not model.is_free:
        raise ValidationError("first-passage series are only available on free groups")
    S = len(m.prob)
    inv = np.asarray(model.alphabet.inverse)
    mu = m.prob
    c = np.zeros((S, order + 1))
    for k in range(1, order + 1):
        if k == 1:
            c[:, 1] = mu
            continue
        # B_s(t) = sum_{u != s} mu(u) q_{u^-1}(t); only coefficients < k-1 are needed
        lo = c[inv, 1 : k - 1]  # q_{u^-1} coefficients 1..k-2
        total = mu @ lo
        for s in range(S):
            B = total - mu[s] * lo[s]
            # [t^k] t * q_s(t) * B_s(t) = sum_{i + j = k - 1} c_s[i] B[j]
            cs = c[s, 1 : k - 1]
            c[s, k] = float(np.dot(cs, B[::-1]))
    return c


def tree_return_series(m: StepMeasure, order: int) -> np.ndarray:
    """mu^n(id) for n = 0..order on a free group via G(t) = 1 / (1 - U(t))."""
    c = tree_first_passage_series(m, order)
    inv = np.asarray(m.model.alphabet.inverse)
    U = np.zeros(order + 1)
    U[1:] = (m.prob @ c[inv])[:-1]
    g = np.zeros(order + 1)
    g[0] = 1.0
    for k in range(1, order + 1):
        g[k] = float(np.dot(U[1 : k + 1], g[k - 1 :: -1][:k]))
    return g


def pruned_return_probabilities(m: StepMeasure, n_max: int, budget: int = SUPPORT_BUDGET) -> np.ndarray:
    """mu^{2n}(id), n = 0..n_max, by convolution discarding words that cannot return in time."""
    model = m.model
    _check_budget(model, n_max, budget)
    total = 2 * n_max
    keys = np.zeros(1, dtype=_key_dtype(model, n_max))
    weights = np.ones(1)
    out = [1.0]
    for j in range(1, total + 1):
        nk = np.concatenate([_step_keys(model, keys, a) for a in range(len(m.prob))])
        nw = np.concatenate([weights * p for p in m.prob])
        keys, weights = _aggregate(nk, nw)
        keep = key_lengths(model, keys) <= total - j
        keys, weights = keys[keep], weights[keep]
        if j % 2 == 0:
            out.append(float(weights[0]) if len(keys) and keys[0] == 0 else 0.0)
    return np.array(out)


def return_probabilities(m: StepMeasure, n_max: int, engine: str = "auto") -> np.ndarray:
    """mu^{2n}(id) for n = 0..n_max."""
    model = m.model
    if engine == "auto":
        if model.is_free:
            engine = "chain" if m.is_uniform else "tree"
        else:
            engine = "convolution"
    if engine == "chain":
        if not (model.is_free and m.is_uniform):
            raise ValidationError("distance-chain engine needs a uniform measure on a free group")
        return distance_chain_returns(model.rank, n_max)
    if engine == "tree":
        return tree_return_series(m, 2 * n_max)[::2]
    if engine == "convolution":
        return pruned_return_probabilities(m, n_max)
    raise ValidationError(f"unknown engine {engine!r}")


def spectral_radius_sequence(m: StepMeasure, model: GroupModel | None = None, n_max: int = 50, engine: str = "auto") -> list[float]:
    """r_n = (mu^{2n}(id))^{1/2n} for n = 1..n_max; nondecreasing, below rho."""
    p = return_probabilities(m, n_max, engine)
    n = np.arange(1, n_max + 1)
    return list(p[1:] ** (1.0 / (2 * n)))


@dataclass(frozen=True)
class SpectralEstimate:
    lower: float  # r_{n_max}, a rigorous lower bound on rho
    estimate: float  # extrapolated from ratios mu^{2n+2}(id)/mu^{2n}(id)
    upper: float  # estimate + margin, used for tail bounds
    n_max: int


DEFAULT_SPECTRAL_MARGIN = 0.02


def spectral_radius_estimate(m: StepMeasure, n_max: int | None = None, margin: float = DEFAULT_SPECTRAL_MARGIN) -> SpectralEstimate:
    """Estimate rho.

    For symmetric walks ``a_n = mu^{2n+2}(id) / mu^{2n}(id)`` increases to
    ``rho**2`` with error ~ c/n, so ``2 a_n - a_{n/2}`` removes the leading
    term. The upper value adds ``margin``.
    """
    model = m.model
    if n_max is None:
        n_max = 400 if model.is_free else _max_pruned_n(model)
    p = return_probabilities(m, n_max)
    ratios = p[1:] / p[:-1]
    a_last = ratios[-1]
    a_half = ratios[len(ratios) // 2 - 1] if len(ratios) >= 2 else a_last
    rho2 = max(a_last, 2 * a_last - a_half)
    est = math.sqrt(min(rho2, 1.0))
    lower = p[-1] ** (1.0 / (2 * n_max))
    return SpectralEstimate(lower=float(lower), estimate=float(est), upper=float(min(est + margin, 1.0)), n_max=n_max)


def _max_pruned_n(model: GroupModel, budget: int = 2 * 10**5) -> int:
    n = 1
    while n < 40 and _ball_size(model, n + 1) <= budget:
        n += 1
    return n


# -- subadditivity diagnostics -------------------------------------------------------


def sandwich_constant(a) -> tuple[float, float]:
    """For a(0..N): (max violation of a(n+k) <= a(n) + a(k), tau0_hat).

    ``tau0_hat = max_{n,k} (a(n) + a(k) - a(n+k)) / 2`` is the smallest constant
    with a(n) + a(k) <= a(n+k) + 2 tau0 over the computed range.
    """
    a = np.asarray(a, dtype=float)
    N = len(a) - 1
    worst_sub = -np.inf
    tau = 0.0
    for n in range(1, N + 1):
        for k in range(1, N - n + 1):
            worst_sub = max(worst_sub, a[n + k] - a[n] - a[k])
            tau = max(tau, 0.5 * (a[n] + a[k] - a[n + k]))
    return float(worst_sub), float(tau)


def all_words(model: GroupModel, letters_len: int):
    """Every letter sequence of a given length (test helper)."""
    return product(range(len(model.alphabet)), repeat=letters_len)
