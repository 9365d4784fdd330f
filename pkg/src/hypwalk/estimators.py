"""Monte Carlo estimators of escape rates, entropy and their derivatives along a curve."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import BudgetExceeded, DegenerateWeights, InvalidLambda, ValidationError
from .exact import exact_covariance, exact_entropy, exact_mean_distance
from .green import tree_first_passage
from .groups import GroupModel
from .measures import MeasureCurve, StepMeasure, curve_at
from .metrics import GreenMetric, TreeGreenMetric, WordMetric, metric_growth
from .walk import Batch, BatchSpec, sample_batch

ESS_MIN = 10.0
KINGMAN_N = 10


@dataclass
class Estimate:
    value: float
    stderr: float
    N: int
    n: int
    method: str
    seed: int
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n,
            "N": self.N,
            "seed": self.seed,
            "metadata": self.metadata,
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def combined_se(*ests: Estimate) -> float:
    return math.sqrt(sum(e.stderr**2 for e in ests))


def green_metric_for(m: StepMeasure):
    """Exact tree metric on free groups, bracketed ball metric otherwise."""
    if m.model.is_free:
        return TreeGreenMetric(tree_first_passage(m))
    return GreenMetric(m)


def resolve_metric(choice, m: StepMeasure):
    """Accept a metric object or one of ``word``, ``green-tree``, ``green-ball`` (Green metric of ``m``)."""
    if not isinstance(choice, str):
        return choice
    if choice == "word":
        return WordMetric()
    if choice == "green-tree":
        return TreeGreenMetric(tree_first_passage(m))
    if choice == "green-ball":
        return GreenMetric(m)
    if choice == "green":
        return green_metric_for(m)
    raise ValidationError(f"unknown metric {choice!r}")


def _bracket_meta(batch: Batch, metric, n: int) -> dict:
    if not isinstance(metric, GreenMetric):
        return {}
    lo, hi = metric.token_bounds(batch.spec.model)
    c = batch.counts[:, batch._col(n), :]
    return {"bracket_low": float((c @ lo).mean() / n), "bracket_high": float((c @ hi).mean() / n)}


def _kingman_bound(m: StepMeasure, metric, n: int) -> dict:
    k = min(n, KINGMAN_N)
    if k < 1:
        return {}
    try:
        a = exact_mean_distance(m, k, metric=metric)
    except BudgetExceeded as exc:
        return {"kingman_bound": None, "kingman_note": str(exc)}
    return {"kingman_bound": a / k, "kingman_n": k}


# -- escape rate and entropy ----------------------------------------------------------


def escape_rate(m: StepMeasure, metric="word", n: int = 1000, N: int = 10_000, seed: int = 0, threads=None) -> Estimate:
    """Mean of d(id, Z_n)/n over N walks."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    metric = resolve_metric(metric, m)
    batch = sample_batch(BatchSpec(n, (n,), N, seed, m), threads)
    value, se = _mean_se(batch.distances(metric, n) / n)
    meta = {"metric": metric.name}
    meta.update(_kingman_bound(m, metric, n))
    meta.update(_bracket_meta(batch, metric, n))
    return Estimate(value, se, N, n, f"escape-rate[{metric.name}]", seed, meta)


def entropy_via_green_speed(
    m: StepMeasure, model: GroupModel | None = None, n: int = 1000, N: int = 10_000, seed: int = 0, threads=None
) -> Estimate:
    """h(mu) as the escape rate of the walk in its own Green metric."""
    metric = green_metric_for(m)
    if n == 1:
        # one step lands on a letter, so the mean is a finite sum
        w = metric.token_weights(m.model)
        value = math.fsum(float(p * w[t]) for p, t in zip(m.prob, m.model.letter_tokens))
        return Estimate(value, 0.0, N, 1, "green-speed[exact-one-step]", seed, {"metric": metric.name})
    est = escape_rate(m, metric, n, N, seed, threads)
    est.method = f"green-speed[{metric.name}]"
    return est


def entropy_via_convolution(m: StepMeasure, model: GroupModel | None = None, n_max: int = 10) -> list[tuple]:
    """Rows (n, H(mu^n), H(mu^n) - H(mu^{n-1})); the increment is None on the first row."""
    rows = [(0, 0.0, None)]
    prev = 0.0
    for k in range(1, n_max + 1):
        H = exact_entropy(m, k, model)
        rows.append((k, H, H - prev))
        prev = H
    return rows


# -- derivative estimators ------------------------------------------------------------------


def covariance_sigma(
    c: MeasureCurve, metric="word", n: int = 1000, N: int = 10_000, seed: int = 0, threads=None, exact: bool = False
) -> Estimate:
    """(1/n) E[(d(id, Z_n) - dbar) M_n] under mu_0."""
    metric = resolve_metric(metric, c.base)
    nu = c.nu
    if not np.any(nu):
        return Estimate(0.0, 0.0, N, n, "sigma[nu=0]", seed, {"metric": metric.name})
    if exact:
        v = exact_covariance(c.base, nu, n, metric=metric) / n
        return Estimate(v, 0.0, 0, n, "sigma[exact]", seed, {"metric": metric.name})
    batch = sample_batch(BatchSpec(n, (n,), N, seed, c.base, curve=c), threads)
    d = batch.distances(metric, n)
    M = batch.martingale(n)
    value, se = _mean_se((d - d.mean()) * M / n)
    meta = {
        "metric": metric.name,
        "mean_M": float(M.mean()),
        "centering": "sample mean of d; bias O(1/N)",
    }
    return Estimate(value, se, N, n, "sigma", seed, meta)


def _check_lambda(lam: float) -> None:
    if lam == 0 or not abs(lam) <= 1:
        raise InvalidLambda(f"lambda={lam} must be nonzero with |lambda| <= 1")


def _side_distances(c: MeasureCurve, lam: float, target: str, metric, n: int, N: int, seed: int, threads):
    m = curve_at(c, lam)
    if target == "entropy":
        metric = green_metric_for(m)
    batch = sample_batch(BatchSpec(n, (n,), N, seed, m), threads)
    return batch.distances(metric, n)


def fd_derivative(
    c: MeasureCurve,
    target: str = "escape",
    lam: float = 0.05,
    n: int = 1000,
    N: int = 10_000,
    seed: int = 0,
    metric="word",
    one_sided: bool = False,
    threads=None,
) -> Estimate:
    """Finite difference of lambda -> E^lambda[d]/n with common random numbers.

    ``target="escape"`` differentiates the escape rate in a fixed metric;
    ``target="entropy"`` uses each side's own Green metric, i.e. h(mu_lambda).
    """
    _check_lambda(lam)
    if target not in ("escape", "entropy"):
        raise ValidationError(f"unknown target {target!r}")
    fixed = resolve_metric(metric, c.base) if target == "escape" else None
    plus = _side_distances(c, lam, target, fixed, n, N, seed, threads)
    if one_sided:
        minus = _side_distances(c, 0.0, target, fixed, n, N, seed, threads)
        diff = (plus - minus) / (lam * n)
    else:
        minus = _side_distances(c, -lam, target, fixed, n, N, seed, threads)
        diff = (plus - minus) / (2 * lam * n)
    value, se = _mean_se(diff)
    meta = {
        "target": target,
        "lambda": lam,
        "scheme": "one-sided" if one_sided else "central",
        "f_plus": float(plus.mean() / n),
        "f_minus": float(minus.mean() / n),
    }
    if fixed is not None:
        meta["metric"] = fixed.name
    return Estimate(value, se, N, n, f"fd[{target}]", seed, meta)


def girsanov_derivative(
    c: MeasureCurve, metric="word", n: int = 400, N: int = 10_000, seed: int = 0, alpha: float = 1.0, threads=None
) -> Estimate:
    """(E^lambda[d] - E^0[d]) / (lambda n) with lambda = sqrt(alpha/n), reweighting one mu_0 batch."""
    metric = resolve_metric(metric, c.base)
    lam = math.sqrt(alpha / n)
    _check_lambda(lam)
    if not np.any(c.nu):
        return Estimate(0.0, 0.0, N, n, "girsanov[nu=0]", seed, {"lambda": lam, "metric": metric.name})
    batch = sample_batch(BatchSpec(n, (n,), N, seed, c.base, curve=c, lambdas=(lam,)), threads)
    d = batch.distances(metric, n)
    logw = batch.logweight(lam, n)
    w = np.exp(logw)
    ess = float(w.sum() / w.max())
    if ess < ESS_MIN:
        raise DegenerateWeights(ess)
    value, se = _mean_se((w - 1.0) * (d - d.mean()) / (lam * n))
    meta = {"lambda": lam, "alpha": alpha, "ess": ess, "mean_w": float(w.mean()), "metric": metric.name}
    return Estimate(value, se, N, n, "girsanov", seed, meta)


# -- CLT diagnostics ---------------------------------------------------------------


@dataclass
class CltRow:
    n: int
    sigma: np.ndarray  # 2x2 sample covariance of ((d - n ell)/sqrt n, M/sqrt n)
    sigma_se: np.ndarray
    ks_d: float
    ks_M: float
    mean_d: float


@dataclass
class CltReport:
    rows: list[CltRow]
    ell_hat: float
    N: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def row(self, n: int) -> CltRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)


def _ks(x: np.ndarray) -> float:
    sd = x.std(ddof=1)
    if not sd > 0:
        return float("nan")
    return float(stats.kstest((x - x.mean()) / sd, "norm").statistic)


def clt_report(
    c: MeasureCurve,
    metric="word",
    grid: Sequence[int] = (250, 500, 1000),
    N: int = 5000,
    seed: int = 0,
    ell_hat: float | None = None,
    threads=None,
) -> CltReport:
    metric = resolve_metric(metric, c.base)
    grid = tuple(sorted(set(int(g) for g in grid)))
    batch = sample_batch(BatchSpec(grid[-1], grid, N, seed, c.base, curve=c), threads)
    if ell_hat is None:
        ell_hat = float(batch.distances(metric, grid[-1]).mean() / grid[-1])
    rows = []
    for n in grid:
        d = batch.distances(metric, n)
        X = (d - n * ell_hat) / math.sqrt(n)
        Y = batch.martingale(n) / math.sqrt(n)
        Xc, Yc = X - X.mean(), Y - Y.mean()
        S = np.cov(np.vstack([X, Y]), ddof=1)
        se = np.array(
            [
                [_mean_se(Xc * Xc)[1], _mean_se(Xc * Yc)[1]],
                [_mean_se(Xc * Yc)[1], _mean_se(Yc * Yc)[1]],
            ]
        )
        rows.append(CltRow(n, S, se, _ks(X), _ks(Y), float(d.mean())))
    meta = {"martingale_variance": float(np.dot(c.nu**2, c.base.prob)), "metric": metric.name}
    return CltReport(rows, ell_hat, N, seed, meta)


def moment_diagnostics(m: StepMeasure, metric="word", grid=(250, 500, 1000, 2000), N: int = 5000, seed: int = 0, threads=None):
    """Per n: Var(d)/n and the sandwich deviation E[d] - n ell_hat (ell_hat from the largest n)."""
    metric = resolve_metric(metric, m)
    grid = tuple(sorted(set(int(g) for g in grid)))
    batch = sample_batch(BatchSpec(grid[-1], grid, N, seed, m), threads)
    ell = float(batch.distances(metric, grid[-1]).mean() / grid[-1])
    out = []
    for n in grid:
        d = batch.distances(metric, n)
        out.append({"n": n, "var_over_n": float(d.var(ddof=1) / n), "deviation": float(d.mean() - n * ell)})
    return out


# -- fundamental inequality and the entropy gap -----------------------------------------


@dataclass
class FundamentalReport:
    h: float
    h_se: float
    ell_word: float
    ell_se: float
    v: float
    slack: float
    slack_se: float
    v_green: float
    ell_green: float
    green_slack: float
    green_slack_se: float
    metadata: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.slack >= -3 * self.slack_se


def fundamental_inequality_check(
    m: StepMeasure, model: GroupModel | None = None, n: int = 1000, N: int = 10_000, seed: int = 0, threads=None
) -> FundamentalReport:
    """Slack v(d) * ell(mu; d) - h for the word metric and for the Green metric of ``m``.

    h is the Green speed and both speeds come from one batch, so the slacks are
    paired. Each growth exponent v is computed from the metric's token weights.
    """
    model = m.model
    word = WordMetric()
    green = green_metric_for(m)
    v = metric_growth(model, word)
    v_green = metric_growth(model, green)
    batch = sample_batch(BatchSpec(n, (n,), N, seed, m), threads)
    dw = batch.distances(word, n) / n
    dg = batch.distances(green, n) / n
    h, h_se = _mean_se(dg)
    ell, ell_se = _mean_se(dw)
    slack, slack_se = _mean_se(v * dw - dg)
    g_slack, g_se = _mean_se((v_green - 1.0) * dg)
    meta = {"n": n, "N": N, "seed": seed, "green_metric": green.name}
    return FundamentalReport(h, h_se, ell, ell_se, v, slack, slack_se, v_green, h, g_slack, g_se, meta)


def entropy_green_gap(
    c: MeasureCurve, lams: Sequence[float] = (0.2, 0.1, 0.05), n: int = 1000, N: int = 10_000, seed: int = 0, threads=None
) -> list[Estimate]:
    """(h(mu_lambda) - ell(mu_lambda; d_G^0)) / lambda for each lambda, paired on one batch per lambda."""
    g0 = green_metric_for(c.base)
    out = []
    for lam in lams:
        _check_lambda(lam)
        m = curve_at(c, lam)
        batch = sample_batch(BatchSpec(n, (n,), N, seed, m), threads)
        own = batch.distances(green_metric_for(m), n)
        ref = batch.distances(g0, n)
        value, se = _mean_se((own - ref) / (n * lam))
        out.append(Estimate(value, se, N, n, "entropy-green-gap", seed, {"lambda": lam}))
    return out
