"""The invariant suite behind ``hypwalk verify`` and the acceptance tests.

Each check is a function of a size profile and a seed and returns a ``Check``.
Profiles only change sample sizes and horizons; tolerances are fixed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .exact import (
    distance_chain,
    exact_covariance,
    exact_tilted_mean,
    fd_tilted_mean,
    girsanov_weighted_mean,
)
from .green import green_distance_ball, green_distance_tree, green_function_series, tree_first_passage
from .groups import GroupModel
from .measures import MeasureCurve, StepMeasure
from .walk import BatchSpec, sample_batch

LOG3 = math.log(3)
H_F2 = 0.5 * LOG3

PROFILES = {
    "quick": {
        "escape_n": 500, "escape_N": 4000, "escape_limit": False,
        "green_n": 500, "green_N": 4000, "conv_n": 12,
        "null_n": 300, "null_N": 4000,
        "thm_n": 400, "thm_N": 10_000, "gir_n": 100, "gir_N": 10_000,
        "clt_n": 500, "clt_N": 3000,
        "fi_n": 500, "fi_N": 4000,
        "gap_n": 500, "gap_N": 4000,
        "det_n": 200, "det_N": 3000,
    },
    "full": {
        "escape_n": 2000, "escape_N": 10_000, "escape_limit": True,
        "green_n": 2000, "green_N": 10_000, "conv_n": 12,
        "null_n": 1000, "null_N": 20_000,
        "thm_n": 2000, "thm_N": 100_000, "gir_n": 400, "gir_N": 100_000,
        "clt_n": 1000, "clt_N": 5000,
        "fi_n": 2000, "fi_N": 10_000,
        "gap_n": 1000, "gap_N": 20_000,
        "det_n": 500, "det_N": 20_000,
    },
}


@dataclass
class Check:
    key: str
    title: str
    passed: bool
    values: dict = field(default_factory=dict)
    known_deviation: str | None = None
    seconds: float = 0.0

    @property
    def status(self) -> str:
        if self.passed:
            return "PASS"
        return "FAIL (known deviation)" if self.known_deviation else "FAIL"

    def line(self) -> str:
        return f"[{self.status}] {self.key} {self.title}"


def f2() -> GroupModel:
    return GroupModel.free(2)


def curve_b() -> MeasureCurve:
    base = StepMeasure.from_mapping(f2(), {"a": 0.3, "b": 0.2})
    return MeasureCurve.from_mapping(base, {"a": 1.0, "b": -1.0})


def curve_c() -> MeasureCurve:
    return MeasureCurve.from_mapping(StepMeasure.uniform(f2()), {"a": 1.0, "b": -1.0})


def _within(a: float, b: float, se: float, slack: float = 0.0) -> bool:
    return abs(a - b) <= 3 * se + slack


# -- checks ---------------------------------------------------------------------


def check_fd_identity(p: dict, seed: int) -> Check:
    vals = {}
    ok = True
    for name, c in (("uniform", curve_c()), ("curve-B", curve_b())):
        fd = fd_tilted_mean(c, 6, h=1e-4)
        cov = exact_covariance(c.base, c.nu, 6)
        vals[name] = {"fd": fd, "covariance": cov, "gap": abs(fd - cov)}
        ok &= abs(fd - cov) <= 1e-6
    return Check("1", "exact finite-n derivative identity, n = 6", ok, vals)


def check_girsanov_exact(p: dict, seed: int) -> Check:
    vals = {}
    ok = True
    c = curve_b()
    for lam in (0.05, 0.2):
        for n in range(1, 7):
            direct = exact_tilted_mean(c, lam, n)
            weighted = girsanov_weighted_mean(c, lam, n)
            ok &= abs(direct - weighted) <= 1e-10
            vals[f"lambda={lam},n={n}"] = abs(direct - weighted)
    return Check("2", "Girsanov reweighting equals direct enumeration", ok, vals)


def check_escape_rate(p: dict, seed: int) -> Check:
    n, N = p["escape_n"], p["escape_N"]
    e = est.escape_rate(StepMeasure.uniform(f2()), "word", n, N, seed, p.get("threads"))
    law = distance_chain(2, n)
    exact_n = float(np.dot(law, np.arange(n + 1)) / n)
    # short horizons are compared with the exact finite-n mean, which exceeds 0.5 by O(1/n)
    target = 0.5 if p["escape_limit"] else exact_n
    ok = _within(e.value, target, e.stderr) and abs(e.value - 0.5) <= 0.01
    vals = {"estimate": e.value, "stderr": e.stderr, "finite_n_exact": exact_n, "limit": 0.5}
    return Check("3", f"escape rate of F2 uniform, n = {n}, N = {N}", ok, vals)


def check_entropy_green(p: dict, seed: int) -> Check:
    n, N = p["green_n"], p["green_N"]
    e = est.entropy_via_green_speed(StepMeasure.uniform(f2()), None, n, N, seed, p.get("threads"))
    ok = abs(e.value - H_F2) <= 0.01
    return Check("4a", "entropy as Green speed, F2 uniform", ok, {"estimate": e.value, "stderr": e.stderr, "h": H_F2})


def check_entropy_convolution(p: dict, seed: int) -> Check:
    k = p["conv_n"]
    rows = est.entropy_via_convolution(StepMeasure.uniform(f2()), None, k)
    inc = rows[-1][2]
    ok = abs(inc - H_F2) <= 0.02
    note = None if ok else "H(mu^n) - H(mu^(n-1)) ~ h + 1/(2n); the n = 12 increment sits about 0.06 above h"
    return Check("4b", f"entropy increment at n = {k}", ok, {"increment": inc, "h": H_F2, "gap": inc - H_F2}, note)


def check_green_metric(p: dict, seed: int) -> Check:
    mu = StepMeasure.uniform(f2())
    table = tree_first_passage(mu)
    rng = np.random.default_rng(seed)
    tree_err = 0.0
    for L in range(0, 9):
        for _ in range(5):
            z = f2().from_letters(_reduced_letters(rng, L))
            tree_err = max(tree_err, abs(green_distance_tree(table, z) - L * LOG3))
    ball_ok = True
    widths = {}
    for L in range(1, 5):
        z = f2().from_letters(_reduced_letters(rng, L))
        ev = green_distance_ball(mu, None, z, L + 15)
        exact = green_distance_tree(table, z)
        ball_ok &= ev.contains(exact) and ev.width <= 1e-4
        widths[str(z)] = ev.width
    partial, tail = green_function_series(mu, None, f2().identity, 200, engine="chain")
    series_ok = partial <= 1.5 <= partial + tail
    ok = tree_err <= 1e-12 and ball_ok and series_ok
    vals = {"tree_max_error": tree_err, "ball_widths": widths, "G_id_bracket": [partial, partial + tail]}
    return Check("5", "Green metric: tree-exact, ball brackets, G(id) series", ok, vals)


def _reduced_letters(rng, L: int) -> list[int]:
    out: list[int] = []
    while len(out) < L:
        a = int(rng.integers(4))
        if out and a == out[-1] ^ 1:
            continue
        out.append(a)
    return out


def check_null_case(p: dict, seed: int) -> Check:
    c = curve_c()
    exact = max(abs(exact_covariance(c.base, c.nu, n)) for n in range(0, 9))
    n, N = p["null_n"], p["null_N"]
    s = est.covariance_sigma(c, "word", n, N, seed, p.get("threads"))
    f = est.fd_derivative(c, "escape", 0.05, n, N, seed, threads=p.get("threads"))
    ok = exact <= 1e-12 and _within(s.value, 0, s.stderr) and _within(f.value, 0, f.stderr)
    vals = {"exact_max": exact, "sigma": [s.value, s.stderr], "fd": [f.value, f.stderr]}
    return Check("6", "symmetric null case, sigma = 0", ok, vals)


def check_derivative_escape(p: dict, seed: int) -> Check:
    c = curve_b()
    n, N = p["thm_n"], p["thm_N"]
    fd = est.fd_derivative(c, "escape", 0.05, n, N, seed, threads=p.get("threads"))
    sig = est.covariance_sigma(c, "word", n, N, seed, p.get("threads"))
    gir = est.girsanov_derivative(c, "word", p["gir_n"], p["gir_N"], seed, alpha=1.0, threads=p.get("threads"))
    trio = (fd, sig, gir)
    pair_ok = all(
        abs(a.value - b.value) <= 3 * est.combined_se(a, b) + 0.03 for i, a in enumerate(trio) for b in trio[i + 1 :]
    )
    neg = all(e.value < 0 for e in trio)
    vals = {e.method: [e.value, e.stderr] for e in trio}
    return Check("7", "escape-rate derivative: fd, sigma, Girsanov agree", pair_ok and neg, vals)


def check_derivative_entropy(p: dict, seed: int) -> Check:
    c = curve_b()
    n, N = p["thm_n"], p["thm_N"]
    fd = est.fd_derivative(c, "entropy", 0.05, n, N, seed, threads=p.get("threads"))
    sig = est.covariance_sigma(c, "green-tree", n, N, seed, p.get("threads"))
    ok = abs(fd.value - sig.value) <= 3 * est.combined_se(fd, sig) + 0.03
    return Check("8", "entropy derivative vs sigma in the base Green metric", ok,
                 {"fd": [fd.value, fd.stderr], "sigma": [sig.value, sig.stderr]})


def check_clt(p: dict, seed: int) -> Check:
    n, N = p["clt_n"], p["clt_N"]
    c = curve_c()
    rep = est.clt_report(c, "word", (n, 2 * n), N, seed, threads=p.get("threads"))
    r1, r2 = rep.row(n), rep.row(2 * n)
    target = rep.metadata["martingale_variance"]
    var_ok = all(_within(r.sigma[1, 1], target, r.sigma_se[1, 1]) for r in (r1, r2))
    ks_ok = r1.ks_d <= 0.05 and r1.ks_M <= 0.05
    # the two grid points share trajectories, so this comparison is conservative
    stab = all(
        abs(r1.sigma[i, j] - r2.sigma[i, j]) <= 3 * math.hypot(r1.sigma_se[i, j], r2.sigma_se[i, j])
        for i in range(2) for j in range(2)
    )
    vals = {
        "martingale_variance": target,
        "sigma_n": r1.sigma.tolist(), "sigma_2n": r2.sigma.tolist(),
        "ks_d": r1.ks_d, "ks_M": r1.ks_M,
    }
    return Check("9", f"joint CLT diagnostics at n = {n} and {2 * n}", var_ok and ks_ok and stab, vals)


def check_fundamental(p: dict, seed: int) -> Check:
    n, N = p["fi_n"], p["fi_N"]
    u = est.fundamental_inequality_check(StepMeasure.uniform(f2()), None, n, N, seed, p.get("threads"))
    b = est.fundamental_inequality_check(curve_b().base, None, n, N, seed, p.get("threads"))
    ok = abs(u.slack) <= 0.02 and b.ok and abs(u.green_slack) <= 0.02 and abs(b.green_slack) <= 0.02
    vals = {
        "uniform_slack": u.slack, "curveB_slack": [b.slack, b.slack_se],
        "green_slack": [u.green_slack, b.green_slack], "v_green": [u.v_green, b.v_green],
    }
    return Check("10", "fundamental inequality h <= v * ell", ok, vals)


def check_gap_decay(p: dict, seed: int) -> Check:
    gaps = est.entropy_green_gap(curve_b(), (0.2, 0.1, 0.05), p["gap_n"], p["gap_N"], seed, p.get("threads"))
    ok = all(
        abs(g.value) <= abs(prev.value) + 2 * g.stderr for prev, g in zip(gaps, gaps[1:])
    )
    vals = {str(g.metadata["lambda"]): [g.value, g.stderr] for g in gaps}
    return Check("11", "entropy vs base Green speed gap shrinks with lambda", ok, vals)


def check_thread_invariance(p: dict, seed: int) -> Check:
    c = curve_b()
    spec = BatchSpec(p["det_n"], (p["det_n"] // 2, p["det_n"]), p["det_N"], seed, c.base, curve=c,
                     lambdas=(0.1,), chunk_size=1024)
    a = sample_batch(spec, threads=1)
    b = sample_batch(spec, threads=3)
    ok = all(np.array_equal(x, y) for x, y in ((a.counts, b.counts), (a.M, b.M), (a.A, b.A), (a.logw, b.logw)))
    return Check("12", "batch output independent of thread count", ok, {"N": spec.N})


CHECKS = (
    check_fd_identity,
    check_girsanov_exact,
    check_escape_rate,
    check_entropy_green,
    check_entropy_convolution,
    check_green_metric,
    check_null_case,
    check_derivative_escape,
    check_derivative_entropy,
    check_clt,
    check_fundamental,
    check_gap_decay,
    check_thread_invariance,
)


def run_suite(profile: str = "quick", seed: int = 0, log=None, threads: int | None = None) -> list[Check]:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    sizes = dict(PROFILES[profile], threads=threads)
    out = []
    for fn in CHECKS:
        t0 = time.perf_counter()
        chk = fn(sizes, seed)
        chk.seconds = time.perf_counter() - t0
        out.append(chk)
        if log is not None:
            log(chk.line())
    return out
