"""``hypwalk`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical failure
(including a failed ``verify`` check).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import estimators as est
from . import exact
from .config import COMMANDS, ExperimentSpec, build_spec, read_config
from .errors import HypwalkError, NumericalError, ValidationError
from .green import green_distance_ball, green_distance_tree, green_function_series, tree_first_passage
from .walk import BatchSpec, default_threads, sample_batch

VERSION = "0.1.0"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class Result:
    name: str
    payload: dict
    table: tuple[list[str], list[list]] | None = None


@dataclass
class ResultManifest:
    spec: dict
    input_hash: str
    files: list[dict]
    timings: dict
    version: str = VERSION
    runtime: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "spec": self.spec,
            "input_hash": self.input_hash,
            "files": self.files,
            "timings": self.timings,
            "runtime": self.runtime,
        }


# -- serialisation ---------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def emit_report(results: list[Result], out_dir: str | Path, spec: ExperimentSpec, timings: dict,
                runtime: dict | None = None) -> ResultManifest:
    if not results:
        raise ValidationError("nothing to report")
    out = Path(out_dir)
    files = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            blobs = [(f"{r.name}.json", dumps(r.payload))]
            if r.table is not None:
                blobs.append((f"{r.name}.csv", _csv_text(*r.table)))
            for fname, text in blobs:
                data = text.encode()
                (out / fname).write_bytes(data)
                files.append({"path": fname, "sha256": hashlib.sha256(data).hexdigest()})
        manifest = ResultManifest(spec.echo(), spec.input_hash(), files, timings, runtime=runtime or {})
        (out / "manifest.json").write_text(dumps(manifest.as_dict()))
    except OSError as exc:
        raise NumericalError(f"cannot write results to {out}: {exc.strerror}") from None
    return manifest


def _summary(quantity: str, e: est.Estimate) -> dict:
    d = e.as_dict()
    d["quantity"] = quantity
    return d


# -- commands ---------------------------------------------------------------------


def cmd_simulate(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    n = p.get("n", 1000)
    cps = tuple(p.get("checkpoints") or (n,))
    lams = p.get("lambda") or []
    lams = [lams] if isinstance(lams, (int, float)) else list(lams)
    curve = spec.curve if spec.phi is not None else None
    m = spec.measure
    batch = sample_batch(BatchSpec(n, cps, p.get("N", 1000), spec.seed, m, curve=curve, lambdas=lams), threads)
    metric = est.resolve_metric(p.get("metric", "word"), m)
    per_n = []
    for c in cps:
        d = batch.distances(metric, c)
        M = batch.martingale(c)
        per_n.append({
            "n": c,
            "mean_distance": float(d.mean()),
            "stderr": float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0,
            "mean_M": float(M.mean()),
        })
    payload = {"quantity": "simulate", "method": f"walk[{metric.name}]", "n": n, "N": batch.N,
               "seed": spec.seed, "metadata": {"checkpoints": list(cps), "lambdas": lams}, "per_n": per_n}
    results = [Result("simulate", payload)]
    if p.get("csv"):
        header = ["index", "n", "distance", "M_n"] + [f"logweight_{lam}" for lam in lams]
        rows = []
        D = {c: batch.distances(metric, c) for c in cps}
        for i in range(batch.N):
            for j, c in enumerate(cps):
                rows.append([i, c, float(D[c][i]), float(batch.M[i, j])] + [float(x) for x in batch.logw[i, j]])
        results.append(Result("records", {"quantity": "records", "rows": len(rows)}, (header, rows)))
    return results


def cmd_oracle(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    op = p.get("op", "entropy")
    m = spec.measure
    n = p.get("n", 4)
    metric = est.resolve_metric(p.get("metric", "word"), m)
    meta = {"op": op}
    if op == "entropy":
        value = exact.exact_entropy(m, n)
    elif op == "mean-distance":
        value = exact.exact_mean_distance(m, n, metric=metric, engine=p.get("engine", "auto"))
    elif op == "covariance":
        c = spec.curve
        value = exact.exact_covariance(m, c.nu, n, metric=metric, engine=p.get("engine", "convolution"))
    elif op == "spectral":
        s = exact.spectral_radius_estimate(m, p.get("n_max"))
        value = s.estimate
        meta.update(lower=s.lower, upper=s.upper, n_max=s.n_max)
    elif op == "return":
        n_max = p.get("n_max", n)
        ret = exact.return_probabilities(m, n_max, p.get("engine", "auto"))
        table = (["n", "p_2n"], [[2 * k, float(v)] for k, v in enumerate(ret)])
        payload = {"quantity": "oracle", "method": "return", "value": float(ret[-1]), "stderr": 0.0,
                   "n": 2 * n_max, "N": 0, "seed": spec.seed, "metadata": meta}
        return [Result("oracle", payload, table)]
    else:
        raise ValidationError(f"unknown oracle op {op!r}")
    payload = {"quantity": "oracle", "method": op, "value": value, "stderr": 0.0, "n": n, "N": 0,
               "seed": spec.seed, "metadata": meta}
    return [Result("oracle", payload)]


def cmd_escape(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    e = est.escape_rate(spec.measure, p.get("metric", "word"), p.get("n", 1000), p.get("N", 10_000), spec.seed, threads)
    return [Result("escape", _summary("escape_rate", e))]


def cmd_entropy(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    method = p.get("method", "green")
    if method == "green":
        e = est.entropy_via_green_speed(spec.measure, None, p.get("n", 1000), p.get("N", 10_000), spec.seed, threads)
        return [Result("entropy", _summary("entropy", e))]
    if method == "convolution":
        rows = est.entropy_via_convolution(spec.measure, None, p.get("n_max", 10))
        last = rows[-1]
        payload = {"quantity": "entropy", "method": "convolution", "value": last[2], "stderr": 0.0,
                   "n": last[0], "N": 0, "seed": spec.seed, "metadata": {"H_n": last[1]}}
        table = (["n", "H", "increment"], [[r[0], r[1], "" if r[2] is None else r[2]] for r in rows])
        return [Result("entropy", payload, table)]
    raise ValidationError(f"unknown entropy method {method!r}")


def cmd_green(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    m = spec.measure
    z = spec.model.element(p.get("z", "a" if spec.model.is_free else "x1"))
    method = p.get("method", "tree" if spec.model.is_free else "ball")
    meta = {"z": str(z), "method": method}
    if method == "tree":
        value = green_distance_tree(tree_first_passage(m), z)
        lo = hi = value
    elif method == "ball":
        R = p.get("R", len(z.word) + 15)
        ev = green_distance_ball(m, None, z, R)
        lo, hi, value = ev.lower, ev.upper, ev.midpoint
        meta.update(R=R, F_lower=ev.F_lower, F_upper=ev.F_upper, solver=ev.method)
    elif method == "series":
        T = p.get("T", 20)
        partial, tail = green_function_series(m, None, z, T, engine=p.get("engine", "convolution"))
        lo, hi, value = partial, partial + tail, partial
        meta.update(T=T, quantity="G(z)")
    else:
        raise ValidationError(f"unknown green method {method!r}")
    payload = {"quantity": "green", "method": method, "value": value, "lower": lo, "upper": hi,
               "stderr": 0.0, "n": 0, "N": 0, "seed": spec.seed, "metadata": meta}
    return [Result("green", payload)]


def cmd_covariance(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    e = est.covariance_sigma(spec.curve, p.get("metric", "word"), p.get("n", 1000), p.get("N", 10_000), spec.seed,
                             threads, exact=p.get("exact", False))
    return [Result("covariance", _summary("sigma", e))]


def cmd_derivative(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    method = p.get("method", "fd")
    c = spec.curve
    n, N = p.get("n", 1000), p.get("N", 10_000)
    metric = p.get("metric", "word")
    lam = p.get("lambda", 0.05)
    if isinstance(lam, list):
        if len(lam) != 1:
            raise ValidationError("derivative takes a single lambda")
        lam = lam[0]
    if method == "fd":
        e = est.fd_derivative(c, p.get("target", "escape"), float(lam), n, N, spec.seed, metric,
                              p.get("one_sided", False), threads)
    elif method == "sigma":
        e = est.covariance_sigma(c, metric, n, N, spec.seed, threads)
    elif method == "girsanov":
        e = est.girsanov_derivative(c, metric, n, N, spec.seed, p.get("alpha", 1.0), threads)
    else:
        raise ValidationError(f"unknown derivative method {method!r}")
    return [Result("derivative", _summary("derivative", e))]


def cmd_clt(spec: ExperimentSpec, threads: int) -> list[Result]:
    p = spec.params
    rep = est.clt_report(spec.curve, p.get("metric", "word"), p.get("grid", [250, 500, 1000]), p.get("N", 5000),
                         spec.seed, threads=threads)
    rows = [[r.n, r.sigma[0, 0], r.sigma[1, 1], r.sigma[0, 1], r.ks_d, r.ks_M] for r in rep.rows]
    payload = {
        "quantity": "clt", "method": "joint-clt", "n": rep.rows[-1].n, "N": rep.N, "seed": spec.seed,
        "ell_hat": rep.ell_hat, "metadata": rep.metadata,
        "grid": [{"n": r.n, "sigma": r.sigma, "sigma_se": r.sigma_se, "ks_d": r.ks_d, "ks_M": r.ks_M} for r in rep.rows],
    }
    return [Result("clt", payload, (["n", "var_d", "var_M", "cov", "ks_d", "ks_M"], rows))]


def cmd_verify(spec: ExperimentSpec, threads: int) -> list[Result]:
    from .verify import run_suite

    checks = run_suite(spec.params.get("profile", "quick"), spec.seed,
                       log=lambda s: print(s, file=sys.stderr), threads=threads)
    payload = {
        "quantity": "verify",
        "profile": spec.params.get("profile", "quick"),
        "seed": spec.seed,
        "checks": [
            {"key": c.key, "title": c.title, "status": c.status, "values": c.values,
             "known_deviation": c.known_deviation}
            for c in checks
        ],
        "failed": [c.key for c in checks if not c.passed and not c.known_deviation],
    }
    return [Result("verify", payload)]


HANDLERS = {
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "escape": cmd_escape,
    "entropy": cmd_entropy,
    "green": cmd_green,
    "covariance": cmd_covariance,
    "derivative": cmd_derivative,
    "clt": cmd_clt,
    "verify": cmd_verify,
}


# -- argument parsing ------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypwalk", description="Random walks on free groups and free products.")
    parser.add_argument("--version", action="version", version=f"hypwalk {VERSION}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML experiment file")
        sp.add_argument("--group", help="free:K or freeproduct:M1,M2,...")
        sp.add_argument("--mu0", help="'uniform' or letter=mass,... (inverses filled by symmetry)")
        sp.add_argument("--phi", help="tilt of the curve, letter=value,...")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="results directory")
        sp.add_argument("--threads", type=int, help="worker threads (output does not depend on it)")
        if name in ("simulate", "escape", "covariance", "derivative", "entropy", "oracle"):
            sp.add_argument("--n", type=int)
        if name in ("simulate", "escape", "covariance", "derivative", "entropy", "clt"):
            sp.add_argument("--N", type=int)
        if name in ("simulate", "escape", "covariance", "derivative", "clt", "oracle"):
            sp.add_argument("--metric", choices=["word", "green-tree", "green-ball"])
    p = sub.choices
    p["simulate"].add_argument("--checkpoints", type=_int_list)
    p["simulate"].add_argument("--lambda", dest="lambda_", type=float, action="append")
    p["simulate"].add_argument("--csv", action="store_true", default=None)
    p["oracle"].add_argument("--op", choices=["entropy", "mean-distance", "covariance", "return", "spectral"])
    p["oracle"].add_argument("--n-max", dest="n_max", type=int)
    p["oracle"].add_argument("--engine")
    p["entropy"].add_argument("--method", choices=["green", "convolution"])
    p["entropy"].add_argument("--n-max", dest="n_max", type=int)
    p["green"].add_argument("--method", choices=["tree", "ball", "series"])
    p["green"].add_argument("--z")
    p["green"].add_argument("--R", type=int)
    p["green"].add_argument("--T", type=int)
    p["green"].add_argument("--engine", choices=["convolution", "chain", "tree"])
    p["covariance"].add_argument("--exact", action="store_true", default=None)
    p["derivative"].add_argument("--method", choices=["fd", "sigma", "girsanov"])
    p["derivative"].add_argument("--target", choices=["escape", "entropy"])
    p["derivative"].add_argument("--lambda", dest="lambda_", type=float)
    p["derivative"].add_argument("--alpha", type=float)
    p["derivative"].add_argument("--one-sided", dest="one_sided", action="store_true", default=None)
    p["clt"].add_argument("--grid", type=_int_list)
    p["verify"].add_argument("--profile", choices=["quick", "full"])
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    skip = {"command", "config", "threads"}
    out = {}
    for k, v in vars(ns).items():
        if k in skip or v is None:
            continue
        out["lambda" if k == "lambda_" else k] = v
    return out


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    threads = ns.threads if ns.threads is not None else default_threads()
    if threads < 1:
        print("hypwalk: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if ns.config:
            data, text = read_config(ns.config)
            spec = build_spec(ns.command, data, _overrides(ns), ns.config, text)
        else:
            spec = build_spec(ns.command, {}, _overrides(ns))
        t0 = time.perf_counter()
        results = HANDLERS[spec.command](spec, threads)
        elapsed = time.perf_counter() - t0
        emit_report(results, spec.out, spec, {"run_seconds": round(elapsed, 3)}, {"threads": threads})
    except ValidationError as exc:
        print(f"hypwalk: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"hypwalk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HypwalkError as exc:
        print(f"hypwalk: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for r in results:
        if "value" in r.payload:
            print(f"{r.name}: {r.payload['value']!r} (stderr {r.payload.get('stderr', 0.0)!r})")
    if spec.command == "verify" and results[0].payload["failed"]:
        print(f"verify: failed checks {results[0].payload['failed']}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {spec.out}/manifest.json")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
