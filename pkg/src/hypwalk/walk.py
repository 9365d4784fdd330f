"""Vectorised, reproducible Monte Carlo simulation of random walks.

Each trajectory draws its increments from the counter-based generator in
``hypwalk.rng`` keyed by (seed, index, step), so a trajectory is a function of
(seed, index) alone. Trajectories are simulated in fixed-size chunks of
consecutive indices; chunk boundaries do not depend on the thread count and
results are concatenated in index order, so the batch output is bit-identical
for any ``threads`` value.

Positions are kept as reduced words on a per-trajectory stack. What gets
recorded at each checkpoint is the multiset of tokens in the reduced word
(``counts``), which is enough to evaluate every metric that is additive over
tokens: the word metric and all Green metrics on the supported models.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError
from .groups import POP, PUSH, GroupModel
from .measures import MeasureCurve, StepMeasure, curve_at, log_ratio
from .rng import step_uniforms, stream_keys

DEFAULT_CHUNK = 8192
THREADS_ENV = "HYPWALK_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class StackWalker:
    """Reduced-word positions for a block of walks, advanced one letter at a time."""

    def __init__(self, model: GroupModel, size: int, horizon: int):
        T = len(model.tokens)
        self.model = model
        self.size = size
        dtype = np.int8 if T < 127 else np.int16
        # column 0 holds the "empty word" sentinel T; real tokens start at column 1
        self.stack = np.full((size, horizon + 2), T, dtype=dtype)
        self.length = np.zeros(size, dtype=np.int64)
        self.counts = np.zeros((T, size), dtype=np.int32)
        self._ar = np.arange(size)
        self._action = model.action
        self._letter_tok = np.asarray(model.letter_tokens, dtype=np.int64)
        self._repl = model.has_replacements

    def step(self, letters: np.ndarray) -> None:
        ar, L, stack = self._ar, self.length, self.stack
        top = stack[ar, L].astype(np.int64)
        act = self._action[top, letters]
        tok = self._letter_tok[letters]
        push = act == PUSH
        if not self._repl:
            self.counts[np.where(push, tok, top), ar] += np.where(push, 1, -1).astype(np.int32)
            stack[ar, L + 1] = tok
            L += np.where(push, 1, -1)
            return
        pop = act == POP
        rep = act >= 0
        self.counts[np.where(push, tok, top), ar] += np.where(push, 1, -1).astype(np.int32)
        if rep.any():
            self.counts[act[rep], ar[rep]] += 1
            stack[ar[rep], L[rep]] = act[rep]
        stack[ar, L + 1] = tok
        L += push.astype(np.int64) - pop.astype(np.int64)


@dataclass(frozen=True)
class BatchSpec:
    n: int
    checkpoints: tuple[int, ...]
    N: int
    seed: int
    measure: StepMeasure
    curve: MeasureCurve | None = None
    lambdas: tuple[float, ...] = ()
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        cps = tuple(int(c) for c in self.checkpoints)
        if not cps:
            raise ValidationError("at least one checkpoint is required")
        if list(cps) != sorted(set(cps)) or cps[0] < 0 or cps[-1] > self.n:
            raise ValidationError("checkpoints must be sorted, distinct and within [0, n]")
        if self.N < 1:
            raise ValidationError("N must be >= 1")
        if self.lambdas and self.curve is None:
            raise ValidationError("Girsanov weights need a curve")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        self.measure.check()

    @property
    def model(self) -> GroupModel:
        return self.measure.model


@dataclass
class EndpointRecord:
    distance: dict[str, float]
    M: float
    A: float
    logweight: dict[float, float]


@dataclass
class TrajectoryRecord:
    index: int
    endpoints: dict[int, EndpointRecord]


@dataclass
class Batch:
    """Checkpoint data for trajectories 0..N-1 (index order)."""

    spec: BatchSpec
    counts: np.ndarray  # (N, C, T) token counts of the reduced word
    M: np.ndarray  # (N, C)
    A: np.ndarray  # (N, C)
    logw: np.ndarray  # (N, C, len(lambdas))
    _cp_index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._cp_index = {c: i for i, c in enumerate(self.spec.checkpoints)}

    @property
    def N(self) -> int:
        return self.counts.shape[0]

    def _col(self, n: int | None) -> int:
        if n is None:
            return len(self.spec.checkpoints) - 1
        try:
            return self._cp_index[n]
        except KeyError:
            raise ValidationError(f"{n} is not a checkpoint of this batch") from None

    def distances(self, metric, n: int | None = None) -> np.ndarray:
        w = metric.token_weights(self.spec.model)
        return self.counts[:, self._col(n), :] @ w

    def martingale(self, n: int | None = None) -> np.ndarray:
        return self.M[:, self._col(n)]

    def quadratic(self, n: int | None = None) -> np.ndarray:
        return self.A[:, self._col(n)]

    def logweight(self, lam: float, n: int | None = None) -> np.ndarray:
        j = self.spec.lambdas.index(float(lam))
        return self.logw[:, self._col(n), j]

    def record(self, i: int, metrics: Sequence = ()) -> TrajectoryRecord:
        eps = {}
        for c, n in enumerate(self.spec.checkpoints):
            cnt = self.counts[i, c, :]
            eps[n] = EndpointRecord(
                distance={m.name: float(cnt @ m.token_weights(self.spec.model)) for m in metrics},
                M=float(self.M[i, c]),
                A=float(self.A[i, c]),
                logweight={lam: float(self.logw[i, c, j]) for j, lam in enumerate(self.spec.lambdas)},
            )
        return TrajectoryRecord(index=i, endpoints=eps)

    def records(self, metrics: Sequence = ()) -> Iterator[TrajectoryRecord]:
        for i in range(self.N):
            yield self.record(i, metrics)

    def accumulators(self, metric) -> dict[int, dict[str, float]]:
        """First and second moments of distance and M per checkpoint."""
        out = {}
        for n in self.spec.checkpoints:
            d = self.distances(metric, n)
            M = self.martingale(n)
            out[n] = {
                "N": self.N,
                "mean_d": float(d.mean()),
                "mean_M": float(M.mean()),
                "mean_d2": float((d * d).mean()),
                "mean_M2": float((M * M).mean()),
                "mean_dM": float((d * M).mean()),
            }
        return out


def _letter_tables(spec: BatchSpec):
    S = len(spec.measure.prob)
    cdf = np.cumsum(spec.measure.prob)
    if spec.curve is not None:
        nu = spec.curve.nu
        lr = np.array([log_ratio(spec.curve, lam) for lam in spec.lambdas]).reshape(len(spec.lambdas), S)
    else:
        nu = np.zeros(S)
        lr = np.zeros((0, S))
    return cdf, nu, 0.5 * nu**2, lr


def _run_chunk(spec: BatchSpec, start: int, stop: int):
    size = stop - start
    C = len(spec.checkpoints)
    T = len(spec.model.tokens)
    S = len(spec.measure.prob)
    cdf, nu, half_nu2, lr = _letter_tables(spec)
    track = spec.curve is not None
    keys = stream_keys(spec.seed, np.arange(start, stop))
    walker = StackWalker(spec.model, size, spec.n)
    M = np.zeros(size)
    A = np.zeros(size)
    W = np.zeros((lr.shape[0], size))
    out_counts = np.zeros((size, C, T), dtype=np.int32)
    out_M = np.zeros((size, C))
    out_A = np.zeros((size, C))
    out_W = np.zeros((size, C, lr.shape[0]))
    cp = {n: c for c, n in enumerate(spec.checkpoints)}

    def record(c):
        out_counts[:, c, :] = walker.counts.T
        out_M[:, c] = M
        out_A[:, c] = A
        out_W[:, c, :] = W.T

    if 0 in cp:
        record(cp[0])
    for j in range(spec.n):
        u = step_uniforms(keys, j)
        s = np.searchsorted(cdf, u, side="right")
        np.minimum(s, S - 1, out=s)
        walker.step(s)
        if track:
            M += nu[s]
            A += half_nu2[s]
            if lr.shape[0]:
                W += lr[:, s]
        if j + 1 in cp:
            record(cp[j + 1])
    return out_counts, out_M, out_A, out_W


def sample_batch(spec: BatchSpec, threads: int | None = None) -> Batch:
    threads = default_threads() if threads is None else max(1, int(threads))
    bounds = [(a, min(a + spec.chunk_size, spec.N)) for a in range(0, spec.N, spec.chunk_size)]
    if threads == 1 or len(bounds) == 1:
        parts = [_run_chunk(spec, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: _run_chunk(spec, *ab), bounds))
    return Batch(
        spec=spec,
        counts=np.concatenate([p[0] for p in parts]),
        M=np.concatenate([p[1] for p in parts]),
        A=np.concatenate([p[2] for p in parts]),
        logw=np.concatenate([p[3] for p in parts]),
    )


def sample_trajectory(spec: BatchSpec, index: int, metrics: Sequence = ()) -> TrajectoryRecord:
    if not 0 <= index < spec.N:
        raise ValidationError(f"index {index} outside [0, {spec.N})")
    counts, M, A, W = _run_chunk(spec, index, index + 1)
    one = Batch(spec=spec, counts=counts, M=M, A=A, logw=W)
    rec = one.record(0, metrics)
    rec.index = index
    return rec


def tilted_spec(spec: BatchSpec, lam: float) -> BatchSpec:
    """Same seed and sizes, measure replaced by ``mu_lambda`` of the spec's curve."""
    if spec.curve is None:
        raise ValidationError("spec has no curve")
    return BatchSpec(
        n=spec.n,
        checkpoints=spec.checkpoints,
        N=spec.N,
        seed=spec.seed,
        measure=curve_at(spec.curve, lam),
        curve=spec.curve,
        chunk_size=spec.chunk_size,
    )
